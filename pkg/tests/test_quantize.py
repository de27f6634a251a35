import numpy as np
import pytest
import scipy.sparse as sp

from errors import GridTooCoarse, AbsorberOverlap, UnsupportedSymbol, SingularError, InvalidParams
from dynamics import ReducedFlow
from geometry import make_profile
from quantize import (
    Grid1D, Absorber, SigmaProfile, Symbol, quantize_symbol, CutoffSpec, build_cutoff, BarrierSpec,
    ModeOperator, build_mode_operator, solve, dump_triplets,
)


def _packet(grid, sigma0, h, L=0.5):
    s = grid.nodes
    return np.exp(1j * sigma0 * s / h) * np.exp(-s ** 2 / (2 * L ** 2))


def test_grid_for_h_meets_resolution():
    grid = Grid1D.for_h(8.0, 0.05)
    assert grid.ds <= 0.05 / 8
    grid.check(0.05)
    assert grid.refined().ds == pytest.approx(grid.ds / 2)
    assert grid.nodes[0] == -8.0 and grid.nodes[-1] == 8.0


def test_coarse_grid_rejected():
    with pytest.raises(GridTooCoarse) as info:
        Grid1D(8.0, 100).check(0.05)
    assert info.value.invariant == "Δs ≤ h/8"


def test_invalid_grid():
    with pytest.raises(InvalidParams):
        Grid1D(1.0, 1)


def test_box_symbol_acts_as_identity_inside_box():
    h = 0.05
    grid = Grid1D.for_h(3.0, h)
    box = SigmaProfile("box", -1.5, 1.5, 0.1)
    op = quantize_symbol(Symbol.separable(lambda s: np.ones_like(s), box), h, grid)
    u = _packet(grid, 0.3, h)
    error = np.max(np.abs(op.apply(u) - u)) / np.max(np.abs(u))
    assert error <= 1e-6


def test_box_symbol_kills_packets_outside_box():
    h = 0.05
    grid = Grid1D.for_h(3.0, h)
    box = SigmaProfile("box", -1.5, 1.5, 0.1)
    op = quantize_symbol(Symbol.separable(lambda s: np.ones_like(s), box), h, grid)
    u = _packet(grid, 2.5, h)
    assert np.max(np.abs(op.apply(u))) / np.max(np.abs(u)) <= 1e-6


def test_outside_profile_complements_box():
    h = 0.05
    grid = Grid1D.for_h(3.0, h)
    one = lambda s: np.ones_like(s)
    inside = quantize_symbol(Symbol.separable(one, SigmaProfile("box", -1.0, 1.0, 0.1)), h, grid)
    outside = quantize_symbol(Symbol.separable(one, SigmaProfile("outside", -1.0, 1.0, 0.1)), h, grid)
    total = (inside.matrix + outside.matrix).toarray()
    assert np.allclose(total, np.eye(grid.n), atol=1e-12)


def test_real_symbol_is_self_adjoint():
    h = 0.1
    grid = Grid1D.for_h(2.0, h)
    symbol = Symbol.separable(lambda s: np.exp(-s ** 2), SigmaProfile("box", -1.6, 0.45, 0.1))
    q = quantize_symbol(symbol, h, grid)
    assert q.is_self_adjoint()
    assert q.band > 0


def test_spatial_symbol_is_diagonal():
    h = 0.1
    grid = Grid1D.for_h(2.0, h)
    q = quantize_symbol(Symbol.spatial(lambda s: 1.0 + s ** 2), h, grid)
    assert q.band == 0
    assert np.allclose(q.matrix.diagonal(), 1.0 + grid.nodes ** 2)


def test_general_symbol_matches_separable():
    h = 0.1
    grid = Grid1D.for_h(1.5, h)
    g = lambda sigma: np.where(np.abs(sigma) < 2.0, np.cos(np.pi * sigma / 4.0) ** 4, 0.0)
    separable = quantize_symbol(Symbol.separable(lambda s: np.exp(-s ** 2), SigmaProfile("callable", fn=g)),
                                h, grid)
    general = quantize_symbol(Symbol(general=lambda s, sigma: np.exp(-s ** 2) * g(sigma)), h, grid)
    diff = np.max(np.abs(separable.dense() - general.dense()))
    assert diff <= 1e-8


def test_symbol_not_vanishing_at_window_edge():
    h = 0.1
    grid = Grid1D.for_h(1.0, h)
    flat = SigmaProfile("callable", fn=lambda sigma: np.ones_like(sigma))
    with pytest.raises(UnsupportedSymbol):
        quantize_symbol(Symbol.separable(lambda s: np.ones_like(s), flat), h, grid)
    with pytest.raises(UnsupportedSymbol):
        quantize_symbol(Symbol.separable(lambda s: np.ones_like(s), SigmaProfile("box", -np.inf, 1.0)), h, grid)


@pytest.mark.parametrize("band_tol", [0.0, 1e-3])
def test_band_tolerance_range(band_tol):
    h = 0.1
    with pytest.raises(InvalidParams):
        quantize_symbol(Symbol.spatial(np.ones_like), h, Grid1D.for_h(1.0, h), band_tol=band_tol)


def test_cutoff_mode_weights():
    h = 0.1
    spec = CutoffSpec(plateau=(-1.0, 1.0), support=(-2.0, 2.0), mu_plateau=(-1.0, 1.0), mu_support=(-2.0, 2.0))
    op = build_cutoff(spec, h, range(-30, 31), Grid1D.for_h(3.0, h))
    active = op.active_modes
    assert set(range(-19, 20)) <= set(active)
    assert all(abs(h * m) <= 2.0 + 1e-12 for m in active)
    assert op.weights[0] == pytest.approx(1.0)
    assert op.matrix(25).nnz == 0
    assert spec.mode_factor_even


def test_cutoff_from_dict_scalar_pairs():
    spec = CutoffSpec.from_dict({"plateau": 1.0, "support": 2.0, "mirrored": True})
    assert spec.plateau == (-1.0, 1.0)
    assert spec.s_extent == 2.0
    assert spec.mu_extent is None
    with pytest.raises(InvalidParams):
        CutoffSpec.from_dict({"plateau": 1.0})


def test_absorber_overlap():
    with pytest.raises(AbsorberOverlap):
        Absorber(fraction=0.6).validate(8.0)
    Absorber(enabled=False, fraction=0.9).validate(8.0)


def test_barrier_is_positive_and_localized():
    h = 0.1
    grid = Grid1D.for_h(2.0, h)
    barrier = BarrierSpec.for_gluing(2.0)
    W = barrier.quantize(h, grid).toarray()
    assert np.allclose(W, W.conj().T, atol=1e-14)
    assert np.min(np.linalg.eigvalsh(W)) >= -1e-12
    outside = np.abs(grid.nodes) >= barrier.zeta_support
    assert np.all(W[outside, :] == 0)
    assert np.all(W[:, outside] == 0)


def test_default_barrier_clauses_on_double_well():
    flow = ReducedFlow(make_profile("double_well"))
    clauses = BarrierSpec().check_clauses(flow, s0=2.0)
    assert all(c["passed"] for c in clauses.values()), clauses


def test_barrier_from_dict():
    barrier = BarrierSpec.from_dict({"chi_plateau": "0.4", "chi_support": 0.8})
    assert barrier.chi_plateau == 0.4
    assert BarrierSpec.from_dict(barrier.to_dict()) == barrier


def test_mode_operator_absorber_is_dissipative():
    h = 0.1
    profile = make_profile("catenoid")
    grid = Grid1D.for_h(profile.S, h)
    op = build_mode_operator(profile, None, h, 3, 0.0, grid)
    diag = op.matrix.diagonal()
    assert np.all(diag.imag <= 0.0)
    assert diag.imag[0] < 0.0
    assert diag.imag[grid.n // 2] == 0.0


def test_mode_operator_without_absorber_is_symmetric():
    h = 0.1
    profile = make_profile("catenoid", S=4.0)
    grid = Grid1D.for_h(4.0, h)
    op = build_mode_operator(profile, None, h, 2, 0.0, grid, absorber=Absorber(enabled=False))
    diff = op.matrix - op.matrix.getH()
    assert abs(diff).max() <= 1e-12


def test_mode_operator_domain_and_h_checks():
    profile = make_profile("catenoid", S=4.0)
    with pytest.raises(InvalidParams):
        build_mode_operator(profile, None, 0.1, 0, 0.0, Grid1D.for_h(8.0, 0.1))
    with pytest.raises(InvalidParams):
        build_mode_operator(profile, None, 1.5, 0, 0.0, Grid1D.for_h(4.0, 0.1))


def test_solve_residual():
    h = 0.1
    profile = make_profile("catenoid")
    grid = Grid1D.for_h(profile.S, h)
    op = build_mode_operator(profile, None, h, 3, 0.0, grid)
    rhs = _packet(grid, 0.5, h)
    result = solve(op, rhs)
    assert result.ok
    assert result.residual <= 1e-10


def test_singular_mode_raises():
    grid = Grid1D(1.0 / 32.0, 2)
    op = build_mode_operator(make_profile("flat"), None, 0.5, 0, 63.0, grid, absorber=Absorber(enabled=False))
    with pytest.raises(SingularError):
        op.factorize()


def test_adjoint_solve_matches_dense():
    rng = np.random.default_rng(3)
    A = np.eye(12) * 5 + rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    op = ModeOperator.from_matrix(sp.csc_matrix(A))
    b = rng.standard_normal(12) + 1j * rng.standard_normal(12)
    assert np.allclose(op.apply_inverse(b), np.linalg.solve(A, b))
    assert np.allclose(op.apply_inverse_adjoint(b), np.linalg.solve(A.conj().T, b))


def test_dump_triplets(tmp_path):
    matrix = sp.csr_matrix(np.array([[1.0, 0.0], [2.0 - 1.0j, 3.0]]))
    path = tmp_path / "m.txt"
    dump_triplets(matrix, str(path))
    lines = path.read_text().splitlines()
    assert lines[0] == "# 2 2 3"
    assert len(lines) == 4

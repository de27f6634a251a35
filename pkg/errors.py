# errors.py - 실험실 공용 예외 계층
from typing import Any, Optional


class LabError(Exception):
    """
    실험실 예외의 기본 클래스

    Args:
        message: 사람이 읽는 메시지
        invariant: 위반된 불변식 이름 (있는 경우)
        witness: 실패를 보여주는 데이터 (점, 노드 번호 등)
    """

    code = "lab-error"

    def __init__(self, message: str, invariant: Optional[str] = None, witness: Any = None):
        super().__init__(message)
        self.message = message
        self.invariant = invariant
        self.witness = witness

    def __str__(self) -> str:
        text = f"[{self.code}] {self.message}"
        if self.invariant:
            text += f" (불변식: {self.invariant})"
        return text

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "message": self.message,
            "invariant": self.invariant,
            "witness": repr(self.witness) if self.witness is not None else None,
        }


class InvalidParams(LabError):
    code = "invalid-params"


class IntegrationFailed(LabError):
    code = "integration-failed"


class HorizonExceeded(LabError):
    code = "horizon-exceeded"


class ConstructionFailed(LabError):
    code = "construction-failed"


class PreconditionError(LabError):
    code = "precondition-violation"


class PartitionInfeasible(LabError):
    code = "partition-infeasible"


class GridTooCoarse(LabError):
    code = "grid-too-coarse"


class AbsorberOverlap(LabError):
    code = "absorber-overlap"


class UnsupportedSymbol(LabError):
    code = "unsupported-symbol"


class SingularError(LabError):
    code = "singular-to-tolerance"


class DegenerateDesign(LabError):
    code = "degenerate-design"


class UnknownPreset(LabError):
    code = "unknown-preset"


class ConfigError(LabError):
    code = "config-error"


class HypothesisAuditFailed(LabError):
    code = "hypothesis-audit-failed"

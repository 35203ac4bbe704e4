"""Exception and warning types shared across the package."""


class IdAnonError(Exception):
    """Base class for all errors raised by idanon."""


class ShapeError(IdAnonError, ValueError):
    pass


class DegenerateAlpha(IdAnonError, ArithmeticError):
    """Importance weights have (near) zero norm, so the assistant matrix is undefined."""

    def __init__(self, norm_sq: float, class_idx: int | None = None):
        self.norm_sq = norm_sq
        self.class_idx = class_idx
        where = "" if class_idx is None else f" for class {class_idx}"
        super().__init__(f"degenerate importance weights{where}: ||alpha||^2 = {norm_sq:.3e}")


class InsufficientCandidates(IdAnonError, ValueError):
    pass


class DegenerateLandmarks(IdAnonError, ValueError):
    pass


class AllTiedWarning(UserWarning):
    """All candidate distances are equal; utilities fall back to 0.5."""


class SkippedClassWarning(UserWarning):
    pass


class SkippedRecordWarning(UserWarning):
    pass

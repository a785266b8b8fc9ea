import numpy as np


class DifError(Exception):
    """Base class for every error raised by the filtering library."""


class DimensionError(DifError, ValueError):
    pass


class SingularMatrixError(DifError, np.linalg.LinAlgError):
    def __init__(self, name, condition=np.inf, detail=""):
        self.name = name
        self.condition = condition
        msg = f"{name} is singular or not positive definite (condition estimate {condition:.3e})"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class NonFiniteError(DifError, FloatingPointError):
    def __init__(self, what, index=None):
        self.what = what
        self.index = index
        where = f" at index {index}" if index is not None else ""
        super().__init__(f"non-finite values in {what}{where}")


class MeasurementSingularityError(DifError):
    pass


class DivergenceDetected(DifError):
    def __init__(self, message, time_index=None, iteration=None, last_finite=None):
        self.time_index = time_index
        self.iteration = iteration
        self.last_finite = last_finite
        parts = [message]
        if time_index is not None:
            parts.append(f"time index {time_index}")
        if iteration is not None:
            parts.append(f"iteration {iteration}")
        super().__init__(", ".join(parts))


class ConfigError(DifError, KeyError):
    def __str__(self):
        # KeyError quotes its argument; plain text reads better on the CLI
        return str(self.args[0]) if self.args else ""


class FixtureMismatch(DifError):
    def __init__(self, names):
        self.names = list(names)
        super().__init__("fixture digests changed: " + ", ".join(self.names))

from enum import Enum

ERROR = "error"
WARNING = "warning"

DIAGNOSTICS = {
    "EMPTY_SESSION": (ERROR, "Session has no samples"),
    "NON_MONOTONE_TIME": (ERROR, "Timestamp not strictly increasing"),
    "PEN_STATUS_INVALID": (ERROR, "Pen status outside {0, 1}"),
    "NONFINITE_VALUE": (ERROR, "NaN or infinite sample value"),
    "NEGATIVE_PRESSURE": (ERROR, "Negative pressure"),
    "NO_ON_SURFACE": (ERROR, "No on-surface sample"),
    "HPSQC_INCONSISTENT": (ERROR, "HPSQ-C scores out of range or not summing"),
    "PARSE_ERROR": (ERROR, "Malformed SVC file"),
    "PRESSURE_IN_AIR": (WARNING, "Non-zero pressure while the pen is in-air"),
    "TILT_OUT_OF_RANGE": (WARNING, "Tilt outside [0, 90] degrees"),
    "AZIMUTH_OUT_OF_RANGE": (WARNING, "Azimuth outside [0, 360) degrees"),
    "LOW_SAMPLING_RATE": (WARNING, "Median sample period above twice nominal"),
    "CONFOUND_SKIPPED": (WARNING, "Confound level with too few values"),
    "SPEARMAN_UNDEFINED": (WARNING, "Zero variance in a ranked variable"),
    "FOLDS_REDUCED": (WARNING, "Fold count reduced to the smallest stratum"),
    "CONFIG_SKIPPED": (WARNING, "Search configuration failed and was skipped"),
}
"""Diagnostic codes, with their severity and description."""

Codes = Enum("Codes", [(name, name) for name in DIAGNOSTICS])


class Diagnostic:
    """A machine-readable report of an invariant violation.

    Parameters
    ----------
    code : str or `Codes`
        Diagnostic code, one of the keys of `DIAGNOSTICS`.
    index : int, optional
        Sample index (or row index) concerned by the diagnostic.
    message : str, optional
        Additional information. Defaults to the code description.

    """

    __slots__ = ("code", "severity", "index", "message")

    def __init__(self, code, index=None, message=None):
        code = code.name if isinstance(code, Enum) else code
        if code not in DIAGNOSTICS:
            raise ValueError(f"unknown diagnostic code {code}")
        self.code = code
        self.severity, description = DIAGNOSTICS[code]
        self.index = None if index is None else int(index)
        self.message = message or description

    def __repr__(self):
        loc = "" if self.index is None else f", index={self.index}"
        return f"<Diagnostic({self.code}{loc}, {self.severity})>"

    def __eq__(self, other):
        if not isinstance(other, Diagnostic):
            return NotImplemented
        return (self.code, self.index) == (other.code, other.index)

    @property
    def is_error(self):
        return self.severity == ERROR

    def to_dict(self):
        return {
            "code": self.code,
            "severity": self.severity,
            "index": self.index,
            "message": self.message,
        }


def errors(diagnostics):
    """Return the error-severity diagnostics."""
    return [d for d in diagnostics if d.is_error]

"""Independent validation oracles for purkinje-ecg run artifacts.

Everything in this package works from serialized artifacts (JSON/CSV)
alone and re-implements the quantities it checks with a different
algorithm than the primary package, so agreement is evidence rather than
tautology.
"""

from .report import OracleReport

__all__ = ["OracleReport"]

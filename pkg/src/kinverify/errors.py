"""Exception hierarchy shared across the package.

Every error carries a short machine-parsable ``category`` that the CLI
prints on its single-line failure reports.
"""


class KinverifyError(Exception):
    category = "error"


class InputError(KinverifyError):
    """Bad files, malformed manifests, out-of-range or mismatched arguments."""

    category = "input"


class DegenerateInputError(KinverifyError):
    """Structurally valid inputs that carry no usable signal (constant
    patches, zero vectors, single-class label sets)."""

    category = "degenerate"


class NumericalError(KinverifyError):
    """Rank deficiencies and singular linear systems."""

    category = "numerical"


class ConvergenceError(KinverifyError):
    """Iterative solvers that exhausted their iteration budget."""

    category = "convergence"

"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: InputError -> 1, NumericalError -> 2.
"""


class InputError(Exception):
    """Invalid user input or a violated operation precondition."""


class NumericalError(Exception):
    """Numerical failure: degenerate data, failed factorization, unstable recursion."""

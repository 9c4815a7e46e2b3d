class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration (CLI exit code 2)."""


class NumericalAbort(ArithmeticError):
    """Training produced a non-finite value or left its safe range (exit code 3)."""


class ConstellationDivergence(NumericalAbort):
    pass


class DegenerateChannel(NumericalAbort):
    pass

"""Exception types shared across the package."""


class ConfigError(ValueError):
    """Invalid parameters or inconsistent configuration."""


class FormatError(ValueError):
    """Malformed on-disk dataset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(ArithmeticError):
    """Non-finite values or divergence during training."""

    def __init__(self, message: str, round_index: int | None = None):
        if round_index is not None:
            message = f"round {round_index}: {message}"
        super().__init__(message)
        self.round_index = round_index


class DegenerateError(ArithmeticError):
    """Zero-norm vector where a direction is required."""

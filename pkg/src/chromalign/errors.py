from __future__ import annotations


class ChromAlignError(Exception):
    """Base class for every error raised by chromalign."""


class ArgumentError(ChromAlignError, ValueError):
    pass


class DataValidationError(ChromAlignError, ValueError):
    pass


class ConfigError(ChromAlignError, ValueError):
    pass


class ParseError(ChromAlignError, ValueError):
    def __init__(self, message: str, row: int | None = None, column: str | int | None = None):
        location = []
        if row is not None:
            location.append(f"row {row}")
        if column is not None:
            location.append(f"column {column}")
        suffix = f" ({', '.join(location)})" if location else ""
        super().__init__(f"{message}{suffix}")
        self.row = row
        self.column = column


class ChannelNotFoundError(ChromAlignError, KeyError):
    def __init__(self, mz: int, available: list[int]):
        shown = ", ".join(str(m) for m in available[:40])
        if len(available) > 40:
            shown += ", ..."
        super().__init__(f"m/z {mz} not in matrix; available channels: {shown}")
        self.mz = mz
        self.available = available

    def __str__(self) -> str:
        return str(self.args[0])


class NumericError(ChromAlignError, ArithmeticError):
    def __init__(self, message: str, parameter: str | None = None):
        super().__init__(message)
        self.parameter = parameter


class TrainingError(ChromAlignError, RuntimeError):
    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class UndefinedMetricError(ChromAlignError, ValueError):
    pass

"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class MacdaeError(Exception):
    exit_code = 1
    kind = "error"

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field

    def diagnostic(self):
        """One-line, machine-parsable description used by the CLI."""
        parts = [f"error={self.kind}"]
        if self.field:
            parts.append(f"field={self.field}")
        msg = str(self).replace("\n", " ").replace('"', "'")
        parts.append(f'message="{msg}"')
        return " ".join(parts)


class ConfigError(MacdaeError, ValueError):
    exit_code = 2
    kind = "config"


class DataError(MacdaeError, ValueError):
    exit_code = 3
    kind = "data"


class DimensionError(DataError):
    kind = "dimension"


class UnknownEntityError(DataError):
    kind = "unknown_entity"


class SamplingError(DataError):
    kind = "sampling"


class MetricError(DataError):
    kind = "metric"


class NumericError(MacdaeError, ArithmeticError):
    exit_code = 4
    kind = "numeric"


class DegenerateInputError(NumericError):
    kind = "degenerate_input"

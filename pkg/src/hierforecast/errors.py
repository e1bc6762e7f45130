"""Exception types shared across the package."""


class HierForecastError(Exception):
    pass


class DimensionError(HierForecastError, ValueError):
    pass


class ContractError(HierForecastError, ValueError):
    pass


class NumericError(HierForecastError, ArithmeticError):
    pass


class VocabularyError(HierForecastError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "vocabulary error"


class ConfigurationError(HierForecastError, ValueError):
    pass


class CheckpointError(HierForecastError):
    pass


class AnnotationError(HierForecastError, ValueError):
    """Malformed annotation input; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GrammarError(HierForecastError, ValueError):
    pass

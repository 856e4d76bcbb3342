class ModelError(Exception):
    pass


class ValidationError(ModelError, ValueError):
    pass


class NonPositiveSpeed(ValidationError):
    pass


class NonPositiveVolOfVol(ValidationError):
    pass


class CorrelationOutOfRange(ValidationError):
    pass


class GammaZeroRequiresRGreaterAlpha(ValidationError):
    pass


class InvalidConfiguration(ValidationError):
    pass


class SolverError(ModelError):
    pass


class NoSolution(SolverError):
    """
    The price-dividend boundary value problem has no admissible solution for
    the given parameters, typically because expected dividend growth is too
    high relative to the stochastic risk premium.
    """


class SqrtDomainViolation(SolverError):
    pass


class MeshRefinementExhausted(SolverError):
    pass


class UndefinedAtZero(ModelError, ValueError):
    pass


class InsufficientData(ModelError):
    pass


class QuoteDataError(ModelError):
    pass


class ParseError(QuoteDataError):
    def __init__(self, message: str, line: int | None = None) -> None:
        if line is not None:
            message = f"line {line}: {message}"

        super().__init__(message)

        self.line = line


class MissingColumn(QuoteDataError):
    def __init__(self, column: str) -> None:
        super().__init__(f"Required column {column!r} is missing")

        self.column = column


class CalibrationError(ModelError):
    pass


class InfeasiblePoint(CalibrationError):
    pass


class MaxIterations(CalibrationError):
    pass


class AllPointsInfeasible(CalibrationError):
    pass

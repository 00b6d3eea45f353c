class QsepException(Exception):
    """
    Base error carrying a process exit status and a short detail message.
    """

    status_code = 1

    def __init__(self, detail: str, status_code: int | None = None):
        super().__init__(detail)
        self.detail = detail
        if status_code is not None:
            self.status_code = status_code


class ConfigError(QsepException):
    status_code = 2


class CheckFailed(QsepException):
    status_code = 1


class DimensionError(QsepException, ValueError):
    pass


class NumericalError(QsepException, ArithmeticError):
    pass


class ControlRangeError(QsepException, ValueError):
    pass


class MatrixError(QsepException, ValueError):
    pass


class EmptyEnsembleError(QsepException, ValueError):
    pass

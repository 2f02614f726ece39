"""Exception hierarchy shared by all modules."""


class LidarInsertError(Exception):
    """Base class for all errors raised by this package."""


class EmptyInput(LidarInsertError, ValueError):
    pass


class MissingLabels(LidarInsertError, ValueError):
    pass


class LengthMismatch(LidarInsertError, ValueError):
    pass


class OutOfBounds(LidarInsertError, IndexError):
    pass


class InsufficientData(LidarInsertError, ValueError):
    def __init__(self, message, classes=()):
        super().__init__(message)
        self.classes = tuple(classes)


class TooFewPoints(LidarInsertError, ValueError):
    pass


class MalformedFile(LidarInsertError, ValueError):
    pass


class CountMismatch(LidarInsertError, ValueError):
    pass


class MissingCalib(LidarInsertError, ValueError):
    pass


class SchemaViolation(LidarInsertError, ValueError):
    pass

"""Exception hierarchy shared by every stage of the pipeline."""


class PlaceChangeError(Exception):
    """Base class for all package errors."""


class ParseError(PlaceChangeError, ValueError):
    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{self.path}:{line}: {message}")


class DimensionError(PlaceChangeError, ValueError):
    pass


class StructureError(PlaceChangeError, ValueError):
    pass


class ValidationError(PlaceChangeError, ValueError):
    pass


class EmptyPoolError(PlaceChangeError, ValueError):
    """Raised when a search or mining step is handed an empty candidate set."""


class OneSidedTrainingError(PlaceChangeError, ValueError):
    """An SVM was asked to train with one class missing."""


class UntrainablePlaceError(PlaceChangeError):
    """A place region produced no harvested non-nuisance examples."""


class ParameterError(PlaceChangeError, ValueError):
    pass


class NoRelevantPairError(PlaceChangeError):
    pass


class ConfigError(PlaceChangeError, ValueError):
    pass

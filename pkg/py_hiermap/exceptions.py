class HierMapError(Exception):
    """Base exception for hiermap."""
    pass

class ValidationError(HierMapError):
    """Raised when an input violates a precondition of an operation."""
    pass

class DimensionError(ValidationError):
    """Raised when array shapes do not agree."""
    def __init__(self, message: str, expected: int = None, actual: int = None):
        super().__init__(message)
        self.expected = expected
        self.actual = actual

class SolverError(HierMapError):
    """Raised when a linear or iterative solve fails."""
    def __init__(self, message: str, iterations: int = None, residual: float = None):
        super().__init__(message)
        self.iterations = iterations
        self.residual = residual

class NotConvergedError(SolverError):
    """Raised by strict solves that hit their iteration cap."""
    pass

class ConfigError(HierMapError):
    """Raised for malformed configuration files; `key` is "section.key"."""
    def __init__(self, message: str, key: str = None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key

class PropertyViolation(HierMapError):
    """Raised when a property suite or certified bound fails."""
    def __init__(self, message: str, suite: str = None, reproducer: dict = None):
        super().__init__(message)
        self.suite = suite
        self.reproducer = reproducer

"""monocanon exceptions."""


class MonoCanonException(Exception):
    """Base class for all monocanon errors."""


class WarpDomainError(MonoCanonException, ValueError):
    """A point lies outside the unit interval or square."""

    def __init__(self, *args: object) -> None:
        super().__init__("Domain error", *args)


class InvalidWarpError(MonoCanonException, ValueError):
    """Warp parameters break the monotone warp invariants."""

    def __init__(self, *args: object) -> None:
        super().__init__("Invalid warp", *args)


class StructuralError(MonoCanonException):
    """Shapes, layer chains or recorded state do not fit together."""

    def __init__(self, *args: object) -> None:
        super().__init__("Structural error", *args)


class SolverError(MonoCanonException):
    """The fixed-point solver produced a non-finite iterate."""

    def __init__(self, iteration: int, *args: object) -> None:
        super().__init__("Solver error", f"iteration {iteration}", *args)
        self.iteration = iteration


class OptimizerError(MonoCanonException):
    """Gradient-descent canonicalization diverged."""

    def __init__(self, *args: object) -> None:
        super().__init__("Optimizer error", *args)


class TrainingError(MonoCanonException):
    """A training step produced a non-finite loss."""

    def __init__(self, *args: object, diagnostics: dict = None) -> None:
        super().__init__("Training error", *args)
        self.diagnostics = diagnostics or {}


class UsageError(MonoCanonException):
    """An operation was called outside its preconditions."""

    def __init__(self, *args: object) -> None:
        super().__init__("Usage error", *args)


class ParseError(MonoCanonException):
    """A binary file could not be parsed."""

    def __init__(self, offset: int, *args: object) -> None:
        super().__init__("Parse error", f"at byte offset {offset}", *args)
        self.offset = offset


class IntegrityError(MonoCanonException):
    """Stored data does not match its recorded checksum."""

    def __init__(self, *args: object) -> None:
        super().__init__("Integrity error", *args)


class GenerationError(MonoCanonException):
    """A sample could not be generated with the requested parameters."""

    def __init__(self, *args: object) -> None:
        super().__init__("Generation error", *args)


class ConfigError(MonoCanonException):
    """The run configuration is invalid."""

    def __init__(self, keys: list[str], *args: object) -> None:
        super().__init__("Config error", *args, *keys)
        self.keys = list(keys)

"""Exception types shared across the pipeline."""


class MGNetError(Exception):
    """Base class for all pipeline errors."""


class ParseError(MGNetError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class EncodingError(MGNetError, ValueError):
    pass


class ConfigError(MGNetError, ValueError):
    pass


class ShapeError(MGNetError, ValueError):
    pass


class ContractError(MGNetError, RuntimeError):
    pass


class MissingDependencyError(MGNetError):
    """An upstream pipeline stage has not produced its artifact yet."""

    def __init__(self, stage, detail=""):
        self.stage = stage
        msg = f"missing upstream artifact; run the `{stage}` stage first"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)

class BitmatError(Exception):
    exit_code = 1


class InvalidArgumentError(BitmatError, ValueError):
    exit_code = 2


class DimensionError(InvalidArgumentError):
    pass


class ParseError(BitmatError):
    exit_code = 2

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += "%s" % path
        if line is not None:
            where += ":%d" % line
        super().__init__("%s: %s" % (where, message) if where else message)


class IdentifiabilityError(BitmatError):
    exit_code = 3

    def __init__(self, message, components=None):
        self.components = components or []
        super().__init__(message)


class NumericalError(BitmatError):
    exit_code = 4

    def __init__(self, message, sweep=None):
        self.sweep = sweep
        super().__init__(message)


class InconsistentSystemError(NumericalError):
    pass

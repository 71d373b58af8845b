"""Exception types raised across the package."""


class BrwlabError(Exception):
    pass


class InvalidKernelError(BrwlabError, ValueError):
    pass


class InvalidRateError(BrwlabError, ValueError):
    pass


class InvalidSubgraphError(BrwlabError, ValueError):
    pass


class InvalidParameterError(BrwlabError, ValueError):
    pass


class InvalidPathError(BrwlabError, ValueError):
    pass


class InvalidCouplingError(BrwlabError, ValueError):
    pass


class NoChainError(BrwlabError, RuntimeError):
    pass


class NonConvergenceError(BrwlabError, RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


class BoxTooSmallError(BrwlabError, ValueError):
    pass


class NotApplicableError(BrwlabError, ValueError):
    pass


class BadBracketError(BrwlabError, ValueError):
    pass


class GraphTooLargeError(BrwlabError, ValueError):
    pass

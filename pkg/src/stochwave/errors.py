"""Exceptions with the exit codes the command line maps them to."""


class StochwaveError(Exception):
    exit_code = 1

    def __init__(self, kind: str, message: str = ""):
        super().__init__(f"{kind}: {message}" if message else kind)
        self.kind = kind


class HypothesisCheckFailed(StochwaveError):
    """A structural assumption on the model or kernel does not hold."""
    exit_code = 2


class SolverFailed(StochwaveError):
    """Newton divergence, singular bordered systems, non-simple kernels."""
    exit_code = 3

    def __init__(self, kind: str, message: str = "", last_sigma=None):
        super().__init__(kind, message)
        self.last_sigma = last_sigma


class NothingToReport(StochwaveError):
    exit_code = 4


class BlowUp(StochwaveError):
    def __init__(self, time: float):
        super().__init__("blow-up", f"non-finite state at t={time:.6g}")
        self.time = time

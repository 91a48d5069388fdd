"""Exception hierarchy shared by all modules."""


class DiracVacuaError(Exception):
    """Base class for every error raised by the package."""


class InvalidMetric(DiracVacuaError):
    pass


class InsufficientData(DiracVacuaError):
    pass


class ReductionOrderViolation(DiracVacuaError):
    pass


class FlowIntegrationFailure(DiracVacuaError):
    pass


class TransportFailure(DiracVacuaError):
    pass


class AssemblyError(DiracVacuaError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class HypothesisViolation(DiracVacuaError):
    pass


class AdjointError(DiracVacuaError):
    pass


class GapViolation(DiracVacuaError):
    pass


class QuadratureError(DiracVacuaError):
    def __init__(self, message, tail_estimate=None):
        super().__init__(message)
        self.tail_estimate = tail_estimate


class UnitarityDriftError(DiracVacuaError):
    def __init__(self, message, interval=None, drift=None):
        super().__init__(message)
        self.interval = interval
        self.drift = drift


class ModificationFailure(DiracVacuaError):
    pass


class DegeneracyError(DiracVacuaError):
    pass


class ExpSeriesError(DiracVacuaError):
    pass


class NoConvergence(DiracVacuaError):
    pass


class PositivityViolation(DiracVacuaError):
    pass


class KernelObstruction(DiracVacuaError):
    pass


class HadamardDiagnosticFailure(DiracVacuaError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class ConfigError(DiracVacuaError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path

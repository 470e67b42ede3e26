"""Exception hierarchy.

Each family carries the CLI exit code it maps to.
"""


class AHError(Exception):
    exit_code = 1


class ConfigError(AHError):
    exit_code = 2


class DomainError(ConfigError, ValueError):
    pass


class DegenerateMetricError(ConfigError):
    def __init__(self, point, detail=""):
        self.point = point
        super().__init__(f"degenerate metric at {point}{': ' + detail if detail else ''}")


class DegeneratePlaneError(ConfigError):
    pass


class DegenerateDataError(ConfigError):
    pass


class HomotopyError(ConfigError):
    pass


class ResolutionError(AHError):
    exit_code = 3


class SolverError(AHError):
    exit_code = 4


class FlowDivergenceError(SolverError):
    def __init__(self, msg, history=None):
        super().__init__(msg)
        self.history = history or []


class ChartOverflowError(SolverError):
    def __init__(self, node, detail=""):
        self.node = node
        super().__init__(f"map leaves target chart at node {node}{': ' + detail if detail else ''}")


class SolverDivergenceError(SolverError):
    pass


class GeodesicError(SolverError):
    pass


class BuildError(SolverError):
    pass


class CertificationError(AHError):
    exit_code = 5


class BarrierCertificationError(CertificationError):
    def __init__(self, msg, worst_node=None):
        super().__init__(msg)
        self.worst_node = worst_node


class ComparisonCertificateError(CertificationError):
    def __init__(self, msg, worst_t=None):
        super().__init__(msg)
        self.worst_t = worst_t

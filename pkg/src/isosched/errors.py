"""Exception hierarchy. Every error carries the name of the module that raised it."""


class IsoSchedError(Exception):
    module = "isosched"

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class GraphError(IsoSchedError):
    module = "graph-core"


class CycleDetected(GraphError):
    pass


class InvariantError(GraphError):
    pass


class TileModelError(IsoSchedError):
    module = "tile-model"


class NotComputeBearing(TileModelError):
    pass


class EmptyWorkload(TileModelError):
    pass


class LcsError(IsoSchedError):
    module = "lcs"


class EmptyInput(LcsError):
    pass


class ZeroMean(LcsError):
    pass


class UnsupportedKind(LcsError):
    pass


class PlatformError(IsoSchedError):
    module = "platform"


class UnplacedNode(PlatformError):
    pass


class ScheduleError(IsoSchedError):
    module = "sched-tensors"


class FinalTileUnscheduled(ScheduleError):
    pass


class MatchError(IsoSchedError):
    module = "mcu-match"


class ShapeMismatch(MatchError):
    pass


class SizeLimitExceeded(MatchError):
    pass


class SchedulerError(IsoSchedError):
    module = "iso-scheduler"


class ZeroRemainingTime(SchedulerError):
    pass


class NoVictimAvailable(SchedulerError):
    pass


class Unschedulable(SchedulerError):
    pass


class SimError(IsoSchedError):
    module = "sim-metrics"


class TableInconsistent(SimError):
    pass


class NoFeasibleRate(SimError):
    pass


class WorkloadError(IsoSchedError):
    module = "cli"


class ParseError(WorkloadError):
    pass

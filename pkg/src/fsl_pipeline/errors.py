"""Exception hierarchy shared by every stage of the pipeline."""


class PipelineError(Exception):
    """Base class. The CLI maps subclasses of this to exit code 1."""


class SpecError(PipelineError, ValueError):
    """A backbone description violates its invariants."""


class GraphError(PipelineError, ValueError):
    """Structurally invalid graph (cycles, dangling inputs, orphan BatchNorm...)."""


class ShapeMismatchError(GraphError):
    pass


class QuantizationError(PipelineError, ValueError):
    pass


class ArchError(PipelineError, ValueError):
    pass


class LoweringError(PipelineError, ValueError):
    pass


class SimulationError(PipelineError, ValueError):
    pass


class ProtocolError(PipelineError, ValueError):
    """Episode protocol infeasible for a feature set, or a degenerate feature."""


class FormatError(PipelineError, OSError):
    """A serialized artifact is malformed (bad magic, truncated, wrong version)."""

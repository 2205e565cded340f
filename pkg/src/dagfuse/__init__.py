"""dagfuse: compile many DNN model graphs into one DAG and serve them.

Layers: graph IR and validation (`graph_ir`), reference executor
(`executor`), fusion compiler (`fuse`), calibrated device cost model
(`costmodel`), model repository (`repo`), manager/scheduler
(`scheduler`), scenario replay (`scenario`), and the CLI/service
surfaces (`cli`, `service`).
"""

from .costmodel import (
    FUSED,
    UNFUSED,
    CostTable,
    LoadTimeline,
    MemoryEstimate,
    RunReport,
    estimate_memory,
    load_cost_table,
    simulate_load,
    simulate_run,
)
from .errors import (
    BudgetExceeded,
    CycleDetected,
    DagfuseError,
    DuplicateModelId,
    MissingInput,
    MissingWeight,
    NotFound,
    ShapeMismatch,
    Unschedulable,
    UnknownSubgraph,
    ValidationFailed,
)
from .executor import Tensor, run, run_batch
from .fuse import FusedDag, InitPreamble, SubGraph, execute_fused, fuse_models, swap_subgraph
from .graph_ir import (
    ModelGraph,
    OpNode,
    TensorSpec,
    ValidationReport,
    WeightStore,
    infer_shapes,
    topo_order,
    validate_graph,
)
from .repo import ModelManifest, Repository, profile_model
from .scheduler import (
    InferenceRequest,
    RequestQueue,
    RunLog,
    SchedulePlan,
    ingest,
    plan_batches,
    request_swap,
    run_plan,
)

__version__ = "0.1.0"

import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from dagfuse import costmodel  # noqa: E402
from dagfuse.executor import Tensor  # noqa: E402
from dagfuse.graph_ir import ModelGraph, OpNode, TensorSpec, WeightStore  # noqa: E402

CALIBRATION_PATH = ROOT / "calibration" / "paper_tableIV.cfg"
SCENARIO_DIR = ROOT / "scenario"


@pytest.fixture(scope="session")
def calibrated_ct() -> costmodel.CostTable:
    return costmodel.load_cost_table(CALIBRATION_PATH)


@pytest.fixture()
def default_ct() -> costmodel.CostTable:
    return costmodel.CostTable()


def make_dense_model(model_id="tiny", fan_in=4, units=3, weight=None, bias=None, seed=0):
    """Single dense-node model, optionally with explicit weights."""
    rng = np.random.default_rng(seed)
    if weight is None:
        weight = rng.standard_normal((units, fan_in)).astype(np.float32)
    refs = {"weight": f"{model_id}.w"}
    store = WeightStore()
    store.put(f"{model_id}.w", TensorSpec((units, fan_in)), np.asarray(weight))
    if bias is not None:
        store.put(f"{model_id}.b", TensorSpec((units,)), np.asarray(bias))
        refs["bias"] = f"{model_id}.b"
    node = OpNode("d0", "dense", {"units": units, "fan_in": fan_in}, refs, ())
    graph = ModelGraph(
        model_id=model_id,
        nodes=[node],
        entry="d0",
        exit="d0",
        input_spec=TensorSpec((fan_in,)),
        output_spec=TensorSpec((units,)),
    )
    return graph, store


def random_tensor(spec: TensorSpec, seed: int) -> Tensor:
    rng = np.random.default_rng(seed)
    return Tensor(spec, rng.standard_normal(spec.element_count).astype(np.float32))

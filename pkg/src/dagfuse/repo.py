"""On-disk model repository.

Layout: ``root/<model_id>/graph`` and ``root/<model_id>/weights`` plus
an index file ``root/repo.index`` (JSON) that round-trips losslessly.
Each manifest records the profiled memory requirement (whole MiB) and
per-iteration latency alongside the file references. Lookups are
concurrent-safe; registration takes an exclusive lock.
"""

from __future__ import annotations

import json
import threading
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

from . import costmodel, model_io
from .errors import DuplicateModelId, NotFound, ValidationFailed
from .graph_ir import ModelGraph, TensorSpec, WeightStore, validate_graph

INDEX_FILE = "repo.index"


@dataclass(frozen=True)
class ModelManifest:
    model_id: str
    graph_path: str
    weights_path: str
    mem_required_mib: int
    iter_latency_ms: float
    weight_bytes: int
    registered_at: str

    def __post_init__(self):
        if self.mem_required_mib <= 0:
            raise ValueError("mem_required_mib must be > 0")
        if self.iter_latency_ms <= 0:
            raise ValueError("iter_latency_ms must be > 0")


def profile_model(
    graph: ModelGraph, weights: WeightStore, cost_table: costmodel.CostTable
) -> tuple[int, float]:
    """Analytic (mem_required_mib, iter_latency_ms) for a validated model."""
    profile = costmodel.profile_graph(graph, weights, cost_table)
    return profile.mem_required_mib, profile.iter_latency_ms


class Repository:
    def __init__(self, root_dir, cost_table: costmodel.CostTable | None = None):
        self.root_dir = Path(root_dir)
        self.cost_table = cost_table or costmodel.DEFAULT_COST_TABLE
        self.index: dict[str, ModelManifest] = {}
        self._lock = threading.RLock()
        self._graph_cache: dict[str, ModelGraph] = {}
        self._weights_cache: dict[str, WeightStore] = {}

    # -- persistence ---------------------------------------------------

    @classmethod
    def open(cls, root_dir, cost_table: costmodel.CostTable | None = None) -> "Repository":
        """Load an existing repository (or start an empty one) at root_dir."""
        repo = cls(root_dir, cost_table)
        index_path = repo.root_dir / INDEX_FILE
        if index_path.exists():
            data = json.loads(index_path.read_text())
            for entry in data["models"]:
                manifest = ModelManifest(**entry)
                repo.index[manifest.model_id] = manifest
        return repo

    def _write_index(self) -> None:
        payload = {
            "models": [asdict(m) for _, m in sorted(self.index.items())],
        }
        (self.root_dir / INDEX_FILE).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    # -- registration --------------------------------------------------

    def register_model(
        self,
        graph: ModelGraph,
        weights: WeightStore,
        profile: tuple[int, float] | None = None,
    ) -> ModelManifest:
        """Persist a model and add it to the index.

        ``profile`` is an optional explicit (mem_required_mib,
        iter_latency_ms) pair; without it the model is profiled
        analytically against the repository's cost table.
        """
        report = validate_graph(graph, weights)
        if not report.ok:
            raise ValidationFailed(graph.model_id, report.problems)
        with self._lock:
            if graph.model_id in self.index:
                raise DuplicateModelId(graph.model_id)
            if profile is None:
                mem_required, iter_latency = profile_model(graph, weights, self.cost_table)
            else:
                mem_required, iter_latency = int(profile[0]), float(profile[1])
            model_dir = self.root_dir / graph.model_id
            model_dir.mkdir(parents=True, exist_ok=True)
            graph_path = model_dir / "graph"
            weights_path = model_dir / "weights"
            model_io.save_graph(graph, graph_path)
            model_io.save_weights(weights, weights_path)
            manifest = ModelManifest(
                model_id=graph.model_id,
                graph_path=str(graph_path),
                weights_path=str(weights_path),
                mem_required_mib=mem_required,
                iter_latency_ms=iter_latency,
                weight_bytes=weights.byte_size,
                registered_at=datetime.now(timezone.utc).isoformat(),
            )
            self.index[graph.model_id] = manifest
            self._graph_cache[graph.model_id] = graph
            self._weights_cache[graph.model_id] = weights
            self._write_index()
            return manifest

    def register_files(self, graph_path, weights_path, profile=None) -> ModelManifest:
        graph = model_io.load_graph(graph_path)
        weights = model_io.load_weights(weights_path)
        return self.register_model(graph, weights, profile)

    # -- lookups ---------------------------------------------------------

    def lookup(self, model_id: str) -> ModelManifest:
        with self._lock:
            try:
                return self.index[model_id]
            except KeyError:
                raise NotFound(model_id) from None

    def get_many(self, model_ids) -> list[ModelManifest]:
        return [self.lookup(mid) for mid in model_ids]

    def __contains__(self, model_id: str) -> bool:
        with self._lock:
            return model_id in self.index

    def model_ids(self) -> list[str]:
        with self._lock:
            return sorted(self.index)

    def load_graph(self, model_id: str) -> ModelGraph:
        manifest = self.lookup(model_id)
        with self._lock:
            if model_id not in self._graph_cache:
                self._graph_cache[model_id] = model_io.load_graph(manifest.graph_path)
            return self._graph_cache[model_id]

    def load_weights(self, model_id: str) -> WeightStore:
        manifest = self.lookup(model_id)
        with self._lock:
            if model_id not in self._weights_cache:
                self._weights_cache[model_id] = model_io.load_weights(manifest.weights_path)
            return self._weights_cache[model_id]

    def load_pair(self, model_id: str) -> tuple[ModelGraph, WeightStore]:
        return self.load_graph(model_id), self.load_weights(model_id)

    def input_spec(self, model_id: str) -> TensorSpec:
        return self.load_graph(model_id).input_spec

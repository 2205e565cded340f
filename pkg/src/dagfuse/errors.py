"""Exception types shared across the package."""

from __future__ import annotations


class DagfuseError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(DagfuseError):
    def __init__(self, node_id: str, message: str = ""):
        self.node_id = node_id
        super().__init__(f"shape mismatch at node {node_id!r}" + (f": {message}" if message else ""))


class CycleDetected(DagfuseError):
    def __init__(self, model_id: str = ""):
        self.model_id = model_id
        super().__init__(f"cycle detected in graph {model_id!r}")


class MissingWeight(DagfuseError):
    def __init__(self, node_id: str, name: str):
        self.node_id = node_id
        self.name = name
        super().__init__(f"node {node_id!r} references missing weight {name!r}")


class DuplicateModelId(DagfuseError):
    def __init__(self, model_id: str):
        self.model_id = model_id
        super().__init__(f"model id {model_id!r} already present")


class ValidationFailed(DagfuseError):
    def __init__(self, model_id: str, problems=()):
        self.model_id = model_id
        self.problems = list(problems)
        detail = "; ".join(str(p) for p in self.problems[:4])
        super().__init__(f"model {model_id!r} failed validation: {detail}")


class NotFound(DagfuseError):
    def __init__(self, model_id: str):
        self.model_id = model_id
        super().__init__(f"model {model_id!r} not registered")


class UnknownSubgraph(DagfuseError):
    def __init__(self, model_id: str):
        self.model_id = model_id
        super().__init__(f"no sub-graph for model {model_id!r} in this DAG")


class MissingInput(DagfuseError):
    def __init__(self, model_id: str):
        self.model_id = model_id
        super().__init__(f"no input supplied for model {model_id!r}")


class Unschedulable(DagfuseError):
    def __init__(self, model_id: str, reason: str = "exceeds device budget"):
        self.model_id = model_id
        self.reason = reason
        super().__init__(f"model {model_id!r} unschedulable: {reason}")


class BudgetExceeded(DagfuseError):
    def __init__(self, message: str):
        super().__init__(message)


class WeightsFormatError(DagfuseError):
    """Weights file is malformed (bad magic, truncated payload, ...)."""

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{path}: {message}")


class ModelFormatError(DagfuseError):
    """Model description file is malformed."""

    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{path}: {message}")


class ScenarioParseError(DagfuseError):
    def __init__(self, path, message: str):
        self.path = str(path)
        super().__init__(f"{path}: {message}")


class CostTableError(DagfuseError):
    """Cost table file is malformed or violates its invariants."""

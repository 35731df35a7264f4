"""Runtime features captured at the probe boundary of a filtered search.

Three groups besides the two global ones (landing distance, hops):

* filter ratios (``rho_*``): how often inspected / queued nodes pass the filter;
* queue statistics over every node currently in the candidate queue;
* result statistics over the valid nodes held in the result set.

Undefined statistics (empty queue or result set) take the value ``-1``.
A schema pins feature order and masking; its id travels with trained models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, SchemaMismatchError
from .search import Mode, SearchState

SENTINEL = -1.0
EPS = 1e-12
SCHEMA_VERSION = "v1"

_QUEUE = ["d_queue_first", "d_queue_last", "r_queue_first", "r_queue_last", "avg_queue",
          "var_queue", "perc_queue_25", "perc_queue_50", "perc_queue_75"]
_NN = [name.replace("queue", "nn") for name in _QUEUE]
FILTER_FEATURES = ("rho_pilot", "rho_queue", "rho_visited")
MASK_GROUPS = {"filter": FILTER_FEATURES}


def feature_names(mode: Mode) -> list[str]:
    rho = ["rho_pilot", "rho_queue"] + (["rho_visited"] if Mode(mode) is Mode.PRE else [])
    return ["d_start", "n_hops", *rho, *_QUEUE, *_NN]


@dataclass(frozen=True)
class FeatureSchema:
    mode: Mode = Mode.POST
    mask: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.mask in ("", "none"):
            object.__setattr__(self, "mask", None)
        if self.mask is not None and self.mask not in MASK_GROUPS:
            raise ContractViolation(f"unknown feature mask {self.mask!r}")

    @property
    def names(self) -> list[str]:
        return feature_names(self.mode)

    @property
    def masked(self) -> tuple[str, ...]:
        return MASK_GROUPS[self.mask] if self.mask else ()

    @property
    def schema_id(self) -> str:
        sid = f"{self.mode.value}/{SCHEMA_VERSION}"
        return sid + (f"/mask={self.mask}" if self.mask else "")

    @classmethod
    def parse(cls, schema_id: str) -> "FeatureSchema":
        parts = schema_id.split("/")
        if len(parts) not in (2, 3) or parts[1] != SCHEMA_VERSION:
            raise SchemaMismatchError(f"unrecognised feature schema {schema_id!r}")
        mask = None
        if len(parts) == 3:
            if not parts[2].startswith("mask="):
                raise SchemaMismatchError(f"unrecognised feature schema {schema_id!r}")
            mask = parts[2][5:]
        try:
            return cls(Mode(parts[0]), mask)
        except (ValueError, ContractViolation):
            raise SchemaMismatchError(f"unrecognised feature schema {schema_id!r}") from None

    @classmethod
    def for_model(cls, model, mode: Mode) -> "FeatureSchema":
        schema = cls.parse(model.schema_id)
        if schema.mode is not Mode(mode):
            raise SchemaMismatchError(
                f"model expects {schema.mode.value}-filter features, search runs {Mode(mode).value}")
        return schema


@dataclass(frozen=True)
class RuntimeFeatures:
    schema_id: str
    values: tuple[float, ...]

    @property
    def schema(self) -> FeatureSchema:
        return FeatureSchema.parse(self.schema_id)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.schema.names, self.values))

    def __getattr__(self, name):
        if name.startswith("_"):
            raise AttributeError(name)
        names = FeatureSchema.parse(self.schema_id).names
        if name in names:
            return self.values[names.index(name)]
        if name == "rho_visited":
            return None
        raise AttributeError(name)

    def to_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64)


def nearest_rank(sorted_values: np.ndarray, pct: float) -> float:
    n = len(sorted_values)
    rank = max(1, math.ceil(pct / 100.0 * n))
    return float(sorted_values[rank - 1])


def distance_stats(sorted_d: np.ndarray, d_start: float) -> list[float]:
    """first, last, their ratios to ``d_start``, mean, population variance, quartiles."""
    if len(sorted_d) == 0:
        return [SENTINEL] * len(_QUEUE)
    scale = max(d_start, EPS)
    first, last = float(sorted_d[0]), float(sorted_d[-1])
    return [first, last, first / scale, last / scale, float(np.mean(sorted_d)),
            float(np.var(sorted_d)), nearest_rank(sorted_d, 25), nearest_rank(sorted_d, 50),
            nearest_rank(sorted_d, 75)]


def _ratio(num: int, den: int) -> float:
    return num / den if den else SENTINEL


def extract_features(state: SearchState, schema: FeatureSchema | Mode = Mode.POST,
                     mask: str | None = None) -> RuntimeFeatures:
    if not isinstance(schema, FeatureSchema):
        schema = FeatureSchema(schema, mask)
    if schema.mode is not state.mode:
        raise SchemaMismatchError(f"{schema.mode.value} schema on a {state.mode.value} search")
    if state.n_total_visited == 0:
        raise ContractViolation("feature extraction before any node was visited")
    q_ids, q_d = state.queue_snapshot()
    _, r_d = state.result_snapshot()
    if state.mode is Mode.PRE:
        rho_queue = 1.0  # only valid nodes are ever queued; vacuous when the queue is empty
    else:
        rho_queue = (float(np.count_nonzero(state.valid[q_ids])) / len(q_ids)) if len(q_ids) else SENTINEL
    values = {"d_start": state.d_start, "n_hops": float(state.hops), "rho_queue": rho_queue}
    if schema.mode is Mode.POST:
        values["rho_pilot"] = _ratio(state.n_valid_visited, state.n_total_visited)
    else:
        values["rho_pilot"] = _ratio(state.n_valid_one_hop, state.n_total_one_hop)
        values["rho_visited"] = _ratio(state.n_valid_visited, state.n_total_visited)
    values.update(zip(_QUEUE, distance_stats(q_d, state.d_start)))
    values.update(zip(_NN, distance_stats(r_d, state.d_start)))
    for name in schema.masked:
        if name in values:
            values[name] = 0.0
    return RuntimeFeatures(schema.schema_id, tuple(float(values[n]) for n in schema.names))

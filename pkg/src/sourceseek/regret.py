"""Per-step regret against the clairvoyant top-I comparator."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .environment import DisturbanceType, EnvironmentState
from .seeker import select_positions


def union_sum(values: np.ndarray, cells) -> float:
    """Sum of ``values`` over the union of ``cells``; repeats count once."""
    return float(np.sum(values[np.unique(np.asarray(cells, dtype=int))]))


def oracle_positions(state_vector, count: int) -> np.ndarray:
    return select_positions(state_vector, count)[0]


def regret_target(env: EnvironmentState, kind) -> np.ndarray:
    """Nominal state for type I, disturbed state for type II."""
    return env.phi if DisturbanceType.parse(kind) is DisturbanceType.EXTERNAL else env.phi_tilde


@dataclass(frozen=True)
class RegretRecord:
    step: int
    oracle: np.ndarray
    chosen: np.ndarray
    regret: float
    cumulative: float


def step_regret(env: EnvironmentState, chosen, kind, cumulative: float = 0.0) -> RegretRecord:
    target = regret_target(env, kind)
    chosen = np.asarray(chosen, dtype=int)
    best = oracle_positions(target, chosen.size)
    r = union_sum(target, best) - union_sum(target, chosen)
    return RegretRecord(env.k, best, chosen, r, cumulative + r)


@dataclass
class RegretTracker:
    kind: DisturbanceType
    records: list = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.records[-1].cumulative if self.records else 0.0

    def record(self, env: EnvironmentState, chosen) -> RegretRecord:
        rec = step_regret(env, chosen, self.kind, self.total)
        self.records.append(rec)
        return rec

"""D-UCB vector, confidence-width schedules and the multi-agent position rule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import linear_sum_assignment

from .environment import DisturbanceType, GridSpec


@dataclass(frozen=True)
class ConfidenceSchedule:
    """Constants of the confidence width beta_k(delta).

    ``budget`` is the seeker's declared model k -> B_k; the realized
    disturbance is never visible here. ``prior_error`` stands in for
    ||phi_hat_0 - phi_0||.
    """

    kind: DisturbanceType
    n: int
    delta: float
    sigma_bounds: tuple[float, float]
    noise_bounds: tuple[float, float]
    alpha_bounds: tuple[float, float]
    prior_error: float
    lambda_bar: float = 1.0
    gamma: float = 1.0
    state_bound: float = 0.0
    c_beta: float = 1.0
    budget: Callable[[int], float] = lambda k: 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", DisturbanceType.parse(self.kind))
        if not 0.0 < self.delta < 1.0:
            raise ValueError("confidence delta must lie in (0, 1)")
        lo, hi = self.sigma_bounds
        if not 0 < lo <= hi:
            raise ValueError("need 0 < sigma_lower <= sigma_upper")
        lo, hi = self.noise_bounds
        if not 0 < lo <= hi:
            raise ValueError("need 0 < v_lower <= v_upper")
        lo, hi = self.alpha_bounds
        if not 0 < lo <= hi:
            raise ValueError("need 0 < alpha_lower <= alpha_upper")
        if self.c_beta <= 0:
            raise ValueError("c_beta must be positive")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def c1(self) -> float:
        return self.prior_error / math.sqrt(self.sigma_bounds[0])

    @property
    def c2(self) -> float:
        v_lo, v_hi = self.noise_bounds
        return v_hi ** 2 * math.sqrt(max(2.0, 2.0 / v_lo))

    @property
    def c3(self) -> float:
        return self.state_bound / math.sqrt(self.alpha_bounds[0])

    def geometric_sum(self, k: int) -> float:
        """sum_{t<k} gamma^(2(k-t-1)), closed form."""
        g2 = self.gamma * self.gamma
        if g2 == 1.0:
            return float(k)
        return (1.0 - g2 ** k) / (1.0 - g2)

    def _log_term(self, k: int) -> float:
        n = self.n
        s_lo, s_hi = self.sigma_bounds
        v_lo = self.noise_bounds[0]
        a_hi = self.alpha_bounds[1]
        if self.kind is DisturbanceType.EXTERNAL:
            num = s_hi / s_lo + a_hi * s_hi * k / v_lo ** 2
        else:
            num = 1.0 + a_hi / v_lo ** 2 * self.geometric_sum(k)
        # log(num / delta^(2/n)) kept in log space
        arg = math.log(num) - (2.0 / n) * math.log(self.delta)
        assert arg > 0, "confidence log argument must exceed 1"
        return math.sqrt(arg)

    def beta(self, k: int) -> float:
        return beta_schedule(self, k)

    def scaled_beta(self, k: int) -> float:
        """beta_k * gamma^((k-1)/2): the width multiplying sqrt(diag) of the scaled covariance."""
        if self.kind is DisturbanceType.EXTERNAL or self.gamma == 1.0:
            return beta_schedule(self, k) * self.gamma ** (0.5 * (k - 1))
        rn = math.sqrt(self.n)
        shrink = self.gamma ** (0.5 * (k - 1))
        return self.c_beta * rn * (self.c1 * shrink + self.c3 + self.c2 * rn * self._log_term(k))


def beta_schedule(sched: ConfidenceSchedule, k: int, budget: float | None = None) -> float:
    """beta_k(delta) at equality, times ``c_beta``.

    ``budget`` overrides the schedule's declared B_k (type I only).
    """
    if k < 0:
        raise ValueError("step must be nonnegative")
    rn = math.sqrt(sched.n)
    log_term = sched._log_term(k)
    if sched.kind is DisturbanceType.EXTERNAL:
        b_k = sched.budget(k) if budget is None else budget
        core = sched.lambda_bar * b_k + sched.c1 + sched.c2 * rn * log_term
    else:
        grow = sched.gamma ** (0.5 * (1 - k))
        core = sched.c1 + sched.c3 * grow + sched.c2 * rn * grow * log_term
    return sched.c_beta * rn * core


def ducb(filt, beta: float) -> np.ndarray:
    """mu = mean + beta * sqrt(diag Sigma_k), elementwise.

    For a filter carrying the scaled covariance, the gamma^((k-1)/2)
    rescaling is applied here so that ``beta`` is always the unscaled width.
    """
    diag = filt.cov_diagonal()
    if diag.size and float(diag.min()) < -1e-12:
        raise ValueError(f"covariance diagonal has negative entry {float(diag.min()):.3g}")
    width = np.sqrt(np.clip(diag, 0.0, None))
    if beta == 0:
        return filt.mean.copy()
    factor = beta * math.exp(filt.ucb_log_scale)
    return filt.mean + factor * width


def select_positions(mu, count: int) -> tuple[np.ndarray, np.ndarray]:
    """Top-``count`` cells by value, ties to the smaller index; returns (cells, action vector)."""
    mu = np.asarray(mu, dtype=float)
    if count > mu.size:
        raise ValueError(f"cannot pick {count} distinct cells out of {mu.size}")
    order = np.lexsort((np.arange(mu.size), -mu))
    cells = order[:count]
    return cells, action_vector(cells, mu.size)


def action_vector(cells, n: int) -> np.ndarray:
    a = np.zeros(n)
    a[np.asarray(cells, dtype=int)] = 1.0
    return a


def assign_agents(targets, previous, grid: GridSpec) -> np.ndarray:
    """Map target cells onto agents minimizing total squared grid distance.

    Returns the per-agent cell array, ``out[i]`` being agent i's next cell.
    """
    targets = np.asarray(targets, dtype=int)
    previous = np.asarray(previous, dtype=int)
    if targets.size != previous.size:
        raise ValueError("need one target per agent")
    t = np.array([grid.rowcol(c) for c in targets], dtype=float).reshape(-1, 2)
    p = np.array([grid.rowcol(c) for c in previous], dtype=float).reshape(-1, 2)
    cost = ((p[:, None, :] - t[None, :, :]) ** 2).sum(axis=2)
    rows, cols = linear_sum_assignment(cost)
    out = np.empty_like(previous)
    out[rows] = targets[cols]
    return out


@dataclass(frozen=True)
class Decision:
    """Positions chosen for one step, in agent order, with the vector that produced them."""

    mu: np.ndarray
    positions: np.ndarray
    action: np.ndarray
    beta: float

"""Ground-truth grid world: linear dynamics plus non-stochastic disturbances."""
from __future__ import annotations

import enum
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np


class DisturbanceType(str, enum.Enum):
    EXTERNAL = "I"   # enters the measured state only
    INTERNAL = "II"  # injected into the dynamics, accumulates

    @classmethod
    def parse(cls, value) -> "DisturbanceType":
        if isinstance(value, cls):
            return value
        text = str(value).strip().upper().removeprefix("TYPE").strip("-_ ")
        return cls(text)


class StateBoundViolation(RuntimeError):
    """The disturbed state left the configured norm ball."""

    def __init__(self, step: int, norm: float, bound: float):
        self.step = step
        super().__init__(f"||phi_tilde|| = {norm:.6g} exceeds bound {bound:.6g} at step {step}")


@dataclass(frozen=True)
class GridSpec:
    """Square lattice of ``side x side`` cells indexed row-major."""

    side: int

    def __post_init__(self):
        if int(self.side) != self.side or self.side < 1:
            raise ValueError(f"grid side must be a positive integer, got {self.side}")

    @property
    def n(self) -> int:
        return self.side * self.side

    def index(self, row: int, col: int) -> int:
        if not (0 <= row < self.side and 0 <= col < self.side):
            raise IndexError(f"cell ({row}, {col}) outside {self.side}x{self.side} grid")
        return row * self.side + col

    def rowcol(self, index: int) -> tuple[int, int]:
        if not 0 <= index < self.n:
            raise IndexError(f"cell index {index} outside [0, {self.n})")
        return divmod(int(index), self.side)

    def coords(self) -> np.ndarray:
        """(n, 2) array of (row, col) for every index."""
        r, c = np.divmod(np.arange(self.n), self.side)
        return np.stack([r, c], axis=1)


@dataclass
class DynamicsModel:
    """Transition schedule k -> A_k (k >= 1) with cached forward products.

    ``alpha_lower``/``alpha_upper`` are the configured bounds used by the
    confidence schedule; ``None`` means "take them from verification".
    """

    transition: Callable[[int], np.ndarray]
    n: int
    time_invariant: bool = False
    alpha_lower: float | None = None
    alpha_upper: float | None = None
    _products: list = field(default_factory=list, repr=False)
    _inverses: dict = field(default_factory=dict, repr=False)

    @classmethod
    def constant(cls, a: np.ndarray, **kw) -> "DynamicsModel":
        a = np.array(a, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("transition matrix must be square")
        a.setflags(write=False)
        return cls(transition=lambda k: a, n=a.shape[0], time_invariant=True, **kw)

    def matrix(self, k: int) -> np.ndarray:
        if k < 1:
            raise ValueError(f"A_k is defined for k >= 1, got {k}")
        a = self.transition(k)
        if a.shape != (self.n, self.n):
            raise ValueError(f"A_{k} has shape {a.shape}, expected {(self.n, self.n)}")
        return a

    def inverse(self, k: int) -> np.ndarray:
        key = 1 if self.time_invariant else k
        inv = self._inverses.get(key)
        if inv is None:
            inv = np.linalg.inv(self.matrix(k))
            if self.time_invariant or len(self._inverses) < 4:
                self._inverses[key] = inv
            else:
                self._inverses.clear()
                self._inverses[key] = inv
        return inv

    def forward_product(self, k: int) -> np.ndarray:
        """A[k:1] = A_k ... A_1, cached incrementally; identity for k < 1."""
        if k < 1:
            return np.eye(self.n)
        if not self._products:
            self._products.append(self.matrix(1).copy())
        while len(self._products) < k:
            j = len(self._products) + 1
            self._products.append(self.matrix(j) @ self._products[-1])
        return self._products[k - 1]


def state_propagation_matrix(model: DynamicsModel, k: int, t: int) -> np.ndarray:
    """A[k:t] = A_k A_{k-1} ... A_t, identity when k < t."""
    if k < t:
        return np.eye(model.n)
    if t < 1:
        raise ValueError(f"A[k:t] needs t >= 1 when k >= t (got k={k}, t={t})")
    if t == 1:
        return model.forward_product(k)
    out = model.matrix(t).copy()
    for j in range(t + 1, k + 1):
        out = model.matrix(j) @ out
    return out


def build_convection_diffusion(
    grid: GridSpec,
    diffusion: float,
    velocity=(0.0, 0.0),
    dt: float = 1.0,
    renormalize: bool = False,
    singular_floor: float = 1e-3,
) -> DynamicsModel:
    """Explicit-Euler, first-order upwind, zero-flux stencil on ``grid``.

    ``velocity = (v_x, v_y)`` moves mass along columns (x) and rows (y),
    in cells per unit time. Every flux is exchanged between two cells, so
    column sums are 1 before renormalization.
    """
    if diffusion < 0:
        raise ValueError("diffusion must be nonnegative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    vx, vy = (float(v) for v in velocity)
    courant = dt * (4.0 * diffusion + abs(vx) + abs(vy))
    if courant >= 1.0:
        raise ValueError(f"explicit scheme unstable: dt*(4D/h^2 + |vx| + |vy|) = {courant:.4g} >= 1")

    side, n = grid.side, grid.n
    a = np.eye(n)
    d = diffusion * dt

    def exchange(src, dst, rate):
        a[src, src] -= rate
        a[dst, src] += rate

    for r in range(side):
        for c in range(side):
            i = r * side + c
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                rr, cc = r + dr, c + dc
                if not (0 <= rr < side and 0 <= cc < side):
                    continue
                j = rr * side + cc
                rate = d
                if dc == np.sign(vx) and dc != 0:
                    rate += abs(vx) * dt
                if dr == np.sign(vy) and dr != 0:
                    rate += abs(vy) * dt
                exchange(i, j, rate)

    sv = np.linalg.svd(a, compute_uv=False)
    if renormalize:
        if sv[0] > 1.0:
            a /= sv[0]
            sv = sv / sv[0]
        if sv[-1] < singular_floor:
            raise ValueError(
                f"renormalized A has smallest singular value {sv[-1]:.3g} below floor {singular_floor:.3g}"
            )
    if sv[-1] < 1e-10:
        raise ValueError("transition matrix is singular")
    return DynamicsModel.constant(a)


@dataclass
class DisturbanceSchedule:
    """Type-tagged non-stochastic sequence delta_k with its realized budget.

    ``delta`` maps a step to an n-vector, or ``None`` for a zero step.
    """

    kind: DisturbanceType
    delta: Callable[[int], np.ndarray | None]
    n: int

    @classmethod
    def zero(cls, n: int, kind=DisturbanceType.EXTERNAL) -> "DisturbanceSchedule":
        return cls(DisturbanceType.parse(kind), lambda k: None, n)

    @classmethod
    def decaying(cls, pattern: np.ndarray, onset: int, kind=DisturbanceType.EXTERNAL):
        """delta_k = pattern / k^2 for k >= onset, zero before."""
        pattern = np.asarray(pattern, dtype=float)
        if onset < 1:
            raise ValueError("decay onset must be >= 1")
        return cls(DisturbanceType.parse(kind),
                   lambda k: pattern / float(k) ** 2 if k >= onset else None, pattern.size)

    @classmethod
    def windows(cls, spans, patterns, kind=DisturbanceType.INTERNAL):
        """delta_k = patterns[j] for spans[j][0] <= k <= spans[j][1]."""
        spans = [(int(a), int(b)) for a, b in spans]
        patterns = [np.asarray(p, dtype=float) for p in patterns]
        if len(spans) != len(patterns):
            raise ValueError("one pattern per window is required")
        n = patterns[0].size if patterns else 0

        def delta(k):
            for (lo, hi), p in zip(spans, patterns):
                if lo <= k <= hi:
                    return p
            return None

        return cls(DisturbanceType.parse(kind), delta, n)

    def vector(self, k: int) -> np.ndarray:
        d = self.delta(k)
        return np.zeros(self.n) if d is None else d

    def budget(self, upto: int) -> float:
        """Sum_{k=0}^{upto} ||delta_k||, recomputed from scratch."""
        total = 0.0
        for k in range(upto + 1):
            d = self.delta(k)
            if d is not None:
                total += float(np.linalg.norm(d))
        return total


@dataclass(frozen=True)
class EnvironmentState:
    """Nominal and disturbed states at step ``k``; ``budget`` = sum of ||delta_t||, t < k."""

    phi: np.ndarray
    phi_tilde: np.ndarray
    k: int = 0
    budget: float = 0.0

    @classmethod
    def initial(cls, phi0) -> "EnvironmentState":
        phi0 = np.asarray(phi0, dtype=float)
        return cls(phi0.copy(), phi0.copy(), 0, 0.0)


_warned_negative = False


def propagate(
    state: EnvironmentState,
    model: DynamicsModel,
    schedule: DisturbanceSchedule,
    state_bound: float | None = None,
) -> EnvironmentState:
    """Advance one step; the disturbance ``delta_k`` is applied per its type.

    Type I leaves the nominal trajectory untouched; type II accumulates
    ``delta`` in ``phi_tilde`` while ``phi`` stays nominal for diagnostics.
    """
    global _warned_negative
    k = state.k
    a = model.matrix(k + 1)
    d = schedule.delta(k)
    phi = a @ state.phi
    base = phi if schedule.kind is DisturbanceType.EXTERNAL else a @ state.phi_tilde
    if d is None:
        phi_tilde = base.copy() if base is phi else base
        step_norm = 0.0
    else:
        phi_tilde = base + d
        step_norm = float(np.linalg.norm(d))
    if schedule.kind is DisturbanceType.INTERNAL and state_bound is not None:
        norm = float(np.linalg.norm(phi_tilde))
        if norm > state_bound:
            raise StateBoundViolation(k + 1, norm, state_bound)
    if not _warned_negative and (np.any(phi < 0) or np.any(phi_tilde < 0)):
        _warned_negative = True
        warnings.warn(f"environment state has negative entries at step {k + 1}", RuntimeWarning,
                      stacklevel=2)
    return replace(state, phi=phi, phi_tilde=phi_tilde, k=k + 1, budget=state.budget + step_norm)


@dataclass
class AssumptionReport:
    alpha_lower: float
    alpha_upper: float
    pairs: list
    passed: bool | None
    configured: tuple[float | None, float | None]

    def summary(self) -> str:
        verdict = {None: "no bounds configured", True: "PASS", False: "FAIL"}[self.passed]
        return (f"empirical alpha_lower={self.alpha_lower:.6g} alpha_upper={self.alpha_upper:.6g} "
                f"over {len(self.pairs)} (k, t) pairs: {verdict}")


def _extreme_gram_eigs(p: np.ndarray) -> tuple[float, float]:
    sv = np.linalg.svd(p, compute_uv=False)
    return float(sv[-1] ** 2), float(sv[0] ** 2)


def verify_assumption1(
    model: DynamicsModel,
    horizon: int,
    samples: int = 200,
    rng: np.random.Generator | None = None,
) -> AssumptionReport:
    """Empirical extreme eigenvalues of A[k:t]^T A[k:t] over sampled 1 <= t <= k <= horizon.

    All pairs are used when there are at most ``samples`` of them. For a
    time-invariant model only the span length matters; a symmetric A is
    handled exactly from its eigenvalues.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = np.inf, -np.inf

    if model.time_invariant:
        a = model.matrix(1)
        lengths = np.arange(1, horizon + 1)
        if lengths.size > samples:
            picked = rng.choice(lengths[1:-1], size=samples - 2, replace=False)
            lengths = np.unique(np.concatenate([[1, horizon], picked]))
        pairs = [(int(L), 1) for L in lengths]
        if np.allclose(a, a.T, atol=1e-14, rtol=0):
            mags = np.abs(np.linalg.eigvalsh(a))
            for L in lengths:
                lo = min(lo, float(mags.min()) ** (2 * L))
                hi = max(hi, float(mags.max()) ** (2 * L))
        else:
            want = set(int(L) for L in lengths)
            p = np.eye(model.n)
            for L in range(1, int(lengths.max()) + 1):
                p = a @ p
                if L in want:
                    e_lo, e_hi = _extreme_gram_eigs(p)
                    lo, hi = min(lo, e_lo), max(hi, e_hi)
    else:
        total = horizon * (horizon + 1) // 2
        if total <= samples:
            pairs = [(k, t) for k in range(1, horizon + 1) for t in range(1, k + 1)]
        else:
            ks = rng.integers(1, horizon + 1, size=samples)
            ts = np.array([rng.integers(1, k + 1) for k in ks])
            pairs = sorted(set(zip(ks.tolist(), ts.tolist())))
        for k, t in pairs:
            e_lo, e_hi = _extreme_gram_eigs(state_propagation_matrix(model, k, t))
            lo, hi = min(lo, e_lo), max(hi, e_hi)

    configured = (model.alpha_lower, model.alpha_upper)
    passed = None
    if model.alpha_lower is not None or model.alpha_upper is not None:
        tol = 1e-9
        ok_lo = model.alpha_lower is None or lo >= model.alpha_lower * (1 - tol)
        ok_hi = model.alpha_upper is None or hi <= model.alpha_upper * (1 + tol)
        passed = bool(ok_lo and ok_hi)
    return AssumptionReport(lo, hi, pairs, passed, configured)

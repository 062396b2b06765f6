"""Discounted Kalman filter in covariance form, its closed form, and a lifted fast path.

Three interchangeable routes produce the same estimates:

* :func:`filter_step_standard` / :func:`filter_step_stable` follow the
  five-step recursion literally with dense SPD inversions;
* :func:`closed_form_oracle` evaluates the batch expression through the
  accumulated information matrix (small N, tests only);
* :class:`LiftedFilter` accumulates that information matrix incrementally in
  initial-time coordinates, which is cheap and stays well conditioned when
  the dynamics contract.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.linalg import cho_solve, solve_triangular

from .numerics import CovarianceSingularError, cholesky_lower, spd_inverse, symmetrize
from .sensing import MeasurementBatch


class WeightMode(str, enum.Enum):
    TYPE_I = "type1"
    TYPE_II = "type2"
    UNDISCOUNTED = "undiscounted"


class FilterForm(str, enum.Enum):
    STANDARD = "standard"
    STABLE = "stable"


def type1_lambda(batch: MeasurementBatch, cov: np.ndarray, lambda_bar: float) -> float:
    """min{1, lambda_bar / ||Y||_Sigma} with ||Y||_Sigma = sqrt(lambda_max(Y Sigma Y)).

    Only the support of the diagonal Y enters the eigenproblem. ``cov`` may
    also be a callable returning the support block, so engines that never
    hold a dense covariance can supply it.
    """
    s = batch.support
    if s.size == 0:
        return 1.0
    ys = batch.info_diag[s]
    block = cov(s) if callable(cov) else cov[np.ix_(s, s)]
    top = float(np.linalg.eigvalsh(symmetrize(ys[:, None] * block * ys[None, :]))[-1])
    norm = math.sqrt(max(top, 0.0))
    if norm == 0.0:
        return 1.0
    return min(1.0, lambda_bar / norm)


@dataclass(frozen=True)
class WeightSchedule:
    """Per-step weights (lambda_k, omega_k).

    Type II extends omega_k = gamma^-k to k = -1, i.e. omega_{-1} = gamma;
    this is what makes the scaled recursion agree with the standard one from
    the very first step.
    """

    mode: WeightMode
    lambda_bar: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "mode", WeightMode(self.mode))
        if self.mode is WeightMode.TYPE_I and self.lambda_bar <= 0:
            raise ValueError("lambda_bar must be positive")
        if self.mode is WeightMode.TYPE_II and not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")

    @property
    def discount(self) -> float:
        return self.gamma if self.mode is WeightMode.TYPE_II else 1.0

    def omega(self, k: int) -> float:
        if self.mode is WeightMode.TYPE_II:
            return self.gamma ** (-k)
        return 0.0

    def lam(self, k: int, batch: MeasurementBatch | None = None, cov=None) -> float:
        if self.mode is WeightMode.TYPE_II:
            return self.gamma ** (-k)
        if self.mode is WeightMode.UNDISCOUNTED:
            return 1.0
        return type1_lambda(batch, cov, self.lambda_bar)


@dataclass(frozen=True)
class FilterState:
    """Mean, covariance and the auxiliary Gamma at step ``k``.

    In stable form ``cov`` holds the scaled covariance gamma^-(k-1) Sigma_k.
    """

    mean: np.ndarray
    cov: np.ndarray
    gamma_mat: np.ndarray
    gamma_inv: np.ndarray
    k: int = 0
    form: FilterForm = FilterForm.STANDARD
    discount: float = 1.0

    @classmethod
    def initial(cls, mean0, cov0, form=FilterForm.STANDARD, gamma: float = 1.0) -> "FilterState":
        mean0 = np.asarray(mean0, dtype=float).copy()
        cov0 = symmetrize(np.asarray(cov0, dtype=float))
        n = mean0.size
        form = FilterForm(form)
        if form is FilterForm.STABLE:
            cov0 = gamma * cov0
        return cls(mean0, cov0, np.eye(n), np.eye(n), 0, form,
                   gamma if form is FilterForm.STABLE else 1.0)

    def cov_diagonal(self) -> np.ndarray:
        return np.diag(self.cov).copy()

    def cov_block(self, idx) -> np.ndarray:
        return self.cov[np.ix_(idx, idx)]

    @property
    def ucb_log_scale(self) -> float:
        """log of the factor turning sqrt(diag cov) into sqrt(diag Sigma_k)."""
        if self.form is FilterForm.STABLE and self.discount != 1.0:
            return 0.5 * (self.k - 1) * math.log(self.discount)
        return 0.0

    def covariance(self) -> np.ndarray:
        """The unscaled Sigma_k (may underflow for long stable runs)."""
        if self.form is FilterForm.STABLE:
            return self.discount ** (self.k - 1) * self.cov
        return self.cov


def _advance_gamma(state: FilterState, a: np.ndarray, a_inv: np.ndarray):
    g = symmetrize(a @ state.gamma_mat @ a.T)
    g_inv = symmetrize(a_inv.T @ state.gamma_inv @ a_inv)
    return g, g_inv


def filter_step_standard(
    state: FilterState,
    batch: MeasurementBatch,
    a_next: np.ndarray,
    lam: float,
    omega: float,
    omega_prev: float,
    a_next_inv: np.ndarray | None = None,
) -> FilterState:
    """One pass of the weighted recursion from step k to k+1.

    Raises :class:`CovarianceSingularError` tagged with the step index on any
    failed inversion, and ``ValueError`` for a decreasing omega.
    """
    if state.form is not FilterForm.STANDARD:
        raise ValueError("filter_step_standard needs a standard-form state")
    if lam < 0:
        raise ValueError("lambda_k must be nonnegative")
    d_omega = omega - omega_prev
    if d_omega < 0:
        raise ValueError(f"omega must be nondecreasing (omega_k - omega_k-1 = {d_omega:.3g})")
    k = state.k
    a_inv = np.linalg.inv(a_next) if a_next_inv is None else a_next_inv

    info_half = spd_inverse(state.cov, k) + np.diag(lam * batch.info_diag)
    cov_half = spd_inverse(info_half, k)
    resid = batch.info_vector - batch.info_diag * state.mean
    mean_half = state.mean + lam * (cov_half @ resid)

    inner = info_half + d_omega * state.gamma_inv if d_omega != 0 else info_half
    cov_next = symmetrize(a_next @ spd_inverse(inner, k) @ a_next.T)
    if d_omega != 0:
        mean_next = cov_next @ (a_inv.T @ (info_half @ mean_half))
    else:
        # Sigma_{k+1} A^-T Sigma_{k+1/2}^-1 collapses to A exactly
        mean_next = a_next @ mean_half

    g, g_inv = _advance_gamma(state, a_next, a_inv)
    return replace(state, mean=mean_next, cov=cov_next, gamma_mat=g, gamma_inv=g_inv, k=k + 1)


def filter_step_stable(
    state: FilterState,
    batch: MeasurementBatch,
    a_next: np.ndarray,
    gamma: float,
    a_next_inv: np.ndarray | None = None,
) -> FilterState:
    """Overflow-free recursion for lambda_k = omega_k = gamma^-k on the scaled covariance."""
    if state.form is not FilterForm.STABLE:
        raise ValueError("filter_step_stable needs a stable-form state")
    if not 0.0 < gamma <= 1.0:
        raise ValueError("gamma must lie in (0, 1]")
    k = state.k
    a_inv = np.linalg.inv(a_next) if a_next_inv is None else a_next_inv
    c = 1.0 - gamma

    info_half = gamma * spd_inverse(state.cov, k) + np.diag(batch.info_diag)
    cov_half = spd_inverse(info_half, k)
    resid = batch.info_vector - batch.info_diag * state.mean
    mean_half = state.mean + cov_half @ resid

    inner = info_half + c * state.gamma_inv if c != 0 else info_half
    cov_next = symmetrize(a_next @ spd_inverse(inner, k) @ a_next.T)
    mean_next = a_next @ mean_half
    if c != 0:
        mean_next = mean_next - c * (cov_next @ (a_inv.T @ (state.gamma_inv @ mean_half)))

    g, g_inv = _advance_gamma(state, a_next, a_inv)
    return replace(state, mean=mean_next, cov=cov_next, gamma_mat=g, gamma_inv=g_inv, k=k + 1)


@dataclass
class ClosedFormLedger:
    """Running sums behind the batch form of the filter.

    Upsilon_k = Sigma_0^-1 + sum_t lambda_t A[t:1]^T Y_t A[t:1] + (omega_{k-1} - omega_{-1}) I,
    with ``omega_base`` = omega_{-1} (0 in the usual convention).
    """

    prior_info: np.ndarray
    prior_term: np.ndarray
    sum_vec: np.ndarray
    sum_mat: np.ndarray
    omega_last: float = 0.0
    omega_base: float = 0.0
    k: int = 0

    @classmethod
    def start(cls, mean0, cov0, omega_base: float = 0.0) -> "ClosedFormLedger":
        prior_info = np.linalg.inv(np.asarray(cov0, dtype=float))
        n = prior_info.shape[0]
        return cls(prior_info, prior_info @ np.asarray(mean0, dtype=float), np.zeros(n),
                   np.zeros((n, n)), omega_base, omega_base, 0)

    def record(self, batch: MeasurementBatch, lam: float, omega: float, a_t1: np.ndarray) -> None:
        """Absorb step ``self.k``'s measurement; ``a_t1`` is A[k:1]."""
        self.sum_vec = self.sum_vec + lam * (a_t1.T @ batch.info_vector)
        self.sum_mat = self.sum_mat + lam * (a_t1.T @ (batch.info_diag[:, None] * a_t1))
        self.omega_last = omega
        self.k += 1

    def upsilon(self) -> np.ndarray:
        n = self.prior_info.shape[0]
        return self.prior_info + self.sum_mat + (self.omega_last - self.omega_base) * np.eye(n)


def closed_form_oracle(ledger: ClosedFormLedger, model, k: int | None = None):
    """(mean_k, Sigma_k) from the batch expression; explicit inverse, small N only."""
    k = ledger.k if k is None else k
    if k != ledger.k:
        raise ValueError(f"ledger holds step {ledger.k}, asked for {k}")
    a_k1 = model.forward_product(k)
    ups_inv = np.linalg.inv(ledger.upsilon())
    cov = a_k1 @ ups_inv @ a_k1.T
    mean = a_k1 @ (ups_inv @ (ledger.prior_term + ledger.sum_vec))
    return mean, 0.5 * (cov + cov.T)


class LiftedFilter:
    """Incremental batch form in initial-time coordinates.

    Keeps B = A[k:1], Q = gamma^(k-1) Upsilon_k and b = gamma^(k-1) times the
    accumulated information vector, so that

        cov  = B Q^-1 B^T      (the scaled covariance when gamma < 1)
        mean = B Q^-1 b

    Each step is Q <- gamma Q + lam B_s^T Y_s B_s + (1 - gamma) I over the
    sensed rows s, then B <- A_{k+1} B. ``gamma = 1`` with a free ``lam``
    covers the type-I and undiscounted schedules.
    """

    def __init__(self, mean0, cov0, model, gamma: float = 1.0):
        if not 0.0 < gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        mean0 = np.asarray(mean0, dtype=float)
        cov0 = np.asarray(cov0, dtype=float)
        self.model = model
        self.discount = float(gamma)
        self.k = 0
        self.n = mean0.size
        self._q = spd_inverse(gamma * cov0)
        self._b = self._q @ mean0
        self._basis = np.eye(self.n)
        self._sparse = {}
        self._refresh()

    def _refresh(self) -> None:
        self._chol = cholesky_lower(self._q, self.k)
        self._w = solve_triangular(self._chol, self._basis.T, lower=True, check_finite=False)
        self.mean = self._basis @ cho_solve((self._chol, True), self._b, check_finite=False)

    def _transition(self, k: int):
        a = self.model.matrix(k)
        key = 1 if self.model.time_invariant else k
        if key not in self._sparse:
            if not self.model.time_invariant:
                self._sparse.clear()
            dense_frac = np.count_nonzero(a) / a.size
            self._sparse[key] = sp.csr_matrix(a) if dense_frac < 0.05 else a
        return self._sparse[key]

    @property
    def form(self) -> FilterForm:
        return FilterForm.STABLE if self.discount != 1.0 else FilterForm.STANDARD

    @property
    def ucb_log_scale(self) -> float:
        if self.discount != 1.0:
            return 0.5 * (self.k - 1) * math.log(self.discount)
        return 0.0

    def cov_diagonal(self) -> np.ndarray:
        return np.einsum("ij,ij->j", self._w, self._w)

    def cov_block(self, idx) -> np.ndarray:
        w = self._w[:, idx]
        return w.T @ w

    @property
    def cov(self) -> np.ndarray:
        return symmetrize(self._w.T @ self._w)

    def step(self, batch: MeasurementBatch, lam: float = 1.0) -> None:
        g = self.discount
        s = batch.support
        rows = self._basis[s]
        ys = batch.info_diag[s]
        q = g * self._q
        if s.size:
            q += lam * (rows.T @ (ys[:, None] * rows))
            self._b = g * self._b + lam * (rows.T @ batch.info_vector[s])
        else:
            self._b = g * self._b
        if g != 1.0:
            q[np.diag_indices_from(q)] += 1.0 - g
        self._q = symmetrize(q)
        self._basis = np.asarray(self._transition(self.k + 1) @ self._basis)
        self.k += 1
        self._refresh()


@dataclass
class RecursionFilter:
    """Stateful wrapper over the literal step functions, same surface as :class:`LiftedFilter`."""

    state: FilterState
    model: object
    weights: WeightSchedule
    omega_prev: float = field(default=0.0)

    @classmethod
    def create(cls, mean0, cov0, model, weights: WeightSchedule, form=None) -> "RecursionFilter":
        if form is None:
            form = FilterForm.STABLE if weights.mode is WeightMode.TYPE_II else FilterForm.STANDARD
        form = FilterForm(form)
        gamma = weights.gamma if weights.mode is WeightMode.TYPE_II else 1.0
        state = FilterState.initial(mean0, cov0, form, gamma)
        return cls(state, model, weights, weights.omega(-1))

    @property
    def k(self) -> int:
        return self.state.k

    @property
    def mean(self) -> np.ndarray:
        return self.state.mean

    @property
    def cov(self) -> np.ndarray:
        return self.state.cov

    @property
    def discount(self) -> float:
        return self.state.discount

    @property
    def form(self) -> FilterForm:
        return self.state.form

    @property
    def ucb_log_scale(self) -> float:
        return self.state.ucb_log_scale

    def cov_diagonal(self) -> np.ndarray:
        return self.state.cov_diagonal()

    def cov_block(self, idx) -> np.ndarray:
        return self.state.cov_block(idx)

    def step(self, batch: MeasurementBatch, lam: float = 1.0) -> None:
        k = self.state.k
        a = self.model.matrix(k + 1)
        a_inv = self.model.inverse(k + 1)
        if self.state.form is FilterForm.STABLE:
            self.state = filter_step_stable(self.state, batch, a, self.state.discount, a_inv)
        else:
            omega = self.weights.omega(k)
            self.state = filter_step_standard(self.state, batch, a, lam, omega, self.omega_prev, a_inv)
            self.omega_prev = omega

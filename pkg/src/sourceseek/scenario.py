"""Algorithm-1 main loop, seeded multi-trial orchestration and result files."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import subprocess
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioConfig
from .environment import (
    AssumptionReport,
    DisturbanceSchedule,
    DisturbanceType,
    DynamicsModel,
    EnvironmentState,
    GridSpec,
    build_convection_diffusion,
    propagate,
    verify_assumption1,
)
from .kalman import FilterForm, LiftedFilter, RecursionFilter, WeightMode, WeightSchedule
from .regret import RegretTracker
from .seeker import ConfidenceSchedule, assign_agents, ducb, select_positions
from .sensing import SensorModel, measure

log = logging.getLogger(__name__)

TRIAL_COLUMNS = ("step", "r", "R_cum", "chosen_cells", "oracle_cells", "beta", "lambda",
                 "trace_sigma", "est_err_norm")
DIAGNOSTIC_COLUMNS = ("omega", "mu_chosen")
AGGREGATE_COLUMNS = ("step", "mean_Rcum", "q25", "q75")

# substream tags under a trial's seed
_SETUP, _NOISE = 0, 1


def trial_seed(master: int, trial: int) -> np.random.SeedSequence:
    """Order-independent split of the master seed."""
    return np.random.SeedSequence(entropy=int(master), spawn_key=(int(trial),))


def substream(seed: np.random.SeedSequence, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed.entropy, spawn_key=tuple(seed.spawn_key) + tuple(key))
    return np.random.Generator(np.random.Philox(ss))


@dataclass
class World:
    """Everything about a scenario that is identical across trials."""

    config: ScenarioConfig
    grid: GridSpec
    model: DynamicsModel
    sensors: SensorModel
    weights: WeightSchedule
    phi0: np.ndarray


def load_initial_field(cfg: ScenarioConfig, grid: GridSpec) -> np.ndarray:
    spec = cfg.initial_field
    if spec.file:
        path = Path(spec.file)
        values = np.load(path) if path.suffix == ".npy" else np.loadtxt(path)
        values = np.asarray(values, dtype=float).ravel()
        if values.size != grid.n:
            raise ConfigError(f"{path}: expected {grid.n} values, found {values.size}")
        return values
    phi = np.full(grid.n, float(spec.background))
    for src in spec.sources:
        phi[grid.index(int(src["row"]), int(src["col"]))] += float(src["magnitude"])
    return phi


def build_world(cfg: ScenarioConfig) -> World:
    grid = GridSpec(cfg.grid.side)
    dyn = cfg.dynamics
    model = build_convection_diffusion(grid, dyn.diffusion, dyn.velocity, dyn.dt,
                                       dyn.renormalize, dyn.singular_floor)
    if dyn.alpha_bounds is not None:
        model.alpha_lower, model.alpha_upper = (float(x) for x in dyn.alpha_bounds)
    a = cfg.agents
    sensors = SensorModel(float(a.radius), a.variances(),
                          tuple(a.variance_bounds) if a.variance_bounds else None)
    f = cfg.filter
    mode = WeightMode(f.mode)
    weights = WeightSchedule(mode, f.lambda_bar, f.gamma if mode is WeightMode.TYPE_II else 1.0)
    return World(cfg, grid, model, sensors, weights, load_initial_field(cfg, grid))


def injection_candidates(cfg: ScenarioConfig, grid: GridSpec) -> np.ndarray:
    d = cfg.disturbance
    if d.placement == "uniform":
        return np.arange(grid.n)
    coords = grid.coords().astype(float)
    sources = cfg.initial_field.sources
    if d.placement == "near_peak":
        sources = [max(sources, key=lambda s: s["magnitude"])]
    src = np.array([[s["row"], s["col"]] for s in sources], dtype=float)
    dist = np.sqrt(((coords[:, None, :] - src[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
    lo, hi = d.near_band
    cand = np.flatnonzero((dist >= lo - 1e-9) & (dist <= hi + 1e-9))
    if cand.size < d.cells:
        raise ConfigError("near_band leaves too few candidate cells")
    return cand


def make_disturbance(cfg: ScenarioConfig, n: int, rng: np.random.Generator) -> DisturbanceSchedule:
    """Sparse nonnegative patterns drawn from the trial's setup stream."""
    d = cfg.disturbance
    kind = DisturbanceType.parse(d.type)
    cand = injection_candidates(cfg, GridSpec(cfg.grid.side))

    def pattern():
        p = np.zeros(n)
        cells = rng.choice(cand, size=min(d.cells, cand.size), replace=False)
        lo, hi = d.magnitude
        p[cells] = rng.uniform(lo, hi, size=cells.size)
        return p

    if d.kind == "none":
        return DisturbanceSchedule.zero(n, kind)
    if d.kind == "decay":
        return DisturbanceSchedule.decaying(pattern(), d.onset, kind)
    return DisturbanceSchedule.windows(d.windows, [pattern() for _ in d.windows], kind)


def declared_budget(cfg: ScenarioConfig):
    """k -> B_k as the seeker is told it; never reads the realized patterns."""
    d = cfg.disturbance
    bm = d.budget_model
    if d.kind == "none" or bm == "zero":
        return lambda k: 0.0
    if not isinstance(bm, str):
        return lambda k, c=float(bm): c
    # ||pattern|| <= sqrt(cells) * max magnitude
    bound = math.sqrt(d.cells) * float(d.magnitude[1])
    if d.kind == "decay":
        onset = d.onset

        def envelope(k):
            if k < onset:
                return 0.0
            return bound * float(np.sum(1.0 / np.arange(onset, k + 1, dtype=float) ** 2))

        return envelope
    spans = [(int(a), int(b)) for a, b in d.windows]
    return lambda k: bound * sum(max(0, min(k, hi) - lo + 1) for lo, hi in spans)


@dataclass
class Constants:
    """Scenario-level quantities resolved once per experiment."""

    alpha_bounds: tuple[float, float]
    state_bound: float | None
    prior_error: float
    report: str | None = None


def resolve_constants(cfg: ScenarioConfig, world: World | None = None) -> Constants:
    world = world or build_world(cfg)
    report: AssumptionReport | None = None
    if cfg.verify.enabled:
        report = verify_assumption1(world.model, cfg.horizon, cfg.verify.samples)
        log.info("assumption check: %s", report.summary())
        if report.passed is False:
            raise ConfigError(f"dynamics violate the configured bounds: {report.summary()}")
    else:
        warnings.warn("dynamics bound verification waived", RuntimeWarning, stacklevel=2)
    if cfg.dynamics.alpha_bounds is not None:
        alpha = tuple(float(x) for x in cfg.dynamics.alpha_bounds)
    elif report is not None:
        alpha = (report.alpha_lower, report.alpha_upper)
    else:
        raise ConfigError("dynamics.alpha_bounds is required when verification is disabled")

    phi0_norm = float(np.linalg.norm(world.phi0))
    prior_mean = np.full(world.grid.n, cfg.filter.prior_mean)
    prior_error = cfg.confidence.prior_error_bound
    if prior_error is None:
        prior_error = float(np.linalg.norm(prior_mean)) + phi0_norm

    state_bound = cfg.disturbance.state_bound
    if state_bound is None and cfg.disturbance.type == "II":
        total = declared_budget(cfg)(cfg.horizon)
        state_bound = math.sqrt(alpha[1]) * (phi0_norm + total) * (1 + 1e-9)
    return Constants(alpha, state_bound, float(prior_error), report.summary() if report else None)


def confidence_schedule(cfg: ScenarioConfig, world: World, consts: Constants) -> ConfidenceSchedule:
    return ConfidenceSchedule(
        kind=cfg.disturbance.type,
        n=world.grid.n,
        delta=cfg.confidence.delta,
        sigma_bounds=(cfg.filter.prior_variance, cfg.filter.prior_variance),
        noise_bounds=world.sensors.bounds,
        alpha_bounds=consts.alpha_bounds,
        prior_error=consts.prior_error,
        lambda_bar=cfg.filter.lambda_bar,
        gamma=world.weights.discount,
        state_bound=consts.state_bound or 0.0,
        c_beta=cfg.confidence.c_beta,
        budget=declared_budget(cfg),
    )


def initial_positions(grid: GridSpec, count: int) -> np.ndarray:
    """Greedy farthest-point spread starting from the centre cell."""
    coords = grid.coords().astype(float)
    centre = np.array([(grid.side - 1) / 2.0] * 2)
    first = int(np.argmin(((coords - centre) ** 2).sum(axis=1)))
    chosen = [first]
    dist = ((coords - coords[first]) ** 2).sum(axis=1)
    while len(chosen) < count:
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, ((coords - coords[nxt]) ** 2).sum(axis=1))
    return np.array(chosen, dtype=int)


def make_filter(cfg: ScenarioConfig, world: World):
    n = world.grid.n
    mean0 = np.full(n, cfg.filter.prior_mean)
    cov0 = cfg.filter.prior_variance * np.eye(n)
    if cfg.filter.engine == "lifted":
        if cfg.filter.form == "standard" and world.weights.mode is WeightMode.TYPE_II:
            raise ConfigError("the lifted engine only runs type-II weights in scaled form")
        return LiftedFilter(mean0, cov0, world.model, world.weights.discount)
    form = None if cfg.filter.form == "auto" else FilterForm(cfg.filter.form)
    if form is FilterForm.STABLE and world.weights.mode is not WeightMode.TYPE_II:
        # the stable recursion at gamma = 1 is the undiscounted filter
        if world.weights.mode is WeightMode.TYPE_I:
            raise ConfigError("type-I weights cannot run in stable form")
    return RecursionFilter.create(mean0, cov0, world.model, world.weights, form)


@dataclass
class TrialResult:
    trial: int
    seed: list
    columns: dict
    final_positions: np.ndarray | None
    wall_clock: float
    injections: list = field(default_factory=list)
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def cumulative(self) -> np.ndarray:
        return np.asarray(self.columns["R_cum"], dtype=float)


def run_trial(cfg: ScenarioConfig, trial: int = 0, consts: Constants | None = None,
              world: World | None = None, record_mu: bool = False) -> TrialResult:
    """One seeded run of measure -> filter -> D-UCB -> select -> advance, K times.

    Row k holds the regret of the positions measured at step k; the last
    decision (for step K) is kept in ``final_positions``.
    """
    world = world or build_world(cfg)
    consts = consts or resolve_constants(cfg, world)
    seed = trial_seed(cfg.seed, trial)
    setup_rng = substream(seed, _SETUP)
    grid, sensors, weights = world.grid, world.sensors, world.weights
    kind = DisturbanceType.parse(cfg.disturbance.type)
    schedule = make_disturbance(cfg, grid.n, setup_rng)
    conf = confidence_schedule(cfg, world, consts)
    filt = make_filter(cfg, world)
    count = sensors.agents

    env = EnvironmentState.initial(world.phi0)
    tracker = RegretTracker(kind)
    positions = initial_positions(grid, count)
    beta = conf.beta(0)
    cols = {c: [] for c in TRIAL_COLUMNS + DIAGNOSTIC_COLUMNS}
    if record_mu:
        cols["mu"] = []
    injections = []
    if cfg.disturbance.kind == "windows":
        for lo, _ in cfg.disturbance.windows:
            injections.append((int(lo), np.flatnonzero(schedule.vector(int(lo)))))

    t0 = time.perf_counter()
    error = None
    try:
        for k in range(cfg.horizon):
            rngs = [substream(seed, _NOISE, k, i) for i in range(count)]
            batch = measure(env.phi_tilde, positions, sensors, grid, rngs)
            if weights.mode is WeightMode.TYPE_I:
                lam_actual = weights.lam(k, batch, filt.cov_block)
            else:
                lam_actual = weights.lam(k)
            # the scaled filters absorb gamma^-k themselves
            lam_step = 1.0 if weights.mode is WeightMode.TYPE_II and filt.form is FilterForm.STABLE else lam_actual
            trace = float(np.sum(filt.cov_diagonal()))
            err = float(np.linalg.norm(filt.mean - env.phi_tilde))

            filt.step(batch, lam_step)
            beta_next = conf.beta(k + 1)
            mu = ducb(filt, beta_next)
            cells, _ = select_positions(mu, count)
            nxt = assign_agents(cells, positions, grid)

            rec = tracker.record(env, positions)
            cols["step"].append(k)
            cols["r"].append(rec.regret)
            cols["R_cum"].append(rec.cumulative)
            cols["chosen_cells"].append(positions.copy())
            cols["oracle_cells"].append(rec.oracle)
            cols["beta"].append(beta)
            cols["lambda"].append(lam_actual)
            cols["trace_sigma"].append(trace)
            cols["est_err_norm"].append(err)
            cols["omega"].append(weights.omega(k))
            cols["mu_chosen"].append(mu[nxt])
            if record_mu:
                cols["mu"].append(mu)

            env = propagate(env, world.model, schedule, consts.state_bound if kind is DisturbanceType.INTERNAL else None)
            positions = nxt
            beta = beta_next
    except Exception as exc:  # noqa: BLE001 - reported per trial
        step = cols["step"][-1] + 1 if cols["step"] else 0
        error = f"step {step}: {type(exc).__name__}: {exc}"
        log.warning("trial %d aborted at %s", trial, error)
    return TrialResult(trial, [int(seed.entropy), *seed.spawn_key], cols,
                       None if error else positions, time.perf_counter() - t0, injections, error)


def reacquisition_steps(result: TrialResult, cap: int | None = None) -> list[int]:
    """Per injection window: steps from its start until some chosen cell is an
    injected cell that is also among the oracle cells. Censored at ``cap``
    (default: the remaining horizon)."""
    chosen, oracle = result.columns["chosen_cells"], result.columns["oracle_cells"]
    out = []
    for start, support in result.injections:
        limit = len(chosen) - start if cap is None else cap
        steps = limit
        target = set(int(c) for c in support)
        for k in range(start, min(start + limit, len(chosen))):
            if target & set(int(c) for c in chosen[k]) & set(int(c) for c in oracle[k]):
                steps = k - start
                break
        out.append(steps)
    return out


def _fmt(x) -> str:
    if isinstance(x, np.ndarray) or isinstance(x, (list, tuple)):
        return ";".join(_fmt(v) for v in x)
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def trial_csv(result: TrialResult, diagnostics: bool = False) -> str:
    cols = TRIAL_COLUMNS + (DIAGNOSTIC_COLUMNS if diagnostics else ())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for i in range(len(result.columns["step"])):
        w.writerow([_fmt(result.columns[c][i]) for c in cols])
    return buf.getvalue()


def aggregate(results: list[TrialResult]) -> dict:
    good = [r for r in results if r.ok]
    if not good:
        return {c: np.zeros(0) for c in AGGREGATE_COLUMNS}
    curves = np.vstack([r.cumulative for r in good])
    return {
        "step": np.arange(curves.shape[1]),
        "mean_Rcum": curves.mean(axis=0),
        "q25": np.percentile(curves, 25, axis=0),
        "q75": np.percentile(curves, 75, axis=0),
    }


def aggregate_csv(agg: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(AGGREGATE_COLUMNS)
    for i in range(len(agg["step"])):
        w.writerow([_fmt(agg[c][i]) if c != "step" else str(int(agg[c][i])) for c in AGGREGATE_COLUMNS])
    return buf.getvalue()


def git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True,
                             timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


@dataclass
class ExperimentResult:
    config: ScenarioConfig
    trials: list
    aggregate: dict
    constants: Constants
    out_dir: Path | None = None

    @property
    def failures(self) -> list:
        return [r for r in self.trials if not r.ok]


def _trial_worker(args):
    cfg_dict, trial, consts = args
    cfg = ScenarioConfig.from_dict(cfg_dict)
    return run_trial(cfg, trial, consts)


def run_experiment(cfg: ScenarioConfig, out_dir=None, workers: int | None = None,
                   write: bool = True) -> ExperimentResult:
    """Run ``cfg.trials`` independent trials and write per-trial and aggregate results.

    Trial i is seeded by ``split(cfg.seed, i)`` so outputs do not depend on
    ``workers``. Failed trials are listed in the manifest and skipped by the
    aggregate.
    """
    t0 = time.perf_counter()
    world = build_world(cfg)
    consts = resolve_constants(cfg, world)
    workers = cfg.workers if workers is None else workers
    if workers > 1 and cfg.trials > 1:
        jobs = [(cfg.to_dict(), i, consts) for i in range(cfg.trials)]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_trial_worker, jobs))
    else:
        results = [run_trial(cfg, i, consts, world) for i in range(cfg.trials)]
    results.sort(key=lambda r: r.trial)
    agg = aggregate(results)
    out = None
    if write:
        out = Path(out_dir if out_dir is not None else cfg.output.dir)
        out.mkdir(parents=True, exist_ok=True)
        for r in results:
            (out / f"trial_{r.trial:03d}.csv").write_text(trial_csv(r, cfg.output.diagnostics),
                                                          encoding="utf-8")
        (out / "aggregate.csv").write_text(aggregate_csv(agg), encoding="utf-8")
        manifest = {
            "package": f"sourceseek {__version__}",
            "build": git_describe(),
            "config": cfg.to_dict(),
            "rng": {"family": "philox", "split": "SeedSequence(entropy=seed, spawn_key=(trial,))"},
            "master_seed": cfg.seed,
            "trial_seeds": {r.trial: r.seed for r in results},
            "assumption_check": consts.report,
            "constants": {"alpha_bounds": list(consts.alpha_bounds), "state_bound": consts.state_bound,
                          "prior_error": consts.prior_error},
            "failures": {r.trial: r.error for r in results if not r.ok},
            "wall_clock": {"total": time.perf_counter() - t0,
                           "trials": {r.trial: r.wall_clock for r in results}},
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str), encoding="utf-8")
    return ExperimentResult(cfg, results, agg, consts, out)

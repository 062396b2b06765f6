"""Command-line entry point: ``sourceseek {run,scenarios,verify,oracle}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig
from .environment import EnvironmentState, verify_assumption1
from .kalman import ClosedFormLedger, FilterForm, RecursionFilter, WeightMode, closed_form_oracle
from .scenario import build_world, run_experiment, substream, trial_seed
from .scenarios import _PRESETS, get_scenario
from .sensing import measure

ORACLE_MAX_SIDE = 10


def load_config(ref: str) -> ScenarioConfig:
    """A YAML path, or the name of a built-in scenario."""
    if ref in _PRESETS and not Path(ref).exists():
        return get_scenario(ref)
    return ScenarioConfig.load(ref)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.horizon is not None:
        overrides["horizon"] = args.horizon
    if overrides:
        cfg = cfg.replace(**overrides)
    res = run_experiment(cfg, out_dir=args.out)
    agg = res.aggregate
    ok = len(res.trials) - len(res.failures)
    print(f"{cfg.name}: {ok}/{len(res.trials)} trials ok, written to {res.out_dir}")
    if len(agg["step"]):
        print(f"mean cumulative regret at K={cfg.horizon}: {agg['mean_Rcum'][-1]:.4f}")
    for r in res.failures:
        print(f"  trial {r.trial} failed: {r.error}", file=sys.stderr)
    return 0 if ok else 1


def cmd_scenarios(args) -> int:
    for name in _PRESETS:
        cfg = get_scenario(name)
        d = cfg.disturbance
        print(f"{name:22s} D={cfg.grid.side:<3d} K={cfg.horizon:<5d} I={cfg.agents.count} "
              f"type={d.type} kind={d.kind} mode={cfg.filter.mode}")
    return 0


def cmd_verify(args) -> int:
    cfg = load_config(args.config)
    world = build_world(cfg)
    report = verify_assumption1(world.model, cfg.horizon, args.samples or cfg.verify.samples)
    print(report.summary())
    return 1 if report.passed is False else 0


def cmd_oracle(args) -> int:
    """Run the literal recursion next to the batch expression and report the gap."""
    cfg = load_config(args.config)
    if cfg.grid.side > ORACLE_MAX_SIDE:
        side = ORACLE_MAX_SIDE
        sources = [s for s in cfg.initial_field.sources if s["row"] < side and s["col"] < side]
        cfg = cfg.replace(**{"grid.side": side, "initial_field.sources": sources,
                             "initial_field.file": None,
                             "agents.count": min(cfg.agents.count, side * side)})
        print(f"grid reduced to {side}x{side} for the closed-form check")
    world = build_world(cfg)
    n, steps = world.grid.n, min(cfg.horizon, args.steps)
    weights = world.weights
    mean0 = np.full(n, cfg.filter.prior_mean)
    cov0 = cfg.filter.prior_variance * np.eye(n)
    filt = RecursionFilter.create(mean0, cov0, world.model, weights, FilterForm.STANDARD)
    ledger = ClosedFormLedger.start(mean0, cov0, weights.omega(-1))
    seed = trial_seed(cfg.seed, 0)
    rng = substream(seed, 9)
    env = EnvironmentState.initial(world.phi0)
    worst_mean = worst_cov = 0.0
    for k in range(steps):
        pos = rng.choice(n, size=world.sensors.agents, replace=False)
        batch = measure(env.phi_tilde, pos, world.sensors, world.grid, rng)
        lam = weights.lam(k, batch, filt.cov) if weights.mode is WeightMode.TYPE_I else weights.lam(k)
        ledger.record(batch, lam, weights.omega(k), world.model.forward_product(k))
        filt.step(batch, lam)
        mean_cf, cov_cf = closed_form_oracle(ledger, world.model)
        worst_mean = max(worst_mean, float(np.linalg.norm(filt.mean - mean_cf) / np.linalg.norm(mean_cf)))
        worst_cov = max(worst_cov, float(np.linalg.norm(filt.cov - cov_cf) / np.linalg.norm(cov_cf)))
    print(f"{steps} steps, N={n}: max relative gap mean {worst_mean:.3e}, covariance {worst_cov:.3e}")
    ok = worst_mean <= args.tol and worst_cov <= args.tol
    print("PASS" if ok else "FAIL")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sourceseek", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run all trials of a scenario")
    run.add_argument("--config", required=True, help="YAML file or built-in scenario name")
    run.add_argument("--trials", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--out")
    run.add_argument("--workers", type=int)
    run.add_argument("--horizon", type=int)
    run.set_defaults(func=cmd_run)

    sc = sub.add_parser("scenarios", help="built-in scenarios")
    sc.add_argument("action", choices=["list"])
    sc.set_defaults(func=cmd_scenarios)

    ver = sub.add_parser("verify", help="check the dynamics bounds only")
    ver.add_argument("--config", required=True)
    ver.add_argument("--samples", type=int)
    ver.set_defaults(func=cmd_verify)

    orc = sub.add_parser("oracle", help="closed-form filter cross-check at small N")
    orc.add_argument("--config", required=True)
    orc.add_argument("--steps", type=int, default=30)
    orc.add_argument("--tol", type=float, default=1e-8)
    orc.set_defaults(func=cmd_oracle)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

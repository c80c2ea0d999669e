"""Experiment runner: config ingestion, orchestration, CSV/JSON/SVG output.

One YAML config describes one experiment (see configs/example_full.yaml
for the commented schema). Every run self-reports whether the analytic
decay envelopes held: the checks live here in the runner, not only in the
test suite, because verifying them is the point of the artifact.

Exit codes: 0 success, 2 at least one applicable envelope check failed,
1 runtime/config error.

Subcommands: run, batch, solve-mne, validate-schedule, version. The
MFNASH_OUTPUT_ROOT environment variable prefixes all output directories.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import json
import math
import os
import sys
import traceback
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dynamics import (
    AnnealedSchedule,
    DynamicsState,
    FixedSchedule,
    IntegratorConfig,
    annealed_bound,
    derive_certified_schedule,
    rate_constants,
    run as run_dynamics,
    run_stability_limit,
    validate_annealing,
)
from .equilibrium import solve_fixed_point
from .errors import ScheduleValidationError
from .game import Game, builtin_game, game_constants, load_kernel_file
from .grid import TorusGrid, normalize, uniform_density
from .metrics import MetricsRecord, relative_entropy
from .particles import init_particles, run_particles

ENVELOPE_SLACK = 1.05  # spatial-discretization allowance on decay envelopes

_MODES = ("pde", "particles", "fixed_point")
_SCHEDULE_KEYS = ("fixed", "annealed", "annealed_auto")


@dataclass
class ExperimentConfig:
    """Parsed and fully validated experiment description."""

    path: str
    game: Game
    constants: object
    schedule: object
    integrator: IntegratorConfig | None
    mode: str
    particles_n: int
    seed: int
    damping: float
    tol: float
    max_iter: int
    init_kind: str
    out_dir: Path
    csv_name: str
    summary_name: str
    plots: bool
    pragmatic: bool
    raw: dict


def _cfg_error(msg: str) -> ValueError:
    return ValueError(f"config error: {msg}")


def _build_game(tree: dict) -> Game:
    gspec = tree.get("game")
    if not isinstance(gspec, dict):
        raise _cfg_error("missing 'game' block")
    kernel_file = gspec.get("kernel_file")
    if kernel_file:
        path = Path(kernel_file)
        if not path.exists():
            raise _cfg_error(f"kernel file {path} does not exist")
        return load_kernel_file(path)
    players = tree.get("players")
    if not isinstance(players, dict):
        raise _cfg_error("missing 'players' block")
    count = int(players.get("count", 2))
    dims = players.get("dims", [1] * count)
    sizes = players.get("grid_sizes")
    if sizes is None:
        raise _cfg_error("players.grid_sizes is required")
    if len(dims) != count or len(sizes) != count:
        raise _cfg_error("players.dims and players.grid_sizes need one entry per player")
    grids = [TorusGrid(dim=int(d), points_per_dim=int(n)) for d, n in zip(dims, sizes)]
    name = gspec.get("name")
    params = gspec.get("params", [])
    if name is None:
        raise _cfg_error("game.name or game.kernel_file is required")
    return builtin_game(str(name), list(params), grids)


def _build_schedule(tree: dict, constants, pragmatic: bool):
    block = tree.get("schedule")
    if not isinstance(block, dict):
        raise _cfg_error("missing 'schedule' block")
    present = [k for k in _SCHEDULE_KEYS if k in block]
    if len(present) != 1:
        raise _cfg_error(f"schedule needs exactly one of {_SCHEDULE_KEYS}, found {present}")
    kind = present[0]
    body = block[kind] or {}
    if kind == "fixed":
        tau = float(body.get("tau", 1.0))
        alpha = body.get("alpha", "auto")
        if alpha == "auto":
            alpha = rate_constants(constants, tau, 1.0).alpha_bar0 if constants.m0 > 0 else 1.0
        return FixedSchedule(tau=tau, alpha=float(alpha))
    if kind == "annealed_auto":
        return derive_certified_schedule(constants)
    delta = float(body["delta"])
    beta = float(body["beta"])
    c0 = float(body["c0"])
    if pragmatic:
        try:
            return validate_annealing(constants, delta, beta, c0)
        except ScheduleValidationError:
            return AnnealedSchedule(delta=delta, beta=beta, c0=c0, certified=False)
    return validate_annealing(constants, delta, beta, c0)


def _build_integrator(tree: dict, game: Game, schedule) -> IntegratorConfig:
    block = tree.get("integrator", {}) or {}
    t_end = float(block.get("t_end", 10.0))
    record_every = float(block.get("record_every", max(t_end / 200.0, 1e-6)))
    dt = block.get("dt", "auto")
    if dt == "auto":
        dt = 0.5 * run_stability_limit(game, schedule.tau_at(0.0))
    return IntegratorConfig(
        dt=float(dt),
        t_end=t_end,
        record_every=record_every,
        baseline_gda=bool(block.get("baseline_gda", False)),
    )


def _initial_profile(config_kind: str, game: Game, seed: int):
    """'uniform', 'random' (seeded positive noise) or 'bump' (cosine tilt)."""
    out = []
    for i, g in enumerate(game.grids):
        if config_kind == "uniform":
            out.append(uniform_density(g))
        elif config_kind == "random":
            rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 7, i])))
            out.append(normalize(0.2 + rng.random(g.cell_count), g))
        elif config_kind == "bump":
            x = g.cell_centers[:, 0]
            phase = 2 * np.pi * x + (np.pi / 2.0) * i
            out.append(normalize(np.exp(2.0 * np.cos(phase)), g))
        else:
            raise _cfg_error(f"unknown init kind {config_kind!r}")
    return out


def load_config(path) -> ExperimentConfig:
    """Parse, build and validate an experiment file; refuses invalid schedules.

    With pragmatic: true an inadmissible annealed block is accepted but the
    run is marked NOT certified in every output.
    """
    path = Path(path)
    try:
        tree = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" (line {mark.line + 1})" if mark is not None else ""
        raise _cfg_error(f"{path}: parse failure{where}: {exc}") from exc
    if not isinstance(tree, dict):
        raise _cfg_error(f"{path}: top level must be a mapping")

    mode = str(tree.get("mode", "pde"))
    if mode not in _MODES:
        raise _cfg_error(f"mode must be one of {_MODES}, got {mode!r}")
    pragmatic = bool(tree.get("pragmatic", False))

    game = _build_game(tree)
    constants = game_constants(game)
    schedule = _build_schedule(tree, constants, pragmatic)

    init_kind = str(tree.get("init", "random"))
    pblock = tree.get("particles", {}) or {}
    seed = int(pblock.get("seed", 0))
    _initial_profile(init_kind, game, seed)  # validates the init kind early
    integrator = None
    if mode in ("pde", "particles"):
        integrator = _build_integrator(tree, game, schedule)

    fp = tree.get("fixed_point", {}) or {}
    out = tree.get("output", {}) or {}
    root = Path(os.environ.get("MFNASH_OUTPUT_ROOT", "."))
    out_dir = root / str(out.get("dir", "out"))

    return ExperimentConfig(
        path=str(path),
        game=game,
        constants=constants,
        schedule=schedule,
        integrator=integrator,
        mode=mode,
        particles_n=int(pblock.get("n", 10000)),
        seed=seed,
        damping=float(fp.get("damping", 0.5)),
        tol=float(fp.get("tol", 1e-11)),
        max_iter=int(fp.get("max_iter", 20000)),
        init_kind=init_kind,
        out_dir=out_dir,
        csv_name=str(out.get("csv", "metrics.csv")),
        summary_name=str(out.get("summary", "summary.json")),
        plots=bool(out.get("plots", False)),
        raw=tree,
        pragmatic=pragmatic,
    )


# ---------------------------------------------------------------------------
# checks and reporting


def _fit_decay_rate(records) -> float:
    ts = np.array([r.t for r in records])
    ss = np.array([r.s_t for r in records])
    keep = ss > 1e-12
    if keep.sum() < 3:
        return math.nan
    slope = np.polyfit(ts[keep], np.log(ss[keep]), 1)[0]
    return float(-slope)


def _check_fixed_envelopes(records, rc, star_entropies) -> dict:
    """Pointwise decay checks for a fixed-temperature run with alpha <= alpha_bar0."""
    s0 = records[0].s_t
    checks = {}
    lyap = tv = ent = True
    for idx, r in enumerate(records):
        envelope = math.exp(-rc.lam * r.t) * s0 * ENVELOPE_SLACK
        # the decay envelope applies until s_t reaches the 1e-9 floor
        if r.s_t > max(envelope, 1e-9):
            lyap = False
        if sum(v * v for v in r.tv_to_star) > 12.0 * envelope + 1e-12:
            tv = False
        if star_entropies is not None and star_entropies[idx] > envelope + 1e-12:
            ent = False
    checks["lyapunov_decay"] = {"passed": lyap, "slack": ENVELOPE_SLACK}
    checks["tv_bound"] = {"passed": tv, "slack": ENVELOPE_SLACK}
    if star_entropies is not None:
        checks["entropy_to_equilibrium"] = {"passed": ent, "slack": ENVELOPE_SLACK}
    return checks


def _check_annealed_envelope(records, constants, schedule) -> dict:
    s0 = records[0].s_t
    ok = all(
        r.s_t <= annealed_bound(constants, schedule, s0, r.t) + 1e-12 for r in records
    )
    return {"annealed_envelope": {"passed": ok}}


def _write_csv(records, game, path: Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MetricsRecord.csv_header(game.num_players))
        for r in records:
            writer.writerow(r.to_csv_row())


def _write_plots(records, path: Path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    ts = [r.t for r in records]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for name, series in (
        ("s_t", [r.s_t for r in records]),
        ("ni_tau", [r.ni_tau for r in records]),
        ("ni", [r.ni for r in records]),
    ):
        clipped = [max(v, 1e-300) for v in series]
        ax.plot(ts, clipped, label=name)
    ax.set_yscale("log")
    ax.set_xlabel("t")
    ax.legend()
    ax.set_title("decay of Lyapunov value and regrets")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def _constants_dict(c) -> dict:
    return {"m0": c.m0, "m1": c.m1, "m2": c.m2, "l": c.l}


def _schedule_dict(s) -> dict:
    if isinstance(s, FixedSchedule):
        return {"kind": "fixed", "tau": s.tau, "alpha": s.alpha}
    return {
        "kind": "annealed", "delta": s.delta, "beta": s.beta, "c0": s.c0,
        "certified": s.certified,
    }


def run_experiment(config: ExperimentConfig) -> int:
    """Execute one experiment; returns the process exit code."""
    try:
        return _run_experiment_inner(config)
    except Exception:
        traceback.print_exc()
        return 1


def _run_experiment_inner(config: ExperimentConfig) -> int:
    game = config.game
    constants = config.constants
    config.out_dir.mkdir(parents=True, exist_ok=True)
    summary = {
        "config": config.path,
        "label": game.label,
        "mode": config.mode,
        "players": game.num_players,
        "grid_sizes": [g.points_per_dim for g in game.grids],
        "dims": [g.dim for g in game.grids],
        "game_constants": _constants_dict(constants),
        "analytic_constants": (
            _constants_dict(game.analytic_constants) if game.analytic_constants else None
        ),
        "schedule": _schedule_dict(config.schedule),
        "certified": not isinstance(config.schedule, AnnealedSchedule) or config.schedule.certified,
        "checks": {},
    }

    if config.mode == "fixed_point":
        report = solve_fixed_point(
            game, config.schedule.tau_at(0.0), damping=config.damping,
            tol=config.tol, max_iter=config.max_iter,
        )
        summary["fixed_point"] = {
            "converged": report.converged,
            "iterations": report.iterations,
            "final_residual": report.final_residual,
        }
        eq_path = config.out_dir / "equilibrium.csv"
        with open(eq_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["player", "cell", "mass"])
            for i, d in enumerate(report.densities):
                for k, m in enumerate(d.mass):
                    writer.writerow([i + 1, k, repr(float(m))])
        _finish_summary(config, summary)
        return 0 if report.converged else 2

    init_profile = _initial_profile(config.init_kind, game, config.seed)
    schedule = config.schedule

    star = None
    star_entropies = None
    if isinstance(schedule, FixedSchedule):
        fp = solve_fixed_point(
            game, schedule.tau, damping=config.damping, tol=config.tol,
            max_iter=config.max_iter,
        )
        if fp.converged:
            star = fp.densities
        summary["fixed_point"] = {
            "converged": fp.converged,
            "iterations": fp.iterations,
            "final_residual": fp.final_residual,
        }

    if config.mode == "pde":
        entropy_trace = []

        def observer(state: DynamicsState) -> None:
            if star is not None:
                entropy_trace.append(
                    sum(relative_entropy(state.nu_hat[i], star[i]) for i in range(game.num_players))
                )

        init = DynamicsState(t=0.0, nu=tuple(init_profile), nu_hat=tuple(init_profile))
        records = run_dynamics(game, schedule, config.integrator, init,
                               star=star, observer=observer)
        if star is not None:
            star_entropies = entropy_trace
    else:
        ensemble = init_particles(game.grids, config.particles_n, init_profile, config.seed)
        records = run_particles(game, schedule, config.integrator, ensemble, star=star)

    _write_csv(records, game, config.out_dir / config.csv_name)
    if config.plots:
        _write_plots(records, config.out_dir / "metrics.svg")

    summary["records"] = len(records)
    summary["final"] = {
        "t": records[-1].t,
        "s_t": records[-1].s_t,
        "ni_tau": records[-1].ni_tau,
        "ni": records[-1].ni,
    }
    summary["fitted_decay_rate"] = _fit_decay_rate(records)

    if isinstance(schedule, FixedSchedule):
        rc = rate_constants(constants, schedule.tau, schedule.alpha)
        summary["rate_constants"] = {
            "kappa": rc.kappa, "lambda": rc.lam, "alpha_bar0": rc.alpha_bar0,
        }
        # Decay envelopes are only guaranteed for PDE runs with
        # alpha <= alpha_bar0; particle histograms carry sampling noise.
        if config.mode == "pde" and schedule.alpha <= rc.alpha_bar0 * (1 + 1e-12) and star is not None:
            summary["checks"].update(_check_fixed_envelopes(records, rc, star_entropies))
        else:
            summary["checks"]["lyapunov_decay"] = {"passed": None, "skipped": True}
    elif isinstance(schedule, AnnealedSchedule) and schedule.certified and config.mode == "pde":
        summary["checks"].update(_check_annealed_envelope(records, constants, schedule))

    _finish_summary(config, summary)
    failed = any(c.get("passed") is False for c in summary["checks"].values())
    return 2 if failed else 0


def _finish_summary(config: ExperimentConfig, summary: dict) -> None:
    path = config.out_dir / config.summary_name
    path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"[mfnash] wrote {path}")
    for name, result in summary["checks"].items():
        status = {True: "pass", False: "FAIL", None: "skipped"}[result.get("passed")]
        print(f"[mfnash] check {name}: {status}")


# ---------------------------------------------------------------------------
# entry points


def _cmd_run(args) -> int:
    config = load_config(args.config)
    return run_experiment(config)


def _run_one_path(path_str: str) -> int:
    return run_experiment(load_config(path_str))


def _cmd_batch(args) -> int:
    directory = Path(args.directory)
    paths = sorted(str(p) for p in list(directory.glob("*.yaml")) + list(directory.glob("*.yml")))
    if not paths:
        print(f"no configs found in {directory}", file=sys.stderr)
        return 1
    with concurrent.futures.ProcessPoolExecutor(max_workers=args.jobs) as pool:
        codes = list(pool.map(_run_one_path, paths))
    for path, code in zip(paths, codes):
        print(f"[mfnash] {path}: exit {code}")
    return max(codes)


def _cmd_solve_mne(args) -> int:
    config = load_config(args.config)
    report = solve_fixed_point(
        config.game, config.schedule.tau_at(0.0), damping=config.damping,
        tol=config.tol, max_iter=config.max_iter,
    )
    print(json.dumps({
        "converged": report.converged,
        "iterations": report.iterations,
        "final_residual": report.final_residual,
    }, indent=2))
    return 0 if report.converged else 2


def _cmd_validate_schedule(args) -> int:
    config_tree = yaml.safe_load(Path(args.config).read_text())
    game = _build_game(config_tree)
    constants = game_constants(game)
    block = config_tree.get("schedule", {})
    try:
        if "annealed_auto" in block:
            schedule = derive_certified_schedule(constants)
        elif "annealed" in block:
            body = block["annealed"]
            schedule = validate_annealing(
                constants, float(body["delta"]), float(body["beta"]), float(body["c0"])
            )
        else:
            print("no annealed schedule block to validate", file=sys.stderr)
            return 1
    except ScheduleValidationError as exc:
        print("schedule rejected:")
        for key, msg in exc.violations:
            print(f"  {key}: {msg}")
        return 2
    print(json.dumps({
        "delta": schedule.delta, "beta": schedule.beta, "c0": schedule.c0,
        "certified": schedule.certified,
    }, indent=2))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="mfnash",
        description="mean-field dynamics for mixed equilibria of pairwise zero-sum torus games",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config")
    p_run.set_defaults(func=_cmd_run)

    p_batch = sub.add_parser("batch", help="run every config in a directory")
    p_batch.add_argument("directory")
    p_batch.add_argument("--jobs", type=int, default=None)
    p_batch.set_defaults(func=_cmd_batch)

    p_solve = sub.add_parser("solve-mne", help="solve the regularized equilibrium only")
    p_solve.add_argument("config")
    p_solve.set_defaults(func=_cmd_solve_mne)

    p_val = sub.add_parser("validate-schedule", help="validate or derive an annealing schedule")
    p_val.add_argument("config")
    p_val.set_defaults(func=_cmd_validate_schedule)

    p_ver = sub.add_parser("version", help="print version")
    p_ver.set_defaults(func=lambda args: (print(__version__), 0)[1])

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

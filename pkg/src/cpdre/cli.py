"""Command-line front end.

Every subcommand resolves its options from built-in defaults, an optional
INI/JSON config file and command-line flags (in increasing priority),
validates them, runs, and writes ``<command>-<hash>.csv`` and ``.json``
into the output directory. Files are written under a ``.partial`` suffix
and renamed once complete.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import itertools
import json
import math
import os
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import oracle
from .config import (OUTPUT_ENV, ConfigError, RunConfig, load_config_file, parse_floats, parse_sites,
                     resolve, shard_range)
from .dual import coupled_duality_estimate
from .estimators import (BlockSpec, BoundsInput, EstimateReport, bisect_pseudo_critical, branching_bound_delta_p,
                         convergence_diagnostic, estimate_block_conditions, estimate_lemma42_events,
                         extinction_threshold_beta, merge_reports, monotonicity_sweep, reports_to_csv,
                         survival_curve)
from .forward import evolve
from .lattice import Configuration, InitialLaw, SiteState, sample_initial
from .tableau import MAX_HORIZON, generate

EXIT_CONFIG_ERROR = 2

_COMMON = {
    "d": (int, 1, "lattice dimension"),
    "alpha": (float, 1.0, "environment flip rate"),
    "beta": (float, 2.0, "total birth rate"),
    "delta": (float, 1.0, "unblock-to-block rate ratio"),
    "radius": (int, 50, "box half-width; the box is [-radius, radius]^d"),
    "sites": (str, "", "use the line 0..sites-1 instead of a centered box (d=1)"),
    "periodic": (str, "false", "wrap the box into a torus"),
    "seed": (int, 0, "random seed in [0, 2^64)"),
    "output_dir": (str, None, f"output directory (default ${OUTPUT_ENV} or .)"),
    "workers": (int, 1, "worker threads"),
}
_REPLICATED = {
    "replicates": (int, 10000, "number of replicates"),
    "shard": (str, "", "run only shard i of k of the replicates, written as i/k"),
}

COMMANDS = {
    "simulate": ("export one trajectory", {
        "horizon": (float, 10.0, "simulated time"),
        "init": (str, "nu", "initial law: nu, chi, mu or full"),
        "A": (str, "0", "initially occupied sites, e.g. 0;1 or 0,0;1,0"),
        "snapshots": (str, "", "comma-separated snapshot times"),
        "replicate": (int, 0, "replicate index"),
    }),
    "survive": ("finite-horizon survival", {
        **_REPLICATED,
        "horizon": (float, 10.0, "survival horizon"),
        "times": (str, "", "extra comma-separated horizons reported from the same runs"),
        "mode": (str, "S2", "S2: single occupied origin, all else blocked; S1: nu(A)"),
        "A": (str, "", "S1 occupied set (default: the origin)"),
    }),
    "blocks": ("block-condition and face-crossing events", {
        **_REPLICATED,
        "n": (int, 0, "seed cube half-width"),
        "L": (int, 1, "block length"),
        "T": (float, 1.0, "block time"),
        "epsilon": (float, 0.5, "threshold"),
        "N": (int, 0, "occupied-count target"),
        "M": (int, 0, "face packing target"),
    }),
    "dual-check": ("coupled duality estimate", {
        **_REPLICATED,
        "A": (str, "0", "forward occupied set"),
        "C": (str, "1", "dual seed set"),
        "D": (str, "2", "environment target set"),
        "t": (float, 1.0, "time"),
    }),
    "oracle": ("exact computations on a small line or ring", {
        "t": (float, 1.0, "time"),
        "tol": (float, 1e-10, "duality gap tolerance"),
    }),
    "bounds": ("extinction threshold in beta and the delta bound", {
        "beta_c_cp": (float, None, "critical total birth rate without environment (default: literature value)"),
    }),
    "sweep": ("survival scan along beta or delta", {
        **_REPLICATED,
        "axis": (str, "beta", "beta or delta"),
        "values": (str, "0.5,1,2,4", "ascending comma-separated values"),
        "horizon": (float, 10.0, "survival horizon"),
        "bisect": (str, "", "lo,hi: also bisect for the pseudo-critical value"),
        "target": (float, 0.5, "bisection target survival"),
        "tolerance": (float, 0.05, "bisection bracket width"),
    }),
    "converge": ("late-time cylinder probabilities against the mixture prediction", {
        "replicates": (int, 1000, "number of replicates"),
        "init": (str, "nu", "initial law: nu, chi, mu or full"),
        "A": (str, "0", "initially occupied sites"),
        "C": (str, "0", "cylinder set for occupied sites"),
        "D": (str, "0", "cylinder set for blocked sites"),
        "t_grid": (str, "5,10,20", "comma-separated times"),
    }),
}
_NO_GEOMETRY = {"bounds", "blocks"}


def _options(command: str) -> dict:
    return {**_COMMON, **COMMANDS[command][1]}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpdre", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (summary, _) in COMMANDS.items():
        p = sub.add_parser(name, help=summary, description=summary)
        p.add_argument("--config", help="INI or JSON config file")
        for key, (typ, default, text) in _options(name).items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, type=typ, default=None, help=f"{text} (default: {default})")
    m = sub.add_parser("merge", help="merge sharded JSON results", description="merge sharded JSON results")
    m.add_argument("files", nargs="+", help="JSON result files with matching config hashes")
    m.add_argument("--output-dir", dest="output_dir", default=None)
    return parser


def _coerce(command: str, file_options: dict) -> dict:
    spec = _options(command)
    out = {}
    for k, v in file_options.items():
        if k in spec and v is not None:
            try:
                out[k] = spec[k][0](v)
            except ValueError:
                raise ConfigError(f"option {k}={v!r} is not a valid {spec[k][0].__name__}") from None
    return out


def _write(path: Path, text: str) -> None:
    partial = path.with_name(path.name + ".partial")
    partial.write_text(text)
    os.replace(partial, path)


def _emit(cfg: RunConfig, csv_text: Optional[str], payload: dict) -> list:
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    i, k = cfg.shard
    stem = f"{cfg.command}-{cfg.hash}" + (f".shard-{i}-of-{k}" if k > 1 else "")
    doc = {"config": json.loads(cfg.to_json()), "results": payload,
           "metadata": {"created": _dt.datetime.now(_dt.timezone.utc).isoformat()}}
    paths = []
    if csv_text is not None:
        paths.append(cfg.output_dir / f"{stem}.csv")
        _write(paths[-1], csv_text)
    paths.append(cfg.output_dir / f"{stem}.json")
    _write(paths[-1], json.dumps(doc, indent=1, sort_keys=True))
    return paths


def _law(cfg: RunConfig, geometry, params) -> InitialLaw:
    kind = cfg.init
    A = parse_sites(cfg.A, params.d)
    if kind == "nu":
        return InitialLaw.nu(A, params.rho)
    if kind == "chi":
        return InitialLaw.chi(A)
    if kind == "mu":
        return InitialLaw.mu_rho(params.rho)
    if kind == "full":
        return InitialLaw.deterministic(Configuration.filled(geometry, SiteState.OCCUPIED))
    raise ConfigError(f"unknown init {kind!r}")


def _check_sites(geometry, sets: dict) -> None:
    for name, sites in sets.items():
        for s in sites:
            if not geometry.contains(s):
                raise ConfigError(f"site {s} of {name} lies outside the box")


def _replicates(cfg: RunConfig) -> tuple:
    if cfg.replicates < 1:
        raise ConfigError("replicates must be positive")
    start, stop = shard_range(cfg.replicates, cfg.shard)
    if stop <= start:
        raise ConfigError("this shard holds no replicates")
    return start, stop - start


def _horizon(value: float) -> float:
    if not 0 < value <= MAX_HORIZON:
        raise ConfigError(f"horizon must lie in (0, {MAX_HORIZON:g}]")
    return value


def cmd_simulate(cfg, params, geometry):
    horizon = _horizon(cfg.horizon)
    law = _law(cfg, geometry, params)
    _check_sites(geometry, {"A": law.sites})
    snaps = parse_floats(cfg.snapshots)
    if any(not 0 <= t <= horizon for t in snaps):
        raise ConfigError("snapshot times must lie in [0, horizon]")
    tab = generate(params, geometry, horizon, cfg.seed, cfg.replicate)
    traj = evolve(tab, sample_initial(law, geometry, cfg.seed, cfg.replicate))
    payload = {"n_events": tab.n_events, "n_changes": traj.n_changes, "tau": traj.tau
               if math.isfinite(traj.tau) else None, "censored": traj.censored,
               "snapshots": json.loads(traj.snapshots_json(snaps))["snapshots"]}
    return traj.to_csv(), payload, f"events {tab.n_events}, changes {traj.n_changes}, extinction time {traj.tau}"


def cmd_survive(cfg, params, geometry):
    start, n = _replicates(cfg)
    times = sorted({_horizon(cfg.horizon), *(_horizon(t) for t in parse_floats(cfg.times))})
    if cfg.mode not in ("S1", "S2"):
        raise ConfigError("mode must be S1 or S2")
    A = parse_sites(cfg.A, params.d) if cfg.A else None
    if cfg.mode == "S2" and not geometry.contains((0,) * params.d):
        raise ConfigError("the origin must lie in the box")
    _check_sites(geometry, {"A": A or []})
    reports = survival_curve(params, geometry, times, n, cfg.seed, cfg.mode, A, start, cfg.workers)
    text = "\n".join(f"t={r.horizon:g}: {r.estimate:.6g} +/- {r.stderr:.2g} (bracket {r.bracket[0]:.6g}, "
                     f"{r.bracket[1]:.6g})" for r in reports)
    return reports_to_csv(reports), {"reports": [r.to_dict() for r in reports]}, text


def cmd_blocks(cfg, params, geometry):
    start, n = _replicates(cfg)
    try:
        spec = BlockSpec(cfg.n, cfg.L, cfg.T, cfg.epsilon, cfg.N, cfg.M)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    reports = [*estimate_block_conditions(params, spec, n, cfg.seed, start, cfg.workers),
               *estimate_lemma42_events(params, spec, n, cfg.seed, start, cfg.workers)]
    text = "\n".join(f"{r.label}: {r.estimate:.6g} +/- {r.stderr:.2g}; above 1-epsilon: "
                     f"{r.estimate > 1 - spec.epsilon}" for r in reports)
    return reports_to_csv(reports), {"spec": spec.to_dict(), "reports": [r.to_dict() for r in reports]}, text


def cmd_dual_check(cfg, params, geometry):
    start, n = _replicates(cfg)
    if not 0 < cfg.t <= MAX_HORIZON:
        raise ConfigError("t must be positive")
    sets = {k: parse_sites(getattr(cfg, k), params.d) for k in "ACD"}
    _check_sites(geometry, sets)
    est = coupled_duality_estimate(params, geometry, sets["A"], sets["C"], sets["D"], cfg.t, n, cfg.seed, start)
    reports = [est.forward, est.dual, est.self_dual]
    text = "\n".join(f"{r.label}: {r.estimate:.6g} +/- {r.stderr:.2g}" for r in reports)
    return est.to_csv(), {"reports": [r.to_dict() for r in reports]}, text


def cmd_oracle(cfg, params, geometry):
    if 3 ** geometry.n_sites > oracle.MAX_STATES:
        raise ConfigError(f"the oracle needs at most 9 sites, box has {geometry.n_sites}")
    if cfg.t < 0:
        raise ConfigError("t must be nonnegative")
    stat = oracle.check_environment_stationarity(params, geometry)
    gen = oracle.build_generator(params, geometry)
    sites = [geometry.site(i) for i in range(geometry.n_sites)]
    subsets = [list(c) for r in range(len(sites) + 1) for c in itertools.combinations(sites, r)]
    if len(subsets) ** 3 > 5000:
        subsets = [[]] + [[s] for s in sites] + [sites]
    checks = [oracle.exact_duality_check(params, geometry, A, C, D, cfg.t, gen)
              for A in subsets for C in subsets for D in subsets]
    worst = max(c.gap for c in checks)
    lines = ["A,C,D,t,lhs,rhs,gap"]
    for c in checks:
        fmt = lambda s: " ".join(",".join(map(str, x)) for x in s)  # noqa: E731
        lines.append(f"{fmt(c.A)},{fmt(c.C)},{fmt(c.D)},{c.t!r},{c.lhs!r},{c.rhs!r},{c.gap!r}")
    payload = {"stationarity": json.loads(stat.to_json()), "duality": [json.loads(c.to_json()) for c in checks],
               "max_gap": worst, "ok": stat.ok and worst < cfg.tol}
    text = (f"environment residuals: stationary {stat.stationary_residual:.3g}, "
            f"detailed balance {stat.detailed_balance_residual:.3g}\n"
            f"duality checks: {len(checks)}, max gap {worst:.3g}")
    return "\n".join(lines) + "\n", payload, text


def cmd_bounds(cfg, params, geometry):
    if cfg.d < 1:
        raise ConfigError("d must be positive")
    bound = branching_bound_delta_p(cfg.d)
    payload = {"d": cfg.d, "q_star": bound.q_star, "delta_p": bound.delta_p, "residual": bound.residual}
    text = f"q_star {bound.q_star!r}\ndelta_p {bound.delta_p!r}\nresidual {bound.residual!r}"
    try:
        bi = BoundsInput(cfg.beta_c_cp, "config") if cfg.beta_c_cp is not None else BoundsInput.default(cfg.d)
    except ValueError as exc:
        if cfg.beta_c_cp is not None:
            raise ConfigError(str(exc)) from None
        bi = None
    if bi is not None:
        thr = extinction_threshold_beta(params.alpha, bi)
        payload.update(beta_c_cp=bi.beta_c_cp, beta_c_cp_source=bi.source, alpha=params.alpha,
                       extinction_threshold_beta=thr)
        text += f"\nextinction_threshold_beta {thr!r} (alpha={params.alpha:g}, beta_c_cp={bi.beta_c_cp:g})"
    return None, payload, text


def cmd_sweep(cfg, params, geometry):
    start, n = _replicates(cfg)
    if cfg.axis not in ("beta", "delta"):
        raise ConfigError("axis must be beta or delta")
    values = parse_floats(cfg.values)
    if not values or any(b < a for a, b in zip(values, values[1:])) or values[0] < 0:
        raise ConfigError("values must be a nonempty ascending list of nonnegative numbers")
    horizon = _horizon(cfg.horizon)
    if not geometry.contains((0,) * params.d):
        raise ConfigError("the origin must lie in the box")
    res = monotonicity_sweep(params, cfg.axis, values, geometry, horizon, n, cfg.seed, start=start,
                             workers=cfg.workers)
    payload = {"axis": cfg.axis, "values": values, "reports": [r.to_dict() for r in res.reports]}
    text = "\n".join(f"{cfg.axis}={v:g}: {r.estimate:.6g} +/- {r.stderr:.2g}" for v, r in zip(values, res.reports))
    if cfg.bisect:
        lo_hi = parse_floats(cfg.bisect)
        if len(lo_hi) != 2 or not lo_hi[0] < lo_hi[1]:
            raise ConfigError("bisect must be lo,hi with lo < hi")
        try:
            b = bisect_pseudo_critical(params, cfg.axis, tuple(lo_hi), geometry, horizon, n, cfg.seed,
                                       cfg.target, cfg.tolerance, workers=cfg.workers)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        payload["bisection"] = json.loads(b.to_json())
        text += f"\n{b.label}: [{b.lo:.6g}, {b.hi:.6g}]"
    return res.to_csv(), payload, text


def cmd_converge(cfg, params, geometry):
    if cfg.replicates < 2:
        raise ConfigError("replicates must be at least 2")
    grid = parse_floats(cfg.t_grid)
    if not grid or min(grid) < 0:
        raise ConfigError("t-grid must hold nonnegative times")
    _horizon(max(grid))
    law = _law(cfg, geometry, params)
    C, D = parse_sites(cfg.C, params.d), parse_sites(cfg.D, params.d)
    _check_sites(geometry, {"A": law.sites, "C": C, "D": D})
    rep = convergence_diagnostic(params, geometry, law, C, D, grid, cfg.replicates, cfg.seed, workers=cfg.workers)
    z = rep.z_scores()
    text = (f"survival weight {rep.survival:.4g}; late estimates {tuple(round(float(v), 5) for v in rep.estimates[-1])}; "
            f"prediction {tuple(round(v, 5) for v in rep.prediction)}; z {tuple(round(v, 2) for v in z)}")
    return rep.to_csv(), json.loads(rep.to_json()), text


HANDLERS: dict = {
    "simulate": cmd_simulate, "survive": cmd_survive, "blocks": cmd_blocks, "dual-check": cmd_dual_check,
    "oracle": cmd_oracle, "bounds": cmd_bounds, "sweep": cmd_sweep, "converge": cmd_converge,
}


def resume_aggregate(paths: Sequence) -> list:
    """Merge the reports of several result files label by label."""
    by_label: dict = {}
    order = []
    fingerprints = set()
    for path in paths:
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from None
        reports = doc.get("results", {}).get("reports")
        if not reports:
            raise ConfigError(f"{path} holds no mergeable reports")
        parsed = [EstimateReport.from_dict(data) for data in reports]
        fingerprints.add(tuple(sorted((r.label, r.config_hash) for r in parsed)))
        for r in parsed:
            if r.label not in by_label:
                order.append(r.label)
            by_label.setdefault(r.label, []).append(r)
    if len(fingerprints) > 1:
        raise ConfigError("mismatched config hashes between result files")
    try:
        return [merge_reports(by_label[label]) for label in order]
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _run_merge(args) -> int:
    merged = resume_aggregate(args.files)
    out = Path(args.output_dir or os.environ.get(OUTPUT_ENV) or ".")
    out.mkdir(parents=True, exist_ok=True)
    stem = f"merge-{merged[0].config_hash}"
    _write(out / f"{stem}.csv", reports_to_csv(merged))
    _write(out / f"{stem}.json", json.dumps({"results": {"reports": [r.to_dict() for r in merged]}},
                                            indent=1, sort_keys=True))
    for r in merged:
        print(f"{r.label}: {r.estimate:.6g} +/- {r.stderr:.2g} over {r.replicates} replicates")
    return 0


def run(cfg: RunConfig, echo: Callable[[str], None] = print) -> list:
    """Validate and execute one configured command; returns the written paths."""
    params = cfg.params()
    geometry = None if cfg.command in _NO_GEOMETRY else cfg.geometry()
    if geometry is not None and geometry.d != params.d:
        raise ConfigError("geometry dimension differs from d")
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed must lie in [0, 2^64)")
    csv_text, payload, text = HANDLERS[cfg.command](cfg, params, geometry)
    paths = _emit(cfg, csv_text, payload)
    echo(text)
    return paths


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "merge":
            return _run_merge(args)
        file_options = _coerce(args.command, load_config_file(args.config)) if args.config else {}
        defaults = {k: v[1] for k, v in _options(args.command).items()}
        cli = {k: getattr(args, k) for k in defaults}
        run(resolve(args.command, defaults, file_options, cli))
    except (ConfigError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    return 0

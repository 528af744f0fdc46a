"""Command-line front end.

    svvlab {simulate,malliavin-check,kernel-check,skew} --config run.yaml
           [--seed N] [--out DIR] [--threads K] [--antithetic] [--force]

Outputs are written to a staging directory next to the target and moved into
place only after the command succeeds, so a failed run leaves nothing behind.
Exit codes: 0 success, 2 validation, 3 numerical failure, 4 IO.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__
from .checks import explosion_suite, first_bump_suite, reference_check, second_bump_suite
from .config import RunConfig, load_config
from .rng import check_seed
from .errors import InvalidArgumentError, SVVError
from .malliavin import first_field, second_entries, write_field_csv, write_second_csv, write_stats_csv
from .sandwich import empirical_sandwich_stats, simulate_path, simulate_paths, write_paths_csv
from .skewlab import config_digest, dyadic_taus, run_skew_experiment, write_skew_report
from .volterra import KernelFamily, TimeGrid, holder_certificate, limit_constant, normalized_double_integral

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class RefusalError(OSError):
    """The output directory exists and --force was not given."""


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n")


def _manifest(stage: Path, cfg: RunConfig, command: str) -> None:
    files = sorted(p for p in stage.iterdir() if p.is_file())
    _write_json(stage / "manifest.json", {
        "command": command,
        "seed": cfg.seed,
        "config_digest": config_digest(cfg.digest_payload(command)),
        "outputs": {p.name: _sha256(p) for p in files},
        "version": __version__,
    })


# ----------------------------------------------------------------- commands

def cmd_simulate(cfg: RunConfig, out: Path, args) -> dict:
    exp = cfg.experiment
    n_paths = int(exp.get("n_paths", 10))
    if n_paths < 1:
        raise InvalidArgumentError("experiment.n_paths: must be >= 1")
    batch = simulate_paths(cfg.model, cfg.seed, np.arange(n_paths))
    write_paths_csv(batch, cfg.model, out / "paths.csv")
    stats = empirical_sandwich_stats(batch, cfg.model) if not cfg.model.drift.degenerate else {}
    summary = {"n_paths": n_paths, "n_steps": cfg.model.grid.n, "sandwich": stats}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_malliavin_check(cfg: RunConfig, out: Path, args) -> dict:
    exp = cfg.experiment
    m, seed = cfg.model, cfg.seed
    tol = {"reference": 1e-10, "bump_median": 0.02, "second_median": 0.05, "symmetry": 1e-2, "growth": 0.10}
    tol.update(exp.get("tolerances", {}))
    checks = {}

    ref_n = min(m.grid.n, int(exp.get("reference_n", 256)))
    ref = reference_check(m.with_grid(TimeGrid(ref_n * m.grid.dt, ref_n)), seed)
    checks["reference"] = {"max_scaled_deviation": ref, "pass": ref < tol["reference"]}

    first = first_bump_suite(m, seed, int(exp.get("n_pairs", 200)), float(exp.get("epsilon", 1e-4)),
                             int(exp.get("min_lag", 10)), int(exp.get("bump_paths", 20)))
    checks["first_bump"] = {"median_rel": first["median"], "max_rel": first["max"],
                            "pass": first["median"] < tol["bump_median"]}

    second = second_bump_suite(m, seed, int(exp.get("n_triples", 50)), float(exp.get("epsilon2", 1e-3)),
                               int(exp.get("min_lag", 10)), int(exp.get("bump_paths", 10)))
    checks["second_bump"] = {"median_rel": second["median"], "max_rel": second["max"],
                             "symmetry_max": second["symmetry_max"],
                             "pass": second["median"] < tol["second_median"] and second["symmetry_max"] < tol["symmetry"]}

    n_stats = int(exp.get("n_stats_paths", 1000))
    expl = explosion_suite(m, seed, n_stats, exp.get("coarse_n"))
    checks["explosion"] = {"max_fine": expl["max_fine"], "max_coarse": expl["max_coarse"],
                           "growth": expl["growth"], "pass": expl["growth"] <= tol["growth"]}

    path = simulate_path(m, seed, 0)
    field = first_field(path, m)
    write_field_csv([field], out / "field.csv")
    write_second_csv({0: second_entries(path, m, field, [(r[1], r[2], r[3]) for r in second["records"] if r[0] == 0])},
                     out / "second.csv")
    write_stats_csv(expl["fine"], out / "stats.csv")
    with (out / "bumps.csv").open("w") as fh:
        fh.write("kind,path,a,b,t,formula,bump,rel\n")
        for p, j, i, exact, bump, rel in first["records"]:
            fh.write(f"first,{p},{j},,{i},{exact!r},{bump!r},{rel!r}\n")
        for p, r, s, t, exact, bump, rel, _ in second["records"]:
            fh.write(f"second,{p},{r},{s},{t},{exact!r},{bump!r},{rel!r}\n")
    summary = {"tolerances": tol, "checks": checks, "all_pass": all(c["pass"] for c in checks.values())}
    _write_json(out / "summary.json", summary)
    return summary


def cmd_kernel_check(cfg: RunConfig, out: Path, args) -> dict:
    exp = cfg.experiment
    k, g = cfg.model.kernel, cfg.model.grid
    H = k.effective_H
    lam = float(exp.get("lambda", 0.5 * H))
    refine = [int(x) for x in exp.get("n_values", [g.n // 2, g.n])]
    cert = {str(n): holder_certificate(k, TimeGrid(g.T, n), lam) for n in refine}
    summary = {"effective_H": H, "lambda": lam, "holder_certificate": cert}
    K_Y = limit_constant(k)
    summary["limit_constant"] = K_Y
    if k.family is KernelFamily.POWER_SUM:
        closed = k.alphas[0] / ((k.hursts[0] + 0.5) * (k.hursts[0] + 1.5))
        summary["limit_closed_form"] = closed
        summary["limit_rel_error"] = abs(K_Y - closed) / closed
    taus = [g.T * 2.0**-m for m in range(2, 10)]
    summary["normalized_double_integral"] = {repr(t): normalized_double_integral(k, t) for t in taus}
    _write_json(out / "kernel_check.json", summary)
    return summary


def cmd_skew(cfg: RunConfig, out: Path, args) -> dict:
    exp = cfg.experiment
    m = cfg.model
    if "taus" in exp:
        taus = [float(t) for t in exp["taus"]]
    else:
        taus = dyadic_taus(m.grid.T, int(exp.get("m_min", 2)), int(exp.get("m_max", 9)))
    report = run_skew_experiment(
        m, taus, int(exp.get("n_paths", 100000)), cfg.seed,
        steps_per_tau=int(exp.get("steps_per_tau", 64)),
        antithetic=bool(exp.get("antithetic", False)),
        dkappa_factor=float(exp.get("dkappa_factor", 0.05)),
        config=cfg.digest_payload("skew"),
    )
    write_skew_report(report, out)
    return report.summary()


COMMANDS = {
    "simulate": cmd_simulate,
    "malliavin-check": cmd_malliavin_check,
    "kernel-check": cmd_kernel_check,
    "skew": cmd_skew,
}


# ------------------------------------------------------------------- driver

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svvlab", description="Sandwiched Volterra volatility toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, type=Path, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override the master seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, help="override output_dir")
        p.add_argument("--threads", type=int, help="worker threads (default: all cores)")
        p.add_argument("--antithetic", action="store_true", help="antithetic pairing for Monte Carlo prices")
        p.add_argument("--force", action="store_true", help="replace an existing output directory")
    return parser


def _prepare(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = check_seed(args.seed)
    if args.out is not None:
        cfg.output_dir = args.out
    if args.antithetic:
        cfg.experiment["antithetic"] = True
    return cfg


def _set_threads(k):
    if k is None:
        return
    import numba

    if not 1 <= k <= numba.config.NUMBA_NUM_THREADS:
        raise InvalidArgumentError(f"--threads must lie in [1, {numba.config.NUMBA_NUM_THREADS}], got {k}")
    numba.set_num_threads(k)


def run(args) -> dict:
    cfg = _prepare(args)
    _set_threads(args.threads)
    target = Path(cfg.output_dir)
    if target.exists() and not args.force:
        raise RefusalError(f"output directory {target} exists; pass --force to replace it")
    target.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        summary = COMMANDS[args.command](cfg, stage, args)
        _manifest(stage, cfg, args.command)
        if target.exists():
            shutil.rmtree(target) if target.is_dir() else target.unlink()
        stage.rename(target)
    finally:
        if stage.exists():
            shutil.rmtree(stage, ignore_errors=True)
    return summary


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        summary = run(args)
    except InvalidArgumentError as exc:
        print(f"svvlab: validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, RefusalError) as exc:
        print(f"svvlab: IO error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SVVError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"svvlab: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(json.dumps(summary, indent=2, sort_keys=True, default=float))
    if summary.get("all_pass") is False:
        print("svvlab: one or more checks failed; see summary.json", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

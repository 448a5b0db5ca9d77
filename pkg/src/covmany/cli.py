"""Command-line front end.

Exit codes: 0 success, 2 bad input (arguments, files, manifests),
3 numerical failure or an output that cannot be written.
"""

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import oracle as orc
from .estimators import NumericalError
from .procedures import (
    TransposableSample,
    center_sample,
    eq_test,
    kron_spec_test,
    pairwise_contributions,
    prop_test,
    subsampled_eq_scan,
)
from .simgen import (
    SCENARIOS,
    ExperimentConfig,
    NoiseKind,
    beta_grid,
    default_beta_max,
    run_power_experiment,
    run_size_experiment,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class InputError(ValueError):
    """Bad user input; maps to exit code 2."""


class OutputError(OSError):
    """Report could not be written; maps to exit code 3."""


# ---------------------------------------------------------------- input


def load_population(path, center=False, header=False):
    """Read an ``n x p`` CSV (rows are observations) as a ``p x n`` sample.

    Parameters
    ----------
    path : str or Path
    center : bool
        Subtract each variable's sample mean.
    header : bool
        Skip the first row.
    """
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise InputError(f"{path}: cannot open ({exc.strerror})") from None
    rows, width = [], None
    with fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise InputError(f"{path}:{lineno}: expected {width} columns, found {len(row)}")
            try:
                vals = [float(cell) for cell in row]
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric cell") from None
            if not all(math.isfinite(v) for v in vals):
                raise InputError(f"{path}:{lineno}: NaN or infinite value")
            rows.append(vals)
    if len(rows) < 2:
        raise InputError(f"{path}: need at least 2 observations, found {len(rows)}")
    X = np.array(rows, dtype=np.float64).T
    return center_sample(X) if center else X


def load_manifest(path):
    """Parse a manifest: ``populations`` (name/path pairs), ``center``,
    ``alpha``, ``test`` and optional ``header``. Relative paths resolve
    against the manifest's directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise InputError(f"{path}: cannot read manifest ({exc.strerror})") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(data, dict) or not isinstance(data.get("populations"), list):
        raise InputError(f"{path}: manifest needs a 'populations' list")
    pops = []
    for k, entry in enumerate(data["populations"]):
        if not isinstance(entry, dict) or "path" not in entry:
            raise InputError(f"{path}: population {k} needs a 'path'")
        p = Path(entry["path"])
        if not p.is_absolute():
            p = path.parent / p
        pops.append({"name": str(entry.get("name", f"pop{k}")), "path": p})
    test = data.get("test", "prop")
    if test not in ("prop", "eq", "kron"):
        raise InputError(f"{path}: unknown test {test!r}")
    if len(pops) < 2:
        raise InputError(f"{path}: need at least 2 populations, found {len(pops)}")
    return {
        "populations": pops,
        "center": bool(data.get("center", False)),
        "alpha": float(data.get("alpha", 0.05)),
        "test": test,
        "header": bool(data.get("header", False)),
    }


def _load_all(man, center):
    return [load_population(p["path"], center=center, header=man["header"]) for p in man["populations"]]


# ---------------------------------------------------------------- output


def _encode(obj):
    # JSON text with every real rendered at 17 significant digits
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if not math.isfinite(v):
            return "null"
        text = "%.17g" % v
        if not any(ch in text for ch in ".en"):
            text += ".0"
        return text
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        return "{" + ", ".join(f"{json.dumps(str(k))}: {_encode(v)}" for k, v in obj.items()) + "}"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj):
    return _encode(obj.to_dict() if hasattr(obj, "to_dict") else obj)


def write_report(report, path):
    """Write a report as JSON; ``path=None`` prints to stdout."""
    text = dumps(report) + "\n"
    if path is None:
        sys.stdout.write(text)
        return
    try:
        Path(path).write_text(text)
    except OSError as exc:
        raise OutputError(f"{path}: cannot write ({exc.strerror})") from None


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in rows:
                w.writerow(["%.17g" % v if isinstance(v, float) else v for v in row])
    except OSError as exc:
        raise OutputError(f"{path}: cannot write ({exc.strerror})") from None


def _companion(out, suffix):
    if out is None:
        return None
    out = Path(out)
    return out.with_name(out.stem + suffix)


# ---------------------------------------------------------------- commands


def cmd_test(args):
    man = load_manifest(args.manifest)
    alpha = args.alpha if args.alpha is not None else man["alpha"]
    samples = _load_all(man, args.center or man["center"])
    if man["test"] == "kron":
        # each population file holds one column of the matrix observations
        ns = {X.shape[1] for X in samples}
        if len(ns) != 1:
            raise InputError("kron test needs the same number of observations in every column file")
        obs = np.stack([X.T for X in samples], axis=2)
        report = kron_spec_test(TransposableSample(obs), alpha)
    elif man["test"] == "eq":
        report = eq_test(samples, alpha)
    else:
        report = prop_test(samples, alpha)
    write_report(report, args.out)


def _pairwise_csv(path, names, rep):
    order = rep.row_order
    rows = [[names[i]] + [float(rep.g_matrix[i, j]) for j in order] for i in order]
    _write_csv(path, ["population"] + [names[j] for j in order], rows)


def cmd_pairwise(args):
    man = load_manifest(args.manifest)
    samples = _load_all(man, False)
    center = args.center or man["center"]
    names = [p["name"] for p in man["populations"]]
    if args.p_sub is None:
        rep = pairwise_contributions(samples, center=center)
    else:
        rep = pairwise_contributions(samples, n_rep=args.n_rep, rng=args.seed,
                                     p_sub=args.p_sub, center=center)
    write_report(rep, args.out)
    if args.out is not None:
        _pairwise_csv(_companion(args.out, ".csv"), names, rep)


def cmd_scan(args):
    man = load_manifest(args.manifest)
    samples = _load_all(man, False)
    alpha = args.alpha if args.alpha is not None else man["alpha"]
    if args.p_sub is None:
        raise InputError("scan needs --p-sub")
    res = subsampled_eq_scan(samples, args.p_sub, args.n_rep, alpha, args.seed,
                             center=args.center or man["center"])
    out = {
        "z_min": res.z_min,
        "z_max": res.z_max,
        "z_mean": res.z_mean,
        "reject_rate": res.reject_rate,
        "z_values": res.z_values,
        "mean_pairwise": res.mean_pairwise.to_dict(),
    }
    write_report(out, args.out)
    if args.out is not None:
        names = [p["name"] for p in man["populations"]]
        _pairwise_csv(_companion(args.out, ".csv"), names, res.mean_pairwise)


def _config(args, grid):
    if args.scenario is None:
        raise InputError("--scenario is required")
    n_range = (args.n_low, args.n_high)
    if args.scenario.startswith("kron") and args.n_low is None and args.n_high is None:
        n_range = (150, 150)
    n_range = (n_range[0] or 50, n_range[1] or 150)
    return ExperimentConfig(
        p=args.p, q=args.q, scenario=args.scenario, n_range=n_range,
        noise=NoiseKind.parse(args.noise), beta_grid=grid, n_reps=args.reps,
        alpha=args.alpha if args.alpha is not None else 0.05, seed=args.seed,
    )


def _config_dict(cfg):
    return {
        "p": cfg.p, "q": cfg.q, "scenario": cfg.scenario, "n_range": list(cfg.n_range),
        "noise": cfg.noise.value, "beta_grid": cfg.beta_grid, "n_reps": cfg.n_reps,
        "alpha": cfg.alpha, "seed": cfg.seed,
    }


def cmd_simulate_size(args):
    cfg = _config(args, [0.0])
    res = run_size_experiment(cfg)
    write_report({"rate": res.rate, "se": res.se, "rejections": res.rejections,
                  "n_reps": res.n_reps, "config": _config_dict(cfg)}, args.out)


def cmd_simulate_power(args):
    cfg = _config(args, [0.0])
    beta_max = args.beta_max if args.beta_max is not None else default_beta_max(cfg)
    cfg.beta_grid = beta_grid(beta_max, args.beta_step)
    curve = run_power_experiment(cfg)
    if args.out is None:
        write_report(curve, None)
        return
    out = Path(args.out)
    rows = zip(curve.beta, curve.empirical, curve.theoretical)
    _write_csv(out.with_suffix(".csv"), ["beta", "empirical", "theoretical"],
               [[float(b), float(e), float(t)] for b, e, t in rows])
    write_report(curve, out.with_suffix(".json"))
    write_report(_config_dict(cfg), out.with_name(out.stem + ".meta.json"))


ORACLE_CHECKS = ("lemma1", "a1", "a5", "h1", "all")


def oracle_battery(check, N, seed):
    """Default oracle settings; returns a flat list of reports."""
    rng = np.random.default_rng(seed)
    d4, r4 = np.diag([1.0, 2.0, 3.0, 4.0]), np.diag([4.0, 3.0, 2.0, 1.0])
    out = []
    if check in ("lemma1", "all"):
        out += orc.check_lemma1(np.eye(4), 10, np.eye(4), "gaussian", N, rng)
        out += orc.check_lemma1(d4, 10, r4, "gamma", N, rng)
    if check in ("a1", "all"):
        out += orc.check_expectations_A1(np.eye(8), 10, "gaussian", N, rng)
        out += orc.check_expectations_A1(d4, 10, "gamma", N, rng, A=r4)
    if check in ("a5", "all"):
        out.append(orc.check_variance_A5(np.eye(50), 50, "gaussian", min(N, 20_000), rng))
        out.append(orc.check_variance_A5(np.eye(200), 200, "gamma", min(N, 10_000), rng))
    if check in ("h1", "all"):
        I = np.eye(300)
        for kind in ("gaussian", "gamma"):
            out += orc.check_quadform_H1(I, I, I, I, kind, 100_000, rng)
    return out


def cmd_oracle(args):
    reports = oracle_battery(args.check, args.N, args.seed)
    write_report([r.to_dict() for r in reports], args.out)
    if not all(r.passed for r in reports):
        raise NumericalError("oracle check failed")


def build_parser():
    parser = argparse.ArgumentParser(prog="covmany", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, alpha=True):
        p.add_argument("--out", default=None, help="output path (stdout when omitted)")
        p.add_argument("--seed", type=int, default=0)
        if alpha:
            p.add_argument("--alpha", type=float, default=None)

    t = sub.add_parser("test", help="run a test on the populations listed in a manifest")
    t.add_argument("--manifest", required=True)
    t.add_argument("--center", action="store_true")
    common(t)

    for name, help_ in (("pairwise", "pairwise contributions G_ij"),
                        ("scan", "sub-sampled equality scan")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--manifest", required=True)
        s.add_argument("--center", action="store_true")
        s.add_argument("--p-sub", type=int, default=None)
        s.add_argument("--n-rep", type=int, default=1)
        common(s)

    for name in ("simulate-size", "simulate-power"):
        s = sub.add_parser(name, help=f"{name.split('-')[1]} experiment")
        s.add_argument("--scenario", choices=SCENARIOS, required=True)
        s.add_argument("--p", type=int, default=100)
        s.add_argument("--q", type=int, default=50)
        s.add_argument("--n-low", type=int, default=None)
        s.add_argument("--n-high", type=int, default=None)
        s.add_argument("--noise", choices=("gaussian", "gamma"), default="gaussian")
        s.add_argument("--reps", type=int, default=1000)
        if name == "simulate-power":
            s.add_argument("--beta-max", type=float, default=None)
            s.add_argument("--beta-step", type=float, default=None)
        common(s)

    o = sub.add_parser("oracle", help="Monte Carlo checks of the moment formulas")
    o.add_argument("--check", choices=ORACLE_CHECKS, default="all")
    o.add_argument("--N", type=int, default=200_000)
    common(o, alpha=False)
    return parser


COMMANDS = {
    "test": cmd_test,
    "pairwise": cmd_pairwise,
    "scan": cmd_scan,
    "simulate-size": cmd_simulate_size,
    "simulate-power": cmd_simulate_power,
    "oracle": cmd_oracle,
}


def run(argv=None):
    """Parse ``argv`` and run one subcommand; returns the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_INPUT
    try:
        COMMANDS[args.command](args)
    except (NumericalError, OutputError) as exc:
        print(f"covmany: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ValueError) as exc:
        print(f"covmany: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

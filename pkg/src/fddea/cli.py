"""Command-line harness: single runs, run matrices, reports and a secagg self-test.

Exit codes: 0 success, 1 a cell (or self-test check) failed, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.stats import ranksums

from ._version import __version__
from .federation import MODES, ExperimentConfig, run_experiment
from .metrics import comm_check, read_rounds_csv, write_rounds_csv, write_trace_csv

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2
REQUIRED_KEYS = ("problem", "objectives")
SIGNIFICANCE = 0.05

# config-file key -> (ExperimentConfig field or None for matrix keys, parser)
_BOOL = {"1": True, "true": True, "yes": True, "on": True,
         "0": False, "false": False, "no": False, "off": False}


def _bool(text):
    try:
        return _BOOL[str(text).strip().lower()]
    except KeyError:
        raise ValueError(f"expected a boolean, got {text!r}") from None


def _list(conv):
    return lambda text: [conv(v.strip()) for v in str(text).split(",") if v.strip()]


KEYS = {
    "problem": ("problem", _list(str)),
    "objectives": ("M", _list(int)),
    "dims": ("D", int),
    "clients": ("K", int),
    "mode": ("mode", _list(str)),
    "noise_factor": ("noise_factor", float),
    "t": ("t", float),
    "tm": ("t_m", int),
    "mu": ("mu", int),
    "budget": ("budget", int),
    "g0": ("g0", int),
    "population": ("N_p", int),
    "epochs": ("epochs", int),
    "learning_rate": ("learning_rate", float),
    "normalize": ("normalize", _bool),
    "warm_start": ("warm_start", _bool),
    "train_centers": ("train_centers", _bool),
    "reinit_population": ("reinit_population", _bool),
    "ridge": ("ridge", float),
    "group": ("group", str),
    "seed": (None, int),
    "runs": (None, int),
    "out": (None, str),
}


class ConfigError(ValueError):
    pass


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        if key not in KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value.strip()
    return values


@dataclass
class RunMatrix:
    cells: list = field(default_factory=list)
    out: Path = Path("results")
    runs: int = 1
    seed: int = 0

    def cell_name(self, cfg):
        return f"{cfg.problem}_M{cfg.M}_{cfg.mode}"


def parse_config(args):
    """Merge a config file with command-line flags (flags win)."""
    raw = {}
    if getattr(args, "config", None):
        try:
            raw.update(read_config_file(args.config))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    for key in KEYS:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    missing = [k for k in REQUIRED_KEYS if k not in raw]
    if missing:
        raise ConfigError("missing required keys: " + ", ".join(missing))

    parsed = {}
    for key, text in raw.items():
        try:
            parsed[key] = KEYS[key][1](text)
        except ValueError as exc:
            raise ConfigError(f"invalid value for {key!r}: {exc}") from None

    common = {KEYS[k][0]: v for k, v in parsed.items()
              if KEYS[k][0] is not None and k not in ("problem", "objectives", "mode")}
    matrix = RunMatrix(out=Path(parsed.get("out", "results")),
                       runs=parsed.get("runs", 1), seed=parsed.get("seed", 0))
    if matrix.runs < 1:
        raise ConfigError("invalid value for 'runs': must be >= 1")
    modes = parsed.get("mode", ["dh"])
    for mode in modes:
        if mode not in MODES:
            raise ConfigError(f"invalid value for 'mode': {mode!r} (choose from {', '.join(MODES)})")
    for problem in parsed["problem"]:
        for M in parsed["objectives"]:
            for mode in modes:
                try:
                    cfg = ExperimentConfig(problem=problem, M=M, mode=mode,
                                           seed=matrix.seed, **common)
                except ValueError as exc:
                    raise ConfigError(f"invalid combination {problem}/M={M}/{mode}: {exc}") from None
                matrix.cells.append(cfg)
    return matrix


# -- running cells ------------------------------------------------------------

def _freeze(cfg, path):
    lines = [f"# resolved configuration, fddea {__version__}",
             f"config_hash = {cfg.config_hash()}"]
    lines += [f"{f.name} = {getattr(cfg, f.name)}" for f in fields(cfg)]
    path.write_text("\n".join(lines) + "\n")


def run_cell(cfg, run_dir, run_idx=0):
    """Run one configuration into ``run_dir``; skip if already complete."""
    run_dir.mkdir(parents=True, exist_ok=True)
    done = run_dir / "done.json"
    if done.exists():
        info = json.loads(done.read_text())
        if info.get("config_hash") == cfg.config_hash():
            return info
    _freeze(cfg, run_dir / "config.txt")
    log = run_experiment(cfg, keep_archive=False)
    write_rounds_csv(run_dir / "rounds.csv", log.round_rows(run_idx))
    write_trace_csv(run_dir / "trace.csv", log.trace)
    info = {"config_hash": cfg.config_hash(), "final_igd": log.final_igd,
            "evaluations": log.evaluations, "violations": log.violations,
            "rho_mean_abs": float(np.mean(np.abs(log.rho_samples))) if log.rho_samples else None}
    if cfg.masked and cfg.n_rounds:
        report = comm_check(log.trace, cfg)
        info["comm"] = report.describe()
    done.write_text(json.dumps(info, sort_keys=True))
    return info


def run_matrix(matrix, stream=None):
    stream = stream or sys.stdout
    failures = 0
    for cfg in matrix.cells:
        for r in range(matrix.runs):
            cell = ExperimentConfig(**{**cfg.to_dict(), "seed": matrix.seed + r})
            run_dir = matrix.out / matrix.cell_name(cell) / f"seed{cell.seed}"
            try:
                info = run_cell(cell, run_dir, r)
                print(f"{matrix.cell_name(cell)} seed {cell.seed}: "
                      f"IGD {info['final_igd']:.4g}", file=stream)
            except Exception:
                failures += 1
                (run_dir / "error.txt").write_text(traceback.format_exc())
                print(f"{matrix.cell_name(cell)} seed {cell.seed}: FAILED", file=stream)
    table = summarize(matrix.out)
    print(format_table(table), file=stream)
    write_summary_csv(matrix.out / "summary.csv", table)
    return failures


# -- reporting ----------------------------------------------------------------

def collect(out):
    """Final IGD per cell from completed run directories under ``out``."""
    cells = {}
    for done in sorted(Path(out).glob("*/seed*/done.json")):
        cell = done.parent.parent.name
        cells.setdefault(cell, []).append(json.loads(done.read_text())["final_igd"])
    return cells


def significance_mark(a, b, alpha=SIGNIFICANCE):
    """'+' if sample ``a`` is significantly lower than ``b``, '-' if higher, else '='."""
    if len(a) < 2 or len(b) < 2 or np.array_equal(np.sort(a), np.sort(b)):
        return "="
    p = ranksums(a, b).pvalue
    if not p < alpha:
        return "="
    return "+" if np.median(a) < np.median(b) else "-"


def summarize(out):
    """Rows of (cell, n, median, mean, std, mark) with marks relative to the
    first mode of the same problem and M in ``MODES`` order."""
    cells = collect(out)
    groups = {}
    for name, vals in cells.items():
        base, mode = name.rsplit("_", 1)
        groups.setdefault(base, {})[mode] = np.asarray(vals)
    rows = []
    for base in sorted(groups):
        modes = [m for m in MODES if m in groups[base]]
        ref = modes[0]
        for mode in modes:
            v = groups[base][mode]
            mark = "" if mode == ref else significance_mark(groups[base][ref], v)
            rows.append({"cell": f"{base}_{mode}", "n": len(v),
                         "median": float(np.median(v)), "mean": float(np.mean(v)),
                         "std": float(np.std(v, ddof=1)) if len(v) > 1 else 0.0,
                         "mark": mark, "reference": ref})
    return rows


def format_table(rows):
    if not rows:
        return "no completed runs"
    head = f"{'cell':32s} {'n':>3s} {'median':>10s} {'mean':>10s} {'std':>10s}  mark"
    lines = [head, "-" * len(head)]
    for r in rows:
        mark = f"{r['mark']} (vs {r['reference']})" if r["mark"] else ""
        lines.append(f"{r['cell']:32s} {r['n']:3d} {r['median']:10.4e} "
                     f"{r['mean']:10.4e} {r['std']:10.4e}  {mark}")
    return "\n".join(lines)


def write_summary_csv(path, rows):
    import csv

    cols = ("cell", "n", "median", "mean", "std", "mark", "reference")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rows)


# -- secagg self-test ---------------------------------------------------------

def secagg_selftest(group="test-64bit", trials=50, vectors=None, stream=None):
    """Mask cancellation trials plus DH test vectors; returns failure count."""
    stream = stream or sys.stdout
    from . import secagg

    failures = 0
    v = secagg.make_vector("demo-23", 6, 15)
    ok = (v.public_a, v.public_b, v.shared) == (8, 19, 2)
    print(f"{'PASS' if ok else 'FAIL'} demo group 23/5: publics {v.public_a}/{v.public_b}, "
          f"shared element {v.shared}", file=stream)
    failures += not ok

    params = secagg.gen_group_params(group)
    rng = np.random.default_rng(0)
    asym = 0
    for i in range(trials):
        a = secagg.keygen(params, seed=2 * i)
        b = secagg.keygen(params, seed=2 * i + 1)
        asym += (secagg.derive_shared_key(params, a.secret, b.public)
                 != secagg.derive_shared_key(params, b.secret, a.public))
    print(f"{'PASS' if not asym else 'FAIL'} symmetric keys on {group}: "
          f"{trials - asym}/{trials}", file=stream)
    failures += bool(asym)

    worst = 0.0
    for trial in range(trials):
        K = int(rng.choice([2, 3, 4, 8]))
        shape = (int(rng.integers(1, 231)), int(rng.integers(1, 11)))
        scale = float(10 ** rng.uniform(0, 6))
        keys = [secagg.keygen(params, seed=1000 + 10 * trial + i) for i in range(K)]
        publics = {i: k.public for i, k in enumerate(keys)}
        salt = secagg.Salt(0, trial, rng.bytes(16))
        total = sum(secagg.compute_mask(i, secagg.Keyring.from_publics(params, i, keys[i], publics),
                                        salt, shape, scale) for i in range(K))
        worst = max(worst, float(np.abs(total).max()) / (K * np.finfo(float).eps * scale * 16))
    ok = worst <= 1.0
    print(f"{'PASS' if ok else 'FAIL'} mask cancellation over {trials} trials "
          f"(worst error {worst:.3f} of bound)", file=stream)
    failures += not ok

    if vectors:
        path = Path(vectors)
        if path.exists():
            bad = [i for i, vec in enumerate(secagg.read_test_vectors(path))
                   if secagg.check_vector(vec)]
            print(f"{'PASS' if not bad else 'FAIL'} test vectors in {path}"
                  + (f": records {bad} mismatch" if bad else ""), file=stream)
            failures += bool(bad)
        else:
            recs = [secagg.make_vector("demo-23", 6, 15)]
            for i in range(3):
                a, b = secagg.keygen(params, seed=i), secagg.keygen(params, seed=100 + i)
                recs.append(secagg.make_vector(group, a.secret, b.secret))
            secagg.write_test_vectors(path, recs)
            print(f"wrote {len(recs)} test vectors to {path}", file=stream)
    return failures


# -- argument parsing ---------------------------------------------------------

def _add_experiment_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--problem", help="problem name(s), comma separated (e.g. dtlz2)")
    p.add_argument("--objectives", help="objective count(s), comma separated")
    p.add_argument("--dims", help="decision variables D (default 20)")
    p.add_argument("--clients", help="number of clients K (default 4)")
    p.add_argument("--mode", help="mode(s): " + ", ".join(MODES))
    p.add_argument("--noise-factor", dest="noise_factor", help="mask scale multiplier")
    p.add_argument("--t", help="FLCB trade-off constant (default 2)")
    p.add_argument("--tm", help="iterations per acquisition optimization (default 20)")
    p.add_argument("--mu", help="query points per round (default 5)")
    p.add_argument("--budget", help="new evaluations in total (default 120)")
    p.add_argument("--seed", help="first seed (default 0)")
    p.add_argument("--runs", help="seeds per cell (default 1)")
    p.add_argument("--out", help="output directory (default results)")
    p.add_argument("--group", help="DH group: test-64bit, rfc-2048, rfc-3072")


def build_parser():
    parser = argparse.ArgumentParser(prog="fddea", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_experiment_flags(sub.add_parser("run", help="run a single experiment"))
    _add_experiment_flags(sub.add_parser("matrix", help="run problems x modes x seeds"))
    rep = sub.add_parser("report", help="summarize completed runs")
    rep.add_argument("--out", default="results")
    st = sub.add_parser("secagg-selftest", help="mask cancellation and DH vectors")
    st.add_argument("--group", default="test-64bit")
    st.add_argument("--trials", type=int, default=50)
    st.add_argument("--vectors", help="test-vector file to verify (written if absent)")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK

    if args.command == "secagg-selftest":
        try:
            failures = secagg_selftest(args.group, args.trials, args.vectors)
        except ValueError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        return EXIT_FAILED if failures else EXIT_OK

    if args.command == "report":
        out = Path(args.out)
        if not out.is_dir():
            print(f"config error: no such directory {out}", file=sys.stderr)
            return EXIT_CONFIG
        rows = summarize(out)
        print(format_table(rows))
        write_summary_csv(out / "summary.csv", rows)
        return EXIT_OK

    try:
        matrix = parse_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run" and len(matrix.cells) != 1:
        print("config error: 'run' takes a single problem, M and mode; use 'matrix'",
              file=sys.stderr)
        return EXIT_CONFIG
    failures = run_matrix(matrix)
    return EXIT_FAILED if failures else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

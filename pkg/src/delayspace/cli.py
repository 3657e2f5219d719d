"""Command-line entry point: ``delayspace {decompose,detect,rank-analysis,synth}``.

Exit codes: 0 success, 2 input/format error, 3 solver did not converge
(outputs are still written).  Settings resolve as flags > ``--config`` JSON >
built-in defaults.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from .anomaly import FilterConfig, detect, write_candidates_csv, write_candidates_json
from .errors import DelaySpaceError
from .matrix import aggregate_to_prefix, interpolate_missing, read_matrix, write_matrix
from .measurements import collapse_replicates, parse_measurements
from .prefixes import PrefixTable
from .rank_analysis import rank_feature_report, submatrix_sample
from .report import Manifest, write_heatmaps
from .rpca import SolverOptions, decompose
from .synthetic import (DETECTORS, SyntheticSpec, generate, run_benchmark, to_measurements,
                        write_measurements, write_scores)
from .tags import DEST_TAG_HEADER, SOURCE_TAG_HEADER, read_dest_tags, read_source_tags, write_tags

log = logging.getLogger("delayspace")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 2, 3

DEFAULTS = {
    "tau": 1.0,
    "abs_ms": 30.0,
    "abs_all": False,
    "severity_floor_ms": 10.0,
    "lam": None,
    "lam_scale": 1.75,
    "tolerance": 1e-7,
    "max_iters": 1000,
    "min_ips": 10,
    "interpolate": False,
    "seed": 0,
    "out_dir": ".",
    "per_file_scale": False,
    "submatrices": 0,
    "min_dim": 5,
    "geo": "city",
    "seeds": None,
}

# config-file spellings accepted besides the dest names
_ALIASES = {"lambda": "lam", "abs-ms": "abs_ms", "max-iters": "max_iters", "min-ips": "min_ips",
            "abs-all": "abs_all", "severity-floor-ms": "severity_floor_ms", "out-dir": "out_dir"}


class InputError(Exception):
    pass


def _add_shared(p):
    g = p.add_argument_group("shared")
    g.add_argument("--config", help="JSON file of default settings (flags win)")
    g.add_argument("--tau", type=float, help="ratio-filter threshold on S/L (default 1.0)")
    g.add_argument("--abs-ms", dest="abs_ms", type=float,
                   help="absolute inflation threshold in ms (default 30)")
    g.add_argument("--abs-all", dest="abs_all", action="store_const", const=True,
                   help="apply the absolute filter to every cell, not only cross-continent ones")
    g.add_argument("--severity-floor-ms", dest="severity_floor_ms", type=float,
                   help="candidates below this inflation are labelled below_floor (default 10)")
    g.add_argument("--lambda", dest="lam", type=float, help="sparse-term weight (default 1.75/sqrt(max(m,n)))")
    g.add_argument("--tolerance", type=float, help="relative residual to stop at (default 1e-7)")
    g.add_argument("--max-iters", dest="max_iters", type=int, help="iteration cap (default 1000)")
    g.add_argument("--min-ips", dest="min_ips", type=int,
                   help="minimum distinct IPs for a prefix column (default 10)")
    g.add_argument("--interpolate", action="store_const", const=True,
                   help="fill missing cells from (AS, city) donor groups before decomposing")
    g.add_argument("--seed", type=int, help="random seed (default 0)")
    g.add_argument("--out-dir", dest="out_dir", help="output directory (default .)")


def _add_inputs(p):
    g = p.add_argument_group("input (a matrix CSV or a measurement bundle)")
    g.add_argument("--matrix", help="CSV grid; a companion .mask.csv is read if present")
    g.add_argument("--measurements", help="probe CSV")
    g.add_argument("--prefixes", help="prefix table, one CIDR[,origin_asn] per line")
    g.add_argument("--source-tags", dest="source_tags", help="source_id,asn,city,country,continent")
    g.add_argument("--dest-tags", dest="dest_tags", help="prefix_or_ip,asn,city,country,continent")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="delayspace",
        description="Split RTT matrices into expected latency (low rank) and inflation (sparse).",
        epilog="exit codes: 0 ok, 2 input error, 3 solver did not converge (outputs still written)",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="write X/L/S grids and heatmaps")
    _add_inputs(p)
    _add_shared(p)
    p.add_argument("--per-file-scale", dest="per_file_scale", action="store_const", const=True,
                   help="scale each heatmap to its own maximum instead of the triple's")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("detect", help="rank inflated paths")
    _add_inputs(p)
    _add_shared(p)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("rank-analysis", help="rank of L vs endpoint feature counts")
    _add_inputs(p)
    _add_shared(p)
    p.add_argument("--submatrices", type=int, help="random submatrices to add (default 0)")
    p.add_argument("--min-dim", dest="min_dim", type=int, help="smallest submatrix side (default 5)")
    p.add_argument("--geo", choices=["city", "country"], help="location granularity (default city)")
    p.set_defaults(func=cmd_rank_analysis)

    p = sub.add_parser("synth", help="generate a planted delay space and optionally score detectors")
    p.add_argument("--spec", required=True, help="SyntheticSpec JSON")
    p.add_argument("--seeds", type=int, help="benchmark all detectors over seeds 0..N-1")
    p.add_argument("--measurements", action="store_true",
                   help="also write a probe CSV and prefix table that aggregate back to X")
    _add_shared(p)
    p.set_defaults(func=cmd_synth)
    return parser


def resolve(args):
    """Merge flags over the config file over DEFAULTS."""
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {args.config}: {exc}") from exc
        for k, v in cfg.items():
            key = _ALIASES.get(k, k.replace("-", "_"))
            if key not in settings:
                raise InputError(f"unknown config key {k!r}")
            settings[key] = v
    for k in DEFAULTS:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return settings


def _solver(s):
    return SolverOptions(lam=s["lam"], lam_scale=s["lam_scale"], tolerance=s["tolerance"],
                         max_iterations=s["max_iters"])


def _filters(s):
    return FilterConfig(tau=s["tau"], severity_floor_ms=s["severity_floor_ms"],
                        cross_continent_abs_ms=s["abs_ms"], abs_all=bool(s["abs_all"]))


def _config_echo(s, opts=None, cfg=None):
    echo = {"settings": {k: v for k, v in s.items()}}
    if opts is not None:
        echo["solver"] = opts.to_dict()
    if cfg is not None:
        echo["filters"] = cfg.to_dict()
    return echo


def load_input(args, s, manifest):
    """Matrix from --matrix or from a measurement bundle, interpolated on request."""
    source_tags = read_source_tags(args.source_tags) if args.source_tags else None
    dest_tags = read_dest_tags(args.dest_tags) if args.dest_tags else None
    if args.matrix and args.measurements:
        raise InputError("give either --matrix or --measurements, not both")
    if args.matrix:
        X = read_matrix(args.matrix, source_tags, dest_tags, name=os.path.basename(args.matrix))
    elif args.measurements:
        if not args.prefixes:
            raise InputError("--measurements needs --prefixes")
        parsed = parse_measurements(args.measurements)
        for rej in parsed.rejects:
            manifest.warn(f"rejected {args.measurements} line {rej.line}: {rej.reason}")
        table = PrefixTable.read(args.prefixes)
        X = aggregate_to_prefix(collapse_replicates(parsed.records), table,
                                source_tags, dest_tags, s["min_ips"])
        X = X.renamed(os.path.basename(args.measurements))
        if X.shape[0] == 0 or X.shape[1] == 0:
            raise InputError(f"no prefix has >= {s['min_ips']} measured IPs")
    else:
        raise InputError("an input is required: --matrix or --measurements/--prefixes")
    if source_tags is not None:
        missing = [r for r, t in zip(X.row_ids, X.row_tags) if t is None]
        if missing:
            manifest.warn(f"no source tag for rows: {', '.join(missing)}")
    if dest_tags is not None:
        missing = [c for c, t in zip(X.col_ids, X.col_tags) if t is None]
        if missing:
            manifest.warn(f"no destination tag for columns: {', '.join(missing)}")
    manifest.result("shape", list(X.shape))
    manifest.result("missing_fraction_input", X.missing_fraction)
    if s["interpolate"]:
        X = interpolate_missing(X)
        manifest.result("missing_fraction_after_interpolation", X.missing_fraction)
        unfilled = X.missing_cells()
        if unfilled:
            manifest.warn(f"{len(unfilled)} missing cells have no (AS, city) donor: "
                          + ", ".join(f"({r}, {c})" for r, c in unfilled))
    elif X.missing_fraction > 0:
        manifest.warn(f"{X.missing_fraction:.2%} of cells are missing and enter the solver as 0; "
                      "consider --interpolate")
    return X


def _out(s, manifest, name):
    return manifest.output(os.path.join(s["out_dir"], name))


def _solve(X, opts, manifest):
    D = decompose(X, opts)
    manifest.result("rank_L", D.rank_L)
    manifest.result("iterations", D.iterations)
    manifest.result("residual", D.residual)
    manifest.result("lambda_used", D.lambda_used)
    manifest.result("converged", D.converged)
    if not D.converged:
        manifest.warn(f"solver stopped after {D.iterations} iterations at residual "
                      f"{D.residual:.3g} > tolerance {opts.tolerance:g}")
    return D


def cmd_decompose(args, s, manifest):
    X = load_input(args, s, manifest)
    opts = _solver(s)
    manifest.data["config"] = _config_echo(s, opts)
    D = _solve(X, opts, manifest)
    write_matrix(_out(s, manifest, "X.csv"), X)
    manifest.output(os.path.join(s["out_dir"], "X.mask.csv"))
    write_matrix(_out(s, manifest, "L.csv"), X, values=D.L, write_mask=False)
    write_matrix(_out(s, manifest, "S.csv"), X, values=D.S, write_mask=False)
    for path in write_heatmaps(s["out_dir"], {"X": X.values, "L": D.L, "S": D.S},
                               shared_scale=not s["per_file_scale"]):
        manifest.output(path)
    return EXIT_OK if D.converged else EXIT_NONCONVERGED


def cmd_detect(args, s, manifest):
    X = load_input(args, s, manifest)
    opts, cfg = _solver(s), _filters(s)
    manifest.data["config"] = _config_echo(s, opts, cfg)
    tagged = all(t is not None for t in X.row_tags + X.col_tags)
    use_abs = cfg.abs_all or tagged
    if not use_abs:
        if args.source_tags or args.dest_tags:
            missing = [r for r, t in zip(X.row_ids, X.row_tags) if t is None]
            missing += [c for c, t in zip(X.col_ids, X.col_tags) if t is None]
            raise InputError("absolute filter needs continent tags; missing for: " + ", ".join(missing))
        manifest.warn("no tag files given: cross-continent absolute filter skipped")
    result = detect(X, opts, cfg, absolute=use_abs)
    D = result.decomposition
    manifest.result("rank_L", D.rank_L)
    manifest.result("iterations", D.iterations)
    manifest.result("residual", D.residual)
    manifest.result("converged", D.converged)
    if not D.converged:
        manifest.warn(f"solver stopped after {D.iterations} iterations at residual {D.residual:.3g}")
    manifest.result("candidates", len(result.candidates))
    manifest.result("candidates_above_floor", sum(not c.below_floor for c in result.candidates))
    mid = X.name or "matrix"
    write_candidates_json(_out(s, manifest, "candidates.json"), result.candidates, mid, cfg)
    write_candidates_csv(_out(s, manifest, "candidates.csv"), result.candidates, mid, cfg)
    return EXIT_OK


def cmd_rank_analysis(args, s, manifest):
    X = load_input(args, s, manifest)
    opts = _solver(s)
    manifest.data["config"] = _config_echo(s, opts)
    if s["submatrices"] < 0:
        raise InputError("--submatrices must be >= 0")
    if any(t is None for t in X.row_tags + X.col_tags):
        manifest.warn("some rows/columns are untagged; their features are not counted")
    matrices = {"full": X}
    if s["submatrices"]:
        for sub in submatrix_sample(X, s["submatrices"], s["min_dim"], s["seed"]):
            matrices[sub.name] = sub
    report = rank_feature_report(matrices, opts, geo=s["geo"])
    for mid, err in report.failures:
        manifest.warn(f"matrix {mid} failed: {err}")
    report.write_csv(_out(s, manifest, "rank_report.csv"))
    report.write_json(_out(s, manifest, "rank_report.json"))
    report.write_scatter(_out(s, manifest, "rank_scatter.csv"))
    manifest.result("matrices", len(report.rows))
    manifest.result("pearson_r", report.correlations())
    return EXIT_OK


def cmd_synth(args, s, manifest):
    try:
        with open(args.spec, encoding="utf-8") as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read spec {args.spec}: {exc}") from exc
    sweep = raw.get("sweep", {}) if isinstance(raw, dict) else {}
    spec = SyntheticSpec.from_dict(raw)
    if args.seed is not None:
        spec.seed = args.seed
    opts, cfg = _solver(s), _filters(s)
    manifest.data["config"] = {**_config_echo(s, opts, cfg), "spec": spec.to_dict()}

    X, truth = generate(spec)
    write_matrix(_out(s, manifest, "X.csv"), X)
    manifest.output(os.path.join(s["out_dir"], "X.mask.csv"))
    write_matrix(_out(s, manifest, "L0.csv"), X, values=truth.L0, write_mask=False)
    write_matrix(_out(s, manifest, "S0.csv"), X, values=truth.S0, write_mask=False)
    write_tags(_out(s, manifest, "source_tags.csv"), dict(zip(X.row_ids, X.row_tags)), SOURCE_TAG_HEADER)
    write_tags(_out(s, manifest, "dest_tags.csv"), dict(zip(X.col_ids, X.col_tags)), DEST_TAG_HEADER)
    with open(_out(s, manifest, "anomalies.csv"), "w", encoding="utf-8") as fh:
        fh.write("row_id,col_id,inflation_ms\n")
        for i, j in sorted(truth.anomalies):
            fh.write(f"{X.row_ids[i]},{X.col_ids[j]},{truth.S0[i, j]!r}\n")
    if args.measurements:
        write_measurements(_out(s, manifest, "measurements.csv"), to_measurements(X, seed=spec.seed))
        with open(_out(s, manifest, "prefixes.txt"), "w", encoding="utf-8") as fh:
            fh.writelines(f"{c}\n" for c in X.col_ids)
    manifest.result("planted_rank", truth.planted_rank)
    manifest.result("anomalies", len(truth.anomalies))
    manifest.result("missing_fraction", X.missing_fraction)

    seeds = None
    if args.seeds is not None:
        seeds = list(range(args.seeds))
    elif s["seeds"] is not None:
        seeds = list(range(int(s["seeds"])))
    elif "seeds" in sweep:
        seeds = [int(x) for x in sweep["seeds"]]
    if seeds:
        rows = run_benchmark(spec, seeds, opts, cfg, interpolate=True)
        write_scores(_out(s, manifest, "scores.csv"), rows)
        for name in DETECTORS:
            mine = [r for r in rows if r.detector == name]
            manifest.result(f"mean_precision_{name}", float(np.mean([r.precision for r in mine])))
            manifest.result(f"mean_recall_{name}", float(np.mean([r.recall for r in mine])))
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    inputs = {k: getattr(args, k, None) for k in
              ("matrix", "measurements", "prefixes", "source_tags", "dest_tags", "spec", "config")}
    if isinstance(inputs.get("measurements"), bool):
        inputs.pop("measurements")
    manifest = None
    try:
        s = resolve(args)
        manifest = Manifest(args.command, inputs, _config_echo(s))
        os.makedirs(s["out_dir"], exist_ok=True)
        code = args.func(args, s, manifest)
    except (InputError, DelaySpaceError, OSError) as exc:
        for line in str(exc).split("; "):
            print(f"delayspace: error: {line}", file=sys.stderr)
        return EXIT_INPUT
    for w in manifest.warnings:
        log.warning(w)
    manifest.write(os.path.join(s["out_dir"], "manifest.json"))
    return code


if __name__ == "__main__":
    sys.exit(main())

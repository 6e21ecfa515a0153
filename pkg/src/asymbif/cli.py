"""Command-line entry point: ``asymbif {spectrum,branch,verify}``.

Exit codes
----------
0  success
1  malformed config, bad option or unparsable branch file
2  the asymptotic eigenvalue does not exceed lambda_* (bifurcation hypothesis fails)
3  eigensolver did not converge
4  seeding the branch failed
5  continuation produced fewer than 5 points
6  a verification check failed (the report is still written)
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .continuation import (
    Branch,
    BranchPoint,
    ContinuationOptions,
    SeedFailure,
    state_at_lambda,
    trace,
)
from .grid import fmt, make_grid, make_norms, norm_Lp, read_grid_csv, write_grid_csv
from .problem import ConfigError, lambda_star_of, load_problem
from .spectral import NonConvergence, check_f6, principal_eigenpair, principal_eigenvalue_L0, write_eigenpair
from .verify import check_branch, jsonable, write_decay_csv

log = logging.getLogger("asymbif")

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_HYPOTHESIS = 2
EXIT_NONCONVERGENCE = 3
EXIT_SEED = 4
EXIT_SHORT = 5
EXIT_CHECK = 6

MIN_POINTS = 5
BRANCH_COLUMNS = ["index", "lambda", "normX_v", "normX_u", "sup_u", "residual", "newton_iters", "positive"]
SIGNS = {"plus": [1], "minus": [-1], "both": [1, -1]}
SIGN_NAME = {1: "plus", -1: "minus"}


class BranchFileError(ValueError):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def config_hash(problem, extra: Optional[dict] = None) -> str:
    blob = json.dumps({"problem": problem.to_dict(), "options": extra or {}, "version": __version__},
                      sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def write_json(path, obj):
    with open(path, "w", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _positive_float(text):
    try:
        val = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if not (val > 0 and math.isfinite(val)):
        raise argparse.ArgumentTypeError(f"must be positive and finite: {text!r}")
    return val


def _positive_int(text):
    try:
        val = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1: {text!r}")
    return val


def _fraction(text):
    val = _positive_float(text)
    if val >= 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1): {text!r}")
    return val


def _truncations(text):
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated radii, got {text!r}")
    if not vals or any(v <= 0 for v in vals):
        raise argparse.ArgumentTypeError("truncation radii must be positive")
    return vals


def _setup(args):
    """Problem, grid, norms with command-line overrides applied."""
    problem = load_problem(args.config)
    try:
        problem = problem.with_overrides(m=args.grid_m, L=args.domain_L)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    grid = make_grid(problem)
    norms = make_norms(grid, problem.p)
    return problem, grid, norms


def _spectral(problem, grid, norms):
    eig = principal_eigenpair(problem, grid, norms, problem.finf)
    return eig, lambda_star_of(problem, grid.x)


# ---------------------------------------------------------------------------
# branch I/O
# ---------------------------------------------------------------------------


def write_branch_csv(path, branch: Branch):
    lines = [",".join(BRANCH_COLUMNS)]
    for k, pt in enumerate(branch.points):
        lines.append(",".join([
            str(k), fmt(pt.lam), fmt(pt.normX_v), fmt(pt.normX_u), fmt(pt.sup_u),
            fmt(pt.residual_Y), str(int(pt.newton_iters)), "true" if pt.positive else "false",
        ]))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_branch_csv(path) -> List[dict]:
    """Strict parser for :func:`write_branch_csv`; errors name the offending row."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise BranchFileError(f"cannot read {path}: {exc}") from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or lines[0].split(",") != BRANCH_COLUMNS:
        raise BranchFileError(f"{path}: row 1: expected header {','.join(BRANCH_COLUMNS)}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(",")
        if len(fields) != len(BRANCH_COLUMNS):
            raise BranchFileError(f"{path}: row {lineno}: expected {len(BRANCH_COLUMNS)} fields, got {len(fields)}")
        row = {}
        for name, raw in zip(BRANCH_COLUMNS, fields):
            try:
                if name in ("index", "newton_iters"):
                    row[name] = int(raw)
                elif name == "positive":
                    if raw not in ("true", "false"):
                        raise ValueError
                    row[name] = raw == "true"
                else:
                    val = float(raw)
                    if not math.isfinite(val):
                        raise ValueError
                    row[name] = val
            except ValueError:
                raise BranchFileError(f"{path}: row {lineno}: bad value {raw!r} in column {name!r}") from None
        if row["index"] != lineno - 2:
            raise BranchFileError(f"{path}: row {lineno}: index {row['index']} out of sequence")
        rows.append(row)
    if not rows:
        raise BranchFileError(f"{path}: no data rows")
    return rows


def load_branch(path, manifest_path=None) -> Branch:
    """Rebuild a Branch from its CSV, manifest and any snapshot files."""
    path = Path(path)
    rows = read_branch_csv(path)
    manifest_path = Path(manifest_path) if manifest_path else path.with_suffix(".json")
    manifest = {}
    if manifest_path.exists():
        try:
            manifest = json.loads(manifest_path.read_text())
        except json.JSONDecodeError as exc:
            raise BranchFileError(f"{manifest_path}: invalid JSON ({exc})") from exc
    sign = manifest.get("sign")
    if sign not in (1, -1):
        sign = 1 if all(r["positive"] for r in rows) else -1
    snaps = {}
    for k, name in (manifest.get("snapshots") or {}).items():
        try:
            _, cols = read_grid_csv(path.parent / name)
            snaps[int(k)] = cols["v"]
        except (OSError, KeyError, ValueError) as exc:
            raise BranchFileError(f"snapshot {name}: {exc}") from exc
    points = []
    for r in rows:
        v = snaps.get(r["index"])
        points.append(BranchPoint(
            lam=r["lambda"], v=v, u=None if v is None else v / r["normX_v"] ** 2,
            normX_v=r["normX_v"], normX_u=r["normX_u"], sup_u=r["sup_u"],
            newton_iters=r["newton_iters"], residual_Y=r["residual"], positive=r["positive"],
        ))
    nan = float("nan")
    return Branch(sign=sign, truncation_n=manifest.get("truncation_n"), points=points,
                  termination=manifest.get("termination", ""),
                  lambda_infinity=manifest.get("lambda_infinity", nan),
                  lambda_star=manifest.get("lambda_star", nan), options=manifest.get("options", {}))


def _snapshot_indices(n, every):
    idx = set(range(0, n, every))
    idx.add(n - 1)
    return sorted(idx)


def _branch_stem(sign, n):
    stem = f"branch_{SIGN_NAME[sign]}"
    return stem if n is None else f"{stem}_n{n:g}"


def _emit_branch(out: Path, grid, branch: Branch, stem: str, every: int, chash: str, report) -> dict:
    csv_path = out / f"{stem}.csv"
    write_branch_csv(csv_path, branch)
    snap_dir = out / f"{stem}_snapshots"
    snap_dir.mkdir(exist_ok=True)
    snaps = {}
    for k in _snapshot_indices(len(branch), every):
        pt = branch.points[k]
        name = f"{snap_dir.name}/point_{k:05d}.csv"
        write_grid_csv(out / name, grid, {"v": pt.v, "u": pt.u},
                       {"index": k, "lambda": pt.lam, "config_hash": chash})
        snaps[str(k)] = name
    plot = out / f"{stem}_bifurcation.csv"
    with open(plot, "w", newline="\n") as fh:
        fh.write("lambda,sup_u,normX_u\n")
        for pt in branch.points:
            fh.write(f"{fmt(pt.lam)},{fmt(pt.sup_u)},{fmt(pt.normX_u)}\n")
    decay_files = []
    for d in report.decay:
        name = f"{stem}_decay_{d['point']:05d}.csv"
        write_decay_csv(out / name, grid, branch.points[d["point"]].v)
        decay_files.append(name)
    verify_name = f"{stem}_verify.json"
    report_dict = report.to_dict()
    report_dict["config_hash"] = chash
    write_json(out / verify_name, jsonable(report_dict))
    manifest = {
        "config_hash": chash,
        "sign": branch.sign,
        "truncation_n": branch.truncation_n,
        "termination": branch.termination,
        "lambda_star": branch.lambda_star,
        "lambda_infinity": branch.lambda_infinity,
        "points": len(branch),
        "options": branch.options,
        "snapshots": snaps,
        "files": {"branch": csv_path.name, "bifurcation": plot.name, "verify": verify_name,
                  "decay": decay_files},
        "version": __version__,
    }
    write_json(out / f"{stem}.json", manifest)
    return manifest


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_spectrum(args) -> int:
    problem, grid, norms = _setup(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        eig, lam_star = _spectral(problem, grid, norms)
        lam0 = principal_eigenvalue_L0(problem, grid, norms)
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    ok = check_f6(problem, eig, grid)
    chash = config_hash(problem)
    extra = {"lambda_star": lam_star, "lambda_0": lam0, "hypothesis_f6": ok, "config_hash": chash,
             "grid": grid.metadata()}
    write_eigenpair(out / "eig_inf.csv", out / "eig_inf.json", grid, eig, extra)
    print(f"lambda_*   = {lam_star:.12g}")
    print(f"lambda_inf = {eig.lam:.12g}")
    print(f"lambda_0   = {lam0:.12g}")
    print(f"gap        = {eig.gap:.6g}")
    if not ok:
        print(f"hypothesis (f6) fails: lambda_inf = {eig.lam:.12g} does not exceed lambda_* = {lam_star:.12g}",
              file=sys.stderr)
        return EXIT_HYPOTHESIS
    return EXIT_OK


def cmd_branch(args) -> int:
    problem, grid, norms = _setup(args)
    try:
        eig, lam_star = _spectral(problem, grid, norms)
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    if not check_f6(problem, eig, grid):
        print(f"hypothesis (f6) fails: lambda_inf = {eig.lam:.12g} does not exceed lambda_* = {lam_star:.12g}",
              file=sys.stderr)
        return EXIT_HYPOTHESIS
    if args.lambda_floor is not None and not (lam_star < args.lambda_floor < eig.lam):
        print(f"error: --lambda-floor must lie in the admissible interval ({lam_star:.12g}, {eig.lam:.12g})",
              file=sys.stderr)
        return EXIT_CONFIG
    truncs = [None] + list(args.truncations or [])
    for n in truncs[1:]:
        if n > grid.L:
            print(f"error: truncation radius {n:g} exceeds L = {grid.L:g}", file=sys.stderr)
            return EXIT_CONFIG
    opts = ContinuationOptions(ds=args.ds, max_steps=args.max_steps, lambda_floor=args.lambda_floor)
    chash = config_hash(problem, {"ds": args.ds, "max_steps": args.max_steps, "lambda_floor": args.lambda_floor,
                                  "truncations": args.truncations, "epsilon_frac": args.epsilon_frac,
                                  "seed_amplitude": args.seed_amplitude, "sign": args.sign})

    runs = []
    for sign in SIGNS[args.sign]:
        for n in truncs:
            try:
                br = trace(problem, grid, norms, eig, lam_star, sign=sign, s0=args.seed_amplitude,
                           truncation_n=n, opts=opts)
            except SeedFailure as exc:
                print(f"error: seed failure ({SIGN_NAME[sign]}): {exc}", file=sys.stderr)
                return EXIT_SEED
            if len(br) < MIN_POINTS:
                print(f"error: continuation produced {len(br)} points (< {MIN_POINTS}); "
                      f"termination: {br.termination}", file=sys.stderr)
                return EXIT_SHORT
            report = check_branch(problem, br, grid, norms, epsilon_frac=args.epsilon_frac, lambda_star=lam_star,
                                  lambda_infinity=eig.lam)
            runs.append((sign, n, br, report))

    # all writes happen after the computation
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_eigenpair(out / "eig_inf.csv", out / "eig_inf.json", grid, eig,
                    {"lambda_star": lam_star, "config_hash": chash, "grid": grid.metadata()})
    index = {"config_hash": chash, "problem": problem.to_dict(), "branches": []}
    failed = False
    for sign, n, br, report in runs:
        stem = _branch_stem(sign, n)
        _emit_branch(out, grid, br, stem, args.snapshot_every, chash, report)
        index["branches"].append(f"{stem}.json")
        status = "ok" if report.passed else "FAILED: " + ", ".join(report.failures())
        print(f"{stem}: {len(br)} points, lambda {br.lambdas[0]:.10g} -> {br.lambdas[-1]:.10g}, "
              f"{br.termination}; checks {status}")
        failed |= not report.passed
    if len(truncs) > 1:
        index["truncation_study"] = _truncation_study(out, problem, grid, norms, runs, lam_star, eig.lam)
    write_json(out / "manifest.json", index)
    return EXIT_CHECK if failed else EXIT_OK


def _truncation_study(out, problem, grid, norms, runs, lam_star, lam_inf):
    lam_mid = 0.5 * (lam_star + lam_inf)
    rows = []
    for sign in sorted({r[0] for r in runs}, reverse=True):
        ref = next(br for s, n, br, _ in runs if s == sign and n is None)
        try:
            v_ref = state_at_lambda(problem, grid, norms, ref, lam_mid)
        except (ValueError, RuntimeError):
            continue
        for s, n, br, _ in runs:
            if s != sign or n is None:
                continue
            try:
                gap = norm_Lp(norms, state_at_lambda(problem, grid, norms, br, lam_mid) - v_ref)
            except (ValueError, RuntimeError):
                gap = float("nan")
            rows.append((sign, n, gap))
    with open(out / "truncation_study.csv", "w", newline="\n") as fh:
        fh.write("sign,n,lambda,gap_Y\n")
        for sign, n, gap in rows:
            fh.write(f"{sign},{fmt(n)},{fmt(lam_mid)},{fmt(gap)}\n")
    return "truncation_study.csv"


def cmd_verify(args) -> int:
    problem, grid, norms = _setup(args)
    try:
        branch = load_branch(args.branch_file)
    except BranchFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        eig, lam_star = _spectral(problem, grid, norms)
    except NonConvergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    for pt in branch.points:
        if pt.v is not None and pt.v.size != grid.m:
            print(f"error: snapshot has {pt.v.size} nodes, grid has {grid.m}", file=sys.stderr)
            return EXIT_CONFIG
    report = check_branch(problem, branch, grid, norms, epsilon_frac=args.epsilon_frac,
                          lambda_star=lam_star, lambda_infinity=eig.lam)
    out = Path(args.out) if args.out else Path(args.branch_file).parent
    out.mkdir(parents=True, exist_ok=True)
    d = report.to_dict()
    d["config_hash"] = config_hash(problem)
    d["branch_file"] = str(args.branch_file)
    write_json(out / (Path(args.branch_file).stem + "_reverify.json"), jsonable(d))
    for name, c in report.checks.items():
        print(f"{name:20s} {c.status:14s} {c.detail}")
    return EXIT_OK if report.passed else EXIT_CHECK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="asymbif", description="Branches bifurcating from infinity.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", required=True, metavar="PATH", help="problem configuration (JSON)")
        p.add_argument("--out", required=out_required, metavar="DIR", help="output directory")
        p.add_argument("--grid-m", type=_positive_int, metavar="K", help="override interior node count")
        p.add_argument("--domain-L", type=_positive_float, metavar="R", help="override domain radius")

    p = sub.add_parser("spectrum", help="principal eigenpairs and the f6 gate")
    common(p)
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("branch", help="seed, continue and verify branches")
    common(p)
    p.add_argument("--sign", choices=sorted(SIGNS), default="plus")
    p.add_argument("--ds", type=_positive_float, default=1e-3, metavar="R", help="initial arclength step")
    p.add_argument("--max-steps", type=_positive_int, default=2000, metavar="K")
    p.add_argument("--lambda-floor", type=float, metavar="R",
                   help="stop below this lambda (default lambda_* + 0.02 (lambda_inf - lambda_*))")
    p.add_argument("--truncations", type=_truncations, metavar="n1,n2,...",
                   help="also trace branches with the nonlinearity cut off beyond these radii")
    p.add_argument("--epsilon-frac", type=_fraction, default=0.1, metavar="R")
    p.add_argument("--seed-amplitude", type=_positive_float, default=1e-5, metavar="R",
                   help="X-norm of the first branch point")
    p.add_argument("--snapshot-every", type=_positive_int, default=10, metavar="K",
                   help="write full solutions for every K-th point and the last")
    p.set_defaults(func=cmd_branch)

    p = sub.add_parser("verify", help="re-run the checks on a stored branch")
    common(p, out_required=False)
    p.add_argument("branch_file", metavar="BRANCH_CSV")
    p.add_argument("--epsilon-frac", type=_fraction, default=0.1, metavar="R")
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; map to the config code
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

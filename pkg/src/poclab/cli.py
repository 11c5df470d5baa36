"""Command-line front end: ``poclab simulate | criteria | phase-scan | percolate | disagree | replay``.

Every run writes a JSON manifest (argv, resolved configuration, seed, git
describe, wall clock, SHA-256 of each output and of stdout).  ``replay``
re-executes a manifest and checks the hashes.

Exit codes: 0 success, 1 runtime or domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import subprocess
import sys
import time
import warnings
from contextlib import redirect_stdout
from pathlib import Path

import numpy as np

from . import __version__
from .criteria import (
    PHASE_COLUMNS,
    TruncationWarning,
    dobrushin_decision,
    dobrushin_gamma,
    dp_decision,
    dust_rate_matrix,
    max_perc_params,
    phase_scan,
)
from .errors import PocError
from .geometry import time_box, z2_window
from .models import ising_kernel, load_kernel, load_pca_spec, pca_to_pomm, stavskaya_kernel
from .percolation import (
    LITERATURE_PC_VALUES,
    chain_crossing_space,
    crossing_probability,
    disagreement_run,
    estimate_pc_plus,
    path_property_violations,
    reach_fraction,
    tree_crossing_space,
    z2_crossing_space,
)
from .sampler import BoundaryCondition, render_texture, sample_run

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


# ----------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------
def _model(args):
    """Kernel and, for file-defined models, their own site space (``None`` on Z²)."""
    if args.model == "ising":
        if args.beta is None:
            raise UsageError("--model ising needs --beta")
        return ising_kernel(args.beta, args.field), None
    if args.model == "stavskaya":
        if args.p is None:
            raise UsageError("--model stavskaya needs --p")
        return stavskaya_kernel(args.p), None
    if args.model == "file":
        if not args.path:
            raise UsageError("--model file needs --path")
        space, kernel = load_kernel(args.path)
        return kernel, space
    if not args.spec:
        raise UsageError("--model pca needs --spec")
    space, kernel = pca_to_pomm(load_pca_spec(args.spec))
    return kernel, space


def _model_box(args, space, kernel, width, height):
    if space is None:
        return _square_box(width, height)
    sites = [s for s in space.interior if kernel.defines(s)]
    if not sites:
        raise UsageError("the model defines no interior site")
    return time_box(space, sites)


def _site_row(s) -> tuple:
    if isinstance(s, tuple) and len(s) == 2:
        return s
    return (str(s), "")


def _boundary(text: str, kernel) -> BoundaryCondition:
    if text == "plus":
        return BoundaryCondition.plus()
    if text == "minus":
        return BoundaryCondition.minus()
    if text.startswith("random:"):
        try:
            p = float(text.split(":", 1)[1])
        except ValueError:
            raise UsageError(f"bad random boundary {text!r}") from None
        if not 0 <= p <= 1:
            raise UsageError("random boundary probability must lie in [0, 1]")
        law = [0.0] * len(kernel.colors)
        law[0], law[-1] = 1 - p, p
        return BoundaryCondition.random(law)
    if text.startswith("file:"):
        path = text.split(":", 1)[1]
        try:
            rows = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read boundary file {path}: {exc}") from None
        config = {}
        for row in rows:
            if len(row) == 3:
                config[(int(row[0]), int(row[1]))] = row[2]
            elif len(row) == 2:
                config[tuple(row[0]) if isinstance(row[0], list) else row[0]] = row[1]
            else:
                raise UsageError(f"boundary file {path}: rows are [a, b, value] or [site, value]")
        return BoundaryCondition.explicit(config)
    raise UsageError(f"unknown boundary {text!r}; use plus, minus, random:P or file:PATH")


def _square_box(width: int, height: int):
    if width < 1 or height < 1:
        raise UsageError("box dimensions must be positive")
    space = z2_window(width + 1, height + 1)
    return time_box(space, [(a, b) for a in range(1, width + 1) for b in range(1, height + 1)])


def _range(text: str):
    try:
        lo, hi, n = text.split(":")
        return list(np.linspace(float(lo), float(hi), int(n)))
    except ValueError:
        raise UsageError(f"bad range {text!r}; expected LO:HI:N") from None


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


# ----------------------------------------------------------------------
# subcommands; each returns the list of files it wrote
# ----------------------------------------------------------------------
def run_simulate(args) -> list:
    kernel, space = _model(args)
    box = _model_box(args, space, kernel, args.width, args.height)
    bc = _boundary(args.boundary, kernel)
    if args.replicas < 1:
        raise UsageError("--replicas must be positive")
    run = sample_run(kernel, box, bc, args.replicas, args.seed)
    outputs = []
    if args.out:
        render_texture(run.config(0), path=args.out, colors=kernel.colors.values)
        outputs.append(args.out)
    mean, se = run.site_means()
    if args.stats:
        rows = [(*_site_row(s), _fmt(float(m)), _fmt(float(e))) for s, m, e in zip(run.sites, mean, se)]
        rows.sort(key=lambda r: (str(r[1]), str(r[0])) if space is not None else (r[1], r[0]))
        _write_csv(args.stats, ("site_x", "site_y", "mean", "stderr"), rows)
        outputs.append(args.stats)
    print(f"model: {kernel.label}")
    shape = f"{args.width}x{args.height}" if space is None else f"{len(box)} sites"
    print(f"box: {shape}, boundary {args.boundary}, replicas {args.replicas}, seed {args.seed}")
    print(f"mean colour over the box: {float(mean.mean()):.6f}")
    last = (args.width, args.height) if space is None else box.order[-1]
    corner = run.column(last)
    spread = f" ± {float(se[corner]):.6f}" if args.replicas > 1 else ""
    print(f"mean colour at the last site {last}: {float(mean[corner]):.6f}{spread}")
    return outputs


def _mc_pc(args) -> float:
    est = estimate_pc_plus(z2_crossing_space(), args.depth, args.mc_replicas, seed=args.seed)
    print(f"Monte Carlo p_c+ bracket at depth {args.depth}: [{est.low:.5f}, {est.high:.5f}] (point {est.point:.5f})")
    return est.point


def run_criteria(args) -> list:
    kernel, space = _model(args)
    if space is None:
        alpha = dust_rate_matrix(kernel, sites=[(0, 0)])
        px = max_perc_params(kernel, sites=[(0, 0)]).sup
    else:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", TruncationWarning)
            alpha = dust_rate_matrix(kernel, space)
            px = max_perc_params(kernel, space).sup
        for w in caught[:1]:
            print(f"note: {w.message}")
    gamma = dobrushin_gamma(alpha)
    sums = alpha.row_sums()
    worst = max(sums, key=sums.get) if sums else None
    print(f"model: {kernel.label}")
    row = alpha.rows().get(worst, {})
    where = "" if space is None else f" at {worst!r} (largest row sum)"
    print(f"dust rates{where}: " + ", ".join(f"{x}: {a:.12g}" for x, a in row.items()))
    print(f"Dobrushin: {dobrushin_decision(gamma).verdict} (Γ={gamma:.6g})")
    print(f"sup p_x = {px:.12g}")
    thresholds = [("0.5 (analytic lower bound)", 0.5)]
    if args.pc_plus is not None:
        thresholds.append(("user", args.pc_plus))
    if args.estimate_pc:
        thresholds.append(("Monte Carlo", _mc_pc(args)))
    for name, pc in thresholds:
        d = dp_decision(px, pc)
        print(f"DP with p_c+={pc:.6g} [{name}]: {d.verdict} (margin {d.margin:+.6g})")
    print("literature values, for comparison only: " + ", ".join(f"{k} {v}" for k, v in LITERATURE_PC_VALUES.items()))
    return []


def run_phase_scan(args) -> list:
    if args.model != "ising":
        raise UsageError("phase-scan supports --model ising")
    betas, fields = _range(args.beta_range), _range(args.field_range)
    if any(b <= 0 for b in betas):
        raise UsageError("--beta-range must stay positive")
    pc = args.pc_plus if args.pc_plus is not None else _mc_pc(args)
    rows = phase_scan(betas, fields, pc)
    _write_csv(args.out, PHASE_COLUMNS, [[_fmt(r[c]) for c in PHASE_COLUMNS] for r in rows])
    print(f"{len(rows)} rows written to {args.out} (dp_ok_mc uses p_c+={pc:.6g})")
    print(f"Dobrushin region: {sum(r['dobrushin_ok'] for r in rows)} rows; DP@0.5: {sum(r['dp_ok_half'] for r in rows)}; DP@mc: {sum(r['dp_ok_mc'] for r in rows)}")
    return [args.out]


def _percolation_space(args):
    if args.space == "z2":
        return z2_crossing_space(args.width)
    if args.space == "chain":
        return chain_crossing_space
    return tree_crossing_space(args.roots)


def run_percolate(args) -> list:
    build = _percolation_space(args)
    outputs = []
    if args.estimate_pc:
        est = estimate_pc_plus(build, args.depth, args.replicas, seed=args.seed)
        rows = []
        for r in est.per_depth:
            print(f"depth {r.depth}: ½-crossing at q={r.point:.5f}, bracket [{r.low:.5f}, {r.high:.5f}]")
            rows.append((r.depth, _fmt(r.point), _fmt(r.low), _fmt(r.high), r.replicas))
        print(f"p_c+ bracket: [{est.low:.5f}, {est.high:.5f}]")
        if args.space == "z2":
            print("literature values, not asserted: " + ", ".join(f"{k} {v}" for k, v in LITERATURE_PC_VALUES.items()))
        if args.out:
            _write_csv(args.out, ("depth", "point", "low", "high", "replicas"), rows)
            outputs.append(args.out)
        return outputs
    if args.q is None:
        raise UsageError("percolate needs --q or --estimate-pc")
    if not 0 <= args.q <= 1:
        raise UsageError("--q must lie in [0, 1]")
    est = crossing_probability(build(args.depth), args.q, args.depth, args.replicas, seed=args.seed)
    print(f"crossing at depth {args.depth}, q={args.q:g}: {est.p:.6f} (95% CI [{est.low:.6f}, {est.high:.6f}], n={est.n})")
    if args.out:
        _write_csv(args.out, ("q", "depth", "crossing", "low", "high", "replicas"), [(args.q, args.depth, _fmt(est.p), _fmt(est.low), _fmt(est.high), est.n)])
        outputs.append(args.out)
    return outputs


def run_disagree(args) -> list:
    kernel, space = _model(args)
    box = _model_box(args, space, kernel, args.size, args.size)
    try:
        first, second = args.boundaries.split(",")
    except ValueError:
        raise UsageError("--boundaries takes two comma-separated boundaries") from None
    run = disagreement_run(kernel, box, _boundary(first, kernel), _boundary(second, kernel), args.replicas, args.seed)
    dis = run.disagreement.astype(float)
    freq = dis.mean(axis=0)
    se = dis.std(axis=0, ddof=1) / np.sqrt(run.replicas) if run.replicas > 1 else np.zeros_like(freq)
    bad = path_property_violations(run, kernel)
    last = (args.size, args.size) if space is None else box.order[-1]
    corner = reach_fraction(run, [last])
    print(f"model: {kernel.label}; boundaries {first} vs {second}; replicas {args.replicas}")
    print(f"mean disagreement density: {float(freq.mean()):.6f}")
    print(f"disagreement at the last site: {corner.p:.6f} (95% CI [{corner.low:.6f}, {corner.high:.6f}])")
    print(f"replicas violating the boundary-path property: {bad}")
    if args.out:
        rows = [(*_site_row(s), _fmt(float(f)), _fmt(float(e))) for s, f, e in zip(run.sites, freq, se)]
        rows.sort(key=lambda r: (str(r[1]), str(r[0])) if space is not None else (r[1], r[0]))
        _write_csv(args.out, ("site_x", "site_y", "disagreement", "stderr"), rows)
        return [args.out]
    return []


def run_replay(args) -> list:
    doc = json.loads(Path(args.manifest).read_text())
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(doc["argv"], _manifest=False)
    if code != 0:
        raise PocError(f"replayed command exited with status {code}")
    mismatched = [p for p, h in doc["outputs"].items() if not Path(p).exists() or _sha256(p) != h]
    if hashlib.sha256(buf.getvalue().encode()).hexdigest() != doc["stdout_sha256"]:
        mismatched.append("<stdout>")
    if mismatched:
        raise PocError(f"replay differs on: {', '.join(mismatched)}")
    print(f"replay of {args.manifest}: all {len(doc['outputs'])} outputs and stdout identical")
    return []


# ----------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------
def _model_flags(p):
    p.add_argument("--model", choices=("ising", "stavskaya", "file", "pca"), required=True)
    p.add_argument("--path", help="tabular kernel JSON (file)")
    p.add_argument("--spec", help="PCA specification JSON (pca)")
    p.add_argument("--beta", type=float, help="inverse temperature (ising)")
    p.add_argument("--field", type=float, default=0.0, help="external field h (ising)")
    p.add_argument("--p", type=float, help="occupation probability (stavskaya)")


def _mc_flags(p):
    p.add_argument("--depth", type=int, default=64, help="crossing depth for the Monte Carlo p_c+ estimate")
    p.add_argument("--mc-replicas", type=int, default=200)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="poclab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"poclab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--manifest", help="manifest path (default: next to the first output)")

    p = sub.add_parser("simulate", help="sample a box and write a texture and per-site statistics")
    _model_flags(p)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--boundary", default="plus", help="plus, minus, random:P or file:PATH")
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--out", help="PGM/PPM texture of replica 0")
    p.add_argument("--stats", help="CSV of per-site means")
    common(p)
    p.set_defaults(func=run_simulate)

    p = sub.add_parser("criteria", help="dust rates, Dobrushin constant and percolation criterion")
    _model_flags(p)
    p.add_argument("--pc-plus", type=float, help="user-supplied p_c+")
    p.add_argument("--estimate-pc", action="store_true", help="also decide against a Monte Carlo p_c+")
    _mc_flags(p)
    common(p)
    p.set_defaults(func=run_criteria)

    p = sub.add_parser("phase-scan", help="criterion region map over (beta, h)")
    p.add_argument("--model", choices=("ising",), default="ising")
    p.add_argument("--beta-range", default="0.05:2:40", help="LO:HI:N")
    p.add_argument("--field-range", default="0:1:21", help="LO:HI:N")
    p.add_argument("--pc-plus", type=float, help="p_c+ for the dp_ok_mc column (default: estimate)")
    p.add_argument("--out", required=True)
    _mc_flags(p)
    common(p)
    p.set_defaults(func=run_phase_scan)

    p = sub.add_parser("percolate", help="oriented percolation crossings and p_c+ brackets")
    p.add_argument("--space", choices=("z2", "chain", "tree"), default="z2")
    p.add_argument("--depth", type=int, default=64)
    p.add_argument("--replicas", type=int, default=400)
    p.add_argument("--width", type=int, help="start stratum width on z2 (default: depth)")
    p.add_argument("--roots", type=int, default=8, help="trees in the forest (tree space)")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--q", type=float)
    g.add_argument("--estimate-pc", action="store_true")
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=run_percolate)

    p = sub.add_parser("disagree", help="disagreement coupling under two boundaries")
    _model_flags(p)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--boundaries", default="plus,minus")
    p.add_argument("--replicas", type=int, default=1000)
    p.add_argument("--out")
    common(p)
    p.set_defaults(func=run_disagree)

    p = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    p.add_argument("manifest")
    p.set_defaults(func=run_replay, seed=None)
    return parser


def _write_manifest(args, argv, outputs, stdout_text, elapsed) -> str:
    path = args.manifest or (outputs[0] + ".manifest.json" if outputs else f"poclab-{args.command}.manifest.json")
    config = {k: v for k, v in vars(args).items() if k not in ("func", "manifest")}
    doc = {
        "argv": list(argv),
        "command": args.command,
        "config": config,
        "seed": args.seed,
        "version": __version__,
        "git_describe": _git_describe(),
        "wall_clock_seconds": round(elapsed, 6),
        "outputs": {p: _sha256(p) for p in outputs},
        "stdout_sha256": hashlib.sha256(stdout_text.encode()).hexdigest(),
        "threads": os.environ.get("POCLAB_THREADS", "1"),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def main(argv=None, _manifest: bool = True) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    start = time.perf_counter()
    buf = io.StringIO()
    try:
        with redirect_stdout(buf):
            outputs = args.func(args)
    except UsageError as exc:
        sys.stdout.write(buf.getvalue())
        print(f"poclab {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PocError, ValueError, OSError) as exc:
        sys.stdout.write(buf.getvalue())
        print(f"poclab {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    text = buf.getvalue()
    sys.stdout.write(text)
    if _manifest and args.command != "replay":
        path = _write_manifest(args, argv, outputs, text, time.perf_counter() - start)
        print(f"manifest: {path}", file=sys.stderr)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

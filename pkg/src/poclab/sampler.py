"""Forward sampling of box kernels, coupled samplers and texture output.

Sites are drawn slice by slice.  The colour at ``x`` is obtained by inverting
the upper tail of its conditional law with a uniform ``U_x ∈ (0, 1]``::

    σ_x = max{e : γ_x(σ_x >= e | past) >= U_x}

so that two copies driven by the same uniforms stay ordered whenever the
kernel is monotone.  Uniforms come from :mod:`poclab.streams`, addressed by
``(seed, site, replica)``; replicas are processed in vectorised chunks, and
the result is independent of the chunking and of any thread schedule.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import streams
from .errors import DomainError, MissingBoundaryError, MonotonicityError, UnsupportedError
from .geometry import Site, TimeBox
from .kernels import ColorSpace, Kernel, exterior_footprint

CHUNK_ELEMENTS = 4_000_000


# ----------------------------------------------------------------------
# boundary conditions
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class BoundaryCondition:
    """Colours outside the box: all-up, all-down, explicit, or i.i.d. random.

    ``law`` gives the probabilities of the colours (in colour order) for the
    random kind; random boundaries are redrawn for every replica.
    """

    kind: str
    config: Mapping | None = None
    law: tuple | None = None

    def __post_init__(self):
        if self.kind not in ("plus", "minus", "explicit", "random"):
            raise DomainError(f"unknown boundary kind {self.kind!r}")
        if self.kind == "explicit" and self.config is None:
            raise DomainError("explicit boundary needs a configuration")
        if self.kind == "random":
            law = np.asarray(self.law, dtype=float)
            if law.ndim != 1 or np.any(law < 0) or abs(law.sum() - 1) > 1e-12:
                raise DomainError("random boundary needs a probability vector over the colours")

    @classmethod
    def plus(cls) -> "BoundaryCondition":
        return cls("plus")

    @classmethod
    def minus(cls) -> "BoundaryCondition":
        return cls("minus")

    @classmethod
    def explicit(cls, config: Mapping) -> "BoundaryCondition":
        return cls("explicit", config=dict(config))

    @classmethod
    def random(cls, law: Sequence[float]) -> "BoundaryCondition":
        return cls("random", law=tuple(float(p) for p in law))

    @property
    def deterministic(self) -> bool:
        return self.kind != "random"

    def realize(self, colors: ColorSpace, sites: Iterable[Site]) -> dict:
        """Concrete boundary configuration on ``sites`` (deterministic kinds only)."""
        sites = list(sites)
        if self.kind == "plus":
            return {s: colors.maximum for s in sites}
        if self.kind == "minus":
            return {s: colors.minimum for s in sites}
        if self.kind == "explicit":
            missing = [s for s in sites if s not in self.config]
            if missing:
                raise MissingBoundaryError(f"boundary does not define footprint sites {missing[:8]}", missing=missing)
            return {s: self.config[s] for s in sites}
        raise DomainError("a random boundary has no single realisation; sample it per replica")


def _site_key(box: TimeBox, site: Site) -> int:
    idx = box.space.index.get(site)
    if idx is not None:
        return idx
    return (1 << 32) + zlib.crc32(repr(site).encode())


def _boundary_block(bc: BoundaryCondition, colors: ColorSpace, box, ext, key, start, count) -> np.ndarray:
    out = np.empty((count, len(ext)), dtype=np.int8)
    if bc.deterministic:
        cfg = bc.realize(colors, ext)
        out[:] = np.array([colors.index(cfg[s]) for s in ext], dtype=np.int8)
        return out
    tail = _tail(np.asarray(bc.law, dtype=float))
    for j, s in enumerate(ext):
        u = streams.uniforms(key, _site_key(box, s), streams.BOUNDARY, start, count)
        out[:, j] = _invert(np.broadcast_to(tail, (count, len(tail))), u)
    return out


# ----------------------------------------------------------------------
# sampling engine
# ----------------------------------------------------------------------
def _tail(probs: np.ndarray) -> np.ndarray:
    tail = np.flip(np.cumsum(np.flip(probs, -1), -1), -1)
    tail[..., 0] = 1.0
    return tail


def _invert(tail: np.ndarray, u: np.ndarray) -> np.ndarray:
    """``max{e : tail(e) >= u}`` along the last axis."""
    return ((tail >= u[..., None]).sum(-1) - 1).astype(np.int8)


@dataclass
class _Group:
    cols: np.ndarray  # state columns written by this group
    fp: np.ndarray  # (g, k) footprint columns
    table: np.ndarray  # (m,)*k + (m,)
    keys: np.ndarray  # stream id per site


class _Plan:
    """Column layout and per-slice groups for sampling one box."""

    def __init__(self, kernel: Kernel, box: TimeBox):
        self.kernel = kernel
        self.box = box
        self.sites = box.order
        self.ext = exterior_footprint(kernel, box)
        col = {s: i for i, s in enumerate(self.sites)}
        col.update({s: len(self.sites) + j for j, s in enumerate(self.ext)})
        self.width = len(self.sites) + len(self.ext)
        self.steps = []
        for sl in box.slices:
            groups: dict = {}
            for s in sl:
                tbl = kernel.table(s)
                groups.setdefault(id(tbl), (tbl, []))[1].append(s)
            step = []
            for tbl, members in groups.values():
                fp = np.array([[col[f] for f in kernel.footprint(s)] for s in members], dtype=np.intp)
                fp = fp.reshape(len(members), -1)
                step.append(
                    _Group(
                        cols=np.array([col[s] for s in members], dtype=np.intp),
                        fp=fp,
                        table=tbl,
                        keys=np.array([_site_key(box, s) for s in members], dtype=np.int64),
                    )
                )
            self.steps.append(step)

    def probs(self, group: _Group, state: np.ndarray) -> np.ndarray:
        vals = state[:, group.fp]  # (R, g, k)
        return group.table[tuple(vals[..., j] for j in range(group.fp.shape[1]))]

    def uniforms(self, group: _Group, key, tag, start, count) -> np.ndarray:
        u = np.empty((count, len(group.keys)))
        for j, k in enumerate(group.keys):
            u[:, j] = streams.uniforms(key, int(k), tag, start, count)
        return u


def _chunk_size(width: int) -> int:
    return max(4, CHUNK_ELEMENTS // max(1, width))


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("POCLAB_THREADS", "1")))
    except ValueError:
        return 1


def _run_chunks(replicas: int, width: int, work: Callable):
    """Run ``work(start, count)`` over aligned replica chunks, in order."""
    pieces = list(streams.chunks(replicas, _chunk_size(width)))
    threads = min(_threads(), len(pieces))
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(lambda sc: work(*sc), pieces))
    return [work(start, count) for start, count in pieces]


def _forward(plan: _Plan, state: np.ndarray, key, start: int) -> None:
    count = state.shape[0]
    for step in plan.steps:
        for g in step:
            u = plan.uniforms(g, key, streams.MAIN, start, count)
            state[:, g.cols] = _invert(_tail(plan.probs(g, state)), u)


# ----------------------------------------------------------------------
# runs and statistics
# ----------------------------------------------------------------------
@dataclass
class Estimate:
    mean: float
    stderr: float
    n: int

    def __iter__(self):
        return iter((self.mean, self.stderr, self.n))


@dataclass
class SampleRun:
    """Replicated samples of one box kernel; ``samples[r, i]`` is a colour index."""

    seed: int
    replicas: int
    box: TimeBox
    colors: ColorSpace
    samples: np.ndarray = field(repr=False)
    sites: tuple = ()
    label: str = ""

    def values(self) -> np.ndarray:
        return np.asarray(self.colors.values)[self.samples]

    def config(self, replica: int) -> dict:
        vals = self.colors.values
        return {s: vals[c] for s, c in zip(self.sites, self.samples[replica])}

    def column(self, site: Site) -> int:
        return self.sites.index(site)

    def site_means(self) -> tuple[np.ndarray, np.ndarray]:
        v = self.values().astype(float)
        mean = v.mean(axis=0)
        se = v.std(axis=0, ddof=1) / np.sqrt(self.replicas) if self.replicas > 1 else np.full(len(mean), np.nan)
        return mean, se

    def covariance(self, a: Site, b: Site) -> float:
        v = self.values().astype(float)
        return float(np.cov(v[:, self.column(a)], v[:, self.column(b)])[0, 1])


def sample_run(
    kernel: Kernel, box: TimeBox, boundary: BoundaryCondition, replicas: int, seed: int
) -> SampleRun:
    """Draw ``replicas`` independent interiors of ``box`` under ``boundary``."""
    if replicas < 1:
        raise DomainError("need at least one replica")
    plan = _Plan(kernel, box)
    key = streams.master_key(seed)
    n = len(plan.sites)

    def work(start, count):
        state = np.zeros((count, plan.width), dtype=np.int8)
        state[:, n:] = _boundary_block(boundary, kernel.colors, box, plan.ext, key, start, count)
        _forward(plan, state, key, start)
        return state[:, :n]

    samples = np.concatenate(_run_chunks(replicas, plan.width, work), axis=0) if n else np.zeros((replicas, 0), np.int8)
    return SampleRun(seed, replicas, box, kernel.colors, samples, plan.sites, kernel.label)


def sample_box(kernel: Kernel, box: TimeBox, boundary: BoundaryCondition, seed: int, replica: int = 0) -> dict:
    """One interior configuration; equals replica ``replica`` of :func:`sample_run`."""
    if replica < 0:
        raise DomainError("replica index must be non-negative")
    run = sample_run(kernel, box, boundary, replica + 1, seed)
    return run.config(replica)


def empirical_mean(run: SampleRun, observable) -> Estimate:
    """Replica mean and standard error of an observable.

    ``observable`` is either a collection of sites (the average colour over
    them) or a callable taking the ``(replicas, sites)`` array of colour
    values and the site tuple and returning one number per replica.
    """
    vals = run.values().astype(float)
    if callable(observable):
        per = np.asarray(observable(vals, run.sites), dtype=float)
    else:
        cols = [run.column(s) for s in observable]
        per = vals[:, cols].mean(axis=1)
    n = per.shape[0]
    se = float(per.std(ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    return Estimate(float(per.mean()), se, n)


# ----------------------------------------------------------------------
# coupled samplers
# ----------------------------------------------------------------------
def audit_monotone(kernel: Kernel, box: TimeBox, trials: int = 1000, seed: int = 0) -> None:
    """Check ``γ(σ >= a | ξ) <= γ(σ >= a | η)`` on random ordered footprint pairs ``ξ <= η``."""
    rng = np.random.default_rng(seed)
    sites = box.order
    m = len(kernel.colors)
    vals = kernel.colors.values
    for _ in range(trials):
        s = sites[rng.integers(len(sites))]
        k = len(kernel.footprint(s))
        lo = rng.integers(m, size=k)
        hi = np.maximum(lo, rng.integers(m, size=k))
        tbl = kernel.table(s)
        t_lo, t_hi = _tail(tbl[tuple(lo)].copy()), _tail(tbl[tuple(hi)].copy())
        if np.any(t_lo > t_hi + 1e-12):
            cex = {"site": s, "lower_past": tuple(vals[i] for i in lo), "upper_past": tuple(vals[i] for i in hi)}
            raise MonotonicityError(f"kernel is not monotone at {s!r}: {cex}", counterexample=cex)


@dataclass
class CoupledRun:
    """Paired replicas ``(lower, upper)`` or ``(σ, σ')`` with shared site order."""

    seed: int
    replicas: int
    box: TimeBox
    colors: ColorSpace
    first: np.ndarray = field(repr=False)
    second: np.ndarray = field(repr=False)
    sites: tuple = ()
    boundary_first: np.ndarray | None = field(default=None, repr=False)
    boundary_second: np.ndarray | None = field(default=None, repr=False)
    ext: tuple = ()

    @property
    def disagreement(self) -> np.ndarray:
        return self.first != self.second

    def pair(self, replica: int) -> tuple[dict, dict]:
        vals = self.colors.values
        a = {s: vals[c] for s, c in zip(self.sites, self.first[replica])}
        b = {s: vals[c] for s, c in zip(self.sites, self.second[replica])}
        return a, b


def _coupled(kernel, box, bc1, bc2, replicas, seed, step_fn, check_order=False) -> CoupledRun:
    plan = _Plan(kernel, box)
    key = streams.master_key(seed)
    n = len(plan.sites)

    def work(start, count):
        s1 = np.zeros((count, plan.width), dtype=np.int8)
        s2 = np.zeros((count, plan.width), dtype=np.int8)
        s1[:, n:] = _boundary_block(bc1, kernel.colors, box, plan.ext, key, start, count)
        s2[:, n:] = _boundary_block(bc2, kernel.colors, box, plan.ext, key, start, count)
        if check_order and np.any(s1[:, n:] > s2[:, n:]):
            raise DomainError("lower boundary must be pointwise below the upper boundary")
        for step in plan.steps:
            for g in step:
                step_fn(plan, g, s1, s2, key, start, count)
        return s1, s2

    parts = _run_chunks(replicas, plan.width, work)
    s1 = np.concatenate([p[0] for p in parts], axis=0)
    s2 = np.concatenate([p[1] for p in parts], axis=0)
    return CoupledRun(seed, replicas, box, kernel.colors, s1[:, :n], s2[:, :n], plan.sites, s1[:, n:], s2[:, n:], plan.ext)


def _quantile_step(plan, g, s1, s2, key, start, count):
    u = plan.uniforms(g, key, streams.MAIN, start, count)
    s1[:, g.cols] = _invert(_tail(plan.probs(g, s1)), u)
    s2[:, g.cols] = _invert(_tail(plan.probs(g, s2)), u)


def coupled_monotone_run(
    kernel: Kernel,
    box: TimeBox,
    lower: BoundaryCondition,
    upper: BoundaryCondition,
    replicas: int,
    seed: int,
    audit_trials: int = 1000,
) -> CoupledRun:
    """Replicated monotone coupling driven by shared uniforms.

    The kernel is audited for monotonicity first; a failure raises
    :class:`~poclab.errors.MonotonicityError`.
    """
    audit_monotone(kernel, box, trials=audit_trials, seed=seed)
    return _coupled(kernel, box, lower, upper, replicas, seed, _quantile_step, check_order=True)


def sample_coupled_monotone(
    kernel: Kernel, box: TimeBox, lower: BoundaryCondition, upper: BoundaryCondition, seed: int, replica: int = 0
) -> tuple[dict, dict]:
    run = coupled_monotone_run(kernel, box, lower, upper, replica + 1, seed)
    return run.pair(replica)


def _maximal_step(plan, g, s1, s2, key, start, count):
    p1 = plan.probs(g, s1)
    p2 = plan.probs(g, s2)
    u0 = plan.uniforms(g, key, streams.MAIN, start, count)
    agree = np.all(s1[:, g.fp] == s2[:, g.fp], axis=-1)
    same = _invert(_tail(p1), u0)
    c1, c2 = same.copy(), same.copy()
    todo = ~agree
    if np.any(todo):
        u1 = plan.uniforms(g, key, streams.RESIDUAL_A, start, count)
        u2 = plan.uniforms(g, key, streams.RESIDUAL_B, start, count)
        overlap = np.minimum(p1, p2)
        w = overlap.sum(-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            common = _invert(_tail(overlap / w[..., None]), u1)
            rest = (1.0 - w)[..., None]
            r1 = _invert(_tail((p1 - overlap) / rest), u1)
            r2 = _invert(_tail((p2 - overlap) / rest), u2)
        joint = todo & (u0 <= w)
        split = todo & ~(u0 <= w)
        c1[joint], c2[joint] = common[joint], common[joint]
        c1[split], c2[split] = r1[split], r2[split]
    s1[:, g.cols] = c1
    s2[:, g.cols] = c2


def maximal_coupling_run(
    kernel: Kernel, box: TimeBox, first: BoundaryCondition, second: BoundaryCondition, replicas: int, seed: int
) -> CoupledRun:
    """Site-by-site maximal coupling: equal draws where the footprints agree,
    otherwise a coupling that realises the variational distance."""
    return _coupled(kernel, box, first, second, replicas, seed, _maximal_step)


# ----------------------------------------------------------------------
# textures
# ----------------------------------------------------------------------
def default_palette(colors: ColorSpace) -> dict:
    """Largest colour black, smallest white, the rest evenly spaced greys."""
    m = len(colors)
    if m == 1:
        return {colors.values[0]: 255}
    return {c: int(round(255 * (m - 1 - i) / (m - 1))) for i, c in enumerate(colors.values)}


def render_texture(config: Mapping, palette: Mapping | None = None, path=None, colors: Sequence | None = None) -> np.ndarray:
    """Rasterise a Z² configuration, one pixel per site, row ``x2`` and column ``x1``.

    Two-colour greyscale palettes give PGM (P5); palettes with more than two
    colours, or RGB entries, give PPM (P6).
    """
    if not config:
        raise DomainError("empty configuration")
    keys = list(config)
    if not all(isinstance(s, tuple) and len(s) == 2 for s in keys):
        raise UnsupportedError("textures need a two-dimensional window of (x1, x2) sites")
    if palette is None:
        cs = ColorSpace(tuple(colors) if colors is not None else tuple(sorted(set(config.values()))))
        palette = default_palette(cs)
    xs = [s[0] for s in keys]
    ys = [s[1] for s in keys]
    x0, y0 = min(xs), min(ys)
    width, height = max(xs) - x0 + 1, max(ys) - y0 + 1
    if width * height != len(keys):
        raise DomainError("configuration does not fill a rectangle")
    rgb = len(palette) > 2 or any(isinstance(v, (tuple, list)) for v in palette.values())
    img = np.zeros((height, width, 3) if rgb else (height, width), dtype=np.uint8)
    for (a, b), c in config.items():
        v = palette[c]
        img[b - y0, a - x0] = (v, v, v) if rgb and not isinstance(v, (tuple, list)) else v
    if path is not None:
        write_netpbm(img, path)
    return img


def write_netpbm(img: np.ndarray, path) -> None:
    height, width = img.shape[:2]
    magic = b"P6" if img.ndim == 3 else b"P5"
    header = magic + b"\n%d %d\n255\n" % (width, height)
    Path(path).write_bytes(header + np.ascontiguousarray(img, dtype=np.uint8).tobytes())


def read_netpbm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    magic, width, height, raster = parts[0], int(parts[1]), int(parts[2]), parts[4]
    shape = (height, width, 3) if magic == b"P6" else (height, width)
    return np.frombuffer(raster, dtype=np.uint8).reshape(shape)

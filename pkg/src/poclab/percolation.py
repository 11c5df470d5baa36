"""Bernoulli oriented percolation toward the past, crossing estimates,
critical-parameter brackets and the disagreement coupling.

Crossings use common random numbers.  Every site of every replica carries a
uniform ``U``; the site is open at level ``q`` iff ``U <= q``.  A bottleneck
recursion over generation layers gives, per replica, the smallest ``q`` at
which the start stratum is joined to depth ``L``.  The crossing probability
is then an exact step function of ``q`` for the fixed sample, so the
bisection for the ½ threshold has no extra Monte Carlo noise.
"""

from __future__ import annotations

import math
import warnings
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.stats import binomtest

from . import streams
from .errors import DomainError, TruncationError, UnsupportedError
from .geometry import Site, SiteSpace, TimeBox, binary_tree, z2_cone, z_chain
from .kernels import Kernel
from .sampler import BoundaryCondition, CoupledRun, maximal_coupling_run

CROSSING_THRESHOLD = 0.5
# published numbers shown next to our own brackets; never used as ground truth
LITERATURE_PC_VALUES = {"quoted Monte Carlo estimate": 0.64450, "standard directed site percolation": 0.705489}

CouplingRun = CoupledRun


# ----------------------------------------------------------------------
# fields and clusters
# ----------------------------------------------------------------------
@dataclass
class BernoulliField:
    """Open/closed sites with probability ``q`` (or ``params[x]``) of being open."""

    space: SiteSpace
    q: float | None = None
    params: Mapping | None = None

    def __post_init__(self):
        if (self.q is None) == (self.params is None):
            raise DomainError("give exactly one of a uniform q or per-site params")
        probs = [self.q] if self.q is not None else list(self.params.values())
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise DomainError("open probabilities must lie in [0, 1]")

    def prob_array(self) -> np.ndarray:
        if self.q is not None:
            return np.full(len(self.space), float(self.q))
        return np.array([float(self.params.get(s, 0.0)) for s in self.space.labels])

    def realize(self, seed: int, replicas: int = 1) -> np.ndarray:
        """Boolean ``(replicas, sites)`` array of open sites."""
        return uniform_field(self.space, seed, replicas) <= self.prob_array()[None, :]

    def open_sites(self, seed: int, replica: int = 0) -> frozenset:
        row = self.realize(seed, replica + 1)[replica]
        return frozenset(s for s, o in zip(self.space.labels, row) if o)


def uniform_field(space: SiteSpace, seed: int, replicas: int) -> np.ndarray:
    key = streams.master_key(seed)
    out = np.empty((replicas, len(space)))
    for i in range(len(space)):
        out[:, i] = streams.uniforms(key, i, streams.FIELD, 0, replicas)
    return out


def oriented_cluster(open_sites: Iterable[Site], start: Iterable[Site], space: SiteSpace) -> frozenset:
    """Sites reached from open start sites by open steps toward the past (BFS)."""
    is_open = set(open_sites)
    seen = {s for s in start if s in is_open}
    for s in seen:
        space.id_of(s)
    queue = deque(seen)
    while queue:
        x = queue.popleft()
        for y in space.nearest_past_of(x):
            if y in is_open and y not in seen:
                seen.add(y)
                queue.append(y)
    return frozenset(seen)


# ----------------------------------------------------------------------
# bottleneck crossings
# ----------------------------------------------------------------------
def default_stratum(space: SiteSpace) -> tuple:
    """Maximal sites of the window (nothing in the window lies in their future)."""
    return tuple(space.labels[i] for i in range(len(space)) if not space.future_ids[i])


@dataclass
class _Layers:
    """Generation layers ``R_0 = start``, ``R_{t+1} = ∂̲R_t`` with parent links."""

    layers: list  # arrays of site ids
    parents: list  # for t >= 1: (len(R_t), F) positions into R_{t-1}, padded with -1


def _layers(space: SiteSpace, start: Sequence[Site], depth: int) -> _Layers:
    if depth < 1:
        raise DomainError("depth must be at least 1")
    current = np.array(sorted(space.ids(start)), dtype=np.intp)
    if len(current) == 0:
        raise DomainError("empty start stratum")
    layers, parents = [current], []
    for t in range(1, depth):
        where = {int(i): k for k, i in enumerate(current)}
        children: dict = {}
        for i in current:
            lost = space.missing_past.get(space.labels[i])
            if lost:
                raise TruncationError(
                    f"depth {depth} leaves the window after {t} steps at {space.labels[i]!r}", missing=list(lost)
                )
            for p in space.past_ids[i]:
                children.setdefault(p, []).append(where[int(i)])
        if not children:
            raise TruncationError(f"no site at depth {t}: the window is too shallow for depth {depth}", missing=[])
        nxt = np.array(sorted(children), dtype=np.intp)
        width = max(len(v) for v in children.values())
        par = np.full((len(nxt), width), -1, dtype=np.intp)
        for k, i in enumerate(nxt):
            par[k, : len(children[i])] = children[i]
        layers.append(nxt)
        parents.append(par)
        current = nxt
    return _Layers(layers, parents)


def bottleneck(costs: np.ndarray, lay: _Layers) -> np.ndarray:
    """Per replica, min over start-to-depth paths of the max site cost."""
    b = costs[:, lay.layers[0]]
    for ids, par in zip(lay.layers[1:], lay.parents):
        padded = np.concatenate([b, np.full((b.shape[0], 1), np.inf)], axis=1)
        best = padded[:, par].min(axis=-1)  # -1 picks the inf column
        b = np.maximum(best, costs[:, ids])
    return b.min(axis=1)


def _costs(space: SiteSpace, seed: int, replicas: int, params: Mapping | None) -> np.ndarray:
    u = uniform_field(space, seed, replicas)
    if params is None:
        return u
    p = np.array([float(params.get(s, 0.0)) for s in space.labels])
    with np.errstate(divide="ignore"):
        return np.where(p > 0, u / np.where(p > 0, p, 1.0), np.inf)


def crossing_levels(
    space: SiteSpace, depth: int, replicas: int, seed: int, start: Sequence[Site] | None = None, params=None
) -> np.ndarray:
    """Critical level of every replica: crossing at ``q`` iff ``level <= q``.

    With per-site ``params`` the level is on the scale ``U_x / p_x`` and the
    crossing happens iff ``level <= 1``.
    """
    lay = _layers(space, default_stratum(space) if start is None else start, depth)
    return bottleneck(_costs(space, seed, replicas, params), lay)


def wilson(k: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass
class CrossingEstimate:
    p: float
    low: float
    high: float
    n: int
    depth: int

    @property
    def stderr(self) -> float:
        return math.sqrt(max(self.p * (1 - self.p), 0.0) / self.n)


def _estimate(levels: np.ndarray, q: float, depth: int) -> CrossingEstimate:
    k = int(np.count_nonzero(levels <= q))
    lo, hi = wilson(k, len(levels))
    return CrossingEstimate(k / len(levels), lo, hi, len(levels), depth)


def crossing_probability(
    space: SiteSpace,
    q: float | Mapping,
    depth: int,
    replicas: int,
    seed: int = 0,
    start: Sequence[Site] | None = None,
) -> CrossingEstimate:
    """Fraction of replicas where the start stratum reaches depth ``depth``
    (an open path of ``depth`` sites), with a Wilson 95% interval."""
    if isinstance(q, Mapping):
        levels = crossing_levels(space, depth, replicas, seed, start, params=q)
        return _estimate(levels, 1.0, depth)
    if not 0.0 <= q <= 1.0:
        raise DomainError("q must lie in [0, 1]")
    return _estimate(crossing_levels(space, depth, replicas, seed, start), q, depth)


# ----------------------------------------------------------------------
# critical parameter
# ----------------------------------------------------------------------
def _bisect(pred, lo=0.0, hi=1.0, tol=1e-6) -> float:
    """Smallest q in [lo, hi] with pred(q) true, for a monotone predicate."""
    if not pred(hi):
        return math.inf
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class DepthResult:
    depth: int
    point: float
    low: float
    high: float
    replicas: int
    levels: np.ndarray = field(repr=False)

    def curve(self, qs: Sequence[float]) -> list[tuple]:
        out = []
        for q in qs:
            e = _estimate(self.levels, q, self.depth)
            out.append((float(q), e.p, e.low, e.high))
        return out


@dataclass
class PcEstimate:
    low: float
    high: float
    point: float
    per_depth: list
    threshold: float = CROSSING_THRESHOLD
    warnings: list = field(default_factory=list)

    @property
    def bracket(self) -> tuple[float, float]:
        return (self.low, self.high)


def _depth_result(levels: np.ndarray, depth: int, tol: float, threshold: float) -> DepthResult:
    n = len(levels)

    def frac(q):
        return np.count_nonzero(levels <= q) / n

    point = _bisect(lambda q: frac(q) >= threshold, tol=tol)
    low = _bisect(lambda q: wilson(int(round(frac(q) * n)), n)[1] >= threshold, tol=tol)
    high = _bisect(lambda q: wilson(int(round(frac(q) * n)), n)[0] >= threshold, tol=tol)
    return DepthResult(depth, point, low, high, n, levels)


def doubling_schedule(depth: int, first: int = 16) -> list[int]:
    out = []
    d = depth
    while d >= first:
        out.append(d)
        d //= 2
    return sorted(out) or [depth]


def estimate_pc_plus(
    space_for_depth,
    depth: int,
    replicas: int,
    tolerance: float = 1e-4,
    seed: int = 0,
    schedule: Sequence[int] | None = None,
    threshold: float = CROSSING_THRESHOLD,
) -> PcEstimate:
    """Bracket for the percolation threshold from the ½ crossing at depth ``depth``.

    ``space_for_depth(L)`` builds the window used at depth ``L`` (its maximal
    sites are the start stratum); the doubling schedule ends at ``depth``.
    The bracket is the bisection point widened by the Wilson interval of the
    crossing fraction; the per-depth results expose the finite-size drift.
    """
    if tolerance <= 0:
        raise DomainError("tolerance must be positive")
    schedule = list(schedule) if schedule is not None else doubling_schedule(depth)
    results, notes = [], []
    for k, d in enumerate(schedule):
        space = space_for_depth(d)
        levels = crossing_levels(space, d, replicas, seed + k)
        res = _depth_result(levels, d, tolerance, threshold)
        if not math.isfinite(res.high):
            notes.append(f"depth {d}: crossing fraction never reaches {threshold} with confidence; bracket open")
        results.append(res)
    final = results[-1]
    for msg in notes:
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return PcEstimate(final.low, min(final.high, 1.0), final.point, results, threshold, notes)


def z2_crossing_space(width: int | None = None):
    """Factory of Z² cones whose start stratum has ``width`` sites (default: the depth)."""

    def build(depth: int) -> SiteSpace:
        return z2_cone(width or depth, depth - 1)

    return build


def chain_crossing_space(depth: int) -> SiteSpace:
    return z_chain(depth)


def tree_crossing_space(roots: int):
    def build(depth: int) -> SiteSpace:
        return binary_tree(depth - 1, roots)

    return build


def tree_crossing_exact(q: float, depth: int, roots: int) -> float:
    """Exact crossing probability on the binary forest: survival of ``depth`` generations."""
    u = q
    for _ in range(depth - 1):
        u = q * (1 - (1 - u) ** 2)
    return 1 - (1 - u) ** roots


# ----------------------------------------------------------------------
# disagreement coupling
# ----------------------------------------------------------------------
def _as_boundary(b) -> BoundaryCondition:
    return b if isinstance(b, BoundaryCondition) else BoundaryCondition.explicit(b)


def _require_markov(kernel: Kernel, box: TimeBox) -> None:
    for s in box.order:
        if not kernel.is_markov(box.space, s):
            raise UnsupportedError(f"kernel footprint at {s!r} is not the nearest past; the coupling needs a Markov kernel")


def disagreement_run(kernel: Kernel, box: TimeBox, eta, eta_prime, replicas: int, seed: int) -> CouplingRun:
    """Replicated disagreement coupling of the box laws under two boundaries."""
    _require_markov(kernel, box)
    return maximal_coupling_run(kernel, box, _as_boundary(eta), _as_boundary(eta_prime), replicas, seed)


def disagreement_coupling(kernel: Kernel, box: TimeBox, eta, eta_prime, seed: int) -> CouplingRun:
    return disagreement_run(kernel, box, eta, eta_prime, 1, seed)


def disagreement_reach(run: CouplingRun, kernel: Kernel) -> np.ndarray:
    """Sites joined to the boundary by a downward path of disagreements, per replica."""
    col = {s: i for i, s in enumerate(run.sites)}
    bcol = {s: i for i, s in enumerate(run.ext)}
    bdis = run.boundary_first != run.boundary_second
    dis = run.disagreement
    reach = np.zeros_like(dis)
    for s in run.box.order:
        hit = np.zeros(dis.shape[0], dtype=bool)
        for f in kernel.footprint(s):
            hit |= reach[:, col[f]] if f in col else bdis[:, bcol[f]]
        reach[:, col[s]] = hit & dis[:, col[s]]
    return reach


def path_property_violations(run: CouplingRun, kernel: Kernel) -> int:
    """Number of replicas whose disagreement set differs from the boundary-reached set."""
    return int(np.count_nonzero(np.any(disagreement_reach(run, kernel) != run.disagreement, axis=1)))


def reach_fraction(run: CouplingRun, sites: Iterable[Site]) -> CrossingEstimate:
    """Fraction of replicas with a disagreement on ``sites``."""
    cols = [run.sites.index(s) for s in sites]
    hit = np.any(run.disagreement[:, cols], axis=1)
    k = int(hit.sum())
    lo, hi = wilson(k, run.replicas)
    return CrossingEstimate(k / run.replicas, lo, hi, run.replicas, 0)

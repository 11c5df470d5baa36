"""Single-site oriented kernels and the box kernels they generate.

A kernel gives, for each site ``x``, a law on the colour space that depends
only on a finite, declared footprint inside the strict past of ``x``.  Box
kernels are the ordered product of the single-site kernels along the slicing
of the box; :func:`compose_box_distribution` builds the same law by literally
applying the single-site kernels one after another, which is what the
reconstruction tests compare against.

Configurations are plain ``dict`` objects mapping site labels to colour
values.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DomainError,
    EnumerationTooLarge,
    MissingBoundaryError,
    SingularityError,
    UnsupportedError,
)
from .geometry import Site, SiteSpace, TimeBox, nearest_future, time_box

ENUMERATION_LIMIT = 2**20
NORMALIZATION_TOL = 1e-12
TABLE_TOL = 1e-9
LOG_SPACE_THRESHOLD = 64

Configuration = dict


@dataclass(frozen=True)
class ColorSpace:
    """Finite, totally ordered colour set; ``values`` is listed in increasing order."""

    values: tuple

    def __post_init__(self):
        if not self.values:
            raise DomainError("colour space must be nonempty")
        if len(set(self.values)) != len(self.values):
            raise DomainError(f"duplicate colours in {self.values}")
        object.__setattr__(self, "_pos", {v: i for i, v in enumerate(self.values)})

    def __len__(self) -> int:
        return len(self.values)

    def __iter__(self):
        return iter(self.values)

    def __contains__(self, value) -> bool:
        return value in self._pos

    def index(self, value) -> int:
        try:
            return self._pos[value]
        except (KeyError, TypeError):
            raise DomainError(f"colour {value!r} is not in {self.values}") from None

    @property
    def minimum(self):
        return self.values[0]

    @property
    def maximum(self):
        return self.values[-1]


class Kernel:
    """Base class for single-site oriented kernels.

    Subclasses implement :meth:`footprint` and :meth:`distribution`.  Set
    ``homogeneous = True`` when the law depends on the site only through the
    colours on its footprint; tables are then shared between sites.
    """

    label = "kernel"
    homogeneous = False

    def __init__(self, colors: Sequence | ColorSpace):
        self.colors = colors if isinstance(colors, ColorSpace) else ColorSpace(tuple(colors))
        self._tables: dict = {}

    def footprint(self, site: Site) -> tuple:
        raise NotImplementedError

    def distribution(self, site: Site, past: tuple) -> Sequence[float]:
        """Probabilities of each colour at ``site`` given colour values on the footprint."""
        raise NotImplementedError

    def defines(self, site: Site) -> bool:
        return True

    def table(self, site: Site) -> np.ndarray:
        """Full conditional table, indexed by footprint colour indices then the site's colour."""
        key = None if self.homogeneous else site
        tbl = self._tables.get(key)
        if tbl is None:
            tbl = self._build_table(site)
            self._tables[key] = tbl
        return tbl

    def _build_table(self, site: Site) -> np.ndarray:
        k = len(self.footprint(site))
        m = len(self.colors)
        if m ** (k + 1) > ENUMERATION_LIMIT:
            raise EnumerationTooLarge(
                f"footprint of {site!r} has {m}^{k} configurations; refusing to tabulate", m**k
            )
        tbl = np.empty((m,) * k + (m,))
        for idx in itertools.product(range(m), repeat=k):
            past = tuple(self.colors.values[i] for i in idx)
            tbl[idx] = np.asarray(self.distribution(site, past), dtype=float)
        return tbl

    def is_markov(self, space: SiteSpace, site: Site) -> bool:
        fp = set(self.footprint(site))
        return fp == set(space.nearest_past_of(site)) | set(space.missing_past.get(site, ()))

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.label}>"


class FunctionKernel(Kernel):
    """Kernel from plain callables, handy for tests and ad-hoc models."""

    def __init__(self, colors, footprint: Callable, distribution: Callable, *, label="custom", homogeneous=False):
        super().__init__(colors)
        self._footprint = footprint
        self._distribution = distribution
        self.label = label
        self.homogeneous = homogeneous

    def footprint(self, site):
        return tuple(self._footprint(site))

    def distribution(self, site, past):
        return self._distribution(site, past)


class TabularKernel(Kernel):
    """Kernel given by explicit conditional tables per site.

    ``tables[site]`` maps a tuple of footprint colour values to a sequence of
    probabilities aligned with the colour order.  Sites without a table are
    boundary sites.
    """

    label = "table"

    def __init__(self, colors, footprints: Mapping, tables: Mapping):
        super().__init__(colors)
        self.footprints = {s: tuple(fp) for s, fp in footprints.items()}
        self.tables = {s: {tuple(k): tuple(v) for k, v in rows.items()} for s, rows in tables.items()}

    def defines(self, site) -> bool:
        return site in self.tables

    def footprint(self, site):
        if site not in self.footprints:
            raise DomainError(f"no footprint declared for site {site!r}")
        return self.footprints[site]

    def distribution(self, site, past):
        try:
            return self.tables[site][tuple(past)]
        except KeyError:
            raise DomainError(f"no table row for site {site!r} and past {past!r}") from None


# ----------------------------------------------------------------------
# single sites
# ----------------------------------------------------------------------
def _footprint_values(kernel: Kernel, x: Site, config: Mapping) -> tuple:
    fp = kernel.footprint(x)
    missing = [f for f in fp if f not in config]
    if missing:
        raise MissingBoundaryError(f"footprint sites {missing} of {x!r} are undefined", missing=missing)
    return tuple(config[f] for f in fp)


def site_distribution(kernel: Kernel, x: Site, past: Mapping) -> np.ndarray:
    """The law of the colour at ``x`` given a configuration covering its footprint."""
    values = _footprint_values(kernel, x, past)
    idx = tuple(kernel.colors.index(v) for v in values)
    return kernel.table(x)[idx].copy()


def eval_single_site(kernel: Kernel, x: Site, color, past: Mapping) -> float:
    """``γ_x(color | past)``."""
    c = kernel.colors.index(color)
    return float(site_distribution(kernel, x, past)[c])


# ----------------------------------------------------------------------
# boxes
# ----------------------------------------------------------------------
def _as_box(box, space: SiteSpace | None = None) -> TimeBox:
    if isinstance(box, TimeBox):
        return box
    if space is None:
        raise DomainError("a raw site set needs a site space to become a time box")
    return time_box(space, box)


def exterior_footprint(kernel: Kernel, box: TimeBox) -> tuple:
    """Sites outside the box that the box kernel reads, in first-use order."""
    inside = box.sites
    out = []
    for s in box.order:
        out.extend(f for f in kernel.footprint(s) if f not in inside)
    return tuple(dict.fromkeys(out))


def _check_boundary(kernel: Kernel, box: TimeBox, boundary: Mapping) -> None:
    missing = [f for f in exterior_footprint(kernel, box) if f not in boundary]
    if missing:
        raise MissingBoundaryError(f"boundary does not define footprint sites {missing[:8]}", missing=missing)


def _check_order(box: TimeBox, order: Sequence[Site]) -> tuple:
    order = tuple(order)
    if set(order) != set(box.sites) or len(order) != len(box.sites):
        raise DomainError("elimination order must list every box site exactly once")
    seen: set = set()
    space = box.space
    for s in order:
        for p in box.sites:
            if p not in seen and p != s and space.less(p, s):
                raise DomainError(f"order places {s!r} before its past site {p!r}")
        seen.add(s)
    return order


def box_probability(
    kernel: Kernel,
    box: TimeBox,
    interior: Mapping,
    boundary: Mapping,
    order: Sequence[Site] | None = None,
) -> float:
    """``γ_Λ(σ | η)`` as the product of single-site probabilities.

    ``order`` defaults to the slicing order; any order compatible with the
    box's partial order gives the same value.  Products over more than 64
    sites are accumulated in log space.
    """
    extra = set(interior) - set(box.sites)
    if extra:
        raise DomainError(f"interior assigns sites outside the box: {sorted(extra, key=repr)[:5]}")
    missing = [s for s in box.order if s not in interior]
    if missing:
        raise MissingBoundaryError(f"interior does not define box sites {missing[:8]}", missing=missing)
    order = box.order if order is None else _check_order(box, order)
    config = {**boundary, **interior}
    factors = [eval_single_site(kernel, s, interior[s], config) for s in order]
    if len(factors) > LOG_SPACE_THRESHOLD:
        if any(f == 0.0 for f in factors):
            return 0.0
        return math.exp(math.fsum(math.log(f) for f in factors))
    prob = 1.0
    for f in factors:
        prob *= f
    return prob


@dataclass
class Distribution:
    """Joint law of a few sites, stored as a tensor indexed by colour indices."""

    sites: tuple
    colors: ColorSpace
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        self._pos = {s: i for i, s in enumerate(self.sites)}

    def prob(self, config: Mapping) -> float:
        idx = tuple(self.colors.index(config[s]) for s in self.sites)
        return float(self.probs[idx])

    def as_dict(self) -> dict:
        vals = self.colors.values
        return {
            tuple(vals[i] for i in idx): float(p)
            for idx, p in np.ndenumerate(self.probs)
        } if self.sites else {(): float(self.probs)}

    def marginal(self, sites: Iterable[Site]) -> "Distribution":
        keep = [s for s in self.sites if s in set(sites)]
        drop = tuple(i for i, s in enumerate(self.sites) if s not in set(keep))
        return Distribution(tuple(keep), self.colors, self.probs.sum(axis=drop))

    def expect(self, f: Callable[[dict], float]) -> float:
        vals = self.colors.values
        total = 0.0
        for idx, p in np.ndenumerate(self.probs):
            if p:
                total += p * f({s: vals[i] for s, i in zip(self.sites, idx)})
        return total

    @property
    def total(self) -> float:
        return float(self.probs.sum())


def _state_count(m: int, n: int) -> int:
    return m**n


def _guard(kernel: Kernel, n: int) -> None:
    size = _state_count(len(kernel.colors), n)
    if size > ENUMERATION_LIMIT:
        raise EnumerationTooLarge(f"box has {size} interior configurations (limit {ENUMERATION_LIMIT})", size)


def _site_factor(kernel: Kernel, s: Site, grid, pos: Mapping, boundary_idx: Mapping) -> np.ndarray:
    tbl = kernel.table(s)
    fp_idx = tuple(grid[pos[f]] if f in pos else boundary_idx[f] for f in kernel.footprint(s))
    return tbl[fp_idx + (grid[pos[s]],)]


def exact_box_distribution(kernel: Kernel, box: TimeBox, boundary: Mapping) -> Distribution:
    """Enumerate ``γ_Λ(· | η)`` over all interior configurations (at most 2²⁰ states)."""
    _guard(kernel, len(box))
    _check_boundary(kernel, box, boundary)
    sites = box.order
    m = len(kernel.colors)
    pos = {s: i for i, s in enumerate(sites)}
    bidx = {f: kernel.colors.index(boundary[f]) for f in exterior_footprint(kernel, box)}
    if not sites:
        return Distribution((), kernel.colors, np.array(1.0))
    grid = np.indices((m,) * len(sites), sparse=True)
    probs = np.ones((m,) * len(sites))
    for s in sites:
        probs = probs * _site_factor(kernel, s, grid, pos, bidx)
    return Distribution(sites, kernel.colors, probs)


def compose_box_distribution(
    kernel: Kernel,
    box: TimeBox,
    boundary: Mapping,
    order: Sequence[Site],
    initial: Mapping | None = None,
) -> Distribution:
    """Apply the single-site kernels of ``order`` in turn, starting from ``initial``.

    Each step resamples one site given the current configuration.  For an
    order compatible with the box the result does not depend on ``initial``
    and equals :func:`exact_box_distribution`; other orders are accepted so
    that the difference can be observed.
    """
    _guard(kernel, len(box))
    _check_boundary(kernel, box, boundary)
    sites = box.order
    m = len(kernel.colors)
    pos = {s: i for i, s in enumerate(sites)}
    bidx = {f: kernel.colors.index(boundary[f]) for f in exterior_footprint(kernel, box)}
    start = tuple(kernel.colors.index((initial or {}).get(s, kernel.colors.minimum)) for s in sites)
    probs = np.zeros((m,) * len(sites))
    probs[start] = 1.0
    grid = np.indices((m,) * len(sites), sparse=True)
    for s in order:
        marg = probs.sum(axis=pos[s], keepdims=True)
        probs = marg * _site_factor(kernel, s, grid, pos, bidx)
    return Distribution(sites, kernel.colors, probs)


def apply_box_kernel(kernel: Kernel, dist: Distribution, inner: TimeBox, boundary: Mapping | None = None) -> Distribution:
    """Resample the sites of ``inner`` (a box inside ``dist.sites``) given the rest.

    Footprint sites outside ``dist`` are read from ``boundary``.  For nested
    boxes sharing that boundary this computes the law after applying the
    inner box kernel to ``dist``.
    """
    boundary = boundary or {}
    pos = {s: i for i, s in enumerate(dist.sites)}
    bidx = {}
    for s in inner.order:
        for f in kernel.footprint(s):
            if f in pos:
                continue
            if f not in boundary:
                raise MissingBoundaryError(f"footprint site {f!r} of {s!r} not covered", missing=[f])
            bidx[f] = kernel.colors.index(boundary[f])
    m = len(dist.colors)
    grid = np.indices((m,) * len(dist.sites), sparse=True)
    probs = dist.probs
    for s in inner.order:
        marg = probs.sum(axis=pos[s], keepdims=True)
        probs = marg * _site_factor(kernel, s, grid, pos, bidx)
    return Distribution(dist.sites, dist.colors, probs)


# ----------------------------------------------------------------------
# audits
# ----------------------------------------------------------------------
@dataclass
class PropernessReport:
    trials: int
    violations: list = field(default_factory=list)
    unverified: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def properness_check(kernel: Kernel, space: SiteSpace, trials: int = 1000, seed: int = 0) -> PropernessReport:
    """Randomised audit of normalisation and footprint orientation."""
    rng = np.random.default_rng(seed)
    report = PropernessReport(trials=trials)
    sites = [s for s in space.labels if kernel.defines(s)]
    if not sites:
        report.violations.append("kernel defines no site of the window")
        return report
    checked_fp: dict = {}
    vals = kernel.colors.values
    for _ in range(trials):
        x = sites[rng.integers(len(sites))]
        fp = kernel.footprint(x)
        if x not in checked_fp:
            bad = []
            for f in fp:
                try:
                    if not space.less(f, x):
                        bad.append(f)
                except DomainError:
                    report.unverified += 1
            checked_fp[x] = bad
            if bad:
                report.violations.append(f"orientedness: footprint of {x!r} contains {bad}, not in its strict past")
        past = tuple(vals[i] for i in rng.integers(len(vals), size=len(fp)))
        p = np.asarray(kernel.distribution(x, past), dtype=float)
        if p.shape != (len(vals),):
            report.violations.append(f"shape: site {x!r} returned {p.shape} probabilities")
            continue
        if np.any(p < 0) or np.any(p > 1):
            report.violations.append(f"range: site {x!r}, past {past}: {p.tolist()}")
        if abs(p.sum() - 1.0) > NORMALIZATION_TOL:
            report.violations.append(f"normalisation: site {x!r}, past {past} sums to {p.sum():.15g}")
    return report


# ----------------------------------------------------------------------
# induced unoriented specification
# ----------------------------------------------------------------------
def gibbs_specification(
    kernel: Kernel, space: SiteSpace, target: Iterable[Site], surround: Mapping
) -> Distribution:
    """Law of the colours on ``target`` given everything else, for a Markov kernel.

    Proportional to the kernels of the target sites times the kernels of the
    target's nearest future evaluated at their (fixed) colours.
    """
    target = space.sort_sites(set(target))
    future = space.sort_sites(nearest_future(space, target))
    for s in target + future:
        if not kernel.is_markov(space, s):
            raise UnsupportedError(f"kernel is not Markov at {s!r}: footprint differs from the nearest past")
    need = set()
    for s in target + future:
        need.update(f for f in kernel.footprint(s) if f not in target)
    need.update(future)
    missing = sorted((f for f in need if f not in surround), key=repr)
    if missing:
        raise MissingBoundaryError(f"surround does not define {missing[:8]}", missing=missing)
    m = len(kernel.colors)
    vals = kernel.colors.values
    weights = np.zeros((m,) * len(target))
    for idx in itertools.product(range(m), repeat=len(target)):
        config = dict(surround)
        config.update({s: vals[i] for s, i in zip(target, idx)})
        w = 1.0
        for s in target:
            w *= eval_single_site(kernel, s, config[s], config)
        for s in future:
            w *= eval_single_site(kernel, s, config[s], config)
        weights[idx] = w
    z = weights.sum()
    if z <= 0.0:
        raise SingularityError(
            f"all target configurations have zero weight given the surround of {list(target)}"
        )
    return Distribution(tuple(target), kernel.colors, weights / z)


# ----------------------------------------------------------------------
# JSON tables
# ----------------------------------------------------------------------
def past_key(values: Sequence) -> str:
    return ",".join(str(v) for v in values)


def kernel_to_json(kernel: Kernel, space: SiteSpace, sites: Iterable[Site] | None = None) -> dict:
    """Export a kernel restricted to a window as a tabular document.

    Sites are renumbered densely; ``coords`` keeps the original labels.
    Only sites whose footprint lies inside the window receive a table.
    """
    labels = list(space.labels)
    ids = {s: i for i, s in enumerate(labels)}
    chosen = [s for s in (sites if sites is not None else labels) if all(f in ids for f in kernel.footprint(s))]
    doc = {
        "colors": list(kernel.colors.values),
        "sites": list(range(len(labels))),
        "coords": [list(s) if isinstance(s, tuple) else s for s in labels],
        "past_edges": [[ids[s], ids[p]] for s in labels for p in space.nearest_past_of(s)],
        "footprint": {},
        "table": {},
    }
    vals = kernel.colors.values
    for s in chosen:
        fp = kernel.footprint(s)
        doc["footprint"][str(ids[s])] = [ids[f] for f in fp]
        rows = {}
        tbl = kernel.table(s)
        for idx in itertools.product(range(len(vals)), repeat=len(fp)):
            rows[past_key(vals[i] for i in idx)] = {str(vals[c]): float(tbl[idx][c]) for c in range(len(vals))}
        doc["table"][str(ids[s])] = rows
    return doc


def write_kernel_json(kernel: Kernel, space: SiteSpace, path) -> None:
    Path(path).write_text(json.dumps(kernel_to_json(kernel, space), indent=1))

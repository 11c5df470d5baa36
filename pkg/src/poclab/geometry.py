"""Finite windows of partially ordered site spaces and their geometry.

A :class:`SiteSpace` stores the nearest-past relation of a finite window as a
transitive reduction.  Reachability is answered by breadth-first search along
those edges, so region classification, time-box tests and slicing are linear
in the window size.

Sites whose true past (or future) reaches outside the window are recorded in
``missing_past`` / ``missing_future``.  Operations that would need those
outside sites raise :class:`~poclab.errors.TruncationError` instead of
silently clipping.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Hashable, Iterable, Mapping, Sequence

from .errors import BadBoxError, DomainError, GeometryError, LoadError, TruncationError

Site = Hashable


class SiteSpace:
    """A finite window of a countable poset, presented by nearest-past edges.

    Parameters
    ----------
    sites:
        Site labels in the window.  They are kept in sorted order when the
        labels are mutually comparable, which fixes the canonical order used
        everywhere else.
    past:
        ``past[x]`` lists the nearest-past sites of ``x`` inside the window.
    missing_past, missing_future:
        Neighbours of a site that exist in the full poset but fall outside
        the window.
    order_fn:
        Optional strict order ``order_fn(a, b) -> a < b`` valid for labels
        outside the window as well (used by kernel audits).
    """

    def __init__(
        self,
        sites: Iterable[Site],
        past: Mapping[Site, Iterable[Site]],
        *,
        descriptor: Mapping | None = None,
        missing_past: Mapping[Site, Iterable[Site]] | None = None,
        missing_future: Mapping[Site, Iterable[Site]] | None = None,
        order_fn: Callable[[Site, Site], bool] | None = None,
        validate: bool = True,
    ):
        labels = list(dict.fromkeys(sites))
        if not labels:
            raise GeometryError("a site space needs at least one site")
        try:
            labels.sort()
        except TypeError:
            pass
        self.labels: tuple = tuple(labels)
        self.index: dict = {s: i for i, s in enumerate(self.labels)}
        self.descriptor = dict(descriptor or {"kind": "explicit"})
        self.order_fn = order_fn

        past_ids = []
        for s in self.labels:
            row = []
            for p in past.get(s, ()):
                if p not in self.index:
                    raise GeometryError(f"past neighbour {p!r} of {s!r} is not a window site")
                if p == s:
                    raise GeometryError(f"site {s!r} lists itself as a past neighbour")
                row.append(self.index[p])
            past_ids.append(tuple(sorted(set(row))))
        self.past_ids: tuple = tuple(past_ids)

        future: list[list[int]] = [[] for _ in self.labels]
        for i, row in enumerate(self.past_ids):
            for p in row:
                future[p].append(i)
        self.future_ids: tuple = tuple(tuple(sorted(r)) for r in future)

        self.missing_past = {s: tuple(v) for s, v in (missing_past or {}).items() if tuple(v)}
        self.missing_future = {s: tuple(v) for s, v in (missing_future or {}).items() if tuple(v)}
        self.topo: tuple = self._topological_order()
        if validate:
            self._check_reduced()

    # ------------------------------------------------------------------
    # construction helpers
    # ------------------------------------------------------------------
    def _topological_order(self) -> tuple:
        indeg = [len(r) for r in self.past_ids]
        queue = deque(i for i, d in enumerate(indeg) if d == 0)
        order = []
        while queue:
            i = queue.popleft()
            order.append(i)
            for j in self.future_ids[i]:
                indeg[j] -= 1
                if indeg[j] == 0:
                    queue.append(j)
        if len(order) != len(self.labels):
            cyclic = sorted(self.labels[i] for i, d in enumerate(indeg) if d > 0)
            raise GeometryError(f"past edges contain a cycle through {cyclic[:5]}")
        return tuple(order)

    def _check_reduced(self) -> None:
        anc = self._ancestors
        for i, row in enumerate(self.past_ids):
            for p in row:
                for q in row:
                    if p != q and (anc[q] >> p) & 1:
                        raise GeometryError(
                            f"edge {self.labels[p]!r} -> {self.labels[i]!r} is implied by the "
                            f"path through {self.labels[q]!r}; past edges must be a transitive reduction"
                        )

    @cached_property
    def _ancestors(self) -> list:
        # bit j of anc[i] is set iff site j < site i
        anc = [0] * len(self.labels)
        for i in self.topo:
            acc = 0
            for p in self.past_ids[i]:
                acc |= anc[p] | (1 << p)
            anc[i] = acc
        return anc

    # ------------------------------------------------------------------
    # basic queries
    # ------------------------------------------------------------------
    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, site) -> bool:
        return site in self.index

    def __repr__(self) -> str:
        return f"SiteSpace({self.descriptor}, n={len(self)})"

    def id_of(self, site: Site) -> int:
        try:
            return self.index[site]
        except (KeyError, TypeError):
            raise DomainError(f"site {site!r} lies outside the window") from None

    def ids(self, sites: Iterable[Site]) -> set:
        return {self.id_of(s) for s in sites}

    def sort_sites(self, sites: Iterable[Site]) -> tuple:
        return tuple(sorted(sites, key=self.id_of))

    def nearest_past_of(self, site: Site) -> tuple:
        """Nearest past of a single site, restricted to the window."""
        return tuple(self.labels[p] for p in self.past_ids[self.id_of(site)])

    def nearest_future_of(self, site: Site) -> tuple:
        return tuple(self.labels[f] for f in self.future_ids[self.id_of(site)])

    @cached_property
    def past_boundary(self) -> frozenset:
        """Sites with no (or an incomplete) nearest past inside the window."""
        return frozenset(
            s for s, i in self.index.items() if not self.past_ids[i] or s in self.missing_past
        )

    @cached_property
    def interior(self) -> tuple:
        """Window sites off the past boundary, in canonical order."""
        return tuple(s for s in self.labels if s not in self.past_boundary)

    def less(self, a: Site, b: Site) -> bool:
        """Strict order ``a < b``."""
        if a in self.index and b in self.index:
            return bool((self._ancestors[self.index[b]] >> self.index[a]) & 1)
        if self.order_fn is not None:
            return bool(self.order_fn(a, b))
        raise DomainError(f"cannot compare {a!r} and {b!r}: outside the window and no global order")

    def related(self, a: Site, b: Site) -> bool:
        return a == b or self.less(a, b) or self.less(b, a)

    def _reach(self, start: Iterable[int], forward: bool) -> set:
        edges = self.future_ids if forward else self.past_ids
        seen: set = set()
        queue = deque()
        for i in start:
            for j in edges[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        while queue:
            i = queue.popleft()
            for j in edges[i]:
                if j not in seen:
                    seen.add(j)
                    queue.append(j)
        return seen

    def to_json(self) -> dict:
        edges = [[self.labels[i], self.labels[p]] for i in range(len(self)) for p in self.past_ids[i]]
        return {"sites": list(self.labels), "past_edges": edges}


# ----------------------------------------------------------------------
# regions, time boxes, slicing
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Region:
    """A site set together with its past, future and outer time in the window.

    The four classes cover the window.  They are pairwise disjoint exactly
    when the region is a time box; for a bad box ``past & future`` is the set
    of witnesses.
    """

    sites: frozenset
    future: frozenset
    past: frozenset
    outer: frozenset

    @property
    def partition(self) -> tuple:
        return (self.sites, self.future, self.past, self.outer)

    @property
    def witnesses(self) -> frozenset:
        return self.past & self.future

    @property
    def is_time_box(self) -> bool:
        return not self.witnesses


@dataclass(frozen=True)
class TimeBox:
    region: Region
    slices: tuple
    nearest_past_boundary: frozenset
    space: SiteSpace = field(repr=False, compare=False)

    @property
    def sites(self) -> frozenset:
        return self.region.sites

    @property
    def order(self) -> tuple:
        """Sites in slicing order (slice by slice, canonical within a slice)."""
        return tuple(s for sl in self.slices for s in sl)

    def __len__(self) -> int:
        return len(self.region.sites)


def classify_region(space: SiteSpace, sites: Iterable[Site]) -> Region:
    """Split the window into the region, its future, its past and its outer time."""
    ids = space.ids(sites)
    below = space._reach(ids, forward=False) - ids
    above = space._reach(ids, forward=True) - ids
    everything = set(range(len(space)))
    outer = everything - ids - below - above
    lab = space.labels
    return Region(
        sites=frozenset(lab[i] for i in ids),
        future=frozenset(lab[i] for i in above),
        past=frozenset(lab[i] for i in below),
        outer=frozenset(lab[i] for i in outer),
    )


def is_time_box(space: SiteSpace, sites: Iterable[Site]) -> bool:
    """``True`` iff the past and future of ``sites`` do not meet.

    The empty set counts as a time box.
    """
    return classify_region(space, sites).is_time_box


def _in_box_layers(space: SiteSpace, ids: set) -> dict:
    layer: dict = {}
    for i in space.topo:
        if i in ids:
            layer[i] = 1 + max((layer[p] for p in space.past_ids[i] if p in ids), default=0)
    return layer


def time_box(space: SiteSpace, sites: Iterable[Site]) -> TimeBox:
    """Validate ``sites`` as a time box and compute its slicing and nearest past."""
    region = classify_region(space, sites)
    if not region.is_time_box:
        witness = space.sort_sites(region.witnesses)[0]
        raise BadBoxError(
            f"not a time box: {witness!r} is both in the past and in the future of the set",
            witness=witness,
        )
    ids = space.ids(region.sites)
    layer = _in_box_layers(space, ids)
    n = max(layer.values(), default=0)
    slices = tuple(
        tuple(space.labels[i] for i in sorted(i for i, k in layer.items() if k == j)) for j in range(1, n + 1)
    )
    boundary = frozenset(space.labels[p] for i in ids for p in space.past_ids[i] if p not in ids)
    boundary |= frozenset(m for i in ids for m in space.missing_past.get(space.labels[i], ()))
    return TimeBox(region=region, slices=slices, nearest_past_boundary=boundary, space=space)


def slicing(space: SiteSpace, box) -> tuple:
    """Iterated minima ``(min Δ, min(Δ∖Δ₁), ...)`` of a time box."""
    if isinstance(box, TimeBox):
        return box.slices
    return time_box(space, box).slices


def linear_extensions(space: SiteSpace, box) -> Iterable[tuple]:
    """Every ordering of the box sites in which each site follows its in-box past."""
    sites = box.sites if isinstance(box, TimeBox) else frozenset(box)
    ids = space.ids(sites)
    preds = {i: {p for p in space._reach([i], forward=False) if p in ids} for i in ids}

    def rec(done: tuple, remaining: frozenset):
        if not remaining:
            yield tuple(space.labels[i] for i in done)
            return
        for i in sorted(remaining):
            if preds[i] <= set(done):
                yield from rec(done + (i,), remaining - {i})

    yield from rec((), frozenset(ids))


def _nearest(space: SiteSpace, ids: set, forward: bool) -> set:
    edges = space.future_ids if forward else space.past_ids
    missing = space.missing_future if forward else space.missing_past
    lost = []
    out: set = set()
    for i in ids:
        lost.extend(missing.get(space.labels[i], ()))
        out.update(edges[i])
    lost = [m for m in dict.fromkeys(lost) if m not in space.index]
    if lost:
        which = "past" if not forward else "future"
        raise TruncationError(f"the nearest {which} escapes the window; missing sites {lost[:8]}", missing=lost)
    return out - ids


def k_past(space: SiteSpace, sites: Iterable[Site], k: int = 1) -> frozenset:
    """The k-past ``∂̲ᵏΛ`` with ``∂̲ᵏΛ = ∂̲(∂̲ᵏ⁻¹Λ) ∪ ∂̲ᵏ⁻¹Λ``."""
    if k < 1:
        raise DomainError(f"k must be a positive integer, got {k}")
    current = _nearest(space, space.ids(sites), forward=False)
    for _ in range(k - 1):
        current = _nearest(space, current, forward=False) | current
    return frozenset(space.labels[i] for i in current)


def nearest_past(space: SiteSpace, sites: Iterable[Site]) -> frozenset:
    return k_past(space, sites, 1)


def nearest_future(space: SiteSpace, sites: Iterable[Site]) -> frozenset:
    """``(⋃ min(x₊)) ∖ Λ`` over the window."""
    return frozenset(space.labels[i] for i in _nearest(space, space.ids(sites), forward=True))


# ----------------------------------------------------------------------
# site space constructors
# ----------------------------------------------------------------------
def from_generator(
    sites: Iterable[Site],
    past_fn: Callable[[Site], Sequence[Site]],
    future_fn: Callable[[Site], Sequence[Site]] | None = None,
    *,
    descriptor: Mapping | None = None,
    order_fn=None,
    validate: bool = False,
) -> SiteSpace:
    """Materialise a window of a poset given by its nearest-past generator."""
    sites = list(sites)
    inside = set(sites)
    past, missing_past, missing_future = {}, {}, {}
    for s in sites:
        nb = list(past_fn(s))
        past[s] = [p for p in nb if p in inside]
        missing_past[s] = [p for p in nb if p not in inside]
        if future_fn is not None:
            missing_future[s] = [f for f in future_fn(s) if f not in inside]
    return SiteSpace(
        sites,
        past,
        descriptor=descriptor,
        missing_past=missing_past,
        missing_future=missing_future,
        order_fn=order_fn,
        validate=validate,
    )


def z2_past(site: Site) -> tuple:
    """Nearest past in Z² with the NW orientation: ``(Nx, Wx)``."""
    a, b = site
    return ((a, b - 1), (a - 1, b))


def z2_future(site: Site) -> tuple:
    a, b = site
    return ((a, b + 1), (a + 1, b))


def z2_less(x: Site, y: Site) -> bool:
    return x != y and x[0] <= y[0] and x[1] <= y[1]


def z2_window(width: int, height: int, origin: tuple = (0, 0), *, validate: bool = False) -> SiteSpace:
    """Rectangle ``[x0, x0+width) × [y0, y0+height)`` of Z² with the coordinatewise order.

    Coordinates are ``(x1, x2)`` with ``x2`` growing downwards, so the past
    boundary of the window is its top row and left column.
    """
    if width < 1 or height < 1:
        raise DomainError("window dimensions must be positive")
    x0, y0 = origin
    sites = [(a, b) for a in range(x0, x0 + width) for b in range(y0, y0 + height)]
    return from_generator(
        sites,
        z2_past,
        z2_future,
        descriptor={"kind": "z2", "width": width, "height": height, "origin": list(origin)},
        order_fn=z2_less,
        validate=validate,
    )


def z2_cone(width: int, depth: int) -> SiteSpace:
    """Past light cone in Z² of a ``width``-site stretch of the antidiagonal.

    Level ``t`` (``0 <= t <= depth``) holds the sites ``(a, -t-a)`` with
    ``-t <= a < width``; level 0 is the start stratum and level ``depth`` is
    the window's past boundary.  Every oriented path from the start stratum of
    ``t`` steps stays inside the window.
    """
    if width < 1 or depth < 0:
        raise DomainError("cone needs width >= 1 and depth >= 0")
    sites = [(a, -t - a) for t in range(depth + 1) for a in range(-t, width)]
    return from_generator(
        sites,
        z2_past,
        z2_future,
        descriptor={"kind": "z2-cone", "width": width, "depth": depth},
        order_fn=z2_less,
    )


def cone_level(site: Site) -> int:
    return -(site[0] + site[1])


def z_chain(length: int, start: int = 0) -> SiteSpace:
    """Sites ``start .. start+length-1`` of Z with the natural total order."""
    sites = list(range(start, start + length))
    return from_generator(
        sites,
        lambda i: (i - 1,),
        lambda i: (i + 1,),
        descriptor={"kind": "chain", "length": length, "start": start},
        order_fn=lambda a, b: a < b,
    )


def binary_tree(depth: int, roots: int = 1) -> SiteSpace:
    """Forest of binary trees growing towards the past.

    Site ``(t, k)`` sits at level ``t``; its nearest past is
    ``{(t+1, 2k), (t+1, 2k+1)}``.  Level ``depth`` is the past boundary.
    """
    sites = [(t, k) for t in range(depth + 1) for k in range(roots * 2**t)]

    def past(s):
        t, k = s
        return ((t + 1, 2 * k), (t + 1, 2 * k + 1))

    def future(s):
        t, k = s
        return ((t - 1, k // 2),) if t > 0 else ()

    return from_generator(sites, past, future, descriptor={"kind": "tree", "depth": depth, "roots": roots})


def from_edges(sites: Iterable[Site], past_edges: Iterable[Sequence[Site]]) -> SiteSpace:
    """Explicit DAG; each edge ``[y, x]`` declares ``x`` in the nearest past of ``y``."""
    sites = list(sites)
    past: dict = {s: [] for s in sites}
    for edge in past_edges:
        if len(edge) != 2:
            raise GeometryError(f"past edge {edge!r} must have two entries")
        y, x = edge
        if y not in past:
            raise GeometryError(f"edge {edge!r} references unknown site {y!r}")
        past[y].append(x)
    return SiteSpace(sites, past, descriptor={"kind": "dag"}, validate=True)


def _hashable(v):
    return tuple(_hashable(x) for x in v) if isinstance(v, list) else v


def site_space_from_json(doc: Mapping) -> SiteSpace:
    if not isinstance(doc, Mapping) or "sites" not in doc:
        raise LoadError("site space document needs a 'sites' list")
    sites = [_hashable(s) for s in doc["sites"]]
    if not sites:
        raise LoadError("site space document has an empty site list")
    edges = [[_hashable(y), _hashable(x)] for y, x in doc.get("past_edges", [])]
    try:
        return from_edges(sites, edges)
    except GeometryError as exc:
        raise LoadError(str(exc)) from exc


def load_site_space(path) -> SiteSpace:
    """Read ``{"sites": [...], "past_edges": [[y, x], ...]}``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: {exc}") from exc
    return site_space_from_json(doc)

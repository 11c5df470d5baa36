"""Benchmark kernels, the PCA embedding and file-defined kernels."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping

import jsonschema
import numpy as np

from .errors import DomainError, GeometryError, LoadError, TruncationError
from .geometry import SiteSpace, from_edges, z2_past
from .kernels import TABLE_TOL, ColorSpace, Kernel, TabularKernel, properness_check


@dataclass(frozen=True)
class IsingParams:
    beta: float
    h: float = 0.0

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError(f"inverse temperature must be positive, got {self.beta}")


@dataclass(frozen=True)
class StavskayaParams:
    p: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"p must lie in [0, 1], got {self.p}")


class IsingKernel(Kernel):
    """Oriented Ising kernel on Z²: ``P(σ) ∝ exp[βσ(ξ_N + ξ_W + h)]``, colours ±1."""

    homogeneous = True

    def __init__(self, params: IsingParams):
        super().__init__((-1, 1))
        self.params = params
        self.label = f"ising(beta={params.beta:g}, h={params.h:g})"

    def footprint(self, site):
        return z2_past(site)

    def distribution(self, site, past):
        field_ = sum(past) + self.params.h
        up = 1.0 / (1.0 + math.exp(-2.0 * self.params.beta * field_))
        return (1.0 - up, up)


class StavskayaKernel(Kernel):
    """Stavskaya kernel: occupied with probability ``p`` iff a past neighbour is occupied."""

    homogeneous = True

    def __init__(self, params: StavskayaParams):
        super().__init__((0, 1))
        self.params = params
        self.label = f"stavskaya(p={params.p:g})"

    def footprint(self, site):
        return z2_past(site)

    def distribution(self, site, past):
        p = self.params.p if sum(past) > 0 else 0.0
        return (1.0 - p, p)


def ising_kernel(params: IsingParams | float, h: float = 0.0) -> IsingKernel:
    if not isinstance(params, IsingParams):
        params = IsingParams(float(params), float(h))
    return IsingKernel(params)


def stavskaya_kernel(params: StavskayaParams | float) -> StavskayaKernel:
    if not isinstance(params, StavskayaParams):
        params = StavskayaParams(float(params))
    return StavskayaKernel(params)


def voter_epsilon(beta: float) -> float:
    """Flip probability of the zero-field Ising kernel when both past neighbours agree."""
    return math.exp(-2 * beta) / (math.exp(2 * beta) + math.exp(-2 * beta))


def voter_probability(beta: float, sigma: int, north: int, west: int) -> float:
    if north != west:
        return 0.5
    eps = voter_epsilon(beta)
    return 1.0 - eps if north == sigma else eps


def constant_kernel(colors=(0, 1), probs=None, footprint=z2_past) -> Kernel:
    """A kernel ignoring its past (the footprint is still declared)."""
    from .kernels import FunctionKernel

    colors = tuple(colors)
    probs = tuple(probs) if probs is not None else tuple(1.0 / len(colors) for _ in colors)
    return FunctionKernel(colors, footprint, lambda s, past: probs, label="constant", homogeneous=True)


# ----------------------------------------------------------------------
# PCA embedding
# ----------------------------------------------------------------------
@dataclass
class PcaSpec:
    """A probabilistic cellular automaton on a finite cell window.

    ``theta(cell, values)`` returns the law of the new colour of ``cell``
    given the previous colours on ``neighborhoods[cell]`` (in that order).
    Cells listed in ``boundary_cells`` are not updated; their colours at every
    layer come from the boundary configuration.
    """

    cells: tuple
    neighborhoods: Mapping
    theta: Callable
    colors: tuple = (0, 1)
    depth: int = 1
    periodic: bool = False
    boundary_cells: frozenset = frozenset()

    def __post_init__(self):
        self.cells = tuple(self.cells)
        self.boundary_cells = frozenset(self.boundary_cells)
        if self.depth < 1:
            raise DomainError("a PCA needs at least one time layer")
        cellset = set(self.cells)
        resolved = {}
        for i in self.cells:
            if i in self.boundary_cells:
                continue
            nb = tuple(self.neighborhoods[i])
            if i not in nb:
                raise DomainError(f"cell {i!r} must belong to its own neighbourhood")
            if self.periodic:
                n = len(self.cells)
                nb = tuple(j % n if isinstance(j, int) else j for j in nb)
            outside = [j for j in nb if j not in cellset]
            if outside:
                raise TruncationError(
                    f"neighbourhood of cell {i!r} references cells {outside} outside the window", missing=outside
                )
            resolved[i] = tuple(dict.fromkeys(nb))
        self.resolved = resolved
        for i, nb in resolved.items():
            for vals in itertools.product(self.colors, repeat=len(nb)):
                p = np.asarray(self.theta(i, vals), dtype=float)
                if p.shape != (len(self.colors),) or np.any(p < 0) or abs(p.sum() - 1) > 1e-12:
                    raise DomainError(f"theta for cell {i!r} is not a probability vector at {vals}")


class PcaKernel(Kernel):
    """``γ_(i,t)(· | η) = θ_i(· | η on V_i × {t-1})``."""

    def __init__(self, spec: PcaSpec):
        super().__init__(spec.colors)
        self.spec = spec
        self.label = "pca"

    def defines(self, site):
        i, t = site
        return i in self.spec.resolved and 1 <= t

    def footprint(self, site):
        i, t = site
        if i not in self.spec.resolved:
            raise DomainError(f"cell {i!r} is a boundary cell of the PCA")
        return tuple((j, t - 1) for j in self.spec.resolved[i])

    def distribution(self, site, past):
        return self.spec.theta(site[0], tuple(past))


def pca_to_pomm(spec: PcaSpec) -> tuple[SiteSpace, PcaKernel]:
    """Site space ``U × {0..T}`` with ``∂̲(i,t) = V_i × {t-1}`` and the delegating kernel.

    Layer 0 and the boundary cells form the past boundary of the window.
    """
    sites = [(i, t) for t in range(spec.depth + 1) for i in spec.cells]
    past, missing = {}, {}
    for i, t in sites:
        if i in spec.resolved:
            nb = [(j, t - 1) for j in spec.resolved[i]]
        else:
            nb = [(i, t - 1)]
        if t >= 1 and i in spec.resolved:
            past[(i, t)] = nb
        else:
            past[(i, t)] = []
            missing[(i, t)] = nb

    def less(a, b):
        (i, t), (j, s) = a, b
        if s <= t:
            return False
        frontier = {j}
        for _ in range(s - t):
            frontier = {k for c in frontier if c in spec.resolved for k in spec.resolved[c]}
        return i in frontier

    space = SiteSpace(
        sites,
        past,
        descriptor={"kind": "pca", "cells": len(spec.cells), "depth": spec.depth, "periodic": spec.periodic},
        missing_past=missing,
        order_fn=less,
    )
    return space, PcaKernel(spec)


# ----------------------------------------------------------------------
# tabular kernels from JSON
# ----------------------------------------------------------------------
KERNEL_SCHEMA = {
    "type": "object",
    "required": ["colors", "sites", "footprint", "table"],
    "properties": {
        "colors": {"type": "array", "minItems": 1},
        "sites": {"type": "array"},
        "coords": {"type": "array"},
        "past_edges": {"type": "array", "items": {"type": "array", "minItems": 2, "maxItems": 2}},
        "footprint": {"type": "object", "additionalProperties": {"type": "array"}},
        "table": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": {"type": "object", "additionalProperties": {"type": "number"}},
            },
        },
    },
}


def _label(v):
    return tuple(_label(x) for x in v) if isinstance(v, list) else v


def kernel_from_json(doc: Mapping) -> tuple[SiteSpace, TabularKernel]:
    try:
        jsonschema.validate(doc, KERNEL_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise LoadError(f"schema violation at {loc}: {exc.message}") from None
    if not doc["sites"]:
        raise LoadError("sites: the site list is empty")
    ids = [_label(s) for s in doc["sites"]]
    coords = doc.get("coords")
    if coords is not None and len(coords) != len(ids):
        raise LoadError("coords: length differs from sites")
    relabel = dict(zip(ids, (_label(c) for c in coords))) if coords is not None else {s: s for s in ids}
    by_key = {str(s): s for s in ids}

    def site(key, where):
        if key not in by_key:
            raise LoadError(f"{where}: unknown site {key!r}")
        return by_key[key]

    colors = ColorSpace(tuple(doc["colors"]))
    color_by_str = {str(c): c for c in colors.values}
    footprints = {}
    for key, fp in doc["footprint"].items():
        s = site(key, f"footprint/{key}")
        footprints[relabel[s]] = tuple(relabel[site(str(f), f"footprint/{key}")] for f in fp)
    tables = {}
    for key, rows in doc["table"].items():
        s = relabel[site(key, f"table/{key}")]
        if s not in footprints:
            raise LoadError(f"table/{key}: site has a table but no footprint")
        k = len(footprints[s])
        parsed = {}
        for pkey, row in rows.items():
            where = f"table/{key}/{pkey}"
            parts = pkey.split(",") if pkey != "" else []
            if len(parts) != k or any(p not in color_by_str for p in parts):
                raise LoadError(f"{where}: past key does not list {k} colours")
            if set(row) != set(color_by_str):
                raise LoadError(f"{where}: row must give a probability for every colour")
            probs = tuple(float(row[str(c)]) for c in colors.values)
            if any(p < 0 for p in probs):
                raise LoadError(f"{where}: negative probability")
            total = math.fsum(probs)
            if abs(total - 1.0) > TABLE_TOL:
                raise LoadError(f"{where}: row sums to {total:.12g}, not 1 (normalisation error)")
            parsed[tuple(color_by_str[p] for p in parts)] = probs
        expected = len(colors) ** k
        if len(parsed) != expected:
            raise LoadError(f"table/{key}: {len(parsed)} rows, expected {expected}")
        tables[s] = parsed

    if "past_edges" in doc:
        edges = [[relabel[site(str(y), "past_edges")], relabel[site(str(x), "past_edges")]] for y, x in doc["past_edges"]]
    else:
        edges = [[s, f] for s, fp in footprints.items() for f in fp]
    try:
        space = from_edges([relabel[s] for s in ids], edges)
    except GeometryError as exc:
        raise LoadError(f"past_edges: {exc}") from exc
    kernel = TabularKernel(colors, footprints, tables)
    report = properness_check(kernel, space, trials=200)
    if not report.ok:
        raise LoadError("properness audit failed: " + "; ".join(report.violations[:3]))
    return space, kernel


def load_kernel(path) -> tuple[SiteSpace, TabularKernel]:
    """Load, validate and audit a tabular kernel document."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: {exc}") from exc
    return kernel_from_json(doc)


# ----------------------------------------------------------------------
# PCA specifications from JSON
# ----------------------------------------------------------------------
PCA_SCHEMA = {
    "type": "object",
    "required": ["cells", "neighborhoods", "theta"],
    "properties": {
        "cells": {"type": "array", "minItems": 1},
        "neighborhoods": {"type": "object", "additionalProperties": {"type": "array", "minItems": 1}},
        "colors": {"type": "array", "minItems": 1},
        "depth": {"type": "integer", "minimum": 1},
        "periodic": {"type": "boolean"},
        "boundary_cells": {"type": "array"},
        "theta": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "additionalProperties": {"type": "object", "additionalProperties": {"type": "number"}},
            },
        },
    },
}


def pca_from_json(doc: Mapping) -> PcaSpec:
    """Build a :class:`PcaSpec` from a JSON document.

    ``theta[cell][key]`` gives the new-colour law for the past colours listed
    in ``key`` (comma-separated, in neighbourhood order, duplicates removed).
    """
    try:
        jsonschema.validate(doc, PCA_SCHEMA)
    except jsonschema.ValidationError as exc:
        loc = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise LoadError(f"schema violation at {loc}: {exc.message}") from None
    cells = [_label(c) for c in doc["cells"]]
    by_key = {str(c): c for c in cells}
    colors = tuple(doc.get("colors", (0, 1)))
    color_by_str = {str(c): c for c in colors}
    boundary = frozenset(_label(c) for c in doc.get("boundary_cells", ()))
    nbhd = {}
    for key, nb in doc["neighborhoods"].items():
        if key not in by_key:
            raise LoadError(f"neighborhoods/{key}: unknown cell")
        nbhd[by_key[key]] = tuple(_label(j) for j in nb)
    tables = {}
    for key, rows in doc["theta"].items():
        if key not in by_key:
            raise LoadError(f"theta/{key}: unknown cell")
        parsed = {}
        for pkey, row in rows.items():
            where = f"theta/{key}/{pkey}"
            parts = pkey.split(",") if pkey != "" else []
            if any(p not in color_by_str for p in parts):
                raise LoadError(f"{where}: unknown colour in past key")
            if set(row) != set(color_by_str):
                raise LoadError(f"{where}: row must give a probability for every colour")
            parsed[tuple(color_by_str[p] for p in parts)] = tuple(float(row[str(c)]) for c in colors)
        tables[by_key[key]] = parsed
    missing = [c for c in cells if c not in boundary and (c not in nbhd or c not in tables)]
    if missing:
        raise LoadError(f"cells {missing[:5]} lack a neighbourhood or a theta table")

    def theta(cell, vals):
        try:
            return tables[cell][tuple(vals)]
        except KeyError:
            raise LoadError(f"theta/{cell}: no row for past colours {tuple(vals)}") from None

    try:
        return PcaSpec(
            tuple(cells),
            nbhd,
            theta,
            colors,
            depth=int(doc.get("depth", 1)),
            periodic=bool(doc.get("periodic", False)),
            boundary_cells=boundary,
        )
    except (DomainError, TruncationError) as exc:
        raise LoadError(str(exc)) from exc


def load_pca_spec(path) -> PcaSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise LoadError(f"{path}: {exc}") from exc
    return pca_from_json(doc)

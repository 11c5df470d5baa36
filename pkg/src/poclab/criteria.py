"""Uniqueness criteria: dust rates, the Dobrushin constant, percolation
parameters, oscillations, the dusting audit and bounded uniformity.

Every decision is one-directional: a criterion either certifies uniqueness
or is inconclusive.  Nothing here ever concludes non-uniqueness.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, EnumerationTooLarge
from .geometry import Site, SiteSpace, TimeBox
from .kernels import ENUMERATION_LIMIT, ColorSpace, Kernel, exact_box_distribution, exterior_footprint
from .models import IsingKernel, StavskayaKernel, ising_kernel

AUDIT_TOL = 1e-12
UNIQUENESS = "uniqueness"
INCONCLUSIVE = "inconclusive"


class TruncationWarning(UserWarning):
    """A supremum over an infinite space was taken over a finite window only."""


# ----------------------------------------------------------------------
# distances
# ----------------------------------------------------------------------
def variational_distance(mu, nu) -> float:
    """``½ Σ |μ(ω) − ν(ω)|`` for two laws on the same finite set.

    Accepts equal-length sequences or mappings with identical keys.
    """
    if isinstance(mu, Mapping) or isinstance(nu, Mapping):
        if not (isinstance(mu, Mapping) and isinstance(nu, Mapping)) or set(mu) != set(nu):
            raise DomainError("distributions must be given on the same support")
        keys = list(mu)
        a = np.array([mu[k] for k in keys], dtype=float)
        b = np.array([nu[k] for k in keys], dtype=float)
    else:
        a, b = np.asarray(mu, dtype=float), np.asarray(nu, dtype=float)
        if a.shape != b.shape:
            raise DomainError(f"support sizes differ: {a.shape} vs {b.shape}")
    return float(0.5 * np.abs(a - b).sum())


# ----------------------------------------------------------------------
# decisions
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class Decision:
    criterion: str
    verdict: str
    value: float
    threshold: float
    symbol: str = "value"

    @property
    def unique(self) -> bool:
        return self.verdict == UNIQUENESS

    @property
    def margin(self) -> float:
        return self.threshold - self.value

    def __str__(self) -> str:
        return f"{self.criterion}: {self.verdict} ({self.symbol}={self.value:.6g}, threshold {self.threshold:.6g})"


def _decide(criterion, value, threshold, symbol) -> Decision:
    verdict = UNIQUENESS if value < threshold else INCONCLUSIVE
    return Decision(criterion, verdict, float(value), float(threshold), symbol)


# ----------------------------------------------------------------------
# dust rates and percolation parameters
# ----------------------------------------------------------------------
@dataclass
class DustRateMatrix:
    """Sparse dust rates ``entries[(y, x)] = α_{y,x}``, with ``x`` in the footprint of ``y``."""

    entries: dict
    method: str = "enumerated"
    representative: bool = False

    def rows(self) -> dict:
        out: dict = {}
        for (y, x), a in self.entries.items():
            out.setdefault(y, {})[x] = a
        return out

    def row_sums(self) -> dict:
        return {y: math.fsum(r.values()) for y, r in self.rows().items()}

    def __getitem__(self, key) -> float:
        return self.entries.get(key, 0.0)

    def scaled(self, delta: float) -> "DustRateMatrix":
        """Copy with every entry shifted by ``delta`` (used for minimality probes)."""
        return DustRateMatrix({k: v + delta for k, v in self.entries.items()}, self.method, self.representative)


@dataclass
class PercParams:
    values: dict
    representative: bool = False

    @property
    def sup(self) -> float:
        return max(self.values.values(), default=0.0)


def _alpha_from_table(tbl: np.ndarray, j: int) -> float:
    """Sup of the variational distance over pasts differing only in coordinate ``j``."""
    t = np.moveaxis(tbl, j, 0)
    m = t.shape[0]
    best = 0.0
    for a, b in itertools.combinations(range(m), 2):
        best = max(best, float(0.5 * np.abs(t[a] - t[b]).sum(-1).max()))
    return best


def _px_from_table(tbl: np.ndarray) -> float:
    """Sup of the variational distance over all pairs of pasts."""
    m = tbl.shape[-1]
    rows = tbl.reshape(-1, m)
    if m <= 12:
        # ‖μ−ν‖ = max_A |μ(A) − ν(A)|; scan every colour subset
        subsets = np.array(list(itertools.product((0.0, 1.0), repeat=m)))
        mass = rows @ subsets.T
        return float((mass.max(axis=0) - mass.min(axis=0)).max())
    best = 0.0
    for i in range(len(rows)):
        best = max(best, float(0.5 * np.abs(rows[i] - rows).sum(-1).max()))
    return best


def _check_enumerable(kernel: Kernel, site: Site) -> None:
    size = len(kernel.colors) ** (len(kernel.footprint(site)) + 1)
    if size > ENUMERATION_LIMIT:
        raise EnumerationTooLarge(f"footprint of {site!r} needs {size} table entries", size)


def _criterion_sites(kernel: Kernel, space: SiteSpace | None, sites) -> tuple[list, bool]:
    if sites is not None:
        sites = list(sites)
        return sites, kernel.homogeneous and len(sites) == 1
    if space is None:
        raise DomainError("need a site space or an explicit site list")
    defined = [s for s in space.labels if kernel.defines(s)]
    if not defined:
        raise DomainError("the kernel defines no site of this space")
    if kernel.homogeneous:
        return defined[-1:], True
    if any(space.missing_past.get(s) for s in defined) or any(space.missing_future.get(s) for s in defined):
        warnings.warn(
            "heterogeneous kernel on a truncated window: suprema are taken over the window only",
            TruncationWarning,
            stacklevel=3,
        )
    return defined, False


def dust_rate_matrix(kernel: Kernel, space: SiteSpace | None = None, sites: Iterable[Site] | None = None) -> DustRateMatrix:
    """Canonical dust rates by enumeration over footprint configurations.

    Homogeneous kernels are evaluated at one representative site.
    """
    rows, rep = _criterion_sites(kernel, space, sites)
    entries = {}
    for y in rows:
        _check_enumerable(kernel, y)
        tbl = kernel.table(y)
        for j, x in enumerate(kernel.footprint(y)):
            entries[(y, x)] = _alpha_from_table(tbl, j)
    return DustRateMatrix(entries, "enumerated", rep)


def dobrushin_gamma(alpha: DustRateMatrix) -> float:
    """``Γ = sup_y Σ_x α_{y,x}``."""
    return max(alpha.row_sums().values(), default=0.0)


def dobrushin_decision(alpha_or_gamma) -> Decision:
    gamma = alpha_or_gamma if isinstance(alpha_or_gamma, (int, float)) else dobrushin_gamma(alpha_or_gamma)
    return _decide("Dobrushin", gamma, 1.0, "Γ")


def max_perc_params(kernel: Kernel, space: SiteSpace | None = None, sites: Iterable[Site] | None = None) -> PercParams:
    rows, rep = _criterion_sites(kernel, space, sites)
    values = {}
    for y in rows:
        _check_enumerable(kernel, y)
        values[y] = _px_from_table(kernel.table(y))
    return PercParams(values, rep)


def dp_decision(params: PercParams | float, pc_plus: float) -> Decision:
    """Uniqueness iff ``sup_x p_x < p_c⁺``."""
    if not 0.0 < pc_plus <= 1.0:
        raise DomainError(f"p_c⁺ must lie in (0, 1], got {pc_plus}")
    sup = params if isinstance(params, (int, float)) else params.sup
    return _decide(f"DP@{pc_plus:g}", sup, pc_plus, "sup p")


# ----------------------------------------------------------------------
# closed forms for the benchmark models
# ----------------------------------------------------------------------
def ising_alpha(beta: float, h: float) -> float:
    return math.sinh(2 * beta) / (math.cosh(2 * beta) + math.cosh(2 * beta * (abs(h) - 1)))


def ising_gamma(beta: float, h: float) -> float:
    return 2.0 * ising_alpha(beta, h)


def ising_px(beta: float, h: float) -> float:
    return 0.5 * (math.tanh(beta * (abs(h) + 2)) - math.tanh(beta * (abs(h) - 2)))


def stavskaya_alpha(p: float) -> float:
    return p


def stavskaya_px(p: float) -> float:
    return p


def closed_form_dust_rates(kernel: Kernel, site: Site) -> DustRateMatrix:
    if isinstance(kernel, IsingKernel):
        a = ising_alpha(kernel.params.beta, kernel.params.h)
    elif isinstance(kernel, StavskayaKernel):
        a = stavskaya_alpha(kernel.params.p)
    else:
        raise DomainError(f"no closed form for {kernel.label}")
    return DustRateMatrix({(site, x): a for x in kernel.footprint(site)}, "closed-form", True)


def ising_dp_boundary(h: float, pc_plus: float = 0.5) -> float:
    """Inverse temperature where ``p_x(β, h) = p_c⁺`` (root of a monotone function)."""
    return brentq(lambda b: ising_px(b, h) - pc_plus, 1e-12, 50.0, xtol=1e-15, rtol=1e-15)


def ising_dobrushin_boundary(h: float) -> float:
    """Inverse temperature where ``Γ(β, h) = 1``; ``inf`` when ``Γ < 1`` for every β."""
    # Γ → 1 from below at h = 0 and stays <= 1 for |h| >= 2
    if h == 0 or abs(h) >= 2:
        return math.inf
    f = lambda b: ising_gamma(b, h) - 1.0  # noqa: E731
    return brentq(f, 1e-12, 50.0, xtol=1e-15, rtol=1e-15)


PHASE_COLUMNS = ("beta", "h", "gamma", "px", "dobrushin_ok", "dp_ok_half", "dp_ok_mc")


def phase_scan(betas: Sequence[float], fields: Sequence[float], pc_mc: float) -> list[dict]:
    """One row per ``(β, h)``: Γ and ``p_x`` by enumeration plus the three decisions."""
    rows = []
    for beta in betas:
        for h in fields:
            k = ising_kernel(beta, h)
            site = (0, 0)
            gamma = dobrushin_gamma(dust_rate_matrix(k, sites=[site]))
            px = max_perc_params(k, sites=[site]).sup
            rows.append(
                {
                    "beta": float(beta),
                    "h": float(h),
                    "gamma": gamma,
                    "px": px,
                    "dobrushin_ok": dobrushin_decision(gamma).unique,
                    "dp_ok_half": dp_decision(px, 0.5).unique,
                    "dp_ok_mc": dp_decision(px, pc_mc).unique,
                }
            )
    return rows


# ----------------------------------------------------------------------
# test functions and oscillations
# ----------------------------------------------------------------------
@dataclass
class TestFunction:
    """A function of the colours on a finite support, stored as a dense table."""

    __test__ = False  # not a pytest class

    support: tuple
    colors: ColorSpace
    table: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.support = tuple(self.support)
        m = len(self.colors)
        self.table = np.asarray(self.table, dtype=float)
        if self.table.shape != (m,) * len(self.support):
            raise DomainError(f"table shape {self.table.shape} does not match support of size {len(self.support)}")

    @classmethod
    def from_callable(cls, support: Sequence[Site], colors, fn: Callable[[dict], float]) -> "TestFunction":
        colors = colors if isinstance(colors, ColorSpace) else ColorSpace(tuple(colors))
        support = tuple(support)
        m = len(colors)
        table = np.empty((m,) * len(support))
        for idx in itertools.product(range(m), repeat=len(support)):
            table[idx] = fn({s: colors.values[i] for s, i in zip(support, idx)})
        return cls(support, colors, table)

    @classmethod
    def random(cls, support: Sequence[Site], colors, rng: np.random.Generator) -> "TestFunction":
        colors = colors if isinstance(colors, ColorSpace) else ColorSpace(tuple(colors))
        return cls(tuple(support), colors, rng.normal(size=(len(colors),) * len(support)))

    def __call__(self, config: Mapping) -> float:
        return float(self.table[tuple(self.colors.index(config[s]) for s in self.support)])


def oscillation(f: TestFunction, x: Site) -> float:
    """``δ_x(f)``: largest change of ``f`` when only the colour at ``x`` changes."""
    if x not in f.support:
        return 0.0
    return float(np.ptp(f.table, axis=f.support.index(x)).max())


def total_oscillation(f: TestFunction) -> float:
    return math.fsum(oscillation(f, x) for x in f.support)


def apply_site_kernel(kernel: Kernel, f: TestFunction, y: Site) -> TestFunction:
    """``γ_y f``: integrate out the colour at ``y`` given its footprint."""
    if y not in f.support:
        return f
    fp = kernel.footprint(y)
    rest = tuple(s for s in f.support if s != y)
    support = rest + tuple(s for s in fp if s not in rest)
    m = len(f.colors)
    tbl = kernel.table(y)
    out = np.empty((m,) * len(support))
    pos = {s: i for i, s in enumerate(support)}
    jy = f.support.index(y)
    for idx in itertools.product(range(m), repeat=len(support)):
        probs = tbl[tuple(idx[pos[s]] for s in fp)]
        base = [idx[pos[s]] if s != y else 0 for s in f.support]
        vals = np.empty(m)
        for a in range(m):
            base[jy] = a
            vals[a] = f.table[tuple(base)]
        out[idx] = float(probs @ vals)
    return TestFunction(support, f.colors, out)


@dataclass
class DustingReport:
    site: Site
    checks: list = field(default_factory=list)  # (x, case, lhs, bound, slack)

    @property
    def violations(self) -> list:
        return [c for c in self.checks if c[4] < -AUDIT_TOL]

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def min_slack(self) -> float:
        return min((c[4] for c in self.checks), default=math.inf)


def dusting_audit(kernel: Kernel, alpha: DustRateMatrix, f: TestFunction, y: Site) -> DustingReport:
    """Check ``δ_x(γ_y f) <= δ_x(f) + δ_y(f) α_{y,x}`` site by site.

    Cases: ``x = y`` (the left side must vanish), ``x`` in the footprint of
    ``y`` (the full bound), any other ``x`` (bound ``δ_x(f)``).  Homogeneous
    representative matrices are translated to ``y`` by footprint position.
    """
    g = apply_site_kernel(kernel, f, y)
    fp = kernel.footprint(y)
    rates = _rates_at(alpha, kernel, y)
    report = DustingReport(y)
    dy = oscillation(f, y)
    for x in dict.fromkeys(g.support + f.support + (y,)):
        lhs = oscillation(g, x)
        if x == y:
            case, bound = "self", 0.0
        elif x in fp:
            case, bound = "past", oscillation(f, x) + dy * rates.get(x, 0.0)
        else:
            case, bound = "other", oscillation(f, x)
        report.checks.append((x, case, lhs, bound, bound - lhs))
    return report


def _rates_at(alpha: DustRateMatrix, kernel: Kernel, y: Site) -> dict:
    rows = alpha.rows()
    if y in rows:
        return rows[y]
    if alpha.representative and len(rows) == 1:
        (rep, row), = rows.items()
        return {x: row.get(rx, 0.0) for x, rx in zip(kernel.footprint(y), kernel.footprint(rep))}
    return {}


# ----------------------------------------------------------------------
# bounded uniformity
# ----------------------------------------------------------------------
def uniformity_constant(kernel: Kernel, box: TimeBox, event) -> float:
    """``c = inf γ_Λ(A|ω) / γ_Λ(A|ξ)`` over boundary pairs on the exterior footprint.

    ``event`` is a cylinder ``{site: colour}`` or a predicate on the joint
    configuration of the box and its exterior footprint.  If ``A`` has
    probability zero under every boundary the bound holds vacuously and
    ``c = 1``.
    """
    if isinstance(event, Mapping):
        cyl = dict(event)
        pred = lambda cfg: all(cfg[s] == v for s, v in cyl.items())  # noqa: E731
    else:
        pred = event
    ext = exterior_footprint(kernel, box)
    m = len(kernel.colors)
    count = m ** len(ext)
    if count * m ** len(box) > ENUMERATION_LIMIT:
        raise EnumerationTooLarge(f"{count} boundaries × {m ** len(box)} interiors exceed the limit", count * m ** len(box))
    probs = []
    vals = kernel.colors.values
    for bidx in itertools.product(range(m), repeat=len(ext)):
        boundary = {s: vals[i] for s, i in zip(ext, bidx)}
        dist = exact_box_distribution(kernel, box, boundary)
        probs.append(dist.expect(lambda cfg: float(pred({**boundary, **cfg}))))
    lo, hi = min(probs), max(probs)
    if hi <= 0.0:
        return 1.0
    return lo / hi

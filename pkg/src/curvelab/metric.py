"""Intrinsic distance, discrete slopes, Hopf-Lax semigroup and length defect."""
import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels
from .core import MarkovTriple, carre_du_champ, test_battery
from .exceptions import (DegenerateMetricError, InvalidGridError,
                         InvalidParameterError)
from .report import CheckReport

TRIANGLE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class MetricMatrix:
    """Symmetric distance table with zero diagonal.

    ``math.inf`` marks pairs in different components; ``infinite`` flags
    them, and serialization writes the tagged string ``"inf"``. ``converged``
    is the per-pair certificate flag of an iterative construction and
    ``gap`` the certified optimality gap (zero for exact inputs).
    """

    d: np.ndarray
    converged: Optional[np.ndarray] = None
    gap: Optional[np.ndarray] = None
    notes: list = field(default_factory=list)

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1]:
            raise InvalidParameterError("metric must be a square matrix")
        if np.any(np.isnan(d)) or np.any(d < 0):
            raise InvalidParameterError("distances must be nonnegative")
        if np.any(np.diag(d) != 0):
            raise InvalidParameterError("metric diagonal must be zero")
        fin = np.isfinite(d)
        if np.any(fin != fin.T) or np.any(np.abs(d[fin] - d.T[fin]) >
                                          1e-12 * max(1.0, np.abs(d[fin]).max())):
            raise InvalidParameterError("metric must be symmetric")
        d = np.where(fin, 0.5 * (d + d.T), np.inf)
        object.__setattr__(self, "d", d)

    @property
    def n(self):
        return self.d.shape[0]

    @property
    def infinite(self):
        return ~np.isfinite(self.d)

    def triangle_violation(self):
        """``max_{x,y,z} d(x,z) - d(x,y) - d(y,z)`` over finite triples."""
        d = self.d
        worst = -math.inf
        for y in range(self.n):
            via = d[:, y][:, None] + d[y, :][None, :]
            with np.errstate(invalid="ignore"):
                diff = d - via
            diff = np.where(np.isfinite(via), diff, -math.inf)
            worst = max(worst, float(np.nanmax(diff)))
        return worst

    def check_triangle(self, slack=TRIANGLE_SLACK):
        return self.triangle_violation() <= slack

    def squared(self):
        return self.d ** 2

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_coords(cls, coords, period=None):
        """Euclidean (or periodic arc-length) distance between grid nodes."""
        c = np.asarray(coords, dtype=float)
        if c.ndim == 1:
            c = c[:, None]
        per = period if isinstance(period, tuple) else (period,) * c.shape[1]
        sq = np.zeros((c.shape[0], c.shape[0]))
        for k in range(c.shape[1]):
            delta = np.abs(c[:, k][:, None] - c[:, k][None, :])
            if per[k] is not None:
                delta = np.minimum(delta, per[k] - delta)
            sq += delta ** 2
        return cls(np.sqrt(sq))

    @classmethod
    def from_triple_coords(cls, triple: MarkovTriple):
        if triple.coords is None:
            raise InvalidParameterError("triple carries no coordinates")
        return cls.from_coords(triple.coords, triple.period)

    # -- CSV ------------------------------------------------------------------

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "d"])
        for i in range(self.n):
            for j in range(self.n):
                v = self.d[i, j]
                w.writerow([i, j, "inf" if not math.isfinite(v) else format(v, ".17g")])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.DictReader(io.StringIO(text)))
        if not rows:
            raise InvalidParameterError("empty metric CSV")
        n = 1 + max(max(int(r["i"]), int(r["j"])) for r in rows)
        d = np.full((n, n), np.nan)
        np.fill_diagonal(d, 0.0)
        for r in rows:
            d[int(r["i"]), int(r["j"])] = float(r["d"])
        if np.isnan(d).any():
            # one triangle suffices
            d = np.where(np.isnan(d), d.T, d)
        if np.isnan(d).any():
            raise InvalidParameterError("metric CSV misses pairs")
        return cls(d)


# ---------------------------------------------------------------------------
# intrinsic distance
# ---------------------------------------------------------------------------

# the dual bound stalls near 1e-9 relative: Lagrange multipliers 1/(tau (1 - g))
# lose precision as constraints approach activity
DEFAULT_OPT = {"tol": 1e-8, "max_newton": 2000}


def _path_order(triple):
    """Node order if the graph is a simple path, else ``None``."""
    n = triple.n
    deg = np.diff(triple.weights.indptr)
    if n < 2 or np.any(deg > 2) or int((deg == 1).sum()) != 2 or \
            triple.weights.nnz != 2 * (n - 1):
        return None
    start = int(np.flatnonzero(deg == 1)[0])
    order = [start]
    prev = -1
    cur = start
    for _ in range(n - 1):
        nb = [int(v) for v in triple.neighbors(cur) if v != prev]
        if len(nb) != 1:
            return None
        prev, cur = cur, nb[0]
        order.append(cur)
    return np.array(order) if len(set(order)) == n else None


def _pair(i, j, dist, lower, upper, tol):
    gap = upper - lower
    return lower, gap, bool(gap <= tol * max(1.0, lower))


def intrinsic_distance(triple: MarkovTriple, opt_cfg=None) -> MetricMatrix:
    """``d_E(x, y) = sup {psi(y) - psi(x) : Gamma(psi) <= 1}``.

    Each pair is a convex program with quadratic constraints, solved by a
    log-barrier Newton method and certified by the Lagrangian bound
    ``sqrt(sum(lam) R_eff^lam(x, y))``. The returned value is the primal
    (feasible, hence lower) bound; ``gap`` holds upper minus lower and
    ``converged`` flags pairs whose relative gap is below ``tol``.

    ``opt_cfg`` keys: ``tol`` (default 1e-8), ``max_newton`` (per pair),
    ``pairs`` (optional list of ``(x, y)`` to restrict the computation;
    other entries are left ``nan`` in the gap and reconstructed as ``inf``).
    Pairs in different components get the ``inf`` sentinel.
    """
    cfg = dict(DEFAULT_OPT)
    cfg.update(opt_cfg or {})
    tol = float(cfg["tol"])
    max_newton = int(cfg["max_newton"])
    n = triple.n
    d = np.zeros((n, n))
    gap = np.zeros((n, n))
    conv = np.ones((n, n), dtype=bool)
    notes = []
    comp = triple.components()
    order = _path_order(triple)
    pairs = cfg.get("pairs")
    if pairs is None:
        pairs = [(x, y) for x in range(n) for y in range(x + 1, n)]
    else:
        d[:] = np.inf
        np.fill_diagonal(d, 0.0)
        gap[:] = np.nan
        np.fill_diagonal(gap, 0.0)

    if order is not None:
        pos = np.empty(n, dtype=int)
        pos[order] = np.arange(n)
        W = triple.weights
        w_path = np.array([W[order[i], order[i + 1]] for i in range(n - 1)])
        m_path = triple.measure[order]
        notes.append("path graph: one-dimensional solver")
    else:
        T = triple.edges()
        eu = np.array([e[0] for e in T], dtype=np.int64)
        ev = np.array([e[1] for e in T], dtype=np.int64)
        ew = np.array([e[2] for e in T], dtype=float)
        inc = [[] for _ in range(n)]
        for k, (u, v) in enumerate(zip(eu, ev)):
            inc[u].append(k)
            inc[v].append(k)
        inc_ptr = np.cumsum([0] + [len(q) for q in inc]).astype(np.int64)
        inc_edge = np.array([k for q in inc for k in q], dtype=np.int64)

    disconnected = 0
    for x, y in pairs:
        x, y = int(x), int(y)
        if x == y:
            continue
        if comp[x] != comp[y]:
            d[x, y] = d[y, x] = np.inf
            gap[x, y] = gap[y, x] = 0.0
            disconnected += 1
            continue
        if order is not None:
            a, b = sorted((pos[x], pos[y]))
            lo, up, _ = _kernels.path_distance(w_path[a:b], m_path[a:b + 1],
                                               tol, max_newton)
        else:
            sub = np.flatnonzero(comp == comp[x])
            if sub.size < n:
                lo, up = _component_distance(triple, sub, x, y, tol, max_newton)
            else:
                lo, up, _ = _kernels.graph_distance(x, y, eu, ev, ew, inc_ptr,
                                                    inc_edge, triple.measure,
                                                    tol, max_newton)
        val, g, ok = _pair(x, y, None, lo, up, tol)
        d[x, y] = d[y, x] = val
        gap[x, y] = gap[y, x] = g
        conv[x, y] = conv[y, x] = ok
    if disconnected:
        notes.append(f"{disconnected} pair(s) in different components set to inf")
    if not conv.all():
        notes.append(f"{int((~conv).sum()) // 2} pair(s) did not reach the gap tolerance")
    return MetricMatrix(d, converged=conv, gap=gap, notes=notes)


def _component_distance(triple, sub, x, y, tol, max_newton):
    W = triple.weights[sub][:, sub]
    local = MarkovTriple(triple.measure[sub], W)
    lx = int(np.flatnonzero(sub == x)[0])
    ly = int(np.flatnonzero(sub == y)[0])
    mm = intrinsic_distance(local, {"tol": tol, "max_newton": max_newton,
                                    "pairs": [(lx, ly)]})
    return mm.d[lx, ly], mm.d[lx, ly] + mm.gap[lx, ly]


def grid_distance_defect(triple: MarkovTriple, window=2.0, tol=1e-8):
    """``max |d_E(x0, y) - |x0 - y||`` from the node nearest the grid centre
    to every node within ``window`` of it (one-dimensional grids)."""
    if triple.coords is None:
        raise InvalidParameterError("grid defect needs coordinates")
    c = triple.coords if triple.coords.ndim == 1 else triple.coords[:, 0]
    mid = 0.5 * (c.min() + c.max())
    x0 = int(np.argmin(np.abs(c - mid)))
    ys = [int(y) for y in np.flatnonzero(np.abs(c - c[x0]) <= window) if y != x0]
    mm = intrinsic_distance(triple, {"tol": tol, "pairs": [(x0, y) for y in ys]})
    ref = MetricMatrix.from_triple_coords(triple).d
    return float(max(abs(mm.d[x0, y] - ref[x0, y]) for y in ys))


# ---------------------------------------------------------------------------
# slopes and Hopf-Lax
# ---------------------------------------------------------------------------

SLOPE_VARIANTS = ("abs", "plus", "minus")


def _off_diagonal(d: MetricMatrix):
    D = d.d
    off = ~np.eye(d.n, dtype=bool)
    if np.any(D[off] <= 0):
        raise DegenerateMetricError("zero distance between distinct states")
    return D, off


def local_slope(d: MetricMatrix, f, variant="abs") -> np.ndarray:
    """Global difference-quotient slope ``max_{y != x} |f(y) - f(x)| / d(x, y)``.

    ``plus`` uses ``(f(y) - f(x))^+`` (ascending), ``minus`` uses
    ``(f(x) - f(y))^+`` (descending). Pairs at infinite distance contribute 0.
    """
    if variant not in SLOPE_VARIANTS:
        raise InvalidParameterError(f"unknown slope variant {variant!r}")
    f = np.asarray(f, dtype=float)
    if f.shape != (d.n,):
        raise InvalidParameterError("field length differs from metric size")
    D, off = _off_diagonal(d)
    diff = f[None, :] - f[:, None]  # f(y) - f(x)
    if variant == "plus":
        diff = np.maximum(diff, 0.0)
    elif variant == "minus":
        diff = np.maximum(-diff, 0.0)
    else:
        diff = np.abs(diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(off & np.isfinite(D), diff / np.where(off, D, 1.0), 0.0)
    return q.max(axis=1) if d.n > 1 else np.zeros(1)


def hopf_lax(d: MetricMatrix, f, t, return_argmin=False):
    """``Q_t f(x) = min_y f(y) + d(x, y)^2 / (2t)``; ``Q_0 f = f``."""
    f = np.asarray(f, dtype=float)
    t = float(t)
    if t < 0:
        raise InvalidParameterError("t must be >= 0")
    if t == 0.0:
        out = f.copy()
        arg = np.arange(f.size)
    else:
        out, arg = _kernels.min_plus(f, d.squared(), 1.0 / (2.0 * t))
    return (out, arg) if return_argmin else out


def _argmin_sets(d2, f, s, rtol=1e-12):
    vals = f[None, :] + d2 / (2.0 * s)
    best = vals.min(axis=1)
    tol = rtol * np.maximum(1.0, np.abs(best))
    return vals <= (best + tol)[:, None], best


def hopf_lax_derivative_check(d: MetricMatrix, f, t_grid, tol=1e-9) -> CheckReport:
    """Compare difference quotients of ``s -> Q_s f(x)`` with ``-D^2/(2 s^2)``.

    On an interval ``[s1, s2]`` where ``x`` has the same single minimiser at
    both ends, ``Q_s f(x)`` equals ``f(y) + D^2/(2s)`` throughout (the
    candidates are affine in ``1/s``), so the quotient equals the derivative
    at the geometric mean ``sqrt(s1 s2)``. Intervals over an argmin
    transition are counted, not asserted.
    """
    s = np.asarray(t_grid, dtype=float)
    if np.any(s <= 0):
        raise InvalidGridError("Hopf-Lax derivative grid must be strictly positive")
    if s.size < 2 or np.any(np.diff(s) <= 0):
        raise InvalidGridError("grid must be increasing with at least 2 points")
    f = np.asarray(f, dtype=float)
    D2 = d.squared()
    worst = 0.0
    loc = None
    transitions = 0
    compared = 0
    sets_prev, q_prev = _argmin_sets(D2, f, s[0])
    for k in range(1, s.size):
        sets, q = _argmin_sets(D2, f, s[k])
        for x in range(d.n):
            a = np.flatnonzero(sets_prev[x])
            b = np.flatnonzero(sets[x])
            if a.size != 1 or b.size != 1 or a[0] != b[0]:
                transitions += 1
                continue
            compared += 1
            Dx2 = D2[x, a[0]]
            fd = (q[x] - q_prev[x]) / (s[k] - s[k - 1])
            exact = -Dx2 / (2.0 * s[k] * s[k - 1])
            r = abs(fd - exact) / max(1.0, abs(exact))
            if r > worst:
                worst = r
                loc = (x, float(s[k - 1]))
        sets_prev, q_prev = sets, q
    return CheckReport("hopf_lax_derivative", "time derivative of the Hopf-Lax semigroup",
                       worst, tol, worst_location=loc,
                       params={"compared": compared, "transitions": transitions})


def hopf_lax_semigroup_defect(d: MetricMatrix, f, s, s2) -> float:
    """``max_x Q_s Q_{s2} f - Q_{s+s2} f`` (nonnegative; zero on length spaces)."""
    return float(np.max(hopf_lax(d, hopf_lax(d, f, s2), s) - hopf_lax(d, f, s + s2)))


def length_defect(d: MetricMatrix, tol=0.0) -> CheckReport:
    """Midpoint defect ``min_z max(d(x,z), d(z,y)) - d(x,y)/2`` over pairs."""
    D = d.d
    worst = -math.inf
    loc = None
    for x in range(d.n):
        mid = np.maximum(D[x][None, :], D).min(axis=1)  # over z, for every y
        with np.errstate(invalid="ignore"):
            defect = np.where(np.isfinite(D[x]), mid - D[x] / 2.0, -math.inf)
        defect[x] = -math.inf if d.n > 1 else 0.0
        y = int(np.argmax(defect))
        if defect[y] > worst:
            worst = float(defect[y])
            loc = (x, y)
    if d.n == 1:
        worst = 0.0
    return CheckReport("length_defect", "length-space midpoint criterion", worst, tol,
                       worst_location=loc)


def ed_condition_check(triple: MarkovTriple, d: MetricMatrix, tol=1e-9,
                       psi_battery=None, radii=None, seed=42) -> CheckReport:
    """Dual conditions between ``Gamma`` and a metric.

    (a) every sampled ``psi`` with ``Gamma(psi) <= 1`` is 1-Lipschitz for
    ``d``; residual ``Lip - 1``. (b) the truncated distance functions
    ``min(d(x0, .), r)`` have ``Gamma <= 1``; residual ``max Gamma - 1``.
    The reported residual is the larger of the two; both are in ``params``.
    """
    if d.n != triple.n:
        raise InvalidParameterError("metric and triple sizes differ")
    if psi_battery is None:
        psi_battery = test_battery(triple, size=32, seed=seed)
    lip_worst = -math.inf
    loc_a = None
    D = d.d
    off = ~np.eye(d.n, dtype=bool)
    for k, psi in enumerate(psi_battery):
        psi = triple.field(psi)
        gmax = float(carre_du_champ(triple, psi).max())
        if gmax <= 0:
            continue
        psi = psi / math.sqrt(gmax)
        diff = np.abs(psi[None, :] - psi[:, None])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(off & np.isfinite(D) & (D > 0), diff / np.where(off, D, 1.0), 0.0)
        lip = float(q.max()) if d.n > 1 else 0.0
        if lip > lip_worst:
            lip_worst = lip
            loc_a = k
    res_a = lip_worst - 1.0 if math.isfinite(lip_worst) else -1.0
    finite = D[np.isfinite(D)]
    if radii is None:
        radii = [float(finite.max())] if finite.size else [0.0]
    res_b = -math.inf
    loc_b = None
    for x0 in range(d.n):
        for r in radii:
            fb = np.minimum(np.where(np.isfinite(D[x0]), D[x0], r), r)
            g = carre_du_champ(triple, fb)
            z = int(np.argmax(g))
            if g[z] - 1.0 > res_b:
                res_b = float(g[z] - 1.0)
                loc_b = (x0, float(r), z)
    worst = max(res_a, res_b)
    return CheckReport("ed_condition", "Lipschitz duality between Gamma and the distance",
                       worst, tol, worst_location=loc_a if res_a >= res_b else loc_b,
                       params={"lipschitz_residual": res_a, "gamma_residual": res_b})


def slope_bound_defect(triple: MarkovTriple, d: MetricMatrix, f) -> float:
    """``max_x Gamma(f)(x) - |Df|^2(x)``; tends to ``<= 0`` on refined grids."""
    return float(np.max(carre_du_champ(triple, f) - local_slope(d, f) ** 2))

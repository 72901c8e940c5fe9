"""Optimal transport on finite spaces and the transport-side inequalities.

Measures passed to :func:`wasserstein` are mass vectors (summing to 1);
functions that take a triple or a spectral decomposition work with densities
against the reference measure, ``mu = f m``.
"""
import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .bakry_emery import weight_I, weight_R
from .core import MarkovTriple, carre_du_champ, dirichlet_energy
from .exceptions import (CatalogError, InvalidFieldError, InvalidGridError,
                         InvalidMeasureError, InvalidParameterError,
                         NumericalError)
from .metric import MetricMatrix
from .report import CheckReport
from .semigroup import (SpectralDecomposition, as_density, heat_apply,
                        heat_matrix_entrywise)

MASS_TOL = 1e-10
GAP_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ProbabilityDensity:
    """Density ``f`` against ``measure`` with ``sum f m = 1``."""

    density: np.ndarray
    measure: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.density, float)
        m = np.asarray(self.measure, float)
        if f.shape != m.shape:
            raise InvalidMeasureError("density and measure shapes differ")
        if np.any(f < -MASS_TOL):
            raise InvalidMeasureError("negative density")
        if abs(float(np.dot(f, m)) - 1.0) > MASS_TOL:
            raise InvalidMeasureError("density does not integrate to 1")
        object.__setattr__(self, "density", np.maximum(f, 0.0))
        object.__setattr__(self, "measure", m)

    @classmethod
    def from_triple(cls, triple: MarkovTriple, mu):
        return cls(as_density(triple, mu), triple.measure)

    @property
    def masses(self):
        return self.density * self.measure


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Optimal coupling with its dual certificate."""

    plan: np.ndarray
    source: np.ndarray
    target: np.ndarray
    cost: float
    dual_value: float
    dual_infeasibility: float
    info: dict = field(default_factory=dict)

    @property
    def gap(self):
        return self.cost - self.dual_value

    def marginal_error(self):
        return float(max(np.abs(self.plan.sum(axis=1) - self.source).max(),
                         np.abs(self.plan.sum(axis=0) - self.target).max()))

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["i", "j", "mass"])
        for i, j in zip(*np.nonzero(self.plan)):
            w.writerow([int(i), int(j), format(float(self.plan[i, j]), ".17g")])
        return buf.getvalue()


def _masses(x, n, name):
    a = np.asarray(x, dtype=float)
    if a.shape != (n,):
        raise InvalidMeasureError(f"{name} has shape {a.shape}, expected ({n},)")
    if np.any(a < -MASS_TOL) or not np.all(np.isfinite(a)):
        raise InvalidMeasureError(f"{name} has negative or non-finite mass")
    if abs(a.sum() - 1.0) > MASS_TOL:
        raise InvalidMeasureError(f"{name} has total mass {a.sum()!r}, expected 1")
    return np.maximum(a, 0.0)


def optimal_plan(C, mu, nu) -> TransportPlan:
    """Exact minimiser of ``<P, C>`` over couplings of two mass vectors."""
    C = np.asarray(C, dtype=float)
    p, q = C.shape
    a = _masses(mu, p, "mu")
    b = _masses(nu, q, "nu")
    ia = np.flatnonzero(a > 0)
    ib = np.flatnonzero(b > 0)
    Cs = C[np.ix_(ia, ib)]
    finite = np.isfinite(Cs)
    big = None
    if not finite.all():
        big = 1e6 * max(1.0, float(np.abs(Cs[finite]).max(initial=1.0))) * (ia.size + ib.size)
        Cs = np.where(finite, Cs, big)
    # renormalise away the round-off in the supports so the LP is balanced
    as_ = a[ia] / a[ia].sum()
    bs_ = b[ib] / b[ib].sum()
    P, u, v, info = _kernels.transport_simplex(as_, bs_, Cs)
    if info["status"] != 0:
        raise NumericalError(f"transport simplex stopped with status {info['status']} "
                             f"after {info['iterations']} pivots")
    plan = np.zeros((p, q))
    plan[np.ix_(ia, ib)] = P
    if big is not None and np.any(P[~finite] > 1e-14):
        cost = math.inf
        dual = math.inf
        infeas = 0.0
    else:
        cost = float(np.sum(P * np.where(finite, Cs, 0.0)))
        dual = float(np.dot(as_, u) + np.dot(bs_, v))
        red = Cs - u[:, None] - v[None, :]
        infeas = float(max(0.0, -red.min()))
        scale = max(1.0, abs(cost))
        if cost - dual > GAP_TOL * scale or infeas > GAP_TOL * scale:
            raise NumericalError(f"LP certificate failed: gap {cost - dual:.3g}, "
                                 f"dual infeasibility {infeas:.3g}")
    info = dict(info, support=(int(ia.size), int(ib.size)), u=u, v=v)
    return TransportPlan(plan, a, b, cost, dual, infeas, info)


def wasserstein(d: MetricMatrix, mu, nu, p=2):
    """W_p between two mass vectors by the exact transportation simplex.

    Returns ``(value, TransportPlan)``; the plan's cost is ``W_p^p``.
    """
    if p not in (1, 2):
        raise InvalidParameterError("p must be 1 or 2")
    C = d.d if p == 1 else d.squared()
    tp = optimal_plan(C, mu, nu)
    return float(tp.cost ** (1.0 / p)) if math.isfinite(tp.cost) else math.inf, tp


def _beta_min1(r):
    return np.minimum(r, 1.0)


BETA_CATALOG = {
    "min1": _beta_min1,
    "identity": lambda r: np.asarray(r, float),
    "sqrt": np.sqrt,
    "log1p": np.log1p,
    "tanh": np.tanh,
}


def get_beta(beta_spec):
    """Catalog lookup; callables are accepted after a concavity probe."""
    if callable(beta_spec):
        r = np.linspace(0.0, 10.0, 2001)
        b = np.asarray(beta_spec(r), float)
        d2 = b[2:] - 2 * b[1:-1] + b[:-2]
        if abs(b[0]) > 1e-12 or np.any(np.diff(b) < -1e-12) or np.any(d2 > 1e-9):
            raise CatalogError("beta must be concave, nondecreasing, beta(0) = 0")
        return beta_spec
    try:
        return BETA_CATALOG[beta_spec]
    except KeyError:
        raise CatalogError(f"unknown beta {beta_spec!r}; choose from "
                           f"{sorted(BETA_CATALOG)}") from None


def wasserstein_beta(d: MetricMatrix, mu, nu, beta_spec="min1") -> float:
    """``W_1`` for the bounded cost ``beta(d)``."""
    beta = get_beta(beta_spec)
    D = d.d
    finite = np.isfinite(D)
    at_inf = float(np.asarray(beta(np.array([1e300])))[0])
    C = np.where(finite, beta(np.where(finite, D, 0.0)), at_inf)
    return optimal_plan(C, mu, nu).cost


# ---------------------------------------------------------------------------
# entropy and Fisher information
# ---------------------------------------------------------------------------

def _xlogx(f):
    f = np.asarray(f, float)
    safe = np.where(f > 0, f, 1.0)
    return np.where(f > 0, f * np.log(safe), 0.0)


def entropy(mu, measure=None) -> float:
    """``Ent_m(mu) = sum f log f m`` with ``0 log 0 = 0``."""
    if isinstance(mu, ProbabilityDensity):
        f, m = mu.density, mu.measure
    else:
        if measure is None:
            raise InvalidParameterError("entropy of a raw density needs the measure")
        f, m = np.asarray(mu, float), np.asarray(measure, float)
    return float(np.sum(_xlogx(f) * m))


@dataclass(frozen=True)
class FisherPair:
    energy_form: float   # 4 E(sqrt f)
    ratio_form: float    # sum_{f>0} Gamma(f)/f m
    gap: float


def fisher(triple: MarkovTriple, mu) -> FisherPair:
    """Both discrete Fisher informations of a density and their gap."""
    f = mu.density if isinstance(mu, ProbabilityDensity) else triple.field(mu)
    if np.any(f < 0):
        raise InvalidFieldError("density must be nonnegative")
    e = 4.0 * dirichlet_energy(triple, np.sqrt(f))
    G = carre_du_champ(triple, f)
    pos = f > 0
    r = float(np.sum(G[pos] / f[pos] * triple.measure[pos]))
    return FisherPair(e, r, r - e)


# ---------------------------------------------------------------------------
# Kantorovich duality
# ---------------------------------------------------------------------------

def _dual_value(D2, a, b, f):
    q, _ = _kernels.min_plus(f, D2, 0.5)
    return float(np.dot(a, q) - np.dot(b, f))


def _polish(D2, a, b, f, rounds=50):
    """Alternate hard c-transforms; each round cannot decrease the dual."""
    best = _dual_value(D2, a, b, f)
    best_f = f
    for _ in range(rounds):
        phi, _ = _kernels.min_plus(f, D2, 0.5)              # Q_1 f
        g, _ = _kernels.min_plus(-phi, D2.T, 0.5)           # min_x c - phi
        f = -g
        val = _dual_value(D2, a, b, f)
        if val <= best + 1e-15 * max(1.0, abs(best)):
            if val > best:
                best, best_f = val, f
            break
        best, best_f = val, f
    return best, best_f


def _soft_ascent(D2, a, b, g0, eps_list, inner):
    """Log-domain entropic dual ascent with annealed temperature on the
    supports; returns the target-side potential ``f`` (with ``phi - f <= c``)."""
    C = 0.5 * D2
    ia = a > 0
    ib = b > 0
    Cs = C[np.ix_(ia, ib)]
    la = np.log(a[ia])
    lb = np.log(b[ib])
    g = g0[ib].copy()
    for eps in eps_list:
        for _ in range(inner):
            phi = -eps * logsumexp((g[None, :] - Cs) / eps + lb[None, :], axis=1)
            g = -eps * logsumexp((phi[:, None] - Cs) / eps + la[:, None], axis=0)
    # extend to all states by the hard c-transform of phi
    phi = -eps_list[-1] * logsumexp((g[None, :] - Cs) / eps_list[-1] + lb[None, :], axis=1)
    neg_phi = np.full(a.size, np.inf)
    neg_phi[ia] = -phi
    g_full, _ = _kernels.min_plus(neg_phi, D2.T, 0.5)
    return -g_full


def _dual_lp_potential(D2, a, b):
    """Maximiser of ``sum a phi - sum b f`` subject to ``phi_x - f_y <= c(x, y)``,
    solved by HiGHS; returns the target potential ``f``."""
    from scipy.optimize import linprog
    from scipy.sparse import coo_matrix

    n = a.size
    C = 0.5 * D2
    rows = np.arange(n * n)
    xi, yi = np.divmod(rows, n)
    data = np.concatenate([np.ones(n * n), -np.ones(n * n)])
    A = coo_matrix((data, (np.concatenate([rows, rows]),
                           np.concatenate([xi, n + yi]))), shape=(n * n, 2 * n))
    res = linprog(np.concatenate([-a, b]), A_ub=A.tocsr(), b_ub=C.ravel(),
                  bounds=[(None, None)] * (2 * n), method="highs")
    if res.status != 0:
        raise NumericalError(f"dual LP failed: {res.message}")
    return res.x[n:]


def kantorovich_duality_gap(d: MetricMatrix, mu, nu, iters=240, starts=1, seed=42,
                            tol=1e-6) -> CheckReport:
    """``1/2 W_2^2`` (exact primal simplex) minus the best Hopf-Lax dual value.

    The dual ``J(f) = sum mu Q_1 f - sum nu f`` is evaluated with the exact
    Hopf-Lax transform at candidate potentials: the maximiser of the dual LP
    in the potentials (an interior-point/dual-simplex solve independent of the
    primal network simplex), and the results of annealed entropic
    c-transform ascent from several seeded starts. Every candidate is
    polished by exact c-transforms, which never decrease ``J``. Weak duality
    makes the gap nonnegative up to round-off; the gap reached by the
    entropic ascent alone is recorded as ``ascent_gap``.
    """
    n = d.n
    a = _masses(mu, n, "mu")
    b = _masses(nu, n, "nu")
    D2 = d.squared()
    if not np.all(np.isfinite(D2)):
        raise InvalidParameterError("duality check needs a finite metric")
    primal = optimal_plan(0.5 * D2, a, b).cost
    scale = max(float(D2.max()), 1e-300)
    rng = np.random.default_rng(seed)
    n_eps = 24
    eps_list = scale * np.logspace(0, -12, n_eps)
    inner = max(1, iters // n_eps)
    ascent = -math.inf
    for s in range(starts):
        g0 = np.zeros(n) if s == 0 else rng.standard_normal(n) * 0.5 * scale
        f = _soft_ascent(D2, a, b, g0, eps_list, inner)
        ascent = max(ascent, _polish(D2, a, b, f)[0])
    lp_val = _polish(D2, a, b, _dual_lp_potential(D2, a, b))[0]
    best = max(ascent, lp_val)
    gap = primal - best
    notes = []
    if gap < -GAP_TOL * max(1.0, primal):
        notes.append("dual exceeds primal: primal simplex suspect")
    return CheckReport("kantorovich_duality", "Kantorovich duality through Hopf-Lax",
                       float(gap), tol,
                       worst_location="dual_lp" if lp_val >= ascent else "ascent",
                       params={"half_W2_squared": primal, "dual_value": best,
                               "ascent_gap": float(primal - ascent), "starts": starts},
                       notes=notes)


def sinkhorn_approximation(d: MetricMatrix, mu, nu, eps=1e-2, iters=2000):
    """Entropic approximation of ``W_2^2`` (labelled approximate; never used
    by the checks). Returns ``(value, plan, label)``."""
    a = _masses(mu, d.n, "mu")
    b = _masses(nu, d.n, "nu")
    C = d.squared()
    e = eps * max(float(C.max()), 1e-300)
    la = np.log(np.where(a > 0, a, 1e-300))
    lb = np.log(np.where(b > 0, b, 1e-300))
    g = np.zeros(d.n)
    for _ in range(iters):
        phi = -e * logsumexp((g[None, :] - C) / e + lb[None, :], axis=1)
        g = -e * logsumexp((phi[:, None] - C) / e + la[:, None], axis=0)
    logP = (phi[:, None] + g[None, :] - C) / e + la[:, None] + lb[None, :]
    P = np.exp(logP)
    return float(np.sum(P * C)), P, "approximate (entropic)"


# ---------------------------------------------------------------------------
# heat-flow inequalities
# ---------------------------------------------------------------------------

def default_margin_K(K_star):
    """Conservative constant ``K* - 0.05 |K*| - 0.05`` for transport checks."""
    return float(K_star - 0.05 * abs(K_star) - 0.05)


def _flow_masses(dec, t, f):
    """Masses of ``H_t (f m)`` (nonnegative, unit total)."""
    m = dec.measure
    ft = heat_apply(dec, t, f)
    ft = np.maximum(ft, 0.0)
    out = ft * m
    return out / out.sum(), ft / float(np.dot(ft, m))


def bump_pairs(triple: MarkovTriple, npairs, seed=42, centre=2.0, width=(0.3, 1.0)):
    """Seeded pairs of Gaussian-bump densities on the first grid coordinate
    (random positive densities when the triple has no coordinates)."""
    rng = np.random.default_rng(seed)
    m = triple.measure
    out = []
    for _ in range(int(npairs)):
        pair = []
        for _ in range(2):
            if triple.coords is not None:
                x = triple.coords if triple.coords.ndim == 1 else triple.coords[:, 0]
                c = rng.uniform(-centre, centre) + (0.0 if x.min() < 0 < x.max()
                                                    else 0.5 * (x.min() + x.max()))
                w = rng.uniform(*width)
                f = np.exp(-(x - c) ** 2 / (2 * w * w))
            else:
                f = rng.uniform(0.1, 1.0, triple.n)
            pair.append(f / float(np.dot(f, m)))
        out.append(tuple(pair))
    return out


def rough_pairs(triple: MarkovTriple, npairs, seed=42):
    """Seeded pairs of rough densities: uniform noise under a Gaussian
    envelope on grid builders, plain noise otherwise."""
    rng = np.random.default_rng(seed)
    m = triple.measure
    env = np.ones(triple.n)
    if triple.coords is not None:
        x = triple.coords if triple.coords.ndim == 1 else triple.coords[:, 0]
        env = np.exp(-(x - 0.5 * (x.min() + x.max())) ** 2 / 8.0)
    out = []
    for _ in range(int(npairs)):
        pair = []
        for _ in range(2):
            f = rng.random(triple.n) * env + 1e-300
            pair.append(f / float(np.dot(f, m)))
        out.append(tuple(pair))
    return out


def contraction_check(dec: SpectralDecomposition, d: MetricMatrix, pairs, t_grid, K,
                      tol=1e-3) -> CheckReport:
    """``W_2(H_t mu, H_t nu) - e^{-Kt} W_2(mu, nu)`` over pairs and times."""
    m = dec.measure
    rows = []
    worst = -math.inf
    loc = None
    for k, (f, g) in enumerate(pairs):
        f = as_density(dec.triple, f)
        g = as_density(dec.triple, g)
        W0, _ = wasserstein(d, f * m, g * m, 2)
        for t in t_grid:
            a, _ = _flow_masses(dec, t, f)
            b, _ = _flow_masses(dec, t, g)
            Wt, _ = wasserstein(d, a, b, 2)
            r = Wt - math.exp(-K * t) * W0
            rows.append({"pair": k, "t": float(t), "W0": W0, "Wt": Wt, "residual": r})
            if r > worst:
                worst, loc = r, (k, float(t))
    if not rows:
        worst = 0.0
    return CheckReport("w2_contraction", "Wasserstein contraction of the heat flow",
                       float(worst), tol, worst_location=loc, detail_table=rows,
                       params={"K": float(K)})


def evi_residual(dec: SpectralDecomposition, d: MetricMatrix, rho0, nu, t_grid, K,
                 dt=None, tol=0.05) -> CheckReport:
    """Forward-difference residual of the evolution variational inequality.

    ``r(t) = (1/2 W_2^2(rho_{t+dt}, nu) - 1/2 W_2^2(rho_t, nu))/dt
    + K/2 W_2^2(rho_t, nu) + Ent(rho_t) - Ent(nu)``, with ``rho_t = H_t rho0``
    and ``dt`` the local grid step unless given.
    """
    t = np.asarray(t_grid, dtype=float)
    if t.size < 1 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise InvalidGridError("EVI grid must be positive and increasing")
    triple = dec.triple
    m = dec.measure
    f0 = as_density(triple, rho0)
    g = as_density(triple, nu)
    if dt is None:
        steps = np.diff(t) if t.size > 1 else np.array([1e-3])
        dts = np.append(steps, steps[-1])
    else:
        dts = np.full(t.size, float(dt))
    if dts.min() < 1e-6:
        warnings.warn("EVI difference step below 1e-6: quotient dominated by noise",
                      RuntimeWarning, stacklevel=2)
    nu_m = g * m
    ent_nu = entropy(g, m)
    rows = []
    worst = -math.inf
    loc = None
    for tk, h in zip(t, dts):
        a, ft = _flow_masses(dec, tk, f0)
        a2, _ = _flow_masses(dec, tk + h, f0)
        w = wasserstein(d, a, nu_m, 2)[0] ** 2
        w2 = wasserstein(d, a2, nu_m, 2)[0] ** 2
        r = 0.5 * (w2 - w) / h + 0.5 * K * w + entropy(ft, m) - ent_nu
        rows.append({"t": float(tk), "dt": float(h), "W2sq": w, "residual": r})
        if r > worst:
            worst, loc = r, float(tk)
    return CheckReport("evi", "evolution variational inequality", float(worst), tol,
                       worst_location=loc, detail_table=rows, params={"K": float(K)})


def evi_residual_battery(dec, d, pairs, t_grid, K, dt=None, tol=0.05) -> CheckReport:
    """Worst EVI residual over ``(rho0, nu)`` pairs on a uniform time lattice.

    ``t_grid = (t0, t1)`` with ``dt`` expands to ``arange(t0, t1, dt)``; an
    explicit array is used as given.
    """
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.size == 2 and dt is not None:
        t_grid = np.arange(t_grid[0], t_grid[1] + 1e-12, dt)
    worst = -math.inf
    loc = None
    rows = []
    for k, (r0, nu) in enumerate(pairs):
        rep = evi_residual(dec, d, r0, nu, t_grid, K, dt=dt, tol=tol)
        rows.append({"pair": k, "worst": rep.worst_residual, "t": rep.worst_location})
        if rep.worst_residual > worst:
            worst, loc = rep.worst_residual, (k, rep.worst_location)
    return CheckReport("evi", "evolution variational inequality", float(worst), tol,
                       worst_location=loc, detail_table=rows,
                       params={"K": float(K), "pairs": len(rows)})


def log_harnack_check(dec: SpectralDecomposition, d: MetricMatrix, f, t, K, eps=0.0,
                      tol=5e-3) -> CheckReport:
    """``P_t log(f+eps)(y) - log(P_t f(x) + eps) - d(x,y)^2 / (4 I_{2K}(t))``
    maximised over all pairs ``(x, y)``."""
    if eps not in (0.0, 1e-6, 1e-3):
        raise InvalidParameterError("eps must be one of 0, 1e-6, 1e-3")
    f = dec.triple.field(f)
    if np.any(f < 0):
        raise InvalidFieldError("log-Harnack needs a nonnegative field")
    t = float(t)
    if not t > 0:
        raise InvalidParameterError("t must be positive")
    H = heat_matrix_entrywise(dec.triple, t)
    with np.errstate(divide="ignore"):
        logf = np.log(f + eps)
    # P_t log f: -inf wherever the kernel sees a zero of f + eps
    zero = ~np.isfinite(logf)
    Plog = H @ np.where(zero, 0.0, logf)
    Plog = np.where((H[:, zero] > 0).any(axis=1), -np.inf, Plog) if zero.any() else Plog
    with np.errstate(divide="ignore"):
        logP = np.log(H @ f + eps)
    D2 = d.squared()
    w = 4.0 * weight_I(2.0 * K, t)
    with np.errstate(invalid="ignore"):
        R = Plog[None, :] - logP[:, None] - D2 / w  # R[x, y]
    R = np.where(np.isnan(R), -np.inf, R)
    k = int(np.argmax(R))
    x, y = divmod(k, d.n)
    return CheckReport("log_harnack", "log-Harnack inequality", float(R[x, y]), tol,
                       worst_location=(x, y),
                       params={"K": float(K), "t": t, "eps": eps})


def ball_mass(d: MetricMatrix, measure, x0, r):
    if not r > 0:
        raise InvalidParameterError("invalid radius: r must be positive")
    return float(np.asarray(measure)[d.d[int(x0)] <= r].sum())


def llogl_check(dec: SpectralDecomposition, d: MetricMatrix, mu, t, K, x0, r,
                tol=0.0) -> CheckReport:
    """Entropy of ``H_t mu`` against ``(r^2 + int d^2(., x0) dmu)/(2 I_{2K}(t))
    - log m(B_r(x0))``."""
    triple = dec.triple
    if not (0 <= int(x0) < triple.n):
        raise InvalidParameterError("x0 out of range")
    mb = ball_mass(d, triple.measure, x0, r)
    if mb <= 0:
        raise InvalidParameterError("invalid radius: empty ball")
    f = as_density(triple, mu)
    t = float(t)
    if not t > 0:
        raise InvalidParameterError("t must be positive")
    H = heat_matrix_entrywise(triple, t)
    ft = H @ f
    ft = ft / float(np.dot(ft, triple.measure))
    lhs = entropy(ft, triple.measure)
    mom = float(np.sum(d.squared()[int(x0)] * f * triple.measure))
    rhs = (r * r + mom) / (2.0 * weight_I(2.0 * K, t)) - math.log(mb)
    return CheckReport("llogl", "L log L regularization", lhs - rhs, tol,
                       worst_location=int(x0),
                       params={"K": float(K), "t": t, "r": float(r),
                               "entropy": lhs, "bound": rhs})


# ---------------------------------------------------------------------------
# curves
# ---------------------------------------------------------------------------

def _curve_masses(curve, measure):
    out = []
    for rho in curve:
        if isinstance(rho, ProbabilityDensity):
            out.append(rho.masses)
        elif measure is not None:
            r = np.asarray(rho, float)
            out.append(r * measure / float(np.dot(r, measure)))
        else:
            out.append(np.asarray(rho, float))
    return out


def metric_speed(d: MetricMatrix, curve, s_grid, measure=None) -> np.ndarray:
    """``W_2(rho_{i+1}, rho_i) / (s_{i+1} - s_i)`` along a sampled curve.

    Curve entries are mass vectors, or densities when ``measure`` is given.
    """
    s = np.asarray(s_grid, dtype=float)
    if len(curve) < 2 or len(curve) != s.size:
        raise InvalidGridError("curve needs >= 2 samples matching the grid")
    ds = np.diff(s)
    if np.any(ds == 0):
        raise InvalidGridError("duplicate grid times")
    ms = _curve_masses(curve, measure)
    return np.array([wasserstein(d, ms[i + 1], ms[i], 2)[0] / abs(ds[i])
                     for i in range(len(ms) - 1)])


def heat_flow_speed_check(dec, d, f, s_grid, tol=0.0) -> CheckReport:
    """``|rho'|^2 - F(P_s f)`` along the heat flow, speeds by difference
    quotients of W_2 and ``F = 4 E(sqrt .)`` at the left endpoint.
    Reported, not asserted: difference quotients of W_2 on a finite space
    scale like ``ds^{-1/2}`` once ``ds`` is below the grid's diffusive time."""
    triple = dec.triple
    f = as_density(triple, f)
    s = np.asarray(s_grid, dtype=float)
    curve = [_flow_masses(dec, sk, f)[0] for sk in s]
    v = metric_speed(d, curve, s)
    F = np.array([fisher(triple, _flow_masses(dec, sk, f)[1]).energy_form for sk in s[:-1]])
    res = v ** 2 - F
    k = int(np.argmax(res))
    rows = [{"s": float(s[i]), "speed": float(v[i]), "fisher": float(F[i])}
            for i in range(v.size)]
    return CheckReport("heat_flow_speed", "metric speed bounded by Fisher information",
                       float(res[k]), tol, worst_location=float(s[k]), detail_table=rows)


def _floored(curve_densities, measure):
    out = []
    flagged = False
    for f in curve_densities:
        f = np.asarray(f, float)
        if np.any(f <= 0):
            flagged = True
            f = np.maximum(f, 1e-12)
        out.append(f / float(np.dot(f, measure)))
    return out, flagged


def action_estimate_check(dec, d, curve, s_grid, t, K, tol=0.05) -> CheckReport:
    """``W_2^2(rho_0, H_t rho_1) + 2t Ent(H_t rho_1) - R_K(t)^2 A - 2t Ent(rho_0)``
    with the action ``A = int_0^1 |rho'|^2 ds`` from :func:`metric_speed`.

    Curve entries are densities; zeros are floored at ``1e-12`` and
    renormalised (flagged in the notes, with a warning).
    """
    triple = dec.triple
    m = triple.measure
    s = np.asarray(s_grid, dtype=float)
    if abs(s[0]) > 1e-12 or abs(s[-1] - 1.0) > 1e-12:
        raise InvalidGridError("curve parameter must run over [0, 1]")
    curve, flagged = _floored(curve, m)
    notes = []
    if flagged:
        warnings.warn("curve density with zeros: floored at 1e-12 (regularity surrogate)",
                      RuntimeWarning, stacklevel=2)
        notes.append("positivity floor 1e-12 applied")
    v = metric_speed(d, curve, s, measure=m)
    action = float(np.sum(v ** 2 * np.diff(s)))
    t = float(t)
    a1, f1t = _flow_masses(dec, t, curve[-1])
    W2sq = wasserstein(d, curve[0] * m, a1, 2)[0] ** 2
    lhs = W2sq + 2 * t * entropy(f1t, m)
    rhs = weight_R(K, t) ** 2 * action + 2 * t * entropy(curve[0], m)
    return CheckReport("action_estimate", "action and entropy estimate along curves",
                       float(lhs - rhs), tol, worst_location=None,
                       params={"K": float(K), "t": t, "action": action,
                               "W2sq": W2sq, "R_K": float(weight_R(K, t))},
                       notes=notes)


def heat_flow_curve(dec, f, s_grid, theta0=0.05, theta1=0.25):
    """Densities of ``H_{theta(s)} (f m)``, ``theta`` affine from ``theta0``
    to ``theta1``: a smooth, strictly positive surrogate of a regular curve."""
    return [_flow_masses(dec, theta0 + (theta1 - theta0) * s, f)[1] for s in s_grid]


# ---------------------------------------------------------------------------
# algebraic identities
# ---------------------------------------------------------------------------

def integration_by_parts_check(triple: MarkovTriple, mu, phi_battery, tol=1e-10
                               ) -> CheckReport:
    """``int 2 sqrt(f) Gamma(sqrt f, phi) dm + int phi L f dm`` per test field."""
    f = mu.density if isinstance(mu, ProbabilityDensity) else triple.field(mu)
    if np.any(f < 0):
        raise InvalidFieldError("density must be nonnegative")
    from .core import generator_apply
    m = triple.measure
    r = np.sqrt(f)
    Lf = generator_apply(triple, f)
    rows = []
    worst = 0.0
    loc = None
    for k, phi in enumerate(phi_battery):
        phi = triple.field(phi)
        lhs = float(np.sum(2.0 * r * carre_du_champ(triple, r, phi) * m))
        rhs = -float(np.sum(phi * Lf * m))
        scale = max(1.0, abs(lhs), abs(rhs))
        res = abs(lhs - rhs) / scale
        rows.append({"phi": k, "lhs": lhs, "rhs": rhs, "residual": res})
        if res > worst or loc is None:
            worst, loc = res, k
    notes = ["density has zeros"] if np.any(f == 0) else []
    return CheckReport("integration_by_parts", "integration by parts for the square root",
                       worst, tol, worst_location=loc, detail_table=rows, notes=notes)


def entropy_dissipation_check(dec, f, t_grid, delta=1e-5, tol=1e-6) -> CheckReport:
    """Central differences of ``t -> Ent(P_t f m)`` against ``-E(f_t, log f_t)``.

    The Fisher-information gap ``E(f_t, log f_t) - 4 E(sqrt f_t)`` is recorded
    per time (it vanishes only in the continuum).
    """
    triple = dec.triple
    m = triple.measure
    f = as_density(triple, f)
    if np.any(f <= 0):
        raise InvalidFieldError("entropy dissipation check needs a positive density")
    rows = []
    worst = 0.0
    loc = None
    for t in t_grid:
        t = float(t)
        if t - delta < 0:
            raise InvalidGridError("times must exceed the difference step")
        ep = entropy(heat_apply(dec, t + delta, f), m)
        em = entropy(heat_apply(dec, t - delta, f), m)
        ft = heat_apply(dec, t, f)
        rate = -dirichlet_energy(triple, ft, np.log(ft))
        fd = (ep - em) / (2 * delta)
        res = abs(fd - rate) / max(1.0, abs(rate))
        F = 4.0 * dirichlet_energy(triple, np.sqrt(ft))
        rows.append({"t": t, "fd": fd, "rate": rate, "fisher": F,
                     "fisher_gap": -rate - F})
        if res > worst or loc is None:
            worst, loc = res, t
    return CheckReport("entropy_dissipation", "entropy dissipation along the heat flow",
                       worst, tol, worst_location=loc, detail_table=rows)

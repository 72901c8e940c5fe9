"""Finite reversible Markov triples and their Gamma-calculus.

A triple ``(X, m, E)`` is a finite state set with a strictly positive
reference measure ``m`` and symmetric conductances ``w``. The Dirichlet form
is ``E(f, g) = 1/2 sum_{x,y} w(x,y) (f(x)-f(y)) (g(x)-g(y))`` and the
generator is fixed as ``(Lf)(x) = m(x)^-1 sum_y w(x,y) (f(y) - f(x))``, the
unique choice with ``E(f, g) = -<Lf, g>_m``.

Fields are plain ``numpy`` arrays of length ``n``.
"""
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.csgraph  # noqa: F401  (registers sp.csgraph)

from . import _kernels
from .exceptions import (CatalogError, InvalidFieldError,
                         InvalidParameterError, InvalidTripleError)
from .report import CheckReport

MAX_STATES = 5000


@dataclass(frozen=True, eq=False)
class MarkovTriple:
    """Finite state space with measure and symmetric edge weights.

    Attributes
    ----------
    measure : (n,) ndarray
        Strictly positive mass per state.
    weights : scipy.sparse.csr_matrix
        Symmetric, nonnegative, zero diagonal.
    labels : sequence of str, optional
    h : float, optional
        Grid spacing for discretized diffusions.
    coords : ndarray, optional
        Node positions, shape ``(n,)`` or ``(n, d)``, for grid builders.
    period : float or tuple, optional
        Period of each coordinate for circle builders.
    """

    measure: np.ndarray
    weights: sp.csr_matrix
    labels: Optional[Sequence[str]] = None
    h: Optional[float] = None
    coords: Optional[np.ndarray] = None
    period: Optional[object] = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        m = np.asarray(self.measure, dtype=float).ravel()
        W = sp.csr_matrix(self.weights, dtype=float)
        W.sum_duplicates()
        W.eliminate_zeros()
        n = m.size
        if n < 1:
            raise InvalidTripleError("triple needs at least one state")
        if W.shape != (n, n):
            raise InvalidTripleError(
                f"weights shape {W.shape} does not match {n} states")
        if not np.all(np.isfinite(m)) or np.any(m <= 0):
            raise InvalidTripleError("measure must be strictly positive")
        if W.nnz and (W.data.min() < 0 or not np.all(np.isfinite(W.data))):
            raise InvalidTripleError("edge weights must be finite and >= 0")
        if W.diagonal().any():
            raise InvalidTripleError("edge weights must have zero diagonal")
        asym = abs(W - W.T)
        if asym.nnz and asym.max() > 1e-12 * max(1.0, abs(W).max()):
            raise InvalidTripleError("edge weights must be symmetric")
        if self.labels is not None and len(self.labels) != n:
            raise InvalidTripleError("labels length differs from n")
        object.__setattr__(self, "measure", m)
        object.__setattr__(self, "weights", W)
        if self.coords is not None:
            object.__setattr__(self, "coords", np.asarray(self.coords, float))

    # -- basic views ------------------------------------------------------

    @property
    def n(self) -> int:
        return self.measure.size

    @property
    def n_states(self) -> int:
        return self.n

    @property
    def degree(self) -> np.ndarray:
        """Weighted degree ``sum_y w(x, y)``."""
        c = self._cache
        if "deg" not in c:
            c["deg"] = np.asarray(self.weights.sum(axis=1)).ravel()
        return c["deg"]

    @property
    def generator(self) -> sp.csr_matrix:
        """Sparse generator matrix ``L``."""
        c = self._cache
        if "L" not in c:
            minv = sp.diags(1.0 / self.measure)
            c["L"] = sp.csr_matrix(minv @ (self.weights - sp.diags(self.degree)))
        return c["L"]

    def total_mass(self) -> float:
        return float(self.measure.sum())

    def components(self):
        """Connected component label per state."""
        c = self._cache
        if "comp" not in c:
            _, lab = sp.csgraph.connected_components(self.weights, directed=False)
            c["comp"] = lab
        return c["comp"]

    def is_connected(self) -> bool:
        return int(self.components().max()) == 0

    def neighbors(self, x):
        W = self.weights
        return W.indices[W.indptr[x]:W.indptr[x + 1]]

    def edges(self):
        """Upper-triangular edge list ``(i, j, w)`` with ``i < j``."""
        T = sp.triu(self.weights, k=1).tocoo()
        order = np.lexsort((T.col, T.row))
        return [(int(T.row[k]), int(T.col[k]), float(T.data[k])) for k in order]

    def field(self, values) -> np.ndarray:
        """Validate ``values`` as a scalar field on this triple."""
        f = np.asarray(values, dtype=float)
        if f.shape != (self.n,):
            raise InvalidFieldError(
                f"field of shape {f.shape} on a {self.n}-state triple")
        return f

    def integrate(self, f) -> float:
        return float(np.dot(self.field(f), self.measure))

    def inner(self, f, g) -> float:
        """``<f, g>_m``."""
        return float(np.sum(self.field(f) * self.field(g) * self.measure))

    # -- construction / io -----------------------------------------------

    @classmethod
    def from_edges(cls, n, measure, edges, labels=None, h=None, coords=None,
                   period=None):
        """Build from an edge list of ``(i, j, w)``; duplicate edges rejected."""
        seen = set()
        rows, cols, vals = [], [], []
        for e in edges:
            if len(e) != 3:
                raise InvalidTripleError(f"edge {e!r} is not (i, j, w)")
            i, j, w = int(e[0]), int(e[1]), float(e[2])
            if not (0 <= i < n and 0 <= j < n):
                raise InvalidTripleError(f"edge ({i}, {j}) out of range")
            if i == j:
                raise InvalidTripleError(f"self loop at {i}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InvalidTripleError(f"duplicate edge {key}")
            seen.add(key)
            rows += [i, j]
            cols += [j, i]
            vals += [w, w]
        W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        return cls(np.asarray(measure, float), W, labels=labels, h=h,
                   coords=coords, period=period)

    @classmethod
    def from_dense(cls, measure, W, **kw):
        return cls(np.asarray(measure, float), sp.csr_matrix(np.asarray(W, float)), **kw)

    def to_dict(self):
        d = {"n": self.n, "measure": self.measure.tolist(),
             "edges": [[i, j, w] for i, j, w in self.edges()]}
        if self.labels is not None:
            d["labels"] = list(self.labels)
        if self.h is not None:
            d["h"] = float(self.h)
        if self.coords is not None:
            d["coords"] = self.coords.tolist()
        return d

    def to_json(self) -> str:
        from .report import dumps
        return dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        try:
            n = int(d["n"])
            return cls.from_edges(n, d["measure"], d["edges"],
                                  labels=d.get("labels"), h=d.get("h"),
                                  coords=d.get("coords"))
        except KeyError as exc:
            raise InvalidTripleError(f"missing key {exc}") from None

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json())


# ---------------------------------------------------------------------------
# Gamma-calculus
# ---------------------------------------------------------------------------

def dirichlet_energy(triple: MarkovTriple, f, g=None) -> float:
    """``E(f, g) = 1/2 sum_{x,y} w(x,y) (f(x)-f(y)) (g(x)-g(y))``."""
    f = triple.field(f)
    g = f if g is None else triple.field(g)
    T = sp.triu(triple.weights, k=1).tocoo()
    return float(np.sum(T.data * (f[T.row] - f[T.col]) * (g[T.row] - g[T.col])))


def generator_apply(triple: MarkovTriple, f) -> np.ndarray:
    """``(Lf)(x) = m(x)^-1 sum_y w(x,y) (f(y) - f(x))``."""
    f = triple.field(f)
    return (triple.weights @ f - triple.degree * f) / triple.measure


def carre_du_champ(triple: MarkovTriple, f, g=None) -> np.ndarray:
    """``Gamma(f, g)(x) = (2 m(x))^-1 sum_y w(x,y) (f(y)-f(x)) (g(y)-g(x))``."""
    f = triple.field(f)
    g = f if g is None else triple.field(g)
    return _kernels.gamma_eval(triple.weights, triple.measure, f, g)


def gamma2(triple: MarkovTriple, f) -> np.ndarray:
    """``Gamma_2(f) = 1/2 L Gamma(f) - Gamma(f, Lf)``."""
    f = triple.field(f)
    return _kernels.gamma2_eval(triple.weights, triple.measure, f)


def nu_of(N) -> float:
    """``1/N`` with ``N = inf`` mapped to an exact zero."""
    N = parse_dimension(N)
    if math.isinf(N):
        return 0.0
    return 1.0 / N


def parse_dimension(N) -> float:
    if isinstance(N, str):
        N = N.strip().lower()
        if N in ("inf", "infinity", "oo"):
            return math.inf
        N = float(N)
    N = float(N)
    if math.isnan(N) or N <= 0:
        raise InvalidParameterError(f"dimension N must be > 0 or inf, got {N}")
    return N


# ---------------------------------------------------------------------------
# chain rule defect
# ---------------------------------------------------------------------------

ETA_CATALOG = {
    "identity": (lambda r: r, lambda r: np.ones_like(r)),
    "square": (lambda r: r * r, lambda r: 2.0 * r),
    "clamp": (lambda r: np.clip(r, -1.0, 1.0),
              lambda r: ((r > -1.0) & (r < 1.0)).astype(float)),
    "sigmoid": (np.tanh, lambda r: 1.0 / np.cosh(r) ** 2),
}

# 1-Lipschitz with eta(0) = 0: normal contractions
CONTRACTIONS = ("identity", "clamp", "sigmoid")


def get_eta(eta_spec):
    try:
        return ETA_CATALOG[eta_spec]
    except (KeyError, TypeError):
        raise CatalogError(
            f"unknown eta {eta_spec!r}; choose from {sorted(ETA_CATALOG)}") from None


def chain_rule_defect(triple: MarkovTriple, f, eta_spec, battery=None,
                      tol=1e-12) -> CheckReport:
    """Sup-norm failure of ``Gamma(eta(f), g) = eta'(f) Gamma(f, g)``.

    The defect is maximised over ``battery`` (default: :func:`test_battery`,
    smooth profiles only on grid builders).
    """
    eta, deta = get_eta(eta_spec)
    f = triple.field(f)
    if battery is None:
        battery = test_battery(triple, size=16, kinds=("chebyshev",)) \
            if triple.coords is not None else test_battery(triple, size=16)
    ef = eta(f)
    df = deta(f)
    worst = 0.0
    loc = None
    for k, g in enumerate(battery):
        g = triple.field(g)
        r = np.abs(carre_du_champ(triple, ef, g) - df * carre_du_champ(triple, f, g))
        i = int(np.argmax(r))
        if r[i] > worst or loc is None:
            worst = float(r[i])
            loc = (k, i)
    return CheckReport("chain_rule_defect", "chain rule for the carre du champ", worst,
                       tol, worst_location=loc, params={"eta": eta_spec})


# ---------------------------------------------------------------------------
# test fields
# ---------------------------------------------------------------------------

def test_battery(triple: MarkovTriple, size=64, seed=42,
                 kinds=("indicator", "chebyshev", "random")):
    """Deterministic list of test fields.

    Coordinate indicators, low-order Chebyshev profiles of the first grid
    coordinate (grid builders only) and Gaussian random fields, split evenly
    across the requested kinds and truncated to ``size``.
    """
    n = triple.n
    rng = np.random.default_rng(seed)
    kinds = [k for k in kinds if k != "chebyshev" or triple.coords is not None]
    if not kinds:
        kinds = ["random"]
    share = max(1, size // len(kinds))
    out = []
    for kind in kinds:
        if kind == "indicator":
            for x in np.linspace(0, n - 1, min(n, share)).astype(int):
                e = np.zeros(n)
                e[x] = 1.0
                out.append(e)
        elif kind == "chebyshev":
            c = triple.coords if triple.coords.ndim == 1 else triple.coords[:, 0]
            span = c.max() - c.min()
            u = 2.0 * (c - c.min()) / (span if span > 0 else 1.0) - 1.0
            for k in range(1, share + 1):
                out.append(np.cos(k * np.arccos(np.clip(u, -1, 1))))
        elif kind == "random":
            for _ in range(share):
                out.append(rng.standard_normal(n))
        else:
            raise CatalogError(f"unknown battery kind {kind!r}")
    while len(out) < size:
        out.append(rng.standard_normal(n))
    return out[:size]


# ---------------------------------------------------------------------------
# pointwise Bakry-Emery curvature
# ---------------------------------------------------------------------------

def _ball(triple, x, radius):
    B = {int(x)}
    frontier = [int(x)]
    for _ in range(radius):
        nxt = []
        for z in frontier:
            for y in triple.neighbors(z):
                y = int(y)
                if y not in B:
                    B.add(y)
                    nxt.append(y)
        frontier = nxt
    return np.array(sorted(B), dtype=int)


def _local_gamma(Wl, ml, z):
    # quadratic form f -> Gamma(f)(z) in local coordinates
    k = ml.size
    G = np.zeros((k, k))
    row = Wl[z]
    nz = np.nonzero(row)[0]
    a = row[nz] / (2.0 * ml[z])
    G[nz, nz] += a
    G[z, z] += a.sum()
    G[z, nz] -= a
    G[nz, z] -= a
    return G


def local_forms(triple: MarkovTriple, x):
    """Quadratic forms of ``Gamma_2(.)(x)``, ``Gamma(.)(x)`` and ``(L.)(x)``.

    Returns ``(idx, A, G, ell)`` on the radius-2 ball ``idx`` around ``x``:
    ``Gamma_2(f)(x) = f^T A f``, ``Gamma(f)(x) = f^T G f`` and
    ``Lf(x) = ell . f`` for ``f`` restricted to ``idx``.
    """
    idx = _ball(triple, x, 2)
    pos = {int(v): k for k, v in enumerate(idx)}
    Wl = triple.weights[idx][:, idx].toarray()
    ml = triple.measure[idx]
    Ll = (Wl - np.diag(Wl.sum(axis=1))) / ml[:, None]
    xl = pos[int(x)]
    G = _local_gamma(Wl, ml, xl)
    A = np.zeros_like(G)
    for z in np.nonzero(Ll[xl])[0]:
        A += 0.5 * Ll[xl, z] * _local_gamma(Wl, ml, z)
    GL = G @ Ll
    A -= 0.5 * (GL + GL.T)
    return idx, A, G, Ll[xl].copy()


def local_curvature(triple: MarkovTriple, x, N=math.inf, rank_tol=1e-10,
                    return_field=False):
    """Optimal ``K`` in ``Gamma_2(f)(x) >= K Gamma(f)(x) + (Lf(x))^2 / N``.

    Computed as the smallest eigenvalue of the pencil ``(A - nu l l^T, G)``
    after eliminating the null space of ``G`` by a Schur complement: fields
    constant on the star of ``x`` still change ``Gamma_2(f)(x)`` and must be
    optimised out, not discarded. Returns ``nan`` at isolated states and
    ``-inf`` if the form is unbounded below.
    """
    nu = nu_of(N)
    idx, A, G, ell = local_forms(triple, x)
    M = A - nu * np.outer(ell, ell)
    w, V = np.linalg.eigh(G)
    gmax = w.max(initial=0.0)
    if gmax <= 0.0:
        return (math.nan, None) if return_field else math.nan
    keep = w > rank_tol * gmax
    P = V[:, keep] / np.sqrt(w[keep])
    Q = V[:, ~keep]
    scale = max(1.0, np.abs(M).max())
    App = P.T @ M @ P
    Apq = P.T @ M @ Q
    Aqq = Q.T @ M @ Q
    wq, Vq = np.linalg.eigh(Aqq)
    if wq.size and wq.min() < -1e-9 * scale:
        return (-math.inf, None) if return_field else -math.inf
    pos = wq > rank_tol * scale
    Z = Vq[:, pos] / wq[pos]
    S = App - (Apq @ Z) @ (Vq[:, pos].T @ Apq.T)
    # range condition: Apq must lie in the range of Aqq
    resid = Apq @ Vq[:, ~pos]
    if resid.size and np.abs(resid).max() > 1e-7 * scale:
        return (-math.inf, None) if return_field else -math.inf
    S = 0.5 * (S + S.T)
    ev, U = np.linalg.eigh(S)
    K = float(ev[0])
    if not return_field:
        return K
    u = U[:, 0]
    loc = P @ u - Q @ (Vq[:, pos] @ (Z.T @ (Apq.T @ u)))
    f = np.zeros(triple.n)
    f[idx] = loc
    return K, f


def pointwise_be_optimal_K(triple: MarkovTriple, N=math.inf, rank_tol=1e-10):
    """Optimal pointwise curvature-dimension constant.

    Returns
    -------
    K_star : float
        ``min_x K*(x)``; BE(K, N) holds iff ``K <= K_star``.
    per_point : (n,) ndarray
        ``K*(x)``; ``nan`` at isolated states (skipped with a warning).
    """
    parse_dimension(N)
    if rank_tol <= 0:
        raise InvalidParameterError("rank_tol must be positive")
    per = np.array([local_curvature(triple, x, N, rank_tol)
                    for x in range(triple.n)])
    iso = np.isnan(per)
    if iso.any():
        warnings.warn(f"{int(iso.sum())} isolated state(s) skipped in K* "
                      "computation", RuntimeWarning, stacklevel=2)
    if iso.all():
        return math.inf, per
    return float(np.nanmin(per)), per


def be_check(triple: MarkovTriple, K, N=math.inf, tol=1e-9,
             rank_tol=1e-10) -> CheckReport:
    """Pointwise BE(K, N): pass iff ``K <= K* + tol``."""
    K_star, per = pointwise_be_optimal_K(triple, N, rank_tol)
    loc = None if not np.isfinite(per).any() and math.isinf(K_star) \
        else int(np.nanargmin(np.where(np.isnan(per), np.inf, per)))
    return CheckReport("be_pointwise", "pointwise curvature-dimension inequality",
                       float(K) - K_star, tol, worst_location=loc,
                       params={"K": float(K), "N": parse_dimension(N),
                               "K_star": K_star})

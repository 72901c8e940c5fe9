"""Model spaces: discretized weighted diffusions, small graphs, products."""
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from ._accel import thread_cap
from .core import (MAX_STATES, MarkovTriple, be_check, parse_dimension,
                   pointwise_be_optimal_K)
from .exceptions import InvalidParameterError
from .report import CheckReport

KINDS = ("interval_diffusion", "circle_diffusion", "two_point",
         "complete_graph", "custom", "product", "random_graph")


@dataclass(frozen=True)
class SpaceSpec:
    """Kind-tagged description of a model space.

    ``params`` by kind:

    * ``interval_diffusion``: ``n``, ``a``, ``b``, ``V`` (polynomial
      coefficients in increasing degree).
    * ``circle_diffusion``: ``n``, ``length`` (default ``2 pi``), ``V``
      (coefficients of ``V(theta) = sum c_k cos(k theta)``).
    * ``two_point``: none.  ``complete_graph``: ``n``.
    * ``random_graph``: ``n``, ``p`` (edge probability); uses ``seed``.
    * ``custom``: ``triple`` (dict in the triple JSON schema) or ``path``.
    * ``product``: ``x``, ``y`` (child specs).
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 42

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown space kind {self.kind!r}")
        p = self.params
        if self.kind in ("interval_diffusion", "circle_diffusion",
                         "complete_graph", "random_graph"):
            n = p.get("n")
            if not isinstance(n, (int, np.integer)) or n < 2:
                raise InvalidParameterError("grid size n must be an integer >= 2")
        if self.kind == "interval_diffusion":
            a, b = float(p.get("a", -5.0)), float(p.get("b", 5.0))
            if not (math.isfinite(a) and math.isfinite(b) and a < b):
                raise InvalidParameterError("interval needs finite bounds a < b")
        if self.kind == "circle_diffusion":
            if not float(p.get("length", 2 * math.pi)) > 0:
                raise InvalidParameterError("circle length must be positive")
        if self.kind == "product":
            for key in ("x", "y"):
                if not isinstance(p.get(key), SpaceSpec):
                    raise InvalidParameterError("product needs child specs x and y")
        if self.kind == "custom" and "triple" not in p and "path" not in p:
            raise InvalidParameterError("custom spec needs 'triple' or 'path'")

    # -- shorthand ---------------------------------------------------------

    @classmethod
    def parse(cls, text, seed=42):
        """Shorthand: ``two_point``, ``ou:400``, ``interval:100``,
        ``circle:64``, ``complete:5``, ``random:8``, ``A*B`` for products,
        a ``.json`` path (triple or spec)."""
        text = str(text).strip()
        if "*" in text:
            left, right = text.split("*", 1)
            return product_spec(cls.parse(left, seed), cls.parse(right, seed))
        if text.endswith(".json"):
            with open(text, encoding="utf-8") as fh:
                d = json.load(fh)
            if "kind" in d:
                return cls.from_dict(d)
            return cls("custom", {"triple": d}, seed)
        name, _, arg = text.partition(":")
        try:
            n = int(arg) if arg else None
        except ValueError:
            raise InvalidParameterError(f"bad size in space {text!r}") from None
        if name == "two_point":
            return cls("two_point", {}, seed)
        if n is None:
            raise InvalidParameterError(f"space {text!r} needs a size, e.g. {name}:100")
        if name == "ou":
            return ou_spec(n, seed=seed)
        if name == "interval":
            return cls("interval_diffusion", {"n": n, "a": 0.0, "b": 1.0, "V": [0.0]}, seed)
        if name == "circle":
            return circle_spec(n, seed=seed)
        if name == "complete":
            return cls("complete_graph", {"n": n}, seed)
        if name == "random":
            return cls("random_graph", {"n": n, "p": 0.5}, seed)
        raise InvalidParameterError(f"unknown space shorthand {text!r}")

    def to_dict(self):
        p = {}
        for k, v in self.params.items():
            p[k] = v.to_dict() if isinstance(v, SpaceSpec) else v
        return {"kind": self.kind, "params": p, "seed": int(self.seed)}

    @classmethod
    def from_dict(cls, d):
        try:
            kind = d["kind"]
            params = dict(d.get("params", {}))
        except (KeyError, TypeError):
            raise InvalidParameterError("space spec needs 'kind'") from None
        if kind == "product":
            params = {k: cls.from_dict(params[k]) if k in ("x", "y") else v
                      for k, v in params.items()}
        return cls(kind, params, int(d.get("seed", 42)))

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def ou_spec(n, a=-5.0, b=5.0, seed=42):
    """Ornstein-Uhlenbeck: ``V = x^2/2`` on ``[a, b]``."""
    return SpaceSpec("interval_diffusion",
                     {"n": int(n), "a": float(a), "b": float(b), "V": [0.0, 0.0, 0.5]}, seed)


def circle_spec(n, length=2 * math.pi, V=(0.0,), seed=42):
    return SpaceSpec("circle_diffusion",
                     {"n": int(n), "length": float(length), "V": list(V)}, seed)


def product_spec(x, y):
    return SpaceSpec("product", {"x": x, "y": y}, x.seed)


# ---------------------------------------------------------------------------

def _chain(x, V, h, periodic):
    n = x.size
    m = np.exp(-V) * h
    i = np.arange(n - 1)
    rows, cols = [i], [i + 1]
    vals = [np.exp(-(V[:-1] + V[1:]) / 2.0) / h]
    if periodic and n > 2:
        rows.append(np.array([n - 1]))
        cols.append(np.array([0]))
        vals.append(np.array([np.exp(-(V[-1] + V[0]) / 2.0) / h]))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    W = sp.csr_matrix((np.concatenate([v, v]), (np.concatenate([r, c]),
                                               np.concatenate([c, r]))), shape=(n, n))
    return m, W


def interval_diffusion(n, a=-5.0, b=5.0, V=(0.0, 0.0, 0.5)):
    """Uniform grid of ``n`` nodes on ``[a, b]``, reflecting ends."""
    x = np.linspace(a, b, n)
    h = x[1] - x[0]
    Vx = np.polynomial.polynomial.polyval(x, np.asarray(V, float))
    m, W = _chain(x, Vx, h, periodic=False)
    return MarkovTriple(m, W, h=float(h), coords=x)


def circle_diffusion(n, length=2 * math.pi, V=(0.0,)):
    """``n`` equispaced nodes on a circle of the given length."""
    x = np.linspace(0.0, length, n, endpoint=False)
    h = length / n
    theta = 2 * math.pi * x / length
    Vx = sum(c * np.cos(k * theta) for k, c in enumerate(V))
    Vx = np.broadcast_to(np.asarray(Vx, float), x.shape).copy()
    m, W = _chain(x, Vx, h, periodic=True)
    return MarkovTriple(m, W, h=float(h), coords=x, period=float(length))


def two_point():
    """``m = (1, 1)``, ``w = 1``."""
    return MarkovTriple.from_edges(2, [1.0, 1.0], [(0, 1, 1.0)])


def complete_graph(n):
    edges = [(i, j, 1.0) for i in range(n) for j in range(i + 1, n)]
    return MarkovTriple.from_edges(n, np.ones(n), edges)


def random_graph(n, p=0.5, seed=42, weight_range=(0.5, 2.0), mass_range=(0.5, 2.0)):
    """Connected random graph: a random spanning tree plus Bernoulli edges."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    pairs = set()
    for k in range(1, n):
        j = perm[rng.integers(0, k)]
        i = perm[k]
        pairs.add((min(i, j), max(i, j)))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                pairs.add((i, j))
    edges = [(int(i), int(j), float(rng.uniform(*weight_range)))
             for i, j in sorted(pairs)]
    m = rng.uniform(*mass_range, size=n)
    return MarkovTriple.from_edges(n, m, edges)


def build(spec: SpaceSpec) -> MarkovTriple:
    p = spec.params
    k = spec.kind
    if k == "interval_diffusion":
        return interval_diffusion(p["n"], p.get("a", -5.0), p.get("b", 5.0),
                                  p.get("V", (0.0, 0.0, 0.5)))
    if k == "circle_diffusion":
        return circle_diffusion(p["n"], p.get("length", 2 * math.pi), p.get("V", (0.0,)))
    if k == "two_point":
        return two_point()
    if k == "complete_graph":
        return complete_graph(p["n"])
    if k == "random_graph":
        return random_graph(p["n"], p.get("p", 0.5), spec.seed)
    if k == "custom":
        if "triple" in p:
            return MarkovTriple.from_dict(p["triple"])
        return MarkovTriple.load(p["path"])
    return product(build(p["x"]), build(p["y"]))


def product(X: MarkovTriple, Y: MarkovTriple) -> MarkovTriple:
    """Cartesian product; state ``(i, j)`` has index ``i * n_Y + j``."""
    nz = X.n * Y.n
    if nz > MAX_STATES:
        raise InvalidParameterError(
            f"product has {nz} states, above the cap of {MAX_STATES}")
    W = (sp.kron(X.weights, sp.diags(Y.measure)) +
         sp.kron(sp.diags(X.measure), Y.weights))
    m = np.kron(X.measure, Y.measure)
    coords = None
    period = None
    if X.coords is not None and Y.coords is not None:
        cx = X.coords.reshape(X.n, -1)
        cy = Y.coords.reshape(Y.n, -1)
        coords = np.hstack([np.repeat(cx, Y.n, axis=0), np.tile(cy, (X.n, 1))])
        px = X.period if isinstance(X.period, tuple) else (X.period,) * cx.shape[1]
        py = Y.period if isinstance(Y.period, tuple) else (Y.period,) * cy.shape[1]
        period = px + py if any(q is not None for q in px + py) else None
    labels = None
    if X.labels is not None or Y.labels is not None:
        lx = X.labels or [str(i) for i in range(X.n)]
        ly = Y.labels or [str(j) for j in range(Y.n)]
        labels = [f"({a},{b})" for a in lx for b in ly]
    h = X.h if X.h is not None else Y.h
    return MarkovTriple(m, sp.csr_matrix(W), labels=labels, h=h, coords=coords,
                        period=period)


def tensorization_check(X, KX, NX, Y, KY, NY, tol=1e-9, sweep=None) -> CheckReport:
    """BE(min(KX, KY), NX + NY) on the product, given the factor claims.

    The factor claims are verified first and recorded; the product check is
    the reported verdict. ``sweep`` is a list of dimensions for the measured
    curve ``N -> K*(N)`` of the product.
    """
    NX = parse_dimension(NX)
    NY = parse_dimension(NY)
    K = min(float(KX), float(KY))
    fx = be_check(X, KX, NX, tol)
    fy = be_check(Y, KY, NY, tol)
    Z = product(X, Y)
    N = NX + NY
    rz = be_check(Z, K, N, tol)
    K_star_inf, _ = pointwise_be_optimal_K(Z, math.inf)
    if sweep is None:
        sweep = [N, 2 * N, 4 * N, math.inf] if math.isfinite(N) else [math.inf]
    table = [{"N": float(n), "K_star": float(pointwise_be_optimal_K(Z, n)[0])}
             for n in sweep]
    notes = []
    if not fx.passed:
        notes.append(f"factor X claim BE({KX}, {NX}) fails (K* = {KX - fx.worst_residual:.6g})")
    if not fy.passed:
        notes.append(f"factor Y claim BE({KY}, {NY}) fails (K* = {KY - fy.worst_residual:.6g})")
    return CheckReport(
        "tensorization", "tensorization of the curvature-dimension condition",
        rz.worst_residual, tol, worst_location=rz.worst_location,
        detail_table=table,
        params={"K": K, "N": N, "K_star_product": rz.params["K_star"],
                "K_star_product_inf": float(K_star_inf),
                "factor_X_pass": fx.passed, "factor_Y_pass": fy.passed,
                "K_star_X": fx.params["K_star"], "K_star_Y": fy.params["K_star"]},
        notes=notes)


# ---------------------------------------------------------------------------
# refinement study
# ---------------------------------------------------------------------------

STUDY_COLUMNS = ("n", "h", "K_star", "dE_defect", "evi_residual",
                 "contraction_residual", "log_harnack_residual")

_ALL_METRICS = ("dE_defect", "evi_residual", "contraction_residual",
                "log_harnack_residual")


def fitted_order(h, err):
    """Least-squares slope of ``log|err|`` against ``log h``; nan when undefined."""
    h = np.asarray(h, float)
    e = np.abs(np.asarray(err, float))
    ok = (e > 0) & np.isfinite(e) & (h > 0)
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(h[ok]), np.log(e[ok]), 1)[0])


@dataclass
class StudyTable:
    rows: list
    orders: dict
    K_limit: Optional[float] = None
    error: Optional[str] = None

    def column(self, name):
        return np.array([r[name] for r in self.rows], float)

    def to_csv(self):
        from .report import table_to_csv
        return table_to_csv(self.rows, STUDY_COLUMNS)

    def to_dict(self):
        return {"columns": list(STUDY_COLUMNS), "rows": self.rows,
                "orders": self.orders, "K_limit": self.K_limit, "error": self.error}


def _row_metrics(triple, N, cfg, which):
    """Residual columns for one refinement level (lazy imports keep the
    builder module free of solver dependencies)."""
    from . import metric as M
    from . import transport as T
    from .semigroup import decompose

    out = {}
    coords = triple.coords
    d = None
    if coords is not None and any(k in which for k in
                                  ("evi_residual", "contraction_residual",
                                   "log_harnack_residual")):
        d = M.MetricMatrix.from_coords(coords, triple.period)
    if "dE_defect" in which:
        out["dE_defect"] = M.grid_distance_defect(triple, cfg.get("dE_window", 2.0))
    dec = decompose(triple) if d is not None else None
    rng_seed = int(cfg.get("seed", 42))
    K = float(cfg.get("K", 0.85))
    if "evi_residual" in which and d is not None:
        pairs = T.bump_pairs(triple, cfg.get("pairs", 4), seed=rng_seed)
        rep = T.evi_residual_battery(dec, d, pairs, cfg.get("evi_t", (0.1, 0.3)),
                                     K, dt=cfg.get("dt0", 0.025) * (cfg["n0"] / triple.n))
        out["evi_residual"] = max(rep.worst_residual, 0.0)
    if "contraction_residual" in which and d is not None:
        pairs = T.bump_pairs(triple, cfg.get("pairs", 4), seed=rng_seed)
        rep = T.contraction_check(dec, d, pairs, cfg.get("t_grid", (0.1, 0.5)),
                                  cfg.get("K_contraction", 0.9), tol=1e-3)
        out["contraction_residual"] = max(rep.worst_residual, 0.0)
    if "log_harnack_residual" in which and d is not None:
        f = T.bump_pairs(triple, 1, seed=rng_seed)[0][0]
        rep = T.log_harnack_check(dec, d, f, cfg.get("harnack_t", 0.25),
                                  cfg.get("K_harnack", 0.9))
        out["log_harnack_residual"] = max(rep.worst_residual, 0.0)
    return out


def refinement_study(spec_family, n_list, N=math.inf, report_cfg=None) -> StudyTable:
    """Run the curvature and residual diagnostics along a refinement family.

    ``spec_family`` maps ``n`` to a :class:`SpaceSpec`. ``report_cfg`` keys:
    ``metrics`` (subset of the residual columns to compute; default none,
    i.e. only ``K_star``), ``K_limit`` (continuum value), and parameters of
    the individual checks. Missing columns are ``nan``. A builder failure
    stops the study and returns the partial table with ``error`` set.
    """
    cfg = dict(report_cfg or {})
    n_list = [int(n) for n in n_list]
    if len(n_list) < 3:
        raise InvalidParameterError("refinement study needs at least 3 levels")
    if any(b < a for a, b in zip(n_list, n_list[1:])):
        raise InvalidParameterError("n_list must be nondecreasing")
    which = tuple(cfg.get("metrics", ()))
    for w in which:
        if w not in _ALL_METRICS:
            raise InvalidParameterError(f"unknown study metric {w!r}")
    cfg.setdefault("n0", n_list[0])
    def level(n):
        try:
            triple = build(spec_family(n))
            K_star, _ = pointwise_be_optimal_K(triple, N)
            row = {c: math.nan for c in STUDY_COLUMNS}
            row.update(n=n, h=float(triple.h) if triple.h else math.nan,
                       K_star=float(K_star))
            row.update(_row_metrics(triple, N, cfg, which))
            return row, None
        except Exception as exc:  # partial table on failure
            return None, f"n={n}: {type(exc).__name__}: {exc}"

    workers = min(thread_cap(), len(n_list))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(level, n_list))
    else:
        results = []
        for n in n_list:
            results.append(level(n))
            if results[-1][1] is not None:
                break
    rows = []
    error = None
    for row, err in results:
        if err is not None:
            error = err
            break
        rows.append(row)
    K_limit = cfg.get("K_limit")
    orders = {}
    if rows:
        h = [r["h"] for r in rows]
        if K_limit is not None:
            orders["K_star"] = fitted_order(h, [r["K_star"] - K_limit for r in rows])
        for w in which:
            orders[w] = fitted_order(h, [r[w] for r in rows])
    return StudyTable(rows, orders, K_limit, error)

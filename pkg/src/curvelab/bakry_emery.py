"""Semigroup formulations of the Bakry-Emery condition BE(K, N).

On a finite space the functionals ``A, B, B_delta, C`` of a pair ``(f, phi)``
reduce to weighted sums of the pointwise Gamma-calculus applied to
``g = P_{t-s} f`` against ``psi = P_s phi``:

    A = 1/2 sum g^2 psi m          B = sum Gamma(g) psi m
    B_delta = 1/2 sum (L g)^2 psi m    C = sum Gamma_2(g) psi m
"""
import math
from dataclasses import dataclass

import numpy as np

from .core import carre_du_champ, gamma2, generator_apply, nu_of, parse_dimension
from .exceptions import InvalidGridError, InvalidParameterError, NumericalError
from .report import CheckReport
from .semigroup import SpectralDecomposition, heat_apply, heat_matrix_entrywise

_SERIES_CUT = 1e-4


def _series_I(x):
    # (e^x - 1)/x
    return 1.0 + x / 2.0 + x * x / 6.0 + x ** 3 / 24.0


def _series_I2(x):
    # (e^x - x - 1)/x^2
    return 0.5 + x / 6.0 + x * x / 24.0 + x ** 3 / 120.0


def weight_I(K, t):
    """``I_K(t) = (e^{Kt} - 1)/K``; ``I_0(t) = t``."""
    K = float(K)
    t = np.asarray(t, dtype=float)
    x = K * t
    small = np.abs(x) < _SERIES_CUT
    safe = np.where(small, 1.0, x)
    val = np.where(small, t * _series_I(x), np.expm1(safe) / (K if K else 1.0))
    return float(val) if val.ndim == 0 else val


def weight_I2(K, t):
    """``I_{K,2}(t) = (e^{Kt} - Kt - 1)/K^2``; ``I_{0,2}(t) = t^2/2``."""
    K = float(K)
    t = np.asarray(t, dtype=float)
    x = K * t
    small = np.abs(x) < _SERIES_CUT
    safe = np.where(small, 1.0, x)
    val = np.where(small, t * t * _series_I2(x),
                   (np.expm1(safe) - safe) / (K * K if K else 1.0))
    return float(val) if val.ndim == 0 else val


def weight_R(K, t):
    """``R_K(t) = t / I_K(t)``; ``R_0 = 1``."""
    t = np.asarray(t, dtype=float)
    x = float(K) * t
    small = np.abs(x) < _SERIES_CUT
    safe = np.where(small, 1.0, x)
    val = np.where(small, 1.0 / _series_I(x), safe / np.expm1(safe))
    return float(val) if val.ndim == 0 else val


# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InterpolationTriple:
    t: float
    s_grid: np.ndarray
    A: np.ndarray
    B: np.ndarray
    B_delta: np.ndarray
    C: np.ndarray
    f_ref: np.ndarray
    phi_ref: np.ndarray


def _grid(s_grid, t=None, min_points=1, uniform=False):
    s = np.asarray(s_grid, dtype=float).ravel()
    if s.size < min_points:
        raise InvalidGridError(f"grid needs at least {min_points} points")
    if s.size > 1 and np.any(np.diff(s) <= 0):
        raise InvalidGridError("grid must be strictly increasing")
    if t is not None and (s[0] < 0 or s[-1] > t + 1e-15):
        raise InvalidGridError(f"grid must lie in [0, {t}]")
    if uniform and s.size > 2:
        d = np.diff(s)
        if np.ptp(d) > 1e-9 * d.mean():
            raise InvalidGridError("grid must be uniform")
    return s


def interpolation_functions(dec: SpectralDecomposition, f, phi, t, s_grid):
    """Sample ``A, B, B_delta, C`` along ``s_grid`` for fixed ``t``."""
    triple = dec.triple
    f = triple.field(f)
    phi = triple.field(phi)
    t = float(t)
    if not t > 0:
        raise InvalidParameterError("t must be positive")
    s = _grid(s_grid, t)
    m = triple.measure
    A = np.empty(s.size)
    B = np.empty(s.size)
    Bd = np.empty(s.size)
    C = np.empty(s.size)
    for k, sk in enumerate(s):
        g = heat_apply(dec, max(t - sk, 0.0), f)
        psi = heat_apply(dec, sk, phi)
        Lg = generator_apply(triple, g)
        A[k] = 0.5 * np.sum(g * g * psi * m)
        B[k] = np.sum(carre_du_champ(triple, g) * psi * m)
        Bd[k] = 0.5 * np.sum(Lg * Lg * psi * m)
        C[k] = np.sum(gamma2(triple, g) * psi * m)
    return InterpolationTriple(t, s, A, B, Bd, C, f, phi)


def check_form_ii(dec, K, N, f, phi, t, s_grid, tol=1e-9) -> CheckReport:
    """``C >= K B + 2 nu B_delta`` along the grid."""
    nu = nu_of(N)
    it = interpolation_functions(dec, f, phi, t, s_grid)
    res = K * it.B + 2.0 * nu * it.B_delta - it.C
    scale = max(1.0, float(np.abs(it.C).max()))
    k = int(np.argmax(res))
    return CheckReport("be_form_ii", "integrated Gamma_2 inequality",
                       float(res[k]) / scale, tol, worst_location=float(it.s_grid[k]),
                       params={"K": float(K), "N": parse_dimension(N), "t": float(t)})


def _central_differences(s, y):
    h = s[1] - s[0]
    d1 = (y[2:] - y[:-2]) / (2.0 * h)
    d2 = (y[2:] - 2.0 * y[1:-1] + y[:-2]) / (h * h)
    return d1, d2


def check_form_iii(dec, K, N, f, phi, t, s_grid, tol=1e-8) -> CheckReport:
    """``A'' >= 2K A' + 4 nu B_delta`` with central differences of ``A``.

    The report also carries the residual on the grid with every other point
    removed; ``refinement_ratio`` compares the finite-difference errors
    ``|A'_h - B|`` on both grids (about 4 for a second-order stencil).
    """
    nu = nu_of(N)
    s = _grid(s_grid, t, min_points=5, uniform=True)
    it = interpolation_functions(dec, f, phi, t, s)
    d1, d2 = _central_differences(s, it.A)
    res = 2.0 * K * d1 + 4.0 * nu * it.B_delta[1:-1] - d2
    scale = max(1.0, float(np.abs(d2).max()))
    k = int(np.argmax(res))
    notes = []
    params = {"K": float(K), "N": parse_dimension(N), "t": float(t)}
    if s.size >= 9:
        sc = s[::2]
        d1c, _ = _central_differences(sc, it.A[::2])
        err_f = np.abs(d1[1::2] - it.B[2:-2:2]).max() if s.size > 4 else 0.0
        err_c = np.abs(d1c - it.B[2:-2:2]).max()
        if err_f > 0:
            params["refinement_ratio"] = float(err_c / err_f)
    return CheckReport("be_form_iii", "distributional convexity inequality for A",
                       float(res[k]) / scale, tol,
                       worst_location=float(s[1:-1][k]), params=params,
                       notes=notes)


def _pointwise_pieces(dec, f, t):
    triple = dec.triple
    f = triple.field(f)
    H = heat_matrix_entrywise(triple, t)
    Ptf = H @ f
    LPtf = generator_apply(triple, Ptf)
    # 1/2 P_t f^2 - 1/2 (P_t f)^2 as a centred sum: no cancellation at small t
    var = 0.5 * np.einsum("xy,xy->x", H, (f[None, :] - Ptf[:, None]) ** 2)
    G_Ptf = carre_du_champ(triple, Ptf)
    PtG = H @ carre_du_champ(triple, f)
    return Ptf, LPtf, var, G_Ptf, PtG


# states where both sides fall below this fraction of the field maximum are
# compared on the absolute scale of that maximum
_REL_FLOOR = 1e-12


def form_iv_v_vi_residual(dec, K, N, f, t, variant):
    """Pointwise residual field (positive = violated) of (iv), (v) or (vi).

    Each state is scaled by the larger of its two sides (floored at
    ``1e-12`` times the global maximum) and by the leading-order time weight,
    ``2t`` for (vi) and ``t`` for (iv)/(v): both sides agree to that order
    as ``t -> 0`` and the first discrepancy is ``(K - K_eff)`` times it, so
    the residual reads in curvature units and does not vanish with ``t``.
    """
    nu = nu_of(N)
    t = float(t)
    if not t > 0:
        raise InvalidParameterError("t must be positive")
    _, LPtf, var, G_Ptf, PtG = _pointwise_pieces(dec, f, t)
    if variant == "iv":
        lhs = weight_I(2 * K, t) * G_Ptf + 2 * nu * weight_I2(2 * K, t) * LPtf ** 2
        rhs = var
    elif variant == "v":
        # the P_t Gamma(f) weight is I_{-2K}(t): integrating the gradient
        # bound over [0, t] against P_s gives exactly this coefficient
        lhs = var + 2 * nu * weight_I2(-2 * K, t) * LPtf ** 2
        rhs = weight_I(-2 * K, t) * PtG
    elif variant == "vi":
        lhs = G_Ptf + 2 * nu * weight_I(-2 * K, t) * LPtf ** 2
        rhs = math.exp(-2 * K * t) * PtG
    else:
        raise InvalidParameterError(f"unknown variant {variant!r}")
    size = np.maximum(np.abs(lhs), np.abs(rhs))
    scale = np.maximum(size, _REL_FLOOR * max(float(size.max()), 1e-300))
    tau = 2.0 * t if variant == "vi" else t
    return (lhs - rhs) / (scale * tau)


_VARIANT_ANCHORS = {
    "iv": "reverse Poincare inequality",
    "v": "Poincare inequality",
    "vi": "pointwise gradient bound",
}


def check_form_iv_v_vi(dec, K, N, f, t, variant, tol=1e-9) -> CheckReport:
    """Pointwise semigroup inequalities with a relative residual."""
    res = form_iv_v_vi_residual(dec, K, N, f, t, variant)
    k = int(np.argmax(res))
    return CheckReport(f"be_form_{variant}", _VARIANT_ANCHORS[variant],
                       float(res[k]), tol, worst_location=k,
                       params={"K": float(K), "N": parse_dimension(N), "t": float(t)})


def estimate_K_from_gradient_bound(dec, f_battery, t_grid, floor=1e-14,
                                   return_report=False):
    """Largest ``K`` compatible with ``Gamma(P_t f) <= e^{-2Kt} P_t Gamma(f)``.

    ``K_hat = inf -log(Gamma(P_t f)(x) / P_t Gamma(f)(x)) / (2t)`` over the
    battery, times and states. Points with ``P_t Gamma(f)(x)`` below
    ``floor`` (relative to the field maximum) are excluded and counted.
    """
    triple = dec.triple
    t_grid = _grid(t_grid)
    if t_grid[0] <= 0:
        raise InvalidGridError("times must be positive")
    best = math.inf
    where = None
    excluded = 0
    for fi, f in enumerate(f_battery):
        f = triple.field(f)
        Gf = carre_du_champ(triple, f)
        if not np.any(Gf > 0):
            continue
        for t in t_grid:
            Ptf = heat_apply(dec, t, f)
            num = carre_du_champ(triple, Ptf)
            den = heat_apply(dec, t, Gf)
            ok = den > floor * max(den.max(), 1e-300)
            ok &= num > 0
            excluded += int(np.count_nonzero(~ok))
            if not ok.any():
                continue
            est = -np.log(num[ok] / den[ok]) / (2.0 * t)
            k = int(np.argmin(est))
            if est[k] < best:
                best = float(est[k])
                where = (fi, float(t), int(np.flatnonzero(ok)[k]))
    if where is None:
        raise NumericalError("battery contains only constant fields; "
                             "estimate undefined")
    if return_report:
        return best, {"attained": where, "excluded": excluded}
    return best


def check_ode_comparison(a_samples, g_samples, K, nu, s_grid, tol=1e-8) -> CheckReport:
    """Grid version of ``e^{-2K(s2-s1)} a'(s2) >= a'(s1) + nu int e^{-2K(s-s1)} g``.

    ``a'`` by second-order differences, the integral by the trapezoidal rule,
    checked for every pair ``s1 < s2`` of grid points.
    """
    s = _grid(s_grid, min_points=5)
    a = np.asarray(a_samples, dtype=float)
    g = np.asarray(g_samples, dtype=float)
    if a.shape != s.shape or g.shape != s.shape:
        raise InvalidGridError("samples must match the grid")
    da = np.gradient(a, s, edge_order=2)
    n = s.size
    worst = -math.inf
    loc = None
    scale = max(1.0, float(np.abs(da).max()))
    for i in range(n - 1):
        w = np.exp(-2.0 * K * (s[i:] - s[i])) * g[i:]
        integ = np.concatenate(([0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(s[i:]))))
        lhs = np.exp(-2.0 * K * (s[i + 1:] - s[i])) * da[i + 1:]
        rhs = da[i] + nu * integ[1:]
        r = (rhs - lhs) / scale
        j = int(np.argmax(r))
        if r[j] > worst:
            worst = float(r[j])
            loc = (float(s[i]), float(s[i + 1 + j]))
    return CheckReport("ode_comparison", "ODE comparison lemma", worst, tol,
                       worst_location=loc, params={"K": float(K), "nu": float(nu)})


def equivalence_battery(dec, K, N, f, phi, t, s_grid, t_point=None, tol=1e-8):
    """All semigroup forms (ii)-(vi) plus the ODE comparison for one input."""
    t_point = t if t_point is None else t_point
    reports = [
        check_form_ii(dec, K, N, f, phi, t, s_grid, tol),
        check_form_iii(dec, K, N, f, phi, t, s_grid, tol),
    ]
    for v in ("iv", "v", "vi"):
        reports.append(check_form_iv_v_vi(dec, K, N, f, t_point, v, tol))
    it = interpolation_functions(dec, f, phi, t, s_grid)
    reports.append(check_ode_comparison(it.A, 4.0 * it.B_delta, K, nu_of(N),
                                        it.s_grid, tol))
    return reports


def interpolation_richardson(dec, f, phi, t, s0, h):
    """Central-difference errors of ``A' = B`` and ``B' = 2C`` at ``s0``.

    Errors are measured with steps ``h`` and ``h/2``; a second-order stencil
    gives coarse/fine ratios near 4. Returns
    ``{"A": (err_h, err_h2, ratio), "B": (err_h, err_h2, ratio)}``.
    """
    if not (0 < h and 0 <= s0 - h and s0 + h <= t):
        raise InvalidGridError("stencil must stay inside [0, t]")
    out = {}
    errs = {"A": [], "B": []}
    for step in (h, 0.5 * h):
        it = interpolation_functions(dec, f, phi, t, [s0 - step, s0, s0 + step])
        errs["A"].append(abs((it.A[2] - it.A[0]) / (2 * step) - it.B[1]))
        errs["B"].append(abs((it.B[2] - it.B[0]) / (2 * step) - 2.0 * it.C[1]))
    for key, (ec, ef) in errs.items():
        out[key] = (float(ec), float(ef), float(ec / ef) if ef > 0 else math.inf)
    return out

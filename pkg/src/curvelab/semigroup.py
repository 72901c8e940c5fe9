"""Heat semigroup, heat kernel and dual action on measures.

Everything is evaluated from one dense spectral decomposition of the
generator, symmetrised by the congruence ``D^{1/2} L D^{-1/2}`` with
``D = diag(m)``, so time evaluations carry no ODE-integration error.
"""
import math
import warnings
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy import integrate

from .core import MAX_STATES, MarkovTriple
from .exceptions import (InvalidKernelError, InvalidMeasureError,
                         InvalidParameterError, NumericalError)


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """``L = sum_k lambda_k e_k <e_k, . >_m`` with ``e_k`` m-orthonormal."""

    eigenvalues: np.ndarray
    eigenbasis: np.ndarray
    triple: MarkovTriple

    @property
    def n(self):
        return self.triple.n

    @property
    def measure(self):
        return self.triple.measure

    def coefficients(self, f):
        """``<f, e_k>_m`` for every mode (``f`` may be ``(n,)`` or ``(n, k)``)."""
        f = np.asarray(f, dtype=float)
        m = self.measure
        if f.ndim == 1:
            return self.eigenbasis.T @ (m * f)
        return self.eigenbasis.T @ (m[:, None] * f)

    def synthesize(self, c):
        return self.eigenbasis @ c

    def apply_multiplier(self, mult, f):
        """``sum_k mult_k <f, e_k> e_k``."""
        c = self.coefficients(f)
        if c.ndim == 1:
            return self.eigenbasis @ (mult * c)
        return self.eigenbasis @ (mult[:, None] * c)

    def generator_matrix(self):
        E = self.eigenbasis
        return (E * self.eigenvalues) @ E.T * self.measure[None, :]

    def heat_matrix(self, t):
        """Matrix of ``P_t`` acting on column fields."""
        E = self.eigenbasis
        return (E * np.exp(self.eigenvalues * t)) @ E.T * self.measure[None, :]

    def spectral_gap(self):
        lam = np.sort(self.eigenvalues)[::-1]
        return float(-lam[1]) if lam.size > 1 else math.inf


@dataclass(frozen=True, eq=False)
class HeatKernel:
    """``kernel[x, y] = u_t[x](y)``, the density of ``H_t delta_x``."""

    t: float
    kernel: np.ndarray
    note: str = ""


def decompose(triple: MarkovTriple) -> SpectralDecomposition:
    """Dense spectral decomposition of the generator."""
    n = triple.n
    if n > MAX_STATES:
        raise InvalidParameterError(
            f"{n} states exceeds the dense cap of {MAX_STATES}; coarsen the "
            "grid or split into components")
    cache = triple._cache
    if "spectral" in cache:
        return cache["spectral"]
    s = np.sqrt(triple.measure)
    L = triple.generator.toarray()
    S = s[:, None] * L / s[None, :]
    S = 0.5 * (S + S.T)
    try:
        lam, U = np.linalg.eigh(S)
    except np.linalg.LinAlgError as exc:
        cond = np.linalg.cond(S)
        raise NumericalError(f"eigensolver failed (cond ~ {cond:.3g}): {exc}") from exc
    scale = max(1.0, float(np.abs(lam).max(initial=0.0)))
    lam = np.where(lam > 0, np.where(lam < 1e-10 * scale, 0.0, lam), lam)
    if lam.max() > 0:
        raise NumericalError("generator has a positive eigenvalue "
                             f"{lam.max():.3g}; weights not symmetric?")
    lam = np.where(np.abs(lam) < 1e-12 * scale, 0.0, lam)
    dec = SpectralDecomposition(lam, U / s[:, None], triple)
    cache["spectral"] = dec
    return dec


def _check_t(t):
    t = float(t)
    if not t >= 0:
        raise InvalidParameterError(f"time must be >= 0, got {t}")
    return t


def heat_apply(dec: SpectralDecomposition, t, f) -> np.ndarray:
    """``P_t f``. Works on a single field or on columns of a matrix."""
    t = _check_t(t)
    f = np.asarray(f, dtype=float)
    if t == 0.0:
        return f.copy()
    return dec.apply_multiplier(np.exp(dec.eigenvalues * t), f)


def heat_kernel(dec: SpectralDecomposition, t) -> HeatKernel:
    """Symmetric kernel ``u_t[x](y) = sum_k e^{lambda_k t} e_k(x) e_k(y)``."""
    t = _check_t(t)
    if t == 0.0:
        warnings.warn("t = 0 heat kernel is singular on the diagonal; "
                      "returning delta_xy / m(y)", RuntimeWarning, stacklevel=2)
        return HeatKernel(0.0, np.diag(1.0 / dec.measure),
                          note="identity kernel, diagonal singularity")
    E = dec.eigenbasis
    K = (E * np.exp(dec.eigenvalues * t)) @ E.T
    K = 0.5 * (K + K.T)
    return HeatKernel(t, K)


def heat_matrix_entrywise(triple: MarkovTriple, t) -> np.ndarray:
    """``P_t`` as a dense matrix with entrywise relative accuracy.

    Uniformization: ``L + cI`` is nonnegative for ``c = max_x deg(x)/m(x)``,
    so the scaled Taylor series and the repeated squaring of
    ``e^{-tc} exp(t(L + cI))`` add only nonnegative terms. Small kernel
    entries keep full relative precision, which spectral synthesis cannot
    offer at short times.
    """
    t = _check_t(t)
    n = triple.n
    if n > MAX_STATES:
        raise InvalidParameterError(f"{n} states exceeds the dense cap of {MAX_STATES}")
    L = triple.generator.toarray()
    c = float(np.max(-np.diag(L), initial=0.0))
    if t == 0.0 or c == 0.0:
        return np.eye(n)
    M = L + c * np.eye(n)
    s = max(0, int(math.ceil(math.log2(t * c / 0.5))) if t * c > 0.5 else 0)
    tau = t / 2 ** s
    A = tau * M
    term = np.eye(n)
    out = np.eye(n)
    for k in range(1, 60):
        term = term @ A / k
        out += term
        if term.max() <= 1e-18 * out.max():
            break
    out *= math.exp(-tau * c)
    for _ in range(s):
        out = out @ out
    return out


def as_density(triple: MarkovTriple, mu, tol=1e-10) -> np.ndarray:
    """Coerce a probability (density array or ``{state: mass}``) to a density.

    Densities are taken against the reference measure: ``mu = f m``.
    """
    m = triple.measure
    if isinstance(mu, dict):
        f = np.zeros(triple.n)
        for x, w in mu.items():
            f[int(x)] += float(w) / m[int(x)]
    else:
        f = np.asarray(mu, dtype=float)
        if f.shape != (triple.n,):
            raise InvalidMeasureError(f"density shape {f.shape} for {triple.n} states")
    if np.any(f < -tol):
        raise InvalidMeasureError("negative density")
    mass = float(np.dot(f, m))
    if abs(mass - 1.0) > tol:
        raise InvalidMeasureError(f"total mass {mass!r} differs from 1")
    return np.maximum(f, 0.0)


def atom(triple: MarkovTriple, x) -> np.ndarray:
    """Density of the Dirac mass at state ``x``."""
    f = np.zeros(triple.n)
    f[int(x)] = 1.0 / triple.measure[int(x)]
    return f


def dual_apply(dec: SpectralDecomposition, t, mu) -> np.ndarray:
    """Density of ``H_t mu``; on finite spaces ``H_t (f m) = (P_t f) m``."""
    f = as_density(dec.triple, mu)
    out = heat_apply(dec, t, f)
    # the semigroup is positivity preserving; clip eigensolver round-off
    out = np.maximum(out, 0.0)
    return out / float(np.dot(out, dec.measure))


# ---------------------------------------------------------------------------
# mollifier
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MollifierKernel:
    """Nonnegative kernel with compact support ``[a, b]`` inside ``(0, inf)``."""

    density: Callable[[np.ndarray], np.ndarray]
    support: Tuple[float, float]
    name: str = "custom"

    def mass(self):
        a, b = self.support
        return integrate.quad(self.density, a, b, epsabs=1e-13, epsrel=1e-13)[0]

    def laplace(self, s):
        """``kappa_hat(s) = int kappa(r) e^{s r} dr`` by adaptive quadrature."""
        a, b = self.support
        s = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.empty_like(s)
        for k, sk in enumerate(s):
            # e^{s r} factored at r = a keeps the integrand O(1) for s << 0
            val = integrate.quad(lambda r: self.density(r) * np.exp(sk * (r - a)),
                                 a, b, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
            out[k] = val * np.exp(sk * a)
        return out


def _bump(r):
    r = np.asarray(r, dtype=float)
    inside = (r > 1.0) & (r < 2.0)
    return np.where(inside, 30.0 * (r - 1.0) ** 2 * (2.0 - r) ** 2, 0.0)


DEFAULT_KERNEL = MollifierKernel(_bump, (1.0, 2.0), name="bump")


def mollify(dec: SpectralDecomposition, eps, f, kernel_spec=None) -> np.ndarray:
    """``h^eps f = eps^-1 int_0^inf P_r f kappa(r / eps) dr``.

    Evaluated spectrally as ``sum_k kappa_hat(eps lambda_k) <f, e_k> e_k``.
    """
    eps = float(eps)
    if not eps > 0:
        raise InvalidParameterError("eps must be positive")
    kern = DEFAULT_KERNEL if kernel_spec is None else kernel_spec
    a, b = kern.support
    if not (0 < a < b < math.inf):
        raise InvalidKernelError("kernel support must lie in (0, inf)")
    mass = kern.mass()
    if abs(mass - 1.0) > 1e-8:
        raise InvalidKernelError(f"kernel not normalized (mass {mass:.12g})")
    lam = dec.eigenvalues
    uniq, inv = np.unique(np.round(lam * eps, 12), return_inverse=True)
    mult = kern.laplace(uniq)[inv]
    return dec.apply_multiplier(mult, np.asarray(f, dtype=float))

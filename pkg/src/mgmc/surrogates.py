"""First-order surrogates used to convexify each CCP subproblem.

Every function takes values of the previous iterate (the expansion point) and
returns the coefficients of an affine (or affine-plus-concave) minorant of a
convex term.  All functions are vectorized over users/groups; the returned
objects can also be evaluated numerically, which the tests use to check
tangency and the minorant property.

Complex precoders enter through ``h_i^H w_l``.  A linear functional of the
precoders is stored as complex coefficients ``g`` acting as
``Re{conj(g) * (h_i^H w_l)}``, i.e. the real inner product in the real
embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import xlogy

__all__ = [
    "ENTROPY_CLAMP",
    "entropy",
    "entropy_grad",
    "f_exact",
    "J_exact",
    "I_exact",
    "EntropyTangent",
    "FTangent",
    "QuadTangent",
    "HWTangent",
    "taylor_entropy",
    "taylor_f",
    "taylor_J",
    "taylor_G",
    "taylor_K",
    "taylor_p2",
    "taylor_I",
    "taylor_gamma_sq",
    "grad_J",
    "grad_I",
]

ENTROPY_CLAMP = 1e-6


# ---------------------------------------------------------------------------
# exact functions
# ---------------------------------------------------------------------------

def entropy(x):
    """Binary-promoting penalty ``x log x + (1 - x) log(1 - x)`` (0 at 0 and 1)."""
    x = np.asarray(x, dtype=float)
    return xlogy(x, x) + xlogy(1.0 - x, 1.0 - x)


def entropy_grad(x0):
    xc = np.clip(np.asarray(x0, dtype=float), ENTROPY_CLAMP, 1.0 - ENTROPY_CLAMP)
    return np.log(xc) - np.log1p(-xc)


def f_exact(eta, theta, t, weight=1.0):
    """``weight * eta * theta / t`` written as the DC split used by the optimizer."""
    eta, theta = np.asarray(eta, dtype=float), np.asarray(theta, dtype=float)
    return weight * ((eta + theta) ** 2 - eta ** 2 - theta ** 2) / (2.0 * t)


def _received(H, W):
    c = np.asarray(H) @ np.asarray(W)
    return c, np.sum(np.abs(c) ** 2, axis=1)


def J_exact(H, W, alpha, sigma2):
    """``(sum_l |h_i^H w_l|^2 + sigma2) / alpha_ij`` for all pairs (``N x G``)."""
    _, total = _received(H, W)
    return (total + sigma2)[:, None] / np.asarray(alpha, dtype=float)


def I_exact(H, W, eta, thr, sigma2):
    """``(sum_l |h_i^H w_l|^2 + sigma2) / (1 + eta_ij thr_j)`` for all pairs."""
    _, total = _received(H, W)
    return (total + sigma2)[:, None] / (1.0 + np.asarray(eta, dtype=float) * np.asarray(thr, dtype=float))


# ---------------------------------------------------------------------------
# tangent containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class EntropyTangent:
    """``slope * x`` plus the constant dropped from the objective."""

    slope: np.ndarray
    dropped: np.ndarray

    def __call__(self, x, full: bool = True):
        v = self.slope * np.asarray(x, dtype=float)
        return v + self.dropped if full else v


@dataclass(frozen=True)
class FTangent:
    """Surrogate of ``f``: ``coef_u (eta + theta) + coef_t t - weight (eta^2 + theta^2) / (2t)``."""

    coef_u: np.ndarray
    coef_t: np.ndarray
    weight: np.ndarray

    def __call__(self, eta, theta, t):
        eta, theta = np.asarray(eta, dtype=float), np.asarray(theta, dtype=float)
        return (self.coef_u * (eta + theta) + self.coef_t * t
                - self.weight * (eta ** 2 + theta ** 2) / (2.0 * t))


@dataclass(frozen=True)
class QuadTangent:
    """Affine form ``const + a * u + b * v`` in two real variables."""

    const: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __call__(self, u, v):
        return self.const + self.a * u + self.b * v


@dataclass(frozen=True)
class HWTangent:
    """Affine form in the received amplitudes and one scalar per pair.

    ``value(i, j) = const_ij + sum_l Re{conj(hw_coef[i, j, l]) * (h_i^H w_l)}
    + scalar_coef_ij * s_ij`` where ``const`` absorbs the expansion point.
    """

    const: np.ndarray       # N x G
    hw_coef: np.ndarray     # N x G x G complex
    scalar_coef: np.ndarray  # N x G
    value0: np.ndarray      # N x G, function value at the expansion point

    def __call__(self, H, W, s):
        c = np.asarray(H) @ np.asarray(W)
        lin = np.real(np.einsum("ijl,il->ij", np.conj(self.hw_coef), c))
        return self.const + lin + self.scalar_coef * np.asarray(s, dtype=float)


# ---------------------------------------------------------------------------
# surrogates
# ---------------------------------------------------------------------------

def taylor_entropy(x0) -> EntropyTangent:
    """Linearization of the entropy penalty at ``x0`` (gradient clamped away from 0/1).

    The optimizer keeps only ``slope * x``; ``dropped = P(x0) - slope * x0``
    makes the full form tangent at ``x0``.
    """
    x0 = np.asarray(x0, dtype=float)
    g = entropy_grad(x0)
    return EntropyTangent(g, entropy(x0) - g * x0)


def taylor_f(eta0, theta0, t0, weight=1.0) -> FTangent:
    """Minorant of ``weight * eta * theta / t`` from the tangent of ``(eta + theta)^2 / (2t)``."""
    u0 = np.asarray(eta0, dtype=float) + np.asarray(theta0, dtype=float)
    r = u0 / t0
    weight = np.asarray(weight, dtype=float)
    return FTangent(weight * r, -0.5 * weight * r ** 2, weight * np.ones_like(r))


def taylor_G(eta0, theta0) -> QuadTangent:
    """Tangent of ``eta^2 + theta^2``."""
    eta0, theta0 = np.asarray(eta0, dtype=float), np.asarray(theta0, dtype=float)
    return QuadTangent(-eta0 ** 2 - theta0 ** 2, 2.0 * eta0, 2.0 * theta0)


def taylor_K(delta0, theta0) -> QuadTangent:
    """Tangent of ``(delta + theta)^2``."""
    s0 = np.asarray(delta0, dtype=float) + np.asarray(theta0, dtype=float)
    return QuadTangent(-s0 ** 2, 2.0 * s0, 2.0 * s0)


def taylor_p2(zeta0, spec) -> QuadTangent:
    """Tangent of the concave-side power term ``p2`` (returned as ``const + a * zeta``)."""
    zeta0 = np.asarray(zeta0, dtype=float)
    g = spec.dp2(zeta0)
    return QuadTangent(spec.p2(zeta0) - g * zeta0, g, np.zeros_like(g))


def taylor_gamma_sq(gamma0: float, t0: float) -> QuadTangent:
    """Tangent of ``Gamma^2 / t`` as ``a * Gamma + b * t``."""
    r = gamma0 / t0
    return QuadTangent(np.asarray(0.0), np.asarray(2.0 * r), np.asarray(-r * r))


def taylor_J(H, W0, alpha0, sigma2) -> HWTangent:
    """Linearization of ``J_ij(W, alpha) = (sum_l |h_i^H w_l|^2 + sigma2) / alpha_ij``."""
    c, total = _received(H, W0)
    alpha0 = np.asarray(alpha0, dtype=float)
    num = (total + sigma2)[:, None]
    value0 = num / alpha0
    hw_coef = 2.0 * c[:, None, :] / alpha0[:, :, None]
    scalar = -num / alpha0 ** 2
    # const = value0 - Re<g, c> - scalar * alpha0, and Re<2c/alpha0, c> = 2 total / alpha0
    const = value0 - 2.0 * total[:, None] / alpha0 - scalar * alpha0
    return HWTangent(const, hw_coef, scalar, value0)


def taylor_I(H, W0, eta0, thr, sigma2) -> HWTangent:
    """Linearization of ``(sum_l |h_i^H w_l|^2 + sigma2) / (1 + eta_ij thr_j)``.

    ``thr`` is the SINR threshold of each group.
    """
    c, total = _received(H, W0)
    thr = np.broadcast_to(np.asarray(thr, dtype=float), np.shape(eta0))
    d0 = 1.0 + np.asarray(eta0, dtype=float) * thr
    num = (total + sigma2)[:, None]
    value0 = num / d0
    hw_coef = 2.0 * c[:, None, :] / d0[:, :, None]
    scalar = -thr * num / d0 ** 2
    const = value0 - 2.0 * total[:, None] / d0 - scalar * np.asarray(eta0, dtype=float)
    return HWTangent(const, hw_coef, scalar, value0)


def grad_J(H, W0, alpha0: float, sigma2: float, i: int) -> tuple[np.ndarray, float]:
    """Gradient of ``J_ij`` for user ``i``: (``M x G`` complex block, d/dalpha).

    The precoder block is ``2 h_i h_i^H w_l / alpha`` for each column ``l``; its
    real and imaginary parts are the partial derivatives with respect to the
    real and imaginary parts of ``w_l``.
    """
    H = np.asarray(H)
    c = H[i] @ W0
    h = np.conj(H[i])
    gW = 2.0 * np.outer(h, c) / alpha0
    ga = -(np.sum(np.abs(c) ** 2) + sigma2) / alpha0 ** 2
    return gW, float(ga)


def grad_I(H, W0, eta0: float, thr: float, sigma2: float, i: int) -> tuple[np.ndarray, float]:
    """Gradient of the SINR-admission ratio for user ``i`` (precoder block, d/deta)."""
    H = np.asarray(H)
    c = H[i] @ W0
    h = np.conj(H[i])
    d0 = 1.0 + eta0 * thr
    gW = 2.0 * np.outer(h, c) / d0
    ge = -thr * (np.sum(np.abs(c) ** 2) + sigma2) / d0 ** 2
    return gW, float(ge)

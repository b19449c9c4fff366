"""Closed-form transition densities for skew Brownian motion and skew diffusions.

All densities are the literal four-branch formulas; boundary rows follow the
printed inequality conventions (the cross-interface branches own x = 0 and
y = 0), which only matters on measure-zero sets but keeps evaluation
deterministic.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad
from scipy.special import ndtr

from .media import InterfaceMedium, alpha_of_lambda, scale_map_inverse


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance."""

    def __init__(self, message: str, achieved: float):
        super().__init__(message)
        self.achieved = achieved


def _check_t(t: float) -> float:
    t = float(t)
    if not (t > 0.0 and np.isfinite(t)):
        raise ValueError(f"t must be positive and finite, got {t}")
    return t


def physical_density(medium: InterfaceMedium, t: float, x, y):
    """Fundamental solution of the conservative-interface problem.

    Ignores ``medium.lam``: this is the density of the flux-continuous
    (physical) skew diffusion with the medium's diffusivities.
    """
    t = _check_t(t)
    dp, dm = medium.d_plus, medium.d_minus
    rp, rm = np.sqrt(dp), np.sqrt(dm)
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    skew = (rp - rm) / (rp + rm)

    def gauss(v, d):
        return np.exp(-(v * v) / (2.0 * d * t)) / np.sqrt(2.0 * np.pi * d * t)

    same_plus = gauss(y - x, dp) + skew * gauss(y + x, dp)
    same_minus = gauss(y - x, dm) - skew * gauss(y + x, dm)
    cross_amp = 2.0 / ((rp + rm) * np.sqrt(2.0 * np.pi * t))
    cross_up = cross_amp * np.exp(-((y * rm - x * rp) ** 2) / (2.0 * dm * dp * t))
    cross_dn = cross_amp * np.exp(-((y * rp - x * rm) ** 2) / (2.0 * dm * dp * t))

    out = np.select(
        [(x > 0) & (y > 0), (x < 0) & (y < 0), (x <= 0) & (y >= 0)],
        [same_plus, same_minus, cross_up],
        default=cross_dn,
    )
    return out if out.ndim else float(out)


def skew_bm_density(alpha: float, t: float, x, y):
    """Walsh transition density of skew Brownian motion with parameter alpha."""
    t = _check_t(t)
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))

    def gauss(v):
        return np.exp(-(v * v) / (2.0 * t)) / np.sqrt(2.0 * np.pi * t)

    out = np.select(
        [(x > 0) & (y > 0), (x < 0) & (y < 0), (x <= 0) & (y > 0)],
        [
            gauss(y - x) + (2.0 * alpha - 1.0) * gauss(y + x),
            gauss(y - x) - (2.0 * alpha - 1.0) * gauss(y + x),
            2.0 * alpha * gauss(y - x),
        ],
        default=2.0 * (1.0 - alpha) * gauss(y - x),
    )
    return out if out.ndim else float(out)


def skew_bm_cdf(alpha: float, t: float, x, y):
    """P(B_alpha(t) <= y | B_alpha(0) = x), integrated from the Walsh density."""
    t = _check_t(t)
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    x, y = np.broadcast_arrays(np.asarray(x, float), np.asarray(y, float))
    s = np.sqrt(t)
    xa = np.abs(x)
    # canonical frame x >= 0; mirror afterwards
    a = np.where(x < 0, 1.0 - alpha, alpha)
    yc = np.where(x < 0, -y, y)
    below = 2.0 * (1.0 - a) * ndtr((np.minimum(yc, 0.0) - xa) / s)
    above = (
        ndtr((yc - xa) / s)
        - ndtr(-xa / s)
        + (2.0 * a - 1.0) * (ndtr((yc + xa) / s) - ndtr(xa / s))
    )
    cdf_canon = 2.0 * (1.0 - a) * ndtr(-xa / s) + np.where(yc > 0, above, 0.0)
    cdf_canon = np.where(yc <= 0, below, cdf_canon)
    # mirror: P_x(Y <= y) = 1 - P_{-x}^{1-alpha}(Y <= -y) for continuous laws
    out = np.where(x < 0, 1.0 - cdf_canon, cdf_canon)
    return out if out.ndim else float(out)


def skew_diffusion_density(medium: InterfaceMedium, t: float, x, y):
    """Density of the general-lam skew diffusion via the sqrt(D) change of variables."""
    t = _check_t(t)
    alpha = alpha_of_lambda(medium)
    bx = scale_map_inverse(medium, x)
    by = scale_map_inverse(medium, y)
    jac = np.sqrt(medium.diffusivity(y))
    out = skew_bm_density(alpha, t, bx, by) / jac
    return out if np.ndim(out) else float(out)


def skew_diffusion_cdf(medium: InterfaceMedium, t: float, x, y):
    """P(X(t) <= y | X(0) = x) for the general-lam skew diffusion."""
    alpha = alpha_of_lambda(medium)
    return skew_bm_cdf(alpha, t, scale_map_inverse(medium, x), scale_map_inverse(medium, y))


def half_line_mass(
    medium: InterfaceMedium,
    t: float,
    x: float,
    side: str = "plus",
    tol: float = 1e-10,
) -> float:
    """P(X(t) in the chosen half-line | X(0) = x) by adaptive quadrature.

    The plus side is (0, inf), the minus side (-inf, 0]; the integrand is the
    medium's lam-dependent density, so a conservative medium reproduces the
    sqrt(D) mass split from the origin.
    """
    t = _check_t(t)
    if side not in ("plus", "minus"):
        raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")
    width = 12.0 * np.sqrt(max(medium.d_plus, medium.d_minus) * t)
    if side == "plus":
        lo, hi = 0.0, max(abs(x), 0.0) + width
    else:
        lo, hi = -max(abs(x), 0.0) - width, 0.0
    pts = [x] if lo < x < hi else []
    val, err = quad(
        lambda yy: skew_diffusion_density(medium, t, x, yy),
        lo,
        hi,
        points=pts,
        limit=200,
        epsabs=tol / 10.0,
        epsrel=0.0,
    )
    if err > tol:
        raise QuadratureError(
            f"half-line mass quadrature achieved abs error {err:.3e} > tol {tol:.3e}",
            achieved=err,
        )
    return float(val)

"""GEV distribution functions, the four-parameter link map, and site-level priors.

Everything here is pure and vectorized: scalar or ndarray inputs broadcast, and
densities are computed in log space throughout.  The natural parameter space is
(mu, sigma, xi, delta) with a multiplicative linear trend in the location,

    mu_t = mu * (1 + delta * (t - t0)),

and the link space is (psi, tau, phi, gamma) = (log mu, log(sigma/mu),
shape_forward(xi), trend_forward(delta)), all unconstrained reals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "LinkConstants",
    "LINK",
    "GevParams",
    "LinkedParams",
    "location_at",
    "gev_log_pdf",
    "gev_cdf",
    "gev_quantile",
    "gev_sample",
    "shape_forward",
    "shape_inverse",
    "shape_inverse_deriv",
    "trend_forward",
    "trend_inverse",
    "link_forward",
    "link_inverse",
    "shape_prior_logdensity",
    "trend_prior_logdensity",
]

# Below this |xi| the Gumbel branch with second-order Taylor corrections is used.
XI_SWITCH = 1e-7

# Half-open shape interval enforced by the link.
XI_LO, XI_HI = -0.5, 0.5


def _compute_link_constants(c_phi: float) -> tuple[float, float]:
    """Closed forms for the slope and offset that give h(0)=0 and h'(0)=1."""
    half_c = 0.5**c_phi
    b = -(1.0 / c_phi) * math.log(1.0 - half_c) * (1.0 - half_c) * 2.0 ** (c_phi - 1.0)
    a = -b * math.log(-math.log(1.0 - half_c))
    return b, a


@dataclass(frozen=True)
class LinkConstants:
    """Constants of the shape and trend transformations.

    b_phi and a_phi are derived from c_phi so that the shape transformation is
    the identity to first order at zero.  delta0 bounds the yearly trend
    fraction and t0 anchors the trend.
    """

    c_phi: float = 0.8
    delta0: float = 0.008
    t0: float = 1975.0

    @property
    def b_phi(self) -> float:
        return _compute_link_constants(self.c_phi)[0]

    @property
    def a_phi(self) -> float:
        return _compute_link_constants(self.c_phi)[1]


LINK = LinkConstants()
_B_PHI, _A_PHI = _compute_link_constants(LINK.c_phi)

# Gaussian prior scale for the transformed trend.
_TREND_PRIOR_SD = 0.5 * LINK.delta0
# Symmetric Beta(4, 4) on (-1/2, 1/2): normalizing constant 1/B(4,4) = 140.
_BETA_LOG_NORM = math.log(140.0)


@dataclass
class GevParams:
    """Natural GEV parameters for one site: location intercept, scale, shape, trend."""

    mu: float
    sigma: float
    xi: float
    delta: float = 0.0

    def validate(self) -> None:
        if not (self.mu > 0.0):
            raise ValueError(f"mu must be positive, got {self.mu}")
        if not (self.sigma > 0.0):
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if not (XI_LO < self.xi < XI_HI):
            raise ValueError(f"xi must lie strictly inside ({XI_LO}, {XI_HI}), got {self.xi}")
        if not (abs(self.delta) < LINK.delta0):
            raise ValueError(f"|delta| must be < {LINK.delta0}, got {self.delta}")


@dataclass
class LinkedParams:
    """Link-space coordinates (all unconstrained reals)."""

    psi: float
    tau: float
    phi: float
    gamma: float = 0.0


def location_at(p: GevParams, t, t0: float | None = None) -> np.ndarray | float:
    """Time-dependent location mu * (1 + delta * (t - t0))."""
    anchor = LINK.t0 if t0 is None else t0
    return p.mu * (1.0 + p.delta * (np.asarray(t, dtype=float) - anchor))


def _gumbel_exponent(z, xi):
    """w = log(1 + xi*z)/xi, the Gumbel-reduced variate; -inf outside support.

    The log-pdf is -log(sigma) - (1+xi)*w - exp(-w) and the CDF is
    exp(-exp(-w)), both valid across xi = 0 through the Taylor branch.
    """
    z = np.asarray(z, dtype=float)
    xi = np.asarray(xi, dtype=float)
    z, xi = np.broadcast_arrays(z, xi)
    w = np.empty_like(z)
    small = np.abs(xi) < XI_SWITCH
    zs = z[small]
    xs = xi[small]
    w[small] = zs - xs * zs * zs / 2.0 + xs * xs * zs**3 / 3.0
    zb = z[~small]
    xb = xi[~small]
    tb = 1.0 + xb * zb
    wb = np.full_like(zb, np.inf)
    ok = tb > 0.0
    wb[ok] = np.log1p(xb[ok] * zb[ok]) / xb[ok]
    # t <= 0 with xi > 0 means y below the lower endpoint: w -> -inf side.
    below = (~ok) & (xb > 0.0)
    wb[below] = -np.inf
    w[~small] = wb
    return w


def gev_log_pdf(y, p: GevParams, t=None, t0: float | None = None):
    """Log-density of the GEV with trend-adjusted location; -inf outside support."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    if t is None:
        t = t0 if t0 is not None else LINK.t0
    mu_t = location_at(p, t, t0)
    z = (y - mu_t) / p.sigma
    w = _gumbel_exponent(z, p.xi)
    with np.errstate(over="ignore", invalid="ignore"):
        out = -math.log(p.sigma) - (1.0 + p.xi) * w - np.exp(-w)
    out = np.where(np.isfinite(w), out, -np.inf)
    return out if out.ndim else float(out)


def gev_cdf(y, p: GevParams, t=None, t0: float | None = None):
    """GEV distribution function; 0 below and 1 above the support."""
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("observations must be finite")
    if t is None:
        t = t0 if t0 is not None else LINK.t0
    mu_t = location_at(p, t, t0)
    z = (y - mu_t) / p.sigma
    w = _gumbel_exponent(z, p.xi)
    with np.errstate(over="ignore"):
        out = np.exp(-np.exp(-w))
    return out if out.ndim else float(out)


def gev_quantile(prob, p: GevParams, t=None, t0: float | None = None):
    """Quantile (inverse CDF) at probability prob in (0, 1)."""
    prob = np.asarray(prob, dtype=float)
    if np.any(prob <= 0.0) or np.any(prob >= 1.0):
        raise ValueError("prob must lie strictly inside (0, 1)")
    if t is None:
        t = t0 if t0 is not None else LINK.t0
    mu_t = location_at(p, t, t0)
    ell = np.log(-np.log(prob))
    if abs(p.xi) < XI_SWITCH:
        bracket = -ell + p.xi * ell * ell / 2.0 - p.xi * p.xi * ell**3 / 6.0
    else:
        bracket = np.expm1(-p.xi * ell) / p.xi
    out = mu_t + p.sigma * bracket
    return out if out.ndim else float(out)


def gev_sample(p: GevParams, t, n: int, rng: np.random.Generator, t0: float | None = None):
    """Draw n variates at year(s) t by inverse-CDF of uniforms."""
    u = rng.uniform(size=n)
    return gev_quantile(u, p, t, t0)


# ----------------------------------------------------------------------------
# Componentwise links
# ----------------------------------------------------------------------------

def shape_forward(xi):
    """Map xi in (-1/2, 1/2) to the unconstrained transformed shape."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= XI_LO) or np.any(xi >= XI_HI):
        raise ValueError("xi must lie strictly inside (-0.5, 0.5)")
    inner = 1.0 - (xi + 0.5) ** LINK.c_phi
    out = _A_PHI + _B_PHI * np.log(-np.log(inner))
    return out if out.ndim else float(out)


def shape_inverse(phi):
    """Inverse shape map; finite phi always yields xi in (-1/2, 1/2).

    Clamped one ulp inside the endpoints where float64 saturates, so the
    open-interval invariant holds for arbitrarily large |phi|.
    """
    phi = np.asarray(phi, dtype=float)
    e = np.exp((phi - _A_PHI) / _B_PHI)
    out = (-np.expm1(-e)) ** (1.0 / LINK.c_phi) - 0.5
    out = np.clip(out, np.nextafter(XI_LO, 0.0), np.nextafter(XI_HI, 0.0))
    return out if out.ndim else float(out)


def shape_inverse_deriv(phi):
    """Analytic d xi / d phi, used as the change-of-variables Jacobian."""
    phi = np.asarray(phi, dtype=float)
    e = np.exp((phi - _A_PHI) / _B_PHI)
    inner = -np.expm1(-e)
    with np.errstate(over="ignore", under="ignore"):
        out = (1.0 / LINK.c_phi) * inner ** (1.0 / LINK.c_phi - 1.0) * np.exp(-e) * e / _B_PHI
    out = np.where(np.isfinite(out), out, 0.0)
    return out if out.ndim else float(out)


def trend_forward(delta):
    """Map the trend fraction in (-delta0, delta0) to an unconstrained value."""
    delta = np.asarray(delta, dtype=float)
    if np.any(np.abs(delta) >= LINK.delta0):
        raise ValueError(f"|delta| must be < {LINK.delta0}")
    d0 = LINK.delta0
    out = 0.5 * d0 * (np.log(d0 + delta) - np.log(d0 - delta))
    return out if out.ndim else float(out)


def trend_inverse(gamma):
    """Inverse trend map: delta0 * tanh(gamma / delta0)."""
    gamma = np.asarray(gamma, dtype=float)
    out = LINK.delta0 * np.tanh(gamma / LINK.delta0)
    return out if out.ndim else float(out)


def link_forward(p: GevParams) -> LinkedParams:
    """Natural parameters to link space."""
    p.validate()
    return LinkedParams(
        psi=math.log(p.mu),
        tau=math.log(p.sigma / p.mu),
        phi=float(shape_forward(p.xi)),
        gamma=float(trend_forward(p.delta)),
    )


def link_inverse(lp: LinkedParams) -> GevParams:
    """Link space back to natural parameters."""
    mu = math.exp(lp.psi)
    return GevParams(
        mu=mu,
        sigma=mu * math.exp(lp.tau),
        xi=float(shape_inverse(lp.phi)),
        delta=float(trend_inverse(lp.gamma)),
    )


# ----------------------------------------------------------------------------
# Site-level priors entering the generalized likelihood
# ----------------------------------------------------------------------------

def shape_prior_logdensity(phi):
    """Log prior of the transformed shape.

    Beta(4, 4) shifted to (-1/2, 1/2) on the shape scale, pushed through the
    inverse map with its analytic Jacobian.
    """
    phi = np.asarray(phi, dtype=float)
    xi = shape_inverse(phi)
    with np.errstate(divide="ignore"):
        log_beta = _BETA_LOG_NORM + 3.0 * np.log(xi + 0.5) + 3.0 * np.log(0.5 - xi)
        log_jac = np.log(shape_inverse_deriv(phi))
    out = log_beta + log_jac
    out = np.where(np.isfinite(out), out, -np.inf)
    return out if out.ndim else float(out)


def trend_prior_logdensity(gamma):
    """Log prior of the transformed trend: Gaussian with sd 0.5 * delta0."""
    gamma = np.asarray(gamma, dtype=float)
    sd = _TREND_PRIOR_SD
    out = -0.5 * math.log(2.0 * math.pi) - math.log(sd) - 0.5 * (gamma / sd) ** 2
    return out if out.ndim else float(out)

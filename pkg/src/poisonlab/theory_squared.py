"""Closed-form asymptotics for the squared loss.

With L(t) = (1 - t)^2 / 2 the proximal score is affine, so the
self-consistent characterization of the regularized estimator collapses
to one scalar equation for the resolvent weight tau,

    tau * (1 + delta(tau)) = 1,    delta(tau) = tr[C R(lam, tau)] / n,

after which the mean alignment h_mu = mu' R theta-bar and trigger
alignment h_v = v' R theta-bar are rational in the Gram entries

    m = mu' R mu,    eps = mu' R v,    q = v' R v.

This module carries those rational forms: the general expressions, the
two-eigendirection and isotropic specializations (eps = 0), the exact
optimizer of h_v over the trigger magnitude alpha, and the partial
derivatives of both alignments in the poisoned fraction phi.
"""

import math
from dataclasses import dataclass

from scipy.optimize import brentq

from . import covariance as cov

TAU_RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class SquaredScalars:
    """Solution (tau, delta) of the squared-loss scalar equation."""

    tau: float
    delta: float


@dataclass(frozen=True)
class GramEntries:
    """Resolvent Gram entries of the mean and trigger directions."""

    g_mumu: float
    g_muv: float
    g_vv: float


@dataclass(frozen=True)
class AlphaStar:
    """Exact peak of h_v over alpha, and its eps -> 0 leading form."""

    exact: float
    leading: float


def solve_tau(model: cov.CovarianceModel, lam: float, n: int) -> SquaredScalars:
    """Solve tau * (1 + delta(tau)) = 1 for tau in (0, 1].

    The left side is strictly increasing in tau, negative at 0+ and
    equal to delta(1) >= 0 at tau = 1, so the root is unique and
    bracketed.  Residual is certified to TAU_RESIDUAL_TOL.
    """
    if not (lam > 0 and math.isfinite(lam)):
        raise ValueError("lam must be positive and finite")
    if n < 1:
        raise ValueError("n must be a positive integer")

    def psi(tau):
        d = cov.resolvent_trace(model, cov.ResolventParams(lam, tau), n)
        return tau * (1.0 + d) - 1.0

    tau = brentq(psi, 1e-300, 1.0, xtol=1e-16, rtol=4 * 2.220446049250313e-16)
    delta = cov.resolvent_trace(model, cov.ResolventParams(lam, tau), n)
    resid = abs(tau * (1.0 + delta) - 1.0)
    if resid > TAU_RESIDUAL_TOL:
        raise ArithmeticError(f"tau residual {resid:.3e} exceeds {TAU_RESIDUAL_TOL}")
    return SquaredScalars(tau=tau, delta=delta)


def gram_entries(spec: cov.ProblemSpec, scalars: SquaredScalars) -> GramEntries:
    params = cov.ResolventParams(spec.lam, scalars.tau)
    return GramEntries(
        g_mumu=cov.resolvent_quad(spec.cov, params, spec.mu, spec.mu),
        g_muv=cov.resolvent_quad(spec.cov, params, spec.mu, spec.v),
        g_vv=cov.resolvent_quad(spec.cov, params, spec.v, spec.v),
    )


def _projections_from_gram(m, eps, q, tau, phi, alpha):
    delta_g = m * q - eps * eps
    d = (
        1.0
        + tau * m
        - 2.0 * tau * phi * alpha * eps
        + tau * phi * alpha**2 * q
        + tau**2 * phi * (1.0 - phi) * alpha**2 * delta_g
    )
    h_mu = tau * (
        (1.0 - 2.0 * phi) * m
        + phi * alpha * eps
        + tau * phi * (1.0 - phi) * alpha**2 * delta_g
    ) / d
    h_v = tau * (
        (1.0 - 2.0 * phi) * eps
        + phi * alpha * q
        + 2.0 * tau * phi * (1.0 - phi) * alpha * delta_g
    ) / d
    return h_mu, h_v


def _alpha_star_from_gram(m, eps, q, tau, phi):
    if phi <= 0.0:
        raise ValueError("alpha peak requires phi > 0")
    if q <= 0.0:
        raise ValueError("alpha peak requires a nondegenerate trigger direction")
    delta_g = m * q - eps * eps
    n_e = tau * (1.0 - 2.0 * phi) * eps
    d_e = -2.0 * tau * phi * eps
    a_e = tau * phi * (q + 2.0 * tau * (1.0 - phi) * delta_g)
    c_e = tau * phi * (q + tau * (1.0 - phi) * delta_g)
    b = 1.0 + tau * m
    # Positive root of a_e*b - n_e*d_e - 2*n_e*c_e*alpha - a_e*c_e*alpha^2.
    shift = n_e / a_e
    exact = -shift + math.sqrt(shift**2 + (a_e * b - n_e * d_e) / (a_e * c_e))
    leading = math.sqrt((1.0 + tau * m) / (tau * phi * q * (1.0 + tau * (1.0 - phi) * m)))
    return AlphaStar(exact=exact, leading=leading)


def projections_exact(
    spec: cov.ProblemSpec,
    scalars: SquaredScalars,
    gram: GramEntries | None = None,
) -> tuple[float, float]:
    """(h_mu, h_v) at spec.alpha from the exact rational expressions."""
    g = gram if gram is not None else gram_entries(spec, scalars)
    return _projections_from_gram(
        g.g_mumu, g.g_muv, g.g_vv, scalars.tau, spec.phi, spec.alpha
    )


def alpha_star_exact(
    spec: cov.ProblemSpec,
    scalars: SquaredScalars,
    gram: GramEntries | None = None,
) -> AlphaStar:
    """Trigger magnitude maximizing h_v, with its eps -> 0 simplification.

    h_v(alpha) is a ratio of a linear over a positive quadratic, so the
    stationarity condition is itself a quadratic with exactly one
    positive root.
    """
    g = gram if gram is not None else gram_entries(spec, scalars)
    return _alpha_star_from_gram(g.g_mumu, g.g_muv, g.g_vv, scalars.tau, spec.phi)


def projections_eigen(
    norm_mu_sq: float,
    s_mu_sq: float,
    s_v_sq: float,
    lam: float,
    tau: float,
    phi: float,
    alpha: float,
) -> tuple[float, float]:
    """(h_mu, h_v) when mu and v are eigendirections of C.

    The cross entry eps vanishes; m and q reduce to single resolvent
    ratios of the respective eigenvalues.
    """
    m = norm_mu_sq / (lam + tau * s_mu_sq)
    q = 1.0 / (lam + tau * s_v_sq)
    return _projections_from_gram(m, 0.0, q, tau, phi, alpha)


def alpha_star_eigen(
    norm_mu_sq: float,
    s_mu_sq: float,
    s_v_sq: float,
    lam: float,
    tau: float,
    phi: float,
) -> float:
    m = norm_mu_sq / (lam + tau * s_mu_sq)
    q = 1.0 / (lam + tau * s_v_sq)
    return _alpha_star_from_gram(m, 0.0, q, tau, phi).exact


def projections_isotropic(
    norm_mu_sq: float,
    lam: float,
    tau: float,
    phi: float,
    alpha: float,
    scale: float = 1.0,
) -> tuple[float, float]:
    """(h_mu, h_v) for C = scale * I with mu orthogonal to v."""
    return projections_eigen(norm_mu_sq, scale, scale, lam, tau, phi, alpha)


def alpha_star_isotropic(
    norm_mu_sq: float, lam: float, tau: float, phi: float, scale: float = 1.0
) -> float:
    return alpha_star_eigen(norm_mu_sq, scale, scale, lam, tau, phi)


def phi_sensitivity(
    g_mumu: float, g_vv: float, tau: float, phi: float, alpha: float
) -> tuple[float, float]:
    """(dh_v/dphi, dh_mu/dphi) in the eps = 0 geometry.

    Derived by differentiating the rational forms at fixed (lam, tau);
    tau itself does not depend on phi.  The mean derivative is negative
    for every admissible argument: poisoning always erodes alignment
    with the clean mean.  The trigger derivative starts positive and
    crosses zero once alpha is large enough that the quadratic term
    phi^2 tau^2 m q alpha^2 dominates.
    """
    m, q = g_mumu, g_vv
    u = tau * m
    big_q = tau * q * alpha**2
    d = (1.0 + u) + big_q * phi * (1.0 + u * (1.0 - phi))
    dh_v = tau * q * alpha * (
        (1.0 + u) * (1.0 + 2.0 * u * (1.0 - 2.0 * phi)) - phi**2 * u * big_q
    ) / d**2
    dh_mu = -tau * m * (
        2.0 * (1.0 + u) + 2.0 * phi * (1.0 + phi * u) * big_q + phi**2 * big_q**2
    ) / d**2
    return dh_v, dh_mu

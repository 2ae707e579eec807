"""Population (infinite-sample) limit in the eigen geometry.

When n grows with the dimension held fixed, the regularized risk
concentrates on its population value and the minimizer lives in the
span of the class mean mu and the trigger direction v whenever both
are eigendirections of C.  Writing theta = a mu + b v, each class
contributes E[L(M)] with a scalar Gaussian margin M, so the whole
object is a smooth strongly convex function of (a, b):

    mean_clean    =  a ||mu||^2            (label-absorbed clean class)
    mean_poisoned = -a ||mu||^2 + b alpha
    variance      =  a^2 s_mu^2 ||mu||^2 + b^2 s_v^2  (both classes)

Minimization is exact Newton.  Parametrizing each margin as
M = mean + std * xi with xi ~ N(0, 1) makes every derivative of the
objective a Gauss-Hermite expectation of L' and L'' along the mean and
standard-deviation paths; no derivatives beyond L'' are needed.
"""

import math
from dataclasses import dataclass

import numpy as np

from .losses import loss_by_name
from .quadrature import gh_expect, standard_normal_nodes

GRAD_TOL = 1e-10
MAX_NEWTON_ITER = 200
_NODES = 100


@dataclass(frozen=True)
class PopulationParams:
    """Geometry, poisoning level, and loss for the population problem."""

    norm_mu: float
    s_mu_sq: float
    s_v_sq: float
    lam: float
    phi: float
    alpha: float
    loss: str = "logistic"

    def __post_init__(self):
        if not (math.isfinite(self.norm_mu) and self.norm_mu > 0):
            raise ValueError("norm_mu must be positive and finite")
        for name in ("s_mu_sq", "s_v_sq"):
            s = getattr(self, name)
            if not (math.isfinite(s) and s > 0):
                raise ValueError(f"{name} must be positive and finite")
        if not (math.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lam must be positive and finite")
        if not 0.0 <= self.phi < 0.5:
            raise ValueError("phi must lie in [0, 0.5)")
        if not (math.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError("alpha must be nonnegative and finite")
        loss_by_name(self.loss)

    def with_alpha(self, alpha: float) -> "PopulationParams":
        import dataclasses

        return dataclasses.replace(self, alpha=float(alpha))


@dataclass(frozen=True)
class PopulationMinimum:
    a: float
    b: float
    grad_norm: float
    iters: int
    converged: bool


def _margins(params: PopulationParams, a: float, b: float):
    r = params.norm_mu**2
    mean_clean = a * r
    mean_poisoned = -a * r + b * params.alpha
    var = a * a * params.s_mu_sq * r + b * b * params.s_v_sq
    return mean_clean, mean_poisoned, var


def population_loss_eigen(a: float, b: float, params: PopulationParams) -> float:
    """Regularized population risk at theta = a mu + b v."""
    loss = loss_by_name(params.loss)
    mean_c, mean_p, var = _margins(params, a, b)
    sigma = math.sqrt(var)
    r = params.norm_mu**2
    risk = (1.0 - params.phi) * gh_expect(loss.value, mean_c, sigma, _NODES)
    risk += params.phi * gh_expect(loss.value, mean_p, sigma, _NODES)
    return risk + 0.5 * params.lam * (a * a * r + b * b)


def _class_terms(loss, xi, w, mean, m_grad, sigma, s_grad, s_hess):
    """Gradient and Hessian of E[L(mean + sigma xi)] in (a, b).

    ``m_grad`` and ``s_grad`` are the 2-vectors of mean and std partial
    derivatives, ``s_hess`` the std Hessian (the mean is linear).
    """
    m = mean + sigma * xi
    l1 = loss.deriv(m)
    l2 = loss.second_deriv(m)
    # dM/dtheta_i = m_grad[i] + s_grad[i] * xi at fixed xi
    path = m_grad[:, None] + s_grad[:, None] * xi[None, :]
    grad = path @ (w * l1)
    hess = (path * (w * l2)) @ path.T + s_hess * float(w @ (l1 * xi))
    return grad, hess


def _sigma_derivs(params: PopulationParams, a: float, b: float, var: float):
    r = params.norm_mu**2
    sigma = math.sqrt(var)
    sa = a * params.s_mu_sq * r / sigma
    sb = b * params.s_v_sq / sigma
    s_grad = np.array([sa, sb])
    s_hess = (
        np.array(
            [
                [params.s_mu_sq * r - sa * sa, -sa * sb],
                [-sa * sb, params.s_v_sq - sb * sb],
            ]
        )
        / sigma
    )
    return sigma, s_grad, s_hess


def minimize_population_eigen(params: PopulationParams) -> PopulationMinimum:
    """Newton minimization of the population risk over (a, b).

    Starts at (0.1, 0) to stay clear of the nondifferentiable origin of
    the margin standard deviation.  Each step is backtracked on the
    objective; the Hessian stays bounded below by lam * min(||mu||^2, 1)
    by strong convexity, so steps are always well defined.
    """
    loss = loss_by_name(params.loss)
    xi, w = standard_normal_nodes(_NODES)
    r = params.norm_mu**2
    phi = params.phi
    reg = params.lam * np.array([[r, 0.0], [0.0, 1.0]])

    def objective(a, b):
        return population_loss_eigen(a, b, params)

    a, b = 0.1, 0.0
    val = objective(a, b)
    grad_norm = math.inf
    iters = 0
    for iters in range(1, MAX_NEWTON_ITER + 1):
        mean_c, mean_p, var = _margins(params, a, b)
        sigma, s_grad, s_hess = _sigma_derivs(params, a, b, var)
        g_c, h_c = _class_terms(
            loss, xi, w, mean_c, np.array([r, 0.0]), sigma, s_grad, s_hess
        )
        g_p, h_p = _class_terms(
            loss, xi, w, mean_p, np.array([-r, params.alpha]), sigma, s_grad, s_hess
        )
        grad = (1.0 - phi) * g_c + phi * g_p + reg @ np.array([a, b])
        hess = (1.0 - phi) * h_c + phi * h_p + reg

        grad_norm = float(np.abs(grad).max())
        if grad_norm <= GRAD_TOL:
            break

        floor = params.lam * min(r, 1.0) - 1e-9
        if float(np.linalg.eigvalsh(hess).min()) < floor:
            raise ArithmeticError("population Hessian lost strong convexity")

        step = np.linalg.solve(hess, -grad)
        t = 1.0
        slope = float(grad @ step)
        # The 1e-15 term keeps Armijo from rejecting full Newton steps
        # once the predicted decrease falls below objective rounding noise.
        allowance = 1e-15 * (1.0 + abs(val))
        while t > 1e-12:
            cand = objective(a + t * step[0], b + t * step[1])
            if cand <= val + 1e-4 * t * slope + allowance:
                break
            t *= 0.5
        a += t * step[0]
        b += t * step[1]
        val = objective(a, b)

    return PopulationMinimum(
        a=float(a),
        b=float(b),
        grad_norm=grad_norm,
        iters=iters,
        converged=grad_norm <= GRAD_TOL,
    )


def benign_minimizer_eigen(params: PopulationParams) -> float:
    """Minimizer a of the unpoisoned risk (1 - phi) E[L] + lam a^2 ||mu||^2 / 2.

    One-dimensional Newton; the margin std is linear in a > 0, so the
    second-order path term vanishes.
    """
    loss = loss_by_name(params.loss)
    xi, w = standard_normal_nodes(_NODES)
    r = params.norm_mu**2
    weight = 1.0 - params.phi
    s = math.sqrt(params.s_mu_sq * r)

    def value(a):
        return weight * gh_expect(loss.value, a * r, abs(a) * s, _NODES) + 0.5 * params.lam * a * a * r

    a = 0.1
    val = value(a)
    for _ in range(MAX_NEWTON_ITER):
        m = a * r + a * s * xi
        l1 = loss.deriv(m)
        l2 = loss.second_deriv(m)
        path = r + s * xi
        grad = weight * float(w @ (l1 * path)) + params.lam * a * r
        if abs(grad) <= GRAD_TOL:
            return float(a)
        hess = weight * float(w @ (l2 * path * path)) + params.lam * r
        step = -grad / hess
        t = 1.0
        allowance = 1e-15 * (1.0 + abs(val))
        while t > 1e-12:
            if value(a + t * step) <= val + 1e-4 * t * grad * step + allowance:
                break
            t *= 0.5
        a += t * step
        val = value(a)
    raise ArithmeticError("benign minimizer Newton failed to converge")


def one_step_gradient(params: PopulationParams) -> float:
    """Directional derivative along mu of the poisoned risk at the benign optimum.

    The benign optimum zeroes the clean-risk gradient, so the full
    population gradient along mu reduces to the poisoned-class term

        phi * E[ L'(M) * (-||mu||^2 + s_mu ||mu|| xi) ],

    with M the poisoned margin at theta = a_ben mu.  The trigger
    magnitude does not enter: at b = 0 the poisoned margin never sees
    alpha, which is what makes this a useful early-warning statistic.
    The value is positive whenever phi > 0: the poisoned class pulls
    the estimator away from the clean mean from the very first step.
    """
    loss = loss_by_name(params.loss)
    xi, w = standard_normal_nodes(_NODES)
    r = params.norm_mu**2
    a_ben = benign_minimizer_eigen(params)
    s = math.sqrt(params.s_mu_sq * r)
    m = -a_ben * r + a_ben * s * xi
    l1 = loss.deriv(m)
    return params.phi * float(w @ (l1 * (-r + s * xi)))

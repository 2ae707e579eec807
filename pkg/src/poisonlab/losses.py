"""Margin losses, their proximal operators, and the score function.

The asymptotic theory needs each loss L through three channels: the
proximal map

    prox(delta, x) = argmin_u [ L(u) + (u - x)^2 / (2 * delta) ],

the score f(delta, x) = -L'(prox(delta, x)), and its x-derivative
f'(delta, x) = -L''(u) / (1 + delta * L''(u)) at u = prox(delta, x).
The squared loss admits closed forms; the logistic prox is solved by a
safeguarded Newton iteration that never leaves its bracket.
"""

import numpy as np
from scipy.special import expit

PROX_RTOL = 1e-14
_PROX_MAX_ITER = 200


class SquaredLoss:
    """L(t) = (1 - t)^2 / 2."""

    name = "squared"

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return 0.5 * (1.0 - t) ** 2

    def deriv(self, t):
        return np.asarray(t, dtype=float) - 1.0

    def second_deriv(self, t):
        return np.ones_like(np.asarray(t, dtype=float))


class LogisticLoss:
    """L(t) = log(1 + exp(-t)), evaluated overflow-free."""

    name = "logistic"

    def value(self, t):
        t = np.asarray(t, dtype=float)
        return np.logaddexp(0.0, -t)

    def deriv(self, t):
        return -expit(-np.asarray(t, dtype=float))

    def second_deriv(self, t):
        t = np.asarray(t, dtype=float)
        return expit(t) * expit(-t)


def loss_by_name(name: str):
    if name == "squared":
        return SquaredLoss()
    if name == "logistic":
        return LogisticLoss()
    raise ValueError(f"unknown loss {name!r}; expected 'squared' or 'logistic'")


def prox(loss, delta: float, x):
    """Proximal map of ``loss`` with step ``delta``, vectorized in x.

    Solves u + delta * L'(u) = x to relative residual PROX_RTOL.  For
    delta = 0 the map is the identity.
    """
    if not (np.isfinite(delta) and delta >= 0):
        raise ValueError("delta must be nonnegative and finite")
    x = np.asarray(x, dtype=float)
    if delta == 0.0:
        return x.copy()
    if isinstance(loss, SquaredLoss):
        return (x + delta) / (1.0 + delta)

    # Logistic: L' in (-1, 0), so the root lies in [x, x + delta].
    # Newton from the midpoint, clamped to a shrinking bisection
    # bracket; L'' <= 1/4 keeps the iteration contractive everywhere.
    lo = x.copy()
    hi = x + delta
    u = x + 0.5 * delta
    tol = PROX_RTOL * np.maximum(1.0, np.abs(x))
    for _ in range(_PROX_MAX_ITER):
        g = u + delta * loss.deriv(u) - x
        done = np.abs(g) <= tol
        if np.all(done):
            break
        lo = np.where(g < 0, u, lo)
        hi = np.where(g > 0, u, hi)
        step = g / (1.0 + delta * loss.second_deriv(u))
        u_new = u - step
        outside = (u_new <= lo) | (u_new >= hi)
        u_new = np.where(outside, 0.5 * (lo + hi), u_new)
        u = np.where(done, u, u_new)
    return u


def f_value(loss, delta: float, x):
    """Score f(delta, x) = -L'(prox(delta, x))."""
    return -loss.deriv(prox(loss, delta, x))


def f_both(loss, delta: float, x):
    """(f, f') sharing one prox solve; f' = -L''(u) / (1 + delta * L''(u))."""
    u = prox(loss, delta, x)
    ell2 = loss.second_deriv(u)
    return -loss.deriv(u), -ell2 / (1.0 + delta * ell2)

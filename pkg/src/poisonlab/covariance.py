"""Covariance models and resolvent functionals.

Everything downstream of the asymptotic theory consumes the feature
covariance C only through scalar functionals of its resolvent

    R(lam, tau) = (lam * I + tau * C)^{-1},

namely quadratic forms a' R b, weighted forms a' R C R b, and the
normalized traces tr[C R] / n and tr[R^2 C^2] / n.  Structured models
(isotropic, spiked pair, explicit spectrum) evaluate these in closed
form over their eigenvalues; a dense SPD matrix is eigendecomposed once
and cached, after which every functional is a vector operation.
"""

import abc
from dataclasses import dataclass, field

import numpy as np

_SYM_RTOL = 1e-10


def basis_vector(dim: int, index: int) -> np.ndarray:
    """Standard basis vector e_index in R^dim."""
    if not 0 <= index < dim:
        raise ValueError(f"index {index} out of range for dim {dim}")
    e = np.zeros(dim)
    e[index] = 1.0
    return e


class CovarianceModel(abc.ABC):
    """Feature covariance exposed through its eigensystem.

    Subclasses fix an eigenbasis and report eigenvalues in it.  Models
    whose eigenbasis is the standard basis implement ``to_eigenbasis``
    as the identity, so rotation costs nothing on the hot path.
    """

    @property
    @abc.abstractmethod
    def dim(self) -> int:
        raise NotImplementedError

    @abc.abstractmethod
    def eigenvalues(self) -> np.ndarray:
        """All dim eigenvalues, in the model's fixed eigenbasis order."""
        raise NotImplementedError

    def to_eigenbasis(self, vec: np.ndarray) -> np.ndarray:
        """Coordinates of vec in the eigenbasis (identity by default)."""
        return np.asarray(vec, dtype=float)

    @abc.abstractmethod
    def sample_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n rows from N(0, C)."""
        raise NotImplementedError

    def _check_vec(self, vec: np.ndarray) -> np.ndarray:
        v = np.asarray(vec, dtype=float)
        if v.shape != (self.dim,):
            raise ValueError(f"vector shape {v.shape} incompatible with dim {self.dim}")
        return v


class IsotropicCovariance(CovarianceModel):
    """C = scale * I."""

    def __init__(self, dim: int, scale: float = 1.0):
        if dim < 1:
            raise ValueError("dim must be positive")
        if not (np.isfinite(scale) and scale > 0):
            raise ValueError("scale must be positive and finite")
        self._dim = int(dim)
        self.scale = float(scale)

    @property
    def dim(self) -> int:
        return self._dim

    def eigenvalues(self) -> np.ndarray:
        return np.full(self._dim, self.scale)

    def sample_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self._dim)) * np.sqrt(self.scale)


class EigenPairCovariance(CovarianceModel):
    """Two distinguished eigendirections on a flat bulk.

    Coordinate 0 carries variance ``s_mu_sq`` (the mean direction by
    convention), coordinate 1 carries ``s_v_sq`` (the trigger
    direction), and the remaining dim - 2 coordinates share
    ``s_rest_sq``.
    """

    def __init__(self, dim: int, s_mu_sq: float, s_v_sq: float, s_rest_sq: float = 1.0):
        if dim < 2:
            raise ValueError("dim must be at least 2")
        for name, s in (("s_mu_sq", s_mu_sq), ("s_v_sq", s_v_sq), ("s_rest_sq", s_rest_sq)):
            if not (np.isfinite(s) and s > 0):
                raise ValueError(f"{name} must be positive and finite")
        self._dim = int(dim)
        self.s_mu_sq = float(s_mu_sq)
        self.s_v_sq = float(s_v_sq)
        self.s_rest_sq = float(s_rest_sq)

    @property
    def dim(self) -> int:
        return self._dim

    def eigenvalues(self) -> np.ndarray:
        ev = np.full(self._dim, self.s_rest_sq)
        ev[0] = self.s_mu_sq
        ev[1] = self.s_v_sq
        return ev

    def sample_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self._dim)) * np.sqrt(self.eigenvalues())

    def mu_direction(self) -> np.ndarray:
        return basis_vector(self._dim, 0)

    def v_direction(self) -> np.ndarray:
        return basis_vector(self._dim, 1)


class SpectrumCovariance(CovarianceModel):
    """Diagonal covariance with an explicit eigenvalue list."""

    def __init__(self, eigenvalues: np.ndarray):
        ev = np.asarray(eigenvalues, dtype=float)
        if ev.ndim != 1 or ev.size < 1:
            raise ValueError("eigenvalues must be a nonempty 1-d array")
        if not (np.all(np.isfinite(ev)) and np.all(ev > 0)):
            raise ValueError("eigenvalues must be positive and finite")
        self._ev = ev.copy()

    @property
    def dim(self) -> int:
        return self._ev.size

    def eigenvalues(self) -> np.ndarray:
        return self._ev.copy()

    def sample_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.dim)) * np.sqrt(self._ev)


class DenseCovariance(CovarianceModel):
    """Arbitrary SPD covariance matrix.

    The matrix must be symmetric to relative tolerance 1e-10 and admit
    a Cholesky factorization; both are checked at construction.  The
    eigendecomposition happens once, here, so repeated functional
    evaluations stay O(p) after an O(p^3) setup.
    """

    def __init__(self, matrix: np.ndarray):
        c = np.asarray(matrix, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("covariance matrix must be square")
        if not np.all(np.isfinite(c)):
            raise ValueError("covariance matrix must be finite")
        scale = max(1.0, float(np.abs(c).max()))
        if float(np.abs(c - c.T).max()) > _SYM_RTOL * scale:
            raise ValueError("covariance matrix is not symmetric")
        c = 0.5 * (c + c.T)
        try:
            self._chol = np.linalg.cholesky(c)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance matrix is not positive definite") from exc
        self._matrix = c
        w, u = np.linalg.eigh(c)
        # eigh can return tiny negative values for near-singular SPD input
        # that Cholesky still accepts; clip to keep downstream ratios sane.
        self._ev = np.maximum(w, np.finfo(float).tiny)
        self._basis = u

    @classmethod
    def from_csv(cls, path) -> "DenseCovariance":
        """Load a matrix from CSV and regularize it before validation.

        A ridge of 1e-4 * tr(C) / p is added to the diagonal so that
        empirical covariance estimates with trailing near-zero
        eigenvalues survive the SPD check.
        """
        c = np.loadtxt(path, delimiter=",", ndmin=2)
        if c.shape[0] != c.shape[1]:
            raise ValueError(f"covariance CSV must be square, got {c.shape}")
        jitter = 1e-4 * float(np.trace(c)) / c.shape[0]
        return cls(c + jitter * np.eye(c.shape[0]))

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        return self._matrix

    def eigenvalues(self) -> np.ndarray:
        return self._ev.copy()

    def to_eigenbasis(self, vec: np.ndarray) -> np.ndarray:
        return self._basis.T @ np.asarray(vec, dtype=float)

    def sample_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.standard_normal((n, self.dim)) @ self._chol.T


@dataclass(frozen=True)
class ResolventParams:
    """Arguments (lam, tau) of the resolvent R = (lam I + tau C)^{-1}."""

    lam: float
    tau: float

    def __post_init__(self):
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lam must be positive and finite")
        if not (np.isfinite(self.tau) and self.tau >= 0):
            raise ValueError("tau must be nonnegative and finite")


def _rotated(model: CovarianceModel, a, b):
    ar = model.to_eigenbasis(model._check_vec(a))
    br = ar if b is a else model.to_eigenbasis(model._check_vec(b))
    return ar, br


def resolvent_quad(model: CovarianceModel, params: ResolventParams, a, b) -> float:
    """a' R b."""
    ar, br = _rotated(model, a, b)
    return float(np.sum(ar * br / (params.lam + params.tau * model.eigenvalues())))


def resolvent_weighted_quad(model: CovarianceModel, params: ResolventParams, a, b) -> float:
    """a' R C R b, the covariance-weighted double resolvent form."""
    ar, br = _rotated(model, a, b)
    ev = model.eigenvalues()
    return float(np.sum(ar * br * ev / (params.lam + params.tau * ev) ** 2))


def resolvent_sq_quad(model: CovarianceModel, params: ResolventParams, a, b) -> float:
    """a' R^2 b."""
    ar, br = _rotated(model, a, b)
    return float(np.sum(ar * br / (params.lam + params.tau * model.eigenvalues()) ** 2))


def cov_quad(model: CovarianceModel, a, b) -> float:
    """a' C b."""
    ar, br = _rotated(model, a, b)
    return float(np.sum(ar * br * model.eigenvalues()))


def resolvent_trace(model: CovarianceModel, params: ResolventParams, n: int) -> float:
    """tr[C R] / n."""
    ev = model.eigenvalues()
    return float(np.sum(ev / (params.lam + params.tau * ev)) / n)


def resolvent_sq_trace(model: CovarianceModel, params: ResolventParams, n: int) -> float:
    """tr[C R^2] / n."""
    ev = model.eigenvalues()
    return float(np.sum(ev / (params.lam + params.tau * ev) ** 2) / n)


def noise_trace(model: CovarianceModel, params: ResolventParams, n: int) -> float:
    """tr[C^2 R^2] / n, the variance contribution of the bulk spectrum."""
    ev = model.eigenvalues()
    return float(np.sum((ev / (params.lam + params.tau * ev)) ** 2) / n)


@dataclass(frozen=True)
class ProblemSpec:
    """Full description of one poisoned learning problem.

    The clean class means are +/- mu; a fraction ``phi`` of the
    negative class receives the additive trigger ``alpha * v`` and has
    its label flipped, so the absorbed two-component mixture has means
    mu and alpha * v - mu with weights 1 - phi and phi.  ``v`` must be
    a unit vector; ``alpha`` carries the whole trigger magnitude.

    ``phi = 0`` is admitted (no poisoning) so benign baselines can run
    through the same pipeline; ``phi >= 0.5`` is rejected because the
    theory requires the clean component to dominate.
    """

    cov: CovarianceModel
    mu: np.ndarray
    v: np.ndarray
    alpha: float
    phi: float
    lam: float
    n: int

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float)
        v = np.asarray(self.v, dtype=float)
        if mu.shape != (self.cov.dim,) or v.shape != (self.cov.dim,):
            raise ValueError("mu and v must match the covariance dimension")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(v))):
            raise ValueError("mu and v must be finite")
        if abs(float(v @ v) - 1.0) > 1e-10:
            raise ValueError("v must be a unit vector")
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError("alpha must be nonnegative and finite")
        if not (0.0 <= self.phi < 0.5):
            raise ValueError("phi must lie in [0, 0.5)")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise ValueError("lam must be positive and finite")
        if self.n < 1:
            raise ValueError("n must be a positive integer")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "v", v)

    @property
    def p(self) -> int:
        return self.cov.dim

    @property
    def kappa(self) -> float:
        return self.p / self.n

    def mixture_means(self) -> tuple[np.ndarray, np.ndarray]:
        """Absorbed-sample component means (clean, poisoned)."""
        return self.mu, self.alpha * self.v - self.mu

    def class_weights(self) -> tuple[float, float]:
        return 1.0 - self.phi, self.phi

    def with_alpha(self, alpha: float) -> "ProblemSpec":
        import dataclasses

        return dataclasses.replace(self, alpha=float(alpha))

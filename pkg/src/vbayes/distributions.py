"""Conjugate-exponential building blocks: Dirichlet, Normal, Wishart and
Normal-Wishart parameter records, their log-expectations, KL divergences and
the conjugate hyperparameter updates.

Conventions
-----------
* Normal distributions are parametrized by mean and **precision**; the
  precision enters the quadratic form directly, ``-(x-mu)^T P (x-mu)/2``.
* ``WishartParams(a, B)`` is the density ``|G|^(a-1) exp(-Tr(B G))`` on
  d x d positive-definite ``G``. In textbook terms this is a Wishart with
  ``nu = 2a + d - 1`` degrees of freedom and scale matrix ``V = (2B)^-1``.
  For d = 1 it is a Gamma with shape ``a`` and rate ``B``.
* ``NormalWishartParams(a, B, xi, beta)`` stores its Wishart part in
  degrees-of-freedom form, ``|G|^((a-d-1)/2) exp(-Tr(B G)/2)``, which is the
  form in which the conjugate update is purely additive
  (``a + n``, ``B + n B'``, ``beta + n``). ``.wishart()`` converts it to the
  ``WishartParams`` convention above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, multigammaln

__all__ = [
    "DirichletParams",
    "WishartParams",
    "NormalParams",
    "NormalWishartParams",
    "digamma",
    "multi_digamma",
    "dirichlet_geometric_mean",
    "wishart_geometric_mean_det",
    "wishart_expected_logdet",
    "dirichlet_update",
    "normal_wishart_update",
    "kl_divergence",
    "kl_dirichlet",
    "kl_wishart",
    "kl_normal",
    "kl_normal_wishart",
    "wishart_entropy",
    "logdet",
    "chol_inv",
]

_EULER = 0.57721566490153286061

# Bernoulli-number coefficients B_2k / (2k) of the asymptotic expansion
# psi(x) ~ log x - 1/(2x) - sum_k B_2k / (2k x^2k)
_ASYMPTOTIC = (
    1.0 / 12.0,
    -1.0 / 120.0,
    1.0 / 252.0,
    -1.0 / 240.0,
    1.0 / 132.0,
    -691.0 / 32760.0,
    1.0 / 12.0,
)
_SHIFT = 10.0


def _digamma_scalar(x: float) -> float:
    if not x > 0.0:
        raise ValueError(f"digamma is defined here for x > 0 only, got {x!r}")
    if x <= 1e-6:
        # psi(x) = -1/x - gamma + (pi^2/6) x + O(x^2)
        return -1.0 / x - _EULER + 1.6449340668482264365 * x
    acc = 0.0
    while x < _SHIFT:
        acc -= 1.0 / x
        x += 1.0
    inv2 = 1.0 / (x * x)
    series = 0.0
    for coef in reversed(_ASYMPTOTIC):
        series = series * inv2 + coef
    return acc + (math.log(x) - 0.5 / x - series * inv2)


def digamma(x):
    """Digamma function psi(x) = d/dx log Gamma(x) for x > 0.

    Shifts the argument above 10 with psi(x) = psi(x+1) - 1/x and then sums
    the asymptotic series. Accepts scalars or arrays.

    >>> round(digamma(1.0), 12)
    -0.577215664902
    """
    if np.isscalar(x):
        return _digamma_scalar(float(x))
    x = np.array(x, dtype=float)
    if np.any(~(x > 0.0)):
        raise ValueError("digamma is defined here for x > 0 only")
    out = np.zeros_like(x)
    tiny = x <= 1e-6
    z = np.where(tiny, 1.0, x)
    # at most ceil(10 - min(x)) shifts are needed
    while True:
        low = z < _SHIFT
        if not low.any():
            break
        out[low] -= 1.0 / z[low]
        z[low] += 1.0
    inv2 = 1.0 / (z * z)
    series = np.zeros_like(z)
    for coef in reversed(_ASYMPTOTIC):
        series = series * inv2 + coef
    out += np.log(z) - 0.5 / z - series * inv2
    if tiny.any():
        xt = x[tiny]
        out[tiny] = -1.0 / xt - _EULER + 1.6449340668482264365 * xt
    return out


def multi_digamma(a, d: int):
    """sum_{i=0}^{d-1} psi(a - i/2): derivative of the log multivariate gamma."""
    a = np.asarray(a, dtype=float)
    return sum(digamma(a - 0.5 * i) for i in range(d))


def logdet(M: np.ndarray) -> float:
    """log|M| of a symmetric positive-definite matrix via Cholesky."""
    L = np.linalg.cholesky(M)
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def chol_inv(M: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive-definite matrix via Cholesky."""
    L = np.linalg.cholesky(M)
    Linv = np.linalg.inv(L)
    out = Linv.T @ Linv
    return 0.5 * (out + out.T)


def _check_spd(M: np.ndarray, name: str) -> None:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {M.shape}")
    if not np.allclose(M, M.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(M).max())):
        raise ValueError(f"{name} must be symmetric")
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        raise ValueError(f"{name} must be positive definite") from None


@dataclass(frozen=True)
class DirichletParams:
    lambdas: np.ndarray

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        if lam.ndim != 1 or lam.size < 1:
            raise ValueError("Dirichlet needs a non-empty vector of hyperparameters")
        if np.any(~(lam > 0.0)):
            raise ValueError("Dirichlet hyperparameters must be positive")
        object.__setattr__(self, "lambdas", lam)

    @property
    def dim(self) -> int:
        return self.lambdas.size

    def mean(self) -> np.ndarray:
        return self.lambdas / self.lambdas.sum()

    def expected_log(self) -> np.ndarray:
        """E[log pi_s] = psi(lambda_s) - psi(sum lambda)."""
        return digamma(self.lambdas) - digamma(self.lambdas.sum())

    def log_normalizer(self) -> float:
        lam = self.lambdas
        return float(np.sum(gammaln(lam)) - gammaln(lam.sum()))


@dataclass(frozen=True)
class WishartParams:
    a: float
    B: np.ndarray

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        if not self.a > 0:
            raise ValueError(f"Wishart shape must be positive, got {self.a}")
        _check_spd(B, "Wishart rate B")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "B", B)

    @property
    def dim(self) -> int:
        return self.B.shape[0]

    @property
    def half_dof(self) -> float:
        # nu/2 in textbook terms
        return self.a + 0.5 * (self.dim - 1)

    def mean(self) -> np.ndarray:
        return self.half_dof * chol_inv(self.B)

    def expected_logdet(self) -> float:
        return wishart_expected_logdet(self)

    def log_normalizer(self) -> float:
        d = self.dim
        return float(multigammaln(self.half_dof, d) - self.half_dof * logdet(self.B))


@dataclass(frozen=True)
class NormalParams:
    mu: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        P = np.atleast_2d(np.asarray(self.precision, dtype=float))
        if P.shape != (mu.size, mu.size):
            raise ValueError("precision shape does not match the mean")
        _check_spd(P, "Normal precision")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "precision", P)

    @property
    def dim(self) -> int:
        return self.mu.size

    def covariance(self) -> np.ndarray:
        return chol_inv(self.precision)

    def entropy(self) -> float:
        d = self.dim
        return 0.5 * d * (1.0 + math.log(2 * math.pi)) - 0.5 * logdet(self.precision)


@dataclass(frozen=True)
class NormalWishartParams:
    """Joint prior/posterior on (x, G): G ~ Wishart, x | G ~ N(xi, beta G).

    ``a`` is the degrees of freedom and ``B`` the inverse scale matrix, see the
    module docstring.
    """

    a: float
    B: np.ndarray
    xi: np.ndarray
    beta: float

    def __post_init__(self):
        B = np.atleast_2d(np.asarray(self.B, dtype=float))
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        d = B.shape[0]
        if xi.shape != (d,):
            raise ValueError("xi must have the dimension of B")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.a > d - 1:
            raise ValueError(f"degrees of freedom must exceed d - 1 = {d - 1}")
        _check_spd(B, "Normal-Wishart B")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "xi", xi)

    @property
    def dim(self) -> int:
        return self.xi.size

    def wishart(self) -> WishartParams:
        d = self.dim
        return WishartParams(0.5 * (self.a - d + 1), 0.5 * self.B)

    @classmethod
    def from_wishart(cls, w: WishartParams, xi, beta: float) -> "NormalWishartParams":
        d = w.dim
        return cls(2.0 * w.a + d - 1, 2.0 * w.B, xi, beta)


def dirichlet_geometric_mean(p: DirichletParams) -> np.ndarray:
    """exp(E[log pi_s]) under a Dirichlet."""
    return np.exp(p.expected_log())


def wishart_geometric_mean_det(p: WishartParams, d: int | None = None) -> float:
    """|B|^-1 exp(d psi(a)).

    This is the single-digamma form used in the mixture E-step. The exact
    geometric mean of |G| under the Wishart is
    ``exp(sum_i psi(a + i/2) - log|B|)``, i = 0..d-1, see
    :func:`wishart_expected_logdet`; the two agree for d = 1.
    """
    d = p.dim if d is None else d
    if d != p.dim:
        raise ValueError(f"dimension {d} does not match B of size {p.dim}")
    return math.exp(d * digamma(p.a) - logdet(p.B))


def wishart_expected_logdet(p: WishartParams) -> float:
    """Exact E[log|G|] = sum_{i=0}^{d-1} psi(a + i/2) - log|B|."""
    return float(multi_digamma(p.half_dof, p.dim) - logdet(p.B))


def wishart_entropy(p: WishartParams) -> float:
    return float(
        p.log_normalizer() - (p.a - 1.0) * p.expected_logdet() + p.half_dof * p.dim
    )


def dirichlet_update(prior: DirichletParams, soft_counts) -> DirichletParams:
    counts = np.atleast_1d(np.asarray(soft_counts, dtype=float))
    if counts.shape != prior.lambdas.shape:
        raise ValueError(
            f"soft counts have shape {counts.shape}, prior has {prior.lambdas.shape}"
        )
    if np.any(counts < 0):
        raise ValueError("soft counts must be nonnegative")
    return DirichletParams(prior.lambdas + counts)


def normal_wishart_update(
    prior: NormalWishartParams, weight: float, first_moment, scatter
) -> NormalWishartParams:
    """Conjugate Normal-Wishart update from weighted sufficient statistics.

    ``weight`` is the effective count n, ``first_moment`` the weighted mean
    ybar and ``scatter`` the weighted covariance S = sum_n w_n (y_n - ybar)
    (y_n - ybar)^T / n. With these:

        a'    = a + n
        beta' = beta + n
        xi'   = (beta xi + n ybar) / (beta + n)
        B'    = B + n [S + beta/(beta + n) (ybar - xi)(ybar - xi)^T]
    """
    if weight < 0:
        raise ValueError("weight must be nonnegative")
    d = prior.dim
    ybar = np.atleast_1d(np.asarray(first_moment, dtype=float))
    S = np.atleast_2d(np.asarray(scatter, dtype=float))
    if ybar.shape != (d,) or S.shape != (d, d):
        raise ValueError("moment dimensions do not match the prior")
    if not np.allclose(S, S.T, atol=1e-12 * max(1.0, np.abs(S).max())):
        raise ValueError("scatter must be symmetric")
    if np.linalg.eigvalsh(S).min() < -1e-10 * max(1.0, np.abs(S).max()):
        raise ValueError("scatter must be positive semi-definite")
    if weight == 0:
        return prior
    beta_post = prior.beta + weight
    diff = ybar - prior.xi
    B_prime = S + (prior.beta / beta_post) * np.outer(diff, diff)
    return NormalWishartParams(
        a=prior.a + weight,
        B=prior.B + weight * B_prime,
        xi=(prior.beta * prior.xi + weight * ybar) / beta_post,
        beta=beta_post,
    )


def kl_dirichlet(q: DirichletParams, p: DirichletParams) -> float:
    if q.dim != p.dim:
        raise ValueError("Dirichlet dimensions differ")
    elog = q.expected_log()
    val = p.log_normalizer() - q.log_normalizer() + np.dot(q.lambdas - p.lambdas, elog)
    return float(val)


def kl_wishart(q: WishartParams, p: WishartParams) -> float:
    if q.dim != p.dim:
        raise ValueError("Wishart dimensions differ")
    val = (
        p.log_normalizer()
        - q.log_normalizer()
        + (q.a - p.a) * q.expected_logdet()
        - float(np.trace((q.B - p.B) @ q.mean()))
    )
    return val


def kl_normal(q: NormalParams, p: NormalParams) -> float:
    if q.dim != p.dim:
        raise ValueError("Normal dimensions differ")
    d = q.dim
    diff = q.mu - p.mu
    val = 0.5 * (
        float(np.trace(p.precision @ q.covariance()))
        + float(diff @ p.precision @ diff)
        - d
        + logdet(q.precision)
        - logdet(p.precision)
    )
    return val


def kl_normal_wishart(q: NormalWishartParams, p: NormalWishartParams) -> float:
    if q.dim != p.dim:
        raise ValueError("Normal-Wishart dimensions differ")
    d = q.dim
    qw = q.wishart()
    diff = q.xi - p.xi
    # E_q(G)[ KL(N(xi_q, beta_q G) || N(xi_p, beta_p G)) ]
    normal_part = 0.5 * (
        d * p.beta / q.beta
        + p.beta * float(diff @ qw.mean() @ diff)
        - d
        + d * math.log(q.beta / p.beta)
    )
    return kl_wishart(qw, p.wishart()) + normal_part


_KL = {
    DirichletParams: kl_dirichlet,
    WishartParams: kl_wishart,
    NormalParams: kl_normal,
    NormalWishartParams: kl_normal_wishart,
}


def kl_divergence(q, p) -> float:
    """KL(q || p) for two records of the same family."""
    if type(q) is not type(p):
        raise TypeError(f"cannot compare {type(q).__name__} with {type(p).__name__}")
    try:
        fn = _KL[type(q)]
    except KeyError:
        raise TypeError(f"no KL divergence for {type(q).__name__}") from None
    return fn(q, p)

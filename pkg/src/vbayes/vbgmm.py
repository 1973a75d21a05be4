"""Variational Bayes Gaussian mixtures with automatic pruning and a posterior
over the number of components.

Two levels are exposed:

* The sufficient-statistic (SS) form, :func:`e_step`, :func:`m_step` and
  :func:`prune`, which work on ``GmmSuffStats`` (pi_bar, mu_bar, gamma_bar)
  exactly as the classic VB mixture recursions are usually written. These
  recursions treat the Wishart log-determinant with a single digamma and
  take a fixed-point shortcut for the precision, so they only coincide
  with coordinate ascent on the free energy for d = 1 and flat priors.
* The posterior form used by :func:`fit`: q(pi) Dirichlet, q(mu_s) Normal,
  q(Gamma_s) Wishart, updated by exact coordinate ascent under a proper
  Normal-Wishart prior. Every step provably raises the free energy, and in
  the flat-prior, large-sample limit the updates reduce to the SS form.

The M-step for (q(mu_s), q(Gamma_s)) is solved in closed form. With
Nk = sum_n r_ns, weighted mean ybar and weighted scatter S,

    beta  = beta0 + Nk
    m     = (beta0 xi0 + Nk ybar) / beta
    C     = B0 + [Nk S + beta0 Nk / beta (ybar - xi0)(ybar - xi0)^T] / 2
    a     = a0 + (Nk + 1) / 2
    Gbar  = (a + (d - 2)/2) C^-1            (= E[Gamma])
    B     = C + Gbar^-1 / 2
    q(mu) = N(m, beta Gbar)

which is the joint fixed point of the two coupled mean-field updates.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp

from .distributions import (
    DirichletParams,
    NormalParams,
    WishartParams,
    chol_inv,
    digamma,
    dirichlet_geometric_mean,
    kl_dirichlet,
    kl_wishart,
    multi_digamma,
    wishart_geometric_mean_det,
)
from .ensemble import (
    MONOTONE_RTOL,
    FreeEnergyReport,
    ModelCollapseError,
    NonMonotoneError,
    StructurePosterior,
    bic_penalty,
    check_monotone,
    flat_log_prior,
    structure_log_posterior,
)

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


# --------------------------------------------------------------------------
# records


@dataclass(frozen=True)
class GmmSuffStats:
    pi_bar: np.ndarray  # (m,)
    mu_bar: np.ndarray  # (m, d)
    gamma_bar: np.ndarray  # (m, d, d) precisions
    alive: np.ndarray  # (m,) bool

    @property
    def n_components(self) -> int:
        return self.pi_bar.size

    @property
    def dim(self) -> int:
        return self.mu_bar.shape[1]

    def permuted(self, order) -> "GmmSuffStats":
        order = np.asarray(order)
        return GmmSuffStats(
            self.pi_bar[order], self.mu_bar[order], self.gamma_bar[order], self.alive[order]
        )


@dataclass(frozen=True)
class GmmPrior:
    """Dirichlet(weight_conc) on the weights; per component
    Gamma ~ Wishart(shape, rate) and mu | Gamma ~ N(mean, beta Gamma)."""

    weight_conc: float
    shape: float
    rate: np.ndarray
    mean: np.ndarray
    beta: float

    @classmethod
    def from_data(cls, X, strength: float = 1e-3, weight_conc: float = 1.0) -> "GmmPrior":
        """Weak data-scaled prior.

        shape a0 = d/2 + 1, rate B0 = strength * cov(X) * a0,
        beta0 = strength, mean = sample mean.
        """
        X = _as_data(X)
        d = X.shape[1]
        cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True))
        cov = cov + 1e-12 * max(np.trace(cov) / d, 1e-300) * np.eye(d)
        a0 = d / 2.0 + 1.0
        return cls(weight_conc, a0, strength * cov * a0, X.mean(axis=0), strength)

    def wishart(self) -> WishartParams:
        return WishartParams(self.shape, self.rate)

    def weights(self, m: int) -> DirichletParams:
        return DirichletParams(np.full(m, self.weight_conc))


@dataclass(frozen=True)
class GmmPosterior:
    """q(pi) q(mu_s) q(Gamma_s) for every component s."""

    weights: DirichletParams
    counts: np.ndarray  # (m,) effective counts N pi_bar
    mean: np.ndarray  # (m, d)
    mean_precision: np.ndarray  # (m, d, d)
    shape: np.ndarray  # (m,) Wishart a
    rate: np.ndarray  # (m, d, d) Wishart B
    alive: np.ndarray  # (m,) bool

    @property
    def n_components(self) -> int:
        return self.counts.size

    @property
    def dim(self) -> int:
        return self.mean.shape[1]

    def wishart(self, s: int) -> WishartParams:
        return WishartParams(self.shape[s], self.rate[s])

    def normal(self, s: int) -> NormalParams:
        return NormalParams(self.mean[s], self.mean_precision[s])

    def precision_mean(self) -> np.ndarray:
        d = self.dim
        half_dof = self.shape + 0.5 * (d - 1)
        return half_dof[:, None, None] * np.array([chol_inv(B) for B in self.rate])

    def expected_logdet(self) -> np.ndarray:
        d = self.dim
        half_dof = self.shape + 0.5 * (d - 1)
        return np.array(
            [
                float(multi_digamma(h, d)) - _logdet(B)
                for h, B in zip(half_dof, self.rate)
            ]
        )

    def weight_means(self) -> np.ndarray:
        """Posterior mean component probabilities (N pi_bar + lambda0) / (N + m lambda0)."""
        return self.weights.mean()

    def stats(self) -> GmmSuffStats:
        n = self.counts.sum()
        return GmmSuffStats(self.counts / n, self.mean.copy(), self.precision_mean(), self.alive.copy())


@dataclass(frozen=True)
class GmmConfig:
    tol: float = 1e-8
    max_iter: int = 500
    seed: int = 0
    prior_strength: float = 1e-3
    weight_conc: float = 1.0
    updates: str = "exact"  # or "classic" for the SS recursions
    check_monotone: bool = True
    n_jobs: int = 1

    def __post_init__(self):
        if self.updates not in ("exact", "classic"):
            raise ValueError(f"unknown update scheme {self.updates!r}")
        if not self.tol > 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter at least 1")


# --------------------------------------------------------------------------
# helpers


def _as_data(X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("data must be an N x d matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contain non-finite values")
    return X


def _logdet(M: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(M)))))


def _quad(X: np.ndarray, means: np.ndarray, precisions: np.ndarray) -> np.ndarray:
    """(x_n - mu_s)^T P_s (x_n - mu_s) for all n, s -> (N, m)."""
    diff = X[:, None, :] - means[None, :, :]
    return np.einsum("nsi,sij,nsj->ns", diff, precisions, diff)


def _normalize_log(logr: np.ndarray) -> np.ndarray:
    logz = logsumexp(logr, axis=1, keepdims=True)
    return np.exp(logr - logz)


def weighted_moments(X, resp):
    """Soft counts, weighted means and weighted scatters (centered at the
    weighted means) of the data under the responsibilities."""
    X = _as_data(X)
    resp = np.asarray(resp, dtype=float)
    counts = resp.sum(axis=0)
    safe = np.where(counts > 0, counts, 1.0)
    means = (resp.T @ X) / safe[:, None]
    diff = X[:, None, :] - means[None, :, :]
    scatter = np.einsum("ns,nsi,nsj->sij", resp, diff, diff) / safe[:, None, None]
    return counts, means, scatter


# --------------------------------------------------------------------------
# sufficient-statistic recursions


def e_step(X, stats: GmmSuffStats, n: int | None = None) -> np.ndarray:
    """Label posterior q(s_n) from sufficient statistics.

    q(s_n = s) is proportional to

        pi~_s |Gamma~_s / 2pi|^(1/2) exp(-(y_n - mu_s)^T Gamma_s (y_n - mu_s)/2)
            exp(-d / (2 N pi_s))

    with pi~_s = exp(psi(N pi_s + 1) - psi(N + m)), Gamma~_s = |B_s|^-1
    exp(d psi(a_s)), a_s = N pi_s / 2 and B_s = a_s Gamma_s^-1.
    Dead components get zero responsibility.
    """
    X = _as_data(X)
    N, d = X.shape
    n = N if n is None else n
    m = stats.n_components
    alive = np.asarray(stats.alive, dtype=bool)
    if not alive.any():
        raise ModelCollapseError("no alive components left")
    counts = n * stats.pi_bar
    lam = np.where(alive, counts, 0.0) + 1.0
    log_pi = np.log(dirichlet_geometric_mean(DirichletParams(lam)))
    logr = np.full((N, m), -np.inf)
    idx = np.flatnonzero(alive)
    quad = _quad(X, stats.mu_bar[idx], stats.gamma_bar[idx])
    for j, s in enumerate(idx):
        a = counts[s] / 2.0
        B = a * chol_inv(stats.gamma_bar[s])
        log_gdet = math.log(wishart_geometric_mean_det(WishartParams(a, B), d))
        logr[:, s] = (
            log_pi[s]
            + 0.5 * (log_gdet - d * LOG_2PI)
            - 0.5 * quad[:, j]
            - d / (2.0 * counts[s])
        )
    return _normalize_log(logr)


def m_step(X, resp) -> GmmSuffStats:
    """New sufficient statistics from responsibilities.

    pi_s = <1>_s, mu_s = <y>_s / pi_s and
    Gamma_s = (1 - 1/(N pi_s)) (<(y - mu_s)(y - mu_s)^T>_s / pi_s)^-1,
    where <f>_s = sum_n f(y_n) q(s_n = s) / N. Components with N pi_s <= 1
    are returned dead; their precision slot holds the identity.
    """
    X = _as_data(X)
    N, d = X.shape
    resp = np.asarray(resp, dtype=float)
    counts, means, scatter = weighted_moments(X, resp)
    pi_bar = counts / N
    alive = counts > 1.0
    gamma = np.empty((counts.size, d, d))
    for s in range(counts.size):
        if not alive[s]:
            gamma[s] = np.eye(d)
            means[s] = 0.0 if counts[s] == 0 else means[s]
            continue
        gamma[s] = (1.0 - 1.0 / counts[s]) * _spd_inverse(scatter[s])
    return GmmSuffStats(pi_bar, means, gamma, alive)


def _spd_inverse(S: np.ndarray) -> np.ndarray:
    d = S.shape[0]
    for jitter in (0.0, 1e-9 * max(np.trace(S) / d, np.finfo(float).tiny)):
        try:
            with np.errstate(over="ignore"):
                out = chol_inv(S + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(out)):
            return out
    raise np.linalg.LinAlgError("scatter matrix is singular even after jitter")


def prune(stats: GmmSuffStats, resp, n: int | None = None):
    """Kill components with pi_bar <= 1/N.

    Their responsibility columns are zeroed, rows renormalized and the
    surviving pi_bar renormalized. Returns the new (stats, resp).
    """
    resp = np.array(resp, dtype=float)
    n = resp.shape[0] if n is None else n
    dead = np.asarray(stats.alive, dtype=bool) & (stats.pi_bar <= 1.0 / n)
    alive = np.asarray(stats.alive, dtype=bool) & ~dead
    if not alive.any():
        raise ModelCollapseError("pruning would remove every component")
    if not dead.any():
        return stats, resp
    resp[:, ~alive] = 0.0
    rows = resp.sum(axis=1, keepdims=True)
    if np.any(rows == 0):
        raise ModelCollapseError("a data point lost all its responsibility mass")
    resp /= rows
    pi_bar = np.where(alive, stats.pi_bar, 0.0)
    pi_bar = pi_bar / pi_bar.sum()
    return replace(stats, pi_bar=pi_bar, alive=alive), resp


def posterior_from_stats(stats: GmmSuffStats, n: int) -> GmmPosterior:
    """Parameter posterior tied to SS: q(mu_s) = N(mu_s, N pi_s Gamma_s),
    q(Gamma_s) = Wishart(a_s = N pi_s / 2, B_s = a_s Gamma_s^-1) and
    q(pi) = Dirichlet(N pi_s + 1). Dead components keep unit placeholders."""
    counts = n * np.where(stats.alive, stats.pi_bar, 0.0)
    m, d = stats.mu_bar.shape
    shape = np.ones(m)
    rate = np.tile(np.eye(d), (m, 1, 1))
    prec = np.tile(np.eye(d), (m, 1, 1))
    for s in np.flatnonzero(stats.alive):
        shape[s] = counts[s] / 2.0
        rate[s] = shape[s] * chol_inv(stats.gamma_bar[s])
        prec[s] = counts[s] * stats.gamma_bar[s]
    return GmmPosterior(
        DirichletParams(counts + 1.0),
        counts,
        stats.mu_bar.copy(),
        prec,
        shape,
        rate,
        np.asarray(stats.alive, dtype=bool).copy(),
    )


# --------------------------------------------------------------------------
# exact coordinate ascent


def expected_log_joint(X, post: GmmPosterior, alive=None) -> np.ndarray:
    """E_q(theta)[log pi_s + log N(y_n | mu_s, Gamma_s)] -> (N, m); dead
    components get -inf."""
    X = _as_data(X)
    N, d = X.shape
    alive = post.alive if alive is None else np.asarray(alive, dtype=bool)
    if not alive.any():
        raise ModelCollapseError("no alive components left")
    elog_pi = post.weights.expected_log()
    gbar = post.precision_mean()
    elogdet = post.expected_logdet()
    idx = np.flatnonzero(alive)
    trace = np.array(
        [np.trace(gbar[s] @ chol_inv(post.mean_precision[s])) for s in idx]
    )
    quad = _quad(X, post.mean[idx], gbar[idx])
    out = np.full((N, post.n_components), -np.inf)
    out[:, idx] = (
        elog_pi[idx] + 0.5 * (elogdet[idx] - d * LOG_2PI) - 0.5 * (quad + trace)
    )
    return out


def vb_e_step(X, post: GmmPosterior, alive=None) -> np.ndarray:
    return _normalize_log(expected_log_joint(X, post, alive))


def update_posterior(X, resp, prior: GmmPrior, alive) -> GmmPosterior:
    """Exact VB update of q(pi), q(mu_s), q(Gamma_s) given responsibilities."""
    X = _as_data(X)
    d = X.shape[1]
    alive = np.asarray(alive, dtype=bool)
    counts, ybar, scatter = weighted_moments(X, resp)
    counts = np.where(alive, counts, 0.0)
    m = counts.size
    beta = prior.beta + counts
    mean = (prior.beta * prior.mean[None, :] + counts[:, None] * ybar) / beta[:, None]
    shape = prior.shape + 0.5 * (counts + 1.0)
    rate = np.empty((m, d, d))
    prec = np.empty((m, d, d))
    for s in range(m):
        diff = ybar[s] - prior.mean
        C = prior.rate + 0.5 * (
            counts[s] * scatter[s] + (prior.beta * counts[s] / beta[s]) * np.outer(diff, diff)
        )
        C = 0.5 * (C + C.T)
        gbar = (shape[s] + 0.5 * (d - 2)) * chol_inv(C)
        rate[s] = C + 0.5 * chol_inv(gbar)
        prec[s] = beta[s] * gbar
    weights = DirichletParams(prior.weight_conc + counts)
    return GmmPosterior(weights, counts, mean, prec, shape, rate, alive.copy())


def free_energy(X, post: GmmPosterior, resp, prior: GmmPrior) -> FreeEnergyReport:
    """F = E[log p(Y, S | theta)] + H[q(S)] - KL[q(theta) || p(theta)]."""
    X = _as_data(X)
    d = X.shape[1]
    resp = np.asarray(resp, dtype=float)
    ej = expected_log_joint(X, post, alive=np.ones(post.n_components, dtype=bool))
    used = resp > 0
    expected = float(np.sum(resp[used] * ej[used]))
    entropy = -float(np.sum(resp[used] * np.log(resp[used])))
    likelihood = expected + entropy

    kl_pi = kl_dirichlet(post.weights, prior.weights(post.n_components))
    gbar = post.precision_mean()
    elogdet = post.expected_logdet()
    p_gamma = prior.wishart()
    kl_comp = 0.0
    for s in range(post.n_components):
        cov_mu = chol_inv(post.mean_precision[s])
        diff = post.mean[s] - prior.mean
        h_mu = 0.5 * d * (1.0 + LOG_2PI) - 0.5 * _logdet(post.mean_precision[s])
        e_log_p_mu = (
            -0.5 * d * LOG_2PI
            + 0.5 * d * math.log(prior.beta)
            + 0.5 * elogdet[s]
            - 0.5 * prior.beta * (diff @ gbar[s] @ diff + np.trace(gbar[s] @ cov_mu))
        )
        kl_comp += kl_wishart(post.wishart(s), p_gamma) - h_mu - e_log_p_mu
    kl = kl_pi + kl_comp
    for name, val in (("expected log likelihood", expected), ("label entropy", entropy),
                      ("weight KL", kl_pi), ("component KL", kl_comp)):
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite {name} in the free energy")
    return FreeEnergyReport(likelihood, kl)


# --------------------------------------------------------------------------
# initialisation


def kmeans_pp_seeds(X, m: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first centre uniform, then D^2 weighting."""
    X = _as_data(X)
    N = X.shape[0]
    centres = [X[rng.integers(N)]]
    d2 = np.sum((X - centres[0]) ** 2, axis=1)
    for _ in range(1, m):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(N)
        else:
            idx = rng.choice(N, p=d2 / total)
        centres.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centres)


def initial_stats(X, m: int, seed: int = 0) -> GmmSuffStats:
    """pi = 1/m, means by k-means++ seeding, precisions = inverse data covariance."""
    X = _as_data(X)
    N, d = X.shape
    rng = np.random.default_rng(seed)
    mu = kmeans_pp_seeds(X, m, rng)
    cov = np.atleast_2d(np.cov(X, rowvar=False, bias=True))
    cov = cov + 1e-9 * max(np.trace(cov) / d, 1e-300) * np.eye(d)
    gamma = np.tile(chol_inv(cov), (m, 1, 1))
    return GmmSuffStats(np.full(m, 1.0 / m), mu, gamma, np.ones(m, dtype=bool))


def _posterior_for_init(stats: GmmSuffStats, n: int, prior: GmmPrior) -> GmmPosterior:
    """A posterior in the exact family whose means match the given SS."""
    m, d = stats.mu_bar.shape
    counts = n * stats.pi_bar
    shape = prior.shape + 0.5 * (counts + 1.0)
    rate = np.empty((m, d, d))
    prec = np.empty((m, d, d))
    for s in range(m):
        rate[s] = (shape[s] + 0.5 * (d - 1)) * chol_inv(stats.gamma_bar[s])
        prec[s] = (prior.beta + counts[s]) * stats.gamma_bar[s]
    return GmmPosterior(
        DirichletParams(prior.weight_conc + counts),
        counts,
        stats.mu_bar.copy(),
        prec,
        shape,
        rate,
        np.asarray(stats.alive, dtype=bool).copy(),
    )


# --------------------------------------------------------------------------
# fitting


@dataclass
class GmmFit:
    posterior: GmmPosterior
    resp: np.ndarray
    report: FreeEnergyReport
    prior: GmmPrior
    config: GmmConfig
    data: np.ndarray = field(repr=False)
    n_iter: int = 0
    converged: bool = False
    prune_iterations: tuple[int, ...] = ()

    def __iter__(self):
        yield self.posterior
        yield self.resp
        yield self.report

    @property
    def free_energy(self) -> float:
        return self.report.total

    @property
    def n_components(self) -> int:
        return self.posterior.n_components

    @property
    def n_alive(self) -> int:
        return int(self.posterior.alive.sum())

    @property
    def stats(self) -> GmmSuffStats:
        return self.posterior.stats()

    def responsibilities(self, Y) -> np.ndarray:
        return vb_e_step(Y, self.posterior)

    def classify(self, y) -> int:
        return classify(self, y)

    def plugin_log_density(self, y) -> float:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return float(logsumexp(expected_log_joint(y, self.posterior), axis=1)[0])

    def refit_augmented(self, y_new, max_iter: int = 200, tol: float = 1e-8) -> float:
        y_new = np.atleast_2d(np.asarray(y_new, dtype=float))
        if y_new.shape[1] != self.data.shape[1]:
            raise ValueError("query dimension does not match the fitted data")
        X = np.vstack([self.data, y_new])
        cfg = replace(self.config, max_iter=max_iter, tol=tol)
        res = _run(X, self.posterior, self.prior, cfg)
        if not res.converged:
            log.warning("augmented refit stopped after %d iterations", res.n_iter)
        return res.free_energy

    def bic_score(self) -> float:
        """Log likelihood at the posterior means minus the large-sample penalty."""
        X = self.data
        N, d = X.shape
        st = self.stats
        idx = np.flatnonzero(st.alive)
        k = idx.size
        w = st.pi_bar[idx] / st.pi_bar[idx].sum()
        logp = np.empty((N, k))
        for j, s in enumerate(idx):
            G = st.gamma_bar[s]
            diff = X - st.mu_bar[s]
            logp[:, j] = (
                math.log(w[j])
                + 0.5 * (_logdet(G) - d * LOG_2PI)
                - 0.5 * np.einsum("ni,ij,nj->n", diff, G, diff)
            )
        loglik = float(logsumexp(logp, axis=1).sum())
        n_params = (k - 1) + k * (d + d * (d + 1) // 2)
        return loglik - bic_penalty(n_params, N)


def _run(X, post: GmmPosterior, prior: GmmPrior, config: GmmConfig, resp=None) -> GmmFit:
    N = X.shape[0]
    alive = post.alive.copy()
    trace: list[float] = []
    prunes: list[int] = []
    segment_start = 0
    converged = False
    report = None
    it = 0
    for it in range(1, config.max_iter + 1):
        resp = vb_e_step(X, post, alive)
        while True:
            counts = resp.sum(axis=0)
            dead = alive & (counts <= 1.0)
            if not dead.any():
                break
            alive = alive & ~dead
            if not alive.any():
                raise ModelCollapseError("every component was pruned")
            log.debug("pruned components %s at iteration %d", np.flatnonzero(dead), it)
            prunes.append(it)
            segment_start = len(trace)
            resp = vb_e_step(X, post, alive)
        post = update_posterior(X, resp, prior, alive)
        report = free_energy(X, post, resp, prior)
        trace.append(report.total)
        if config.check_monotone:
            try:
                check_monotone(trace, MONOTONE_RTOL, start=segment_start + 1)
            except NonMonotoneError as exc:
                raise NonMonotoneError(it, exc.before, exc.after) from None
        if len(trace) >= 2 and segment_start < len(trace) - 1:
            if abs(trace[-1] - trace[-2]) < config.tol * abs(trace[-1]):
                converged = True
                break
    return GmmFit(
        post, resp, report.with_trace(trace), prior, config, X, it, converged, tuple(prunes)
    )


def _run_classic(X, stats: GmmSuffStats, prior: GmmPrior, config: GmmConfig) -> GmmFit:
    """The SS recursions; the free energy is evaluated for the tied posterior."""
    N = X.shape[0]
    trace: list[float] = []
    prunes: list[int] = []
    converged = False
    it = 0
    for it in range(1, config.max_iter + 1):
        resp = e_step(X, stats, N)
        stats = m_step(X, resp)
        if not np.all(stats.alive):
            prunes.append(it)
        if not stats.alive.any():
            raise ModelCollapseError("every component was pruned")
        post = posterior_from_stats(stats, N)
        resp = e_step(X, stats, N)
        report = free_energy(X, post, resp, prior)
        trace.append(report.total)
        if len(trace) >= 2 and abs(trace[-1] - trace[-2]) < config.tol * abs(trace[-1]):
            converged = True
            break
    return GmmFit(
        post, resp, report.with_trace(trace), prior, config, X, it, converged, tuple(prunes)
    )


def fit(X, m: int, config: GmmConfig = GmmConfig(), init: GmmSuffStats | None = None,
        prior: GmmPrior | None = None) -> GmmFit:
    """Fit an m-component VB mixture; components may be pruned on the way."""
    X = _as_data(X)
    N, d = X.shape
    if m < 1:
        raise ValueError("need at least one component")
    if N < 2:
        raise ValueError("need at least two data points")
    if prior is None:
        prior = GmmPrior.from_data(X, config.prior_strength, config.weight_conc)
    if init is None:
        init = initial_stats(X, m, config.seed)
    if init.n_components != m or init.dim != d:
        raise ValueError("initial statistics do not match (m, d)")
    if config.updates == "classic":
        return _run_classic(X, init, prior, config)
    return _run(X, _posterior_for_init(init, N, prior), prior, config)


def _fit_one(args):
    X, m, config = args
    try:
        return m, fit(X, m, config), None
    except (ModelCollapseError, NonMonotoneError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        return m, None, f"m={m}: {type(exc).__name__}: {exc}"


@dataclass
class GmmSweep:
    posterior: StructurePosterior
    fits: dict[int, GmmFit]

    def __iter__(self):
        yield self.posterior
        yield self.fits


def fit_all(X, K: int, config: GmmConfig = GmmConfig()) -> GmmSweep:
    """Fit m = 1..K independently and score each by its free energy under a
    flat structure prior. Failed fits are left out with a warning."""
    X = _as_data(X)
    if K < 1:
        raise ValueError("K must be at least 1")
    jobs = [(X, m, config) for m in range(1, K + 1)]
    if config.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=config.n_jobs) as ex:
            results = list(ex.map(_fit_one, jobs))
    else:
        results = [_fit_one(j) for j in jobs]
    fits = {m: f for m, f, _ in results if f is not None}
    warnings = [w for _, _, w in results if w is not None]
    for w in warnings:
        log.warning("excluded from structure posterior: %s", w)
    if not fits:
        raise RuntimeError("every structure failed: " + "; ".join(warnings))
    ms = sorted(fits)
    lp = flat_log_prior(K)[[m - 1 for m in ms]]
    sp = structure_log_posterior([fits[m].free_energy for m in ms], lp, ms, warnings)
    return GmmSweep(sp, fits)


def classify(fitted: GmmFit, y) -> int:
    """Most probable component (0-based) for a new point; ties go to the
    lower index."""
    r = vb_e_step(np.atleast_2d(np.asarray(y, dtype=float)), fitted.posterior)[0]
    return int(np.argmax(r))

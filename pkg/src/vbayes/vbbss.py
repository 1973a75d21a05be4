"""Variational Bayes blind source separation with a posterior over the
number of sources.

Model: y_n = A x_n + u_n with independent logistic sources
p(x_j) = cosh^-2(x_j/2)/4, Gaussian sensor noise of precision lambda_i and
a zero-mean Gaussian prior of precision alpha on every A_ij.

Variational family: q(A) Normal with independent rows (row i has mean
A_bar[i] and covariance Sigma_i), q(x_n) = N(rho_n, Gamma^-1) with a shared
precision Gamma.

The expected log source density has no closed form under q(x_n); it is
replaced by the lower bound

    E[log p(x)] >= -Tr(Gamma^-1)/4 - 2 sum_j log cosh(rho_j/2) + m log(1/4)

which follows from (log cosh)'' <= 1. Every update below is an exact
coordinate step on the resulting free energy:

* q(A):     Sigma_i = (C_xx^i)^-1 / (lambda_i N),  A_bar[i] = C_yx[i] (C_xx^i)^-1,
            C_xx^i = C_xx + alpha / (lambda_i N) I
* rho_n:    A^T Lam (y_n - A rho_n) - tanh(rho_n/2) = K rho_n,
            K = sum_i lambda_i Sigma_i = sum_i (C_xx^i)^-1 / N
* Gamma:    A^T Lam A + I/2 + K
* alpha:    d m / E[Tr A^T A]                     ("stationary" mode)
* lambda_i: 1 / E[(y_i - sum_j A_ij x_j)^2]      (optional)

The noise-precision rule comes from setting dF/dlambda_i = 0 with q fixed:
F depends on lambda_i only through N/2 log lambda_i - lambda_i N e_i / 2,
where e_i = Ryy_ii - 2 A_bar[i].C_yx[i] + A_bar[i] C_xx A_bar[i]^T
+ Tr(Sigma_i C_xx) is the expected squared residual of sensor i.

Fitting starts from a noise-free ICA solution in the top-m principal
subspace; starting from the principal directions alone leaves the fit near
the rotational saddle of the likelihood, where plain coordinate ascent
barely moves. Each iteration also tries an over-relaxed step on A_bar,
log alpha and log lambda and keeps it only when it beats the plain step,
so the free-energy trace stays non-decreasing.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .distributions import chol_inv
from .ensemble import (
    MONOTONE_RTOL,
    FreeEnergyReport,
    NonMonotoneError,
    StructurePosterior,
    check_monotone,
    flat_log_prior,
    structure_log_posterior,
)

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
LOG_QUARTER = math.log(0.25)
SOURCE_VARIANCE = math.pi**2 / 3.0
ALPHA_CAP = 1e12
LAMBDA_CAP = 1e12
ETA_GROWTH = 1.5


class SourceSolveError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"source fixed point did not converge in {iterations} iterations "
            f"(residual {residual:.3e})"
        )


@dataclass(frozen=True)
class BssState:
    mixing: np.ndarray  # (d, m) A_bar
    mixing_cov: np.ndarray  # (d, m, m) Sigma_i, one block per sensor row
    alpha: float
    noise_precision: np.ndarray  # (d,)

    @property
    def d(self) -> int:
        return self.mixing.shape[0]

    @property
    def m(self) -> int:
        return self.mixing.shape[1]


@dataclass(frozen=True)
class SourcePosterior:
    rho: np.ndarray  # (N, m)
    precision: np.ndarray  # (m, m)


@dataclass(frozen=True)
class SourceCorrelations:
    C_yx: np.ndarray  # (d, m)
    C_xx: np.ndarray  # (m, m)
    C_xx_i: np.ndarray  # (d, m, m)
    n: int


@dataclass(frozen=True)
class BssConfig:
    tol: float = 1e-8
    max_iter: int = 500
    alpha: float = 1.0
    alpha_mode: str = "stationary"
    lambda_update: bool = False
    noise_precision: tuple[float, ...] | None = None
    damping: float = 0.5
    inner_max_iter: int = 100
    inner_tol: float = 1e-8
    check_monotone: bool = True
    accelerate: bool = True
    init: str = "ica"
    n_jobs: int = 1

    def __post_init__(self):
        if self.alpha_mode not in ("stationary", "printed"):
            raise ValueError(f"unknown alpha mode {self.alpha_mode!r}")
        if self.init not in ("ica", "pca"):
            raise ValueError(f"unknown init {self.init!r}")
        if not 0 < self.damping <= 1:
            raise ValueError("damping must lie in (0, 1]")


# --------------------------------------------------------------------------
# helpers


def _as_data(Y) -> np.ndarray:
    Y = np.asarray(Y, dtype=float)
    if Y.ndim == 1:
        Y = Y[:, None]
    if Y.ndim != 2 or not np.all(np.isfinite(Y)):
        raise ValueError("data must be a finite N x d matrix")
    return Y


def _logdet(M: np.ndarray) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(np.linalg.cholesky(M)))))


def log_cosh(z):
    z = np.abs(z)
    return z + np.log1p(np.exp(-2.0 * z)) - math.log(2.0)


def correction_term(state: BssState, corr: SourceCorrelations | None = None) -> np.ndarray:
    """sum_i (C_xx^i)^-1 / N, which equals sum_i lambda_i Sigma_i."""
    if corr is not None:
        return sum(chol_inv(C) for C in corr.C_xx_i) / corr.n
    return np.einsum("i,ijk->jk", state.noise_precision, state.mixing_cov)


# --------------------------------------------------------------------------
# E-step


def source_precision(state: BssState, corr: SourceCorrelations | None = None) -> np.ndarray:
    """Gamma = A^T Lam A + I/2 + sum_i (C_xx^i)^-1 / N (shared by all n)."""
    A, lam = state.mixing, state.noise_precision
    G = A.T @ (lam[:, None] * A) + 0.5 * np.eye(state.m) + correction_term(state, corr)
    return 0.5 * (G + G.T)


def solve_sources(Y, state: BssState, rho_init=None, corr: SourceCorrelations | None = None,
                  damping: float = 0.5, max_iter: int = 100, tol: float = 1e-8) -> np.ndarray:
    """Solve A^T Lam (y_n - A rho_n) - tanh(rho_n/2) = K rho_n for every row.

    The root maximizes the concave g(rho) = b.rho - rho M rho / 2
    - 2 sum log cosh(rho/2), with M = A^T Lam A + K and b = A^T Lam y_n.
    Each sweep computes a target by solving the equation with tanh
    linearized at the current rho (Newton). The full step is taken when it
    increases g, else the damped step rho <- (1 - eta) rho + eta target.
    If neither ascends (tanh saturated, Newton overshoots) the secant
    linearization tanh(r/2) ~ (tanh(r0/2)/r0) r is used instead; it
    maximizes a quadratic minorizer of g, so that step always ascends.
    """
    Y = _as_data(Y)
    A, lam = state.mixing, state.noise_precision
    m = state.m
    M = A.T @ (lam[:, None] * A) + correction_term(state, corr)
    M = 0.5 * (M + M.T)
    b = Y @ (lam[:, None] * A)  # (N, m)
    if rho_init is None:
        rho = pinv_sources(Y, A)
    else:
        rho = np.array(rho_init, dtype=float, copy=True).reshape(Y.shape[0], m)
    eye = np.eye(m)[None]

    def residual(r, rows=slice(None)):
        return b[rows] - r @ M - np.tanh(0.5 * r)

    def objective(r, rows):
        return (np.einsum("nj,nj->n", b[rows], r) - 0.5 * np.einsum("nj,jk,nk->n", r, M, r)
                - 2.0 * log_cosh(0.5 * r).sum(axis=1))

    norms = np.linalg.norm(residual(rho), axis=1)
    active = np.flatnonzero(norms >= tol)
    it = 0
    while active.size and it < max_iter:
        it += 1
        r = rho[active]
        t = np.tanh(0.5 * r)
        slope = 0.5 * (1.0 - t * t)  # derivative of tanh(r/2)
        target = np.linalg.solve(M[None] + slope[:, :, None] * eye,
                                 (b[active] - t + slope * r)[:, :, None])[:, :, 0]
        g0 = objective(r, active)
        step = target
        bad = objective(step, active) < g0
        if bad.any():
            step[bad] = (1.0 - damping) * r[bad] + damping * target[bad]
            bad[bad] = objective(step[bad], active[bad]) < g0[bad]
        if bad.any():
            rb = r[bad]
            small = np.abs(rb) < 1e-8
            secant = np.where(small, 0.5, np.tanh(0.5 * rb) / np.where(small, 1.0, rb))
            step[bad] = np.linalg.solve(M[None] + secant[:, :, None] * eye,
                                        b[active[bad]][:, :, None])[:, :, 0]
        rho[active] = step
        norms[active] = np.linalg.norm(residual(step, active), axis=1)
        active = active[norms[active] >= tol]
    if active.size:
        raise SourceSolveError(float(norms.max()), it)
    return rho


def source_fixed_point(y_n, state: BssState, corr: SourceCorrelations | None = None,
                       rho_init=None, config: BssConfig = BssConfig()) -> np.ndarray:
    """Posterior mean rho_n for a single observation; see :func:`solve_sources`."""
    y_n = np.atleast_2d(np.asarray(y_n, dtype=float))
    r0 = None if rho_init is None else np.atleast_2d(rho_init)
    return solve_sources(
        y_n, state, r0, corr, config.damping, config.inner_max_iter, config.inner_tol
    )[0]


def pinv_sources(Y, A) -> np.ndarray:
    """Low-noise initial guess (A^T A)^-1 A^T y_n for every row."""
    Y = _as_data(Y)
    return np.linalg.lstsq(A, Y.T, rcond=None)[0].T


def jensen_bound(rho, gamma) -> float:
    """Lower bound on E[log p(x)] under N(rho, gamma^-1) for logistic sources."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    var = np.diag(chol_inv(gamma))
    return float(-0.25 * var.sum() - 2.0 * np.sum(log_cosh(0.5 * rho)) + rho.size * LOG_QUARTER)


def logistic_log_density(x):
    """log of cosh^-2(x/2)/4."""
    return LOG_QUARTER - 2.0 * log_cosh(0.5 * np.asarray(x, dtype=float))


# --------------------------------------------------------------------------
# M-step


def update_correlations(Y, sp: SourcePosterior, state: BssState) -> SourceCorrelations:
    """C_yx = sum y rho^T / N, C_xx = sum (rho rho^T + Gamma^-1) / N and
    the per-sensor ridged copies C_xx + alpha/(lambda_i N) I."""
    Y = _as_data(Y)
    N = Y.shape[0]
    rho = sp.rho
    C_yx = Y.T @ rho / N
    C_xx = rho.T @ rho / N + chol_inv(sp.precision)
    C_xx = 0.5 * (C_xx + C_xx.T)
    ridge = state.alpha / (state.noise_precision * N)
    C_xx_i = C_xx[None, :, :] + ridge[:, None, None] * np.eye(state.m)[None]
    return SourceCorrelations(C_yx, C_xx, C_xx_i, N)


def mixing_update(corr: SourceCorrelations, noise_precision, n: int | None = None):
    """Row i of A_bar = C_yx[i] (C_xx^i)^-1; Sigma_i = (C_xx^i)^-1 / (lambda_i N)."""
    lam = np.asarray(noise_precision, dtype=float)
    n = corr.n if n is None else n
    d, m = corr.C_yx.shape
    A = np.empty((d, m))
    Sigma = np.empty((d, m, m))
    for i in range(d):
        Ci = corr.C_xx_i[i]
        if np.linalg.cond(Ci) > 1e12:
            raise np.linalg.LinAlgError(f"C_xx^{i} is ill-conditioned")
        inv = chol_inv(Ci)
        A[i] = inv @ corr.C_yx[i]
        Sigma[i] = inv / (lam[i] * n)
    return A, Sigma


def expected_mixing_norm(state: BssState) -> float:
    """E[Tr A^T A] = Tr(A_bar^T A_bar) + sum_i Tr Sigma_i."""
    return float(np.sum(state.mixing**2) + np.trace(state.mixing_cov, axis1=1, axis2=2).sum())


def alpha_update(state: BssState, corr: SourceCorrelations | None = None,
                 mode: str = "stationary") -> float:
    """Prior precision of the mixing matrix.

    ``printed``: (1/dm) Tr(A^T A + sum_i (C_xx^i)^-1 / (lambda_i N)), the
    expected mean square of A, which has the units of a variance.
    ``stationary``: dm / E[Tr A^T A], the zero of dF/dalpha.
    """
    d, m = state.d, state.m
    if corr is not None:
        blocks = sum(
            np.trace(chol_inv(C)) / (lam * corr.n)
            for C, lam in zip(corr.C_xx_i, state.noise_precision)
        )
        total = float(np.sum(state.mixing**2) + blocks)
    else:
        total = expected_mixing_norm(state)
    if mode == "printed":
        if total <= 0:
            raise ZeroDivisionError("mixing matrix and its covariance vanish")
        return total / (d * m)
    if mode != "stationary":
        raise ValueError(f"unknown alpha mode {mode!r}")
    if total <= d * m / ALPHA_CAP:
        log.warning("alpha update hit the cap %.0e", ALPHA_CAP)
        return ALPHA_CAP
    return d * m / total


def expected_residuals(Y, sp: SourcePosterior, state: BssState,
                       corr: SourceCorrelations | None = None) -> np.ndarray:
    """Per-sensor E[(y_i - A_i x)^2] averaged over n, under q(x) q(A)."""
    Y = _as_data(Y)
    if corr is None:
        corr = update_correlations(Y, sp, state)
    A = state.mixing
    Ryy = np.mean(Y**2, axis=0)
    cross = np.einsum("ij,ij->i", A, corr.C_yx)
    quad = np.einsum("ij,jk,ik->i", A, corr.C_xx, A)
    cov = np.einsum("ijk,kj->i", state.mixing_cov, corr.C_xx)
    return Ryy - 2.0 * cross + quad + cov


def lambda_update(Y, sp: SourcePosterior, state: BssState,
                  corr: SourceCorrelations | None = None) -> np.ndarray:
    """lambda_i = 1 / expected squared residual of sensor i (capped)."""
    e = expected_residuals(Y, sp, state, corr)
    out = np.empty_like(e)
    small = e <= 1.0 / LAMBDA_CAP
    if small.any():
        log.warning("noise precision hit the cap %.0e on sensors %s", LAMBDA_CAP,
                    np.flatnonzero(small))
    out[small] = LAMBDA_CAP
    out[~small] = 1.0 / e[~small]
    return out


# --------------------------------------------------------------------------
# free energy


def mixing_kl(state: BssState) -> float:
    """KL(q(A) || N(0, alpha^-1 I))."""
    alpha, m = state.alpha, state.m
    total = 0.0
    for Ai, Si in zip(state.mixing, state.mixing_cov):
        total += 0.5 * (
            alpha * np.trace(Si) + alpha * Ai @ Ai - m - _logdet(Si) - m * math.log(alpha)
        )
    return float(total)


def free_energy(Y, state: BssState, sp: SourcePosterior,
                corr: SourceCorrelations | None = None) -> FreeEnergyReport:
    Y = _as_data(Y)
    N = Y.shape[0]
    m = state.m
    lam = state.noise_precision
    if corr is None:
        corr = update_correlations(Y, sp, state)
    e = expected_residuals(Y, sp, state, corr)
    noise_term = 0.5 * N * float(np.sum(np.log(lam) - LOG_2PI - lam * e))
    cov_x = chol_inv(sp.precision)
    source_term = float(
        -0.25 * N * np.trace(cov_x) - 2.0 * np.sum(log_cosh(0.5 * sp.rho)) + N * m * LOG_QUARTER
    )
    entropy = N * (0.5 * m * (1.0 + LOG_2PI) - 0.5 * _logdet(sp.precision))
    kl = mixing_kl(state)
    for name, val in (("noise term", noise_term), ("source term", source_term),
                      ("source entropy", entropy), ("mixing KL", kl)):
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite {name} in the free energy")
    return FreeEnergyReport(noise_term + source_term + entropy, kl)


# --------------------------------------------------------------------------
# fitting


def ica_rotation(Z, max_iter: int = 1000, step: float = 0.1, tol: float = 1e-7) -> np.ndarray:
    """Noise-free maximum-likelihood unmixing of whitened rows Z for logistic
    sources, by natural gradient W <- W + step (I - tanh(U/2)^T U / N) W."""
    N, m = Z.shape
    W = math.sqrt(SOURCE_VARIANCE) * np.eye(m)
    eye = np.eye(m)
    for _ in range(max_iter):
        U = Z @ W.T
        dW = step * (eye - np.tanh(0.5 * U).T @ U / N) @ W
        W = W + dW
        if np.max(np.abs(dW)) < tol * np.max(np.abs(W)):
            break
    return W


def initial_state(Y, m: int, config: BssConfig = BssConfig()) -> tuple[BssState, SourceCorrelations]:
    """A_bar from the top-m principal directions, then (init="ica") rotated by a
    noise-free ICA fit in that subspace; "pca" scales the directions to the
    source variance instead. lambda_i = 1 / sample variance of sensor i unless
    configured."""
    Y = _as_data(Y)
    N, d = Y.shape
    R = Y.T @ Y / N
    evals, evecs = np.linalg.eigh(R)
    order = np.argsort(evals)[::-1][:m]
    root = np.sqrt(np.maximum(evals[order], 1e-12 * evals.max()))
    if config.init == "ica":
        W = ica_rotation(Y @ (evecs[:, order] / root))
        A = (evecs[:, order] * root) @ np.linalg.inv(W)
    else:
        A = evecs[:, order] * (root / math.sqrt(SOURCE_VARIANCE))
    # eigh's sign convention is platform dependent; fix it
    A *= np.where(A[np.argmax(np.abs(A), axis=0), range(A.shape[1])] < 0, -1.0, 1.0)
    if config.noise_precision is not None:
        lam = np.asarray(config.noise_precision, dtype=float)
        if lam.shape != (d,):
            raise ValueError(f"need {d} noise precisions, got {lam.shape}")
    else:
        lam = 1.0 / np.diag(R)
    C_xx = SOURCE_VARIANCE * np.eye(A.shape[1])
    corr = SourceCorrelations(
        A @ C_xx, C_xx, C_xx[None] + (config.alpha / (lam * N))[:, None, None] * np.eye(A.shape[1]), N
    )
    _, Sigma = mixing_update(corr, lam, N)
    return BssState(A, Sigma, float(config.alpha), lam), corr


@dataclass
class BssFit:
    state: BssState
    sources: SourcePosterior
    report: FreeEnergyReport
    config: BssConfig
    data: np.ndarray = field(repr=False)
    n_iter: int = 0
    converged: bool = False

    def __iter__(self):
        yield self.state
        yield self.sources
        yield self.report

    @property
    def free_energy(self) -> float:
        return self.report.total

    @property
    def m(self) -> int:
        return self.state.m

    def reconstruct(self, Y=None) -> np.ndarray:
        return reconstruct_sources(self, Y)

    def plugin_log_density(self, y) -> float:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        cfg = self.config
        rho = solve_sources(y, self.state, None, None, cfg.damping, cfg.inner_max_iter, cfg.inner_tol)
        sp = SourcePosterior(rho, self.sources.precision)
        lam = self.state.noise_precision
        e = expected_residuals(y, sp, self.state)
        m = self.m
        cov_x = chol_inv(sp.precision)
        return float(
            0.5 * np.sum(np.log(lam) - LOG_2PI - lam * e)
            - 0.25 * np.trace(cov_x) - 2.0 * np.sum(log_cosh(0.5 * rho)) + m * LOG_QUARTER
            + 0.5 * m * (1.0 + LOG_2PI) - 0.5 * _logdet(sp.precision)
        )

    def refit_augmented(self, y_new, max_iter: int = 200, tol: float = 1e-8) -> float:
        y_new = np.atleast_2d(np.asarray(y_new, dtype=float))
        Y = np.vstack([self.data, y_new])
        rho0 = np.vstack([self.sources.rho, pinv_sources(y_new, self.state.mixing)])
        cfg = replace(self.config, max_iter=max_iter, tol=tol)
        res = _run(Y, self.state, rho0, cfg)
        return res.free_energy


def _e_step(Y, state: BssState, rho, config: BssConfig) -> SourcePosterior:
    gamma = source_precision(state)
    rho = solve_sources(Y, state, rho, None, config.damping, config.inner_max_iter,
                        config.inner_tol)
    return SourcePosterior(rho, gamma)


def _m_step(Y, state: BssState, sp: SourcePosterior, config: BssConfig) -> BssState:
    """q(A), then alpha, then (optionally) lambda."""
    corr = update_correlations(Y, sp, state)
    A, Sigma = mixing_update(corr, state.noise_precision)
    state = replace(state, mixing=A, mixing_cov=Sigma)
    state = replace(state, alpha=alpha_update(state, None, config.alpha_mode))
    if config.lambda_update:
        state = replace(state, noise_precision=lambda_update(Y, sp, state, corr))
    return state


def _extrapolate(old: BssState, new: BssState, eta: float) -> BssState:
    """old + eta (new - old) on A_bar, log alpha and log lambda; Sigma from new."""
    return BssState(
        old.mixing + eta * (new.mixing - old.mixing),
        new.mixing_cov,
        float(old.alpha * (new.alpha / old.alpha) ** eta),
        old.noise_precision * (new.noise_precision / old.noise_precision) ** eta,
    )


def _run(Y, state: BssState, rho: np.ndarray, config: BssConfig) -> BssFit:
    """Coordinate ascent from ``state``. Every recorded F is evaluated right
    after an E-step, so (state, sp) is always a matched pair.

    With ``config.accelerate`` each iteration also tries the over-relaxed
    state old + eta (EM - old) and keeps it only when its F (after its own
    E-step) beats the plain EM step; eta grows on success and resets to 1 on
    failure, so the trace stays monotone.
    """
    sp = _e_step(Y, state, rho, config)
    report = free_energy(Y, state, sp)
    trace: list[float] = [report.total]
    converged = False
    eta = 1.0
    it = 0
    for it in range(1, config.max_iter + 1):
        em_state = _m_step(Y, state, sp, config)
        em_sp = _e_step(Y, em_state, sp.rho, config)
        em_report = free_energy(Y, em_state, em_sp)
        nxt = (em_state, em_sp, em_report)
        if config.accelerate:
            eta *= ETA_GROWTH
            try:
                c_state = _extrapolate(state, em_state, eta)
                c_sp = _e_step(Y, c_state, em_sp.rho, config)
                c_report = free_energy(Y, c_state, c_sp)
                if c_report.total > em_report.total:
                    nxt = (c_state, c_sp, c_report)
                else:
                    eta = 1.0
            except (SourceSolveError, np.linalg.LinAlgError, FloatingPointError, ValueError):
                eta = 1.0
        state, sp, report = nxt
        trace.append(report.total)
        if config.check_monotone and config.alpha_mode == "stationary":
            try:
                check_monotone(trace[-2:], MONOTONE_RTOL)
            except NonMonotoneError as exc:
                raise NonMonotoneError(it, exc.before, exc.after) from None
        if abs(trace[-1] - trace[-2]) < config.tol * abs(trace[-1]):
            converged = True
            break
    return BssFit(state, sp, report.with_trace(trace), config, Y, it, converged)


def fit(Y, m: int, config: BssConfig = BssConfig()) -> BssFit:
    """Fit an m-source VB separation model."""
    Y = _as_data(Y)
    N, d = Y.shape
    if m < 1 or d < 1:
        raise ValueError("need m >= 1 and d >= 1")
    if N < m:
        raise ValueError("need at least m observations")
    state, _ = initial_state(Y, m, config)
    rho = pinv_sources(Y, state.mixing)
    return _run(Y, state, rho, config)


def _fit_one(args):
    Y, m, config = args
    try:
        return m, fit(Y, m, config), None
    except (NonMonotoneError, SourceSolveError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        return m, None, f"m={m}: {type(exc).__name__}: {exc}"


@dataclass
class BssSweep:
    posterior: StructurePosterior
    fits: dict[int, BssFit]

    def __iter__(self):
        yield self.posterior
        yield self.fits


def fit_all(Y, K: int, config: BssConfig = BssConfig()) -> BssSweep:
    Y = _as_data(Y)
    if K < 1:
        raise ValueError("K must be at least 1")
    jobs = [(Y, m, config) for m in range(1, K + 1)]
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
    return BssSweep(sp, fits)


def reconstruct_sources(fitted: BssFit, Y=None) -> np.ndarray:
    """MAP source estimates: the posterior means rho_n."""
    if Y is None:
        return fitted.sources.rho.copy()
    cfg = fitted.config
    return solve_sources(Y, fitted.state, None, None, cfg.damping, cfg.inner_max_iter,
                         cfg.inner_tol)


# --------------------------------------------------------------------------
# evaluation


def align_sources(estimate, truth):
    """Match estimated to true sources up to a signed permutation.

    Returns (aligned estimate with the columns of ``truth``, permutation,
    signs). Unmatched true sources get a zero column.
    """
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape[0] != tru.shape[0]:
        raise ValueError("estimate and truth differ in length")
    ec = est - est.mean(axis=0)
    tc = tru - tru.mean(axis=0)
    norm = np.outer(np.linalg.norm(ec, axis=0), np.linalg.norm(tc, axis=0))
    corr = (ec.T @ tc) / np.where(norm > 0, norm, 1.0)
    rows, cols = linear_sum_assignment(-np.abs(corr))
    aligned = np.zeros_like(tru)
    perm = np.full(tru.shape[1], -1)
    signs = np.ones(tru.shape[1])
    for r, c in zip(rows, cols):
        s = 1.0 if corr[r, c] >= 0 else -1.0
        aligned[:, c] = s * est[:, r]
        perm[c] = r
        signs[c] = s
    return aligned, perm, signs


def reconstruction_error(estimate, truth) -> float:
    """Relative squared error after signed-permutation alignment."""
    aligned, _, _ = align_sources(estimate, truth)
    tru = np.asarray(truth, dtype=float)
    return float(np.sum((aligned - tru) ** 2) / np.sum(tru**2))

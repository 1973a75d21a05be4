"""Seeded synthetic data: Gaussian mixtures, a noisy 3-D spiral and noisy
linear mixtures of logistic sources.

All randomness goes through ``numpy.random.Generator(PCG64(seed))`` so a
(spec, seed) pair always produces the same bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Dataset",
    "GeneratorSpec",
    "sample_gmm",
    "sample_spiral",
    "sample_logistic_sources",
    "mix_sources",
    "random_mixing",
    "fig1_mixture_spec",
    "generate",
]

KINDS = ("gmm", "spiral", "bss-mix")


def _rng(seed: int) -> np.random.Generator:
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass
class Dataset:
    data: np.ndarray
    labels: np.ndarray | None = None
    sources: np.ndarray | None = None
    mixing: np.ndarray | None = None
    noise_var: np.ndarray | None = None

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass
class GeneratorSpec:
    kind: str
    seed: int = 0
    n: int | None = None
    # gmm
    weights: list[float] | None = None
    means: list[list[float]] | None = None
    covs: list[list[list[float]]] | None = None
    # spiral
    noise: float = 0.05
    c: float = 0.3
    t_min: float = 0.0
    t_max: float = 4.0 * math.pi
    # bss-mix
    d: int = 11
    m: int = 5
    snr_db: float = 20.0
    noiseless: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        _rng(self.seed)
        if self.n is None:
            self.n = {"gmm": 600, "spiral": 800, "bss-mix": 4000}[self.kind]
        if self.n < 1:
            raise ValueError("n must be positive")
        if self.kind == "gmm":
            self._check_gmm()
        elif self.kind == "spiral":
            if self.noise < 0 or not math.isfinite(self.noise):
                raise ValueError("noise must be finite and nonnegative")
            if not self.t_max > self.t_min:
                raise ValueError("need t_max > t_min")
        else:
            if self.d < 1 or self.m < 1:
                raise ValueError("d and m must be positive")
            if not self.noiseless and not math.isfinite(self.snr_db):
                raise ValueError("snr_db must be finite")

    def _check_gmm(self):
        if self.weights is None or self.means is None or self.covs is None:
            raise ValueError("gmm spec needs weights, means and covs")
        w = np.asarray(self.weights, dtype=float)
        mu = np.asarray(self.means, dtype=float)
        cov = np.asarray(self.covs, dtype=float)
        k = w.size
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        if mu.ndim != 2 or mu.shape[0] != k:
            raise ValueError("means must be a k x d array")
        d = mu.shape[1]
        if cov.shape != (k, d, d):
            raise ValueError("covs must be a k x d x d array")
        for s, C in enumerate(cov):
            if not np.allclose(C, C.T):
                raise ValueError(f"covariance {s} is not symmetric")
            try:
                np.linalg.cholesky(C)
            except np.linalg.LinAlgError:
                raise ValueError(f"covariance {s} is not positive definite") from None


def fig1_mixture_spec(seed: int = 0, n: int = 600) -> GeneratorSpec:
    """Three well-separated 2-D clusters (means at least 6 sigma apart)."""
    return GeneratorSpec(
        kind="gmm",
        seed=seed,
        n=n,
        weights=[0.3, 0.4, 0.3],
        means=[[0.0, 0.0], [4.0, 4.0], [4.0, -2.0]],
        covs=[
            [[0.5, 0.2], [0.2, 0.3]],
            [[0.4, -0.1], [-0.1, 0.6]],
            [[0.3, 0.0], [0.0, 0.3]],
        ],
    )


def sample_gmm(spec: GeneratorSpec) -> tuple[Dataset, np.ndarray]:
    if spec.kind != "gmm":
        raise ValueError("spec is not a gmm spec")
    rng = _rng(spec.seed)
    w = np.asarray(spec.weights, dtype=float)
    mu = np.asarray(spec.means, dtype=float)
    chol = np.linalg.cholesky(np.asarray(spec.covs, dtype=float))
    labels = rng.choice(w.size, size=spec.n, p=w / w.sum())
    z = rng.standard_normal((spec.n, mu.shape[1]))
    X = mu[labels] + np.einsum("nij,nj->ni", chol[labels], z)
    return Dataset(X, labels=labels), labels


def sample_spiral(spec: GeneratorSpec) -> Dataset:
    """Points (t cos t, t sin t, c t) plus isotropic noise, t uniform."""
    if spec.kind != "spiral":
        raise ValueError("spec is not a spiral spec")
    rng = _rng(spec.seed)
    t = rng.uniform(spec.t_min, spec.t_max, size=spec.n)
    X = np.column_stack([t * np.cos(t), t * np.sin(t), spec.c * t])
    X = X + spec.noise * rng.standard_normal(X.shape)
    return Dataset(X)


def sample_logistic_sources(N: int, m: int, seed: int) -> np.ndarray:
    """i.i.d. standard logistic draws via x = log(u / (1 - u))."""
    if N < 1 or m < 1:
        raise ValueError("N and m must be positive")
    u = _rng(seed).random((N, m))
    # random() is in [0, 1); the lower end would give -inf
    u = np.where(u == 0.0, np.nextafter(0.0, 1.0), u)
    return np.log(u) - np.log1p(-u)


def random_mixing(d: int, m: int, rng: np.random.Generator) -> np.ndarray:
    A = rng.standard_normal((d, m))
    return A / np.linalg.norm(A, axis=0)


def mix_sources(sources, d: int, snr_db: float, seed: int,
                noiseless: bool = False) -> tuple[Dataset, np.ndarray, np.ndarray]:
    """y = A x + u with unit-norm columns of A.

    The noise variance of sensor i is its empirical signal power divided
    by 10^(snr_db/10). ``noiseless`` returns y = A x exactly.
    """
    X = np.asarray(sources, dtype=float)
    if X.ndim != 2:
        raise ValueError("sources must be N x m")
    if not noiseless and not math.isfinite(snr_db):
        raise ValueError("snr_db must be finite")
    rng = _rng(seed)
    A = random_mixing(d, X.shape[1], rng)
    clean = X @ A.T
    if noiseless:
        noise_var = np.zeros(d)
        Y = clean
    else:
        power = np.mean(clean**2, axis=0)
        noise_var = power / 10.0 ** (snr_db / 10.0)
        Y = clean + rng.standard_normal(clean.shape) * np.sqrt(noise_var)
    return Dataset(Y, sources=X, mixing=A, noise_var=noise_var), A, noise_var


def generate(spec: GeneratorSpec) -> Dataset:
    """Dispatch on ``spec.kind``. bss-mix draws sources with ``seed`` and the
    mixing and noise with ``seed + 1``."""
    if spec.kind == "gmm":
        return sample_gmm(spec)[0]
    if spec.kind == "spiral":
        return sample_spiral(spec)
    X = sample_logistic_sources(spec.n, spec.m, spec.seed)
    ds, _, _ = mix_sources(X, spec.d, spec.snr_db, (spec.seed + 1) % 2**64, spec.noiseless)
    return ds

"""Model-ensemble bookkeeping shared by the mixture and source-separation
engines: free-energy reports, the posterior over structures, the
large-sample penalty and predictive densities from augmented refits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np
from scipy.special import logsumexp

log = logging.getLogger(__name__)

__all__ = [
    "FreeEnergyReport",
    "StructureEntry",
    "StructurePosterior",
    "NonMonotoneError",
    "ModelCollapseError",
    "structure_log_posterior",
    "flat_log_prior",
    "map_structure",
    "bic_penalty",
    "check_monotone",
    "RefitConfig",
    "predictive_log_density",
]

MONOTONE_RTOL = 1e-8


class ModelCollapseError(RuntimeError):
    """Every mixture component was pruned."""


class NonMonotoneError(RuntimeError):
    """The free energy decreased by more than the allowed tolerance."""

    def __init__(self, iteration: int, before: float, after: float):
        self.iteration = iteration
        self.before = before
        self.after = after
        super().__init__(
            f"free energy decreased at iteration {iteration}: {before!r} -> {after!r}"
        )


@dataclass(frozen=True)
class FreeEnergyReport:
    likelihood_term: float
    kl_term: float
    trace: tuple[float, ...] = ()

    @property
    def total(self) -> float:
        return self.likelihood_term - self.kl_term

    def with_trace(self, trace: Sequence[float]) -> "FreeEnergyReport":
        return FreeEnergyReport(self.likelihood_term, self.kl_term, tuple(trace))


def check_monotone(trace: Sequence[float], rtol: float = MONOTONE_RTOL, start: int = 0):
    """Raise NonMonotoneError at the first drop larger than rtol * (1 + |F|)."""
    for i in range(max(start, 1), len(trace)):
        prev, cur = trace[i - 1], trace[i]
        if cur < prev - rtol * (1.0 + abs(prev)):
            raise NonMonotoneError(i, prev, cur)


@dataclass(frozen=True)
class StructureEntry:
    m: int
    free_energy: float
    log_prior: float
    log_posterior: float

    @property
    def probability(self) -> float:
        return math.exp(self.log_posterior)


@dataclass(frozen=True)
class StructurePosterior:
    entries: tuple[StructureEntry, ...]
    warnings: tuple[str, ...] = ()

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, m: int) -> StructureEntry:
        for e in self.entries:
            if e.m == m:
                return e
        raise KeyError(m)

    @property
    def structures(self) -> list[int]:
        return [e.m for e in self.entries]

    def probabilities(self) -> np.ndarray:
        return np.exp([e.log_posterior for e in self.entries])

    def log_posteriors(self) -> np.ndarray:
        return np.array([e.log_posterior for e in self.entries])


def flat_log_prior(K: int) -> np.ndarray:
    """log p(m) = -log K for m = 1..K."""
    return np.full(K, -math.log(K))


def structure_log_posterior(
    free_energies, log_priors, structures: Sequence[int] | None = None, warnings=()
) -> StructurePosterior:
    """log q(m) = F_m + log p(m) - logsumexp(F + log p)."""
    F = np.asarray(free_energies, dtype=float)
    lp = np.asarray(log_priors, dtype=float)
    if F.ndim != 1 or F.size == 0:
        raise ValueError("need at least one free energy")
    if F.shape != lp.shape:
        raise ValueError("free energies and log priors differ in length")
    if not np.all(np.isfinite(F)):
        raise ValueError("free energies must be finite")
    ms = list(range(1, F.size + 1)) if structures is None else list(structures)
    if len(ms) != F.size:
        raise ValueError("structure labels differ in length from free energies")
    score = F + lp
    logq = score - logsumexp(score)
    entries = tuple(
        StructureEntry(int(m), float(f), float(p), float(q))
        for m, f, p, q in zip(ms, F, lp, logq)
    )
    return StructurePosterior(entries, tuple(warnings))


def map_structure(sp: StructurePosterior) -> int:
    """Most probable structure; exact ties go to the smaller m."""
    if len(sp) == 0:
        raise ValueError("empty structure posterior")
    best = max(sp.entries, key=lambda e: (e.log_posterior, -e.m))
    return best.m


def bic_penalty(n_params: int, n_data: int, log_prior_at_ml: float = 0.0) -> float:
    """Large-sample Occam penalty |Theta|/2 log N - log p(Theta_0)."""
    if n_data < 1:
        raise ValueError("need at least one data point")
    if n_params < 0:
        raise ValueError("parameter count must be nonnegative")
    return 0.5 * n_params * math.log(n_data) - log_prior_at_ml


@dataclass(frozen=True)
class RefitConfig:
    max_iter: int = 200
    tol: float = 1e-8
    fast: bool = False


class Refittable(Protocol):
    """What a fitted engine state must offer for predictive queries."""

    @property
    def free_energy(self) -> float: ...

    def refit_augmented(self, y_new: np.ndarray, max_iter: int, tol: float) -> float: ...

    def plugin_log_density(self, y_new: np.ndarray) -> float: ...


def predictive_log_density(fitted: Refittable, y_new, config: RefitConfig = RefitConfig()) -> float:
    """log p(y | Y) approximated by F' - F.

    F' is the converged free energy on Y plus the new point, warm-started
    from ``fitted``. With ``config.fast`` the refit is skipped and the
    expected log density of ``y_new`` under the current posterior is
    returned instead, which is what F' - F tends to for large N.
    """
    y_new = np.atleast_1d(np.asarray(y_new, dtype=float))
    if config.fast:
        return float(fitted.plugin_log_density(y_new))
    F_new = fitted.refit_augmented(y_new, max_iter=config.max_iter, tol=config.tol)
    return float(F_new - fitted.free_energy)

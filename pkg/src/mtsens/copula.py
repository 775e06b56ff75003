"""Copula factorization machinery: sensitivity vector representation,
Gaussian copula density, the Gaussian-copula Monte Carlo intervention
estimator, the arbitrary-copula importance sampler, and Gaussianization
transforms.

All gamma vectors in this module live on the standardized scale: the
Gaussianized outcome has unit total residual variance, so
gamma' Sigma_{u|t} gamma <= 1 and the leftover sigma2 is 1 minus that.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import norm

from ._linalg import as_vector, sym_inv_sqrt, sym_sqrt
from .errors import CalibrationError, DimensionError, InvalidCopulaError
from .factor import ConditionalConfounder, Contrast, TreatmentMatrix
from .outcome import conditional_cdf_quantile

CDF_CLAMP = 1e-15
R2_SLACK = 1e-9


@dataclass(frozen=True)
class SensitivitySpec:
    """Sensitivity vector gamma with its (r2, direction) reparameterization.

    gamma is standardized; r2 = gamma' Sigma gamma is the share of the
    Gaussianized residual variance attributed to the confounder; direction
    is the unit vector d with gamma = sqrt(r2) Sigma^{-1/2} d.
    """

    gamma: np.ndarray
    r2: float
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "gamma", as_vector(self.gamma, "gamma"))
        object.__setattr__(self, "direction", as_vector(self.direction, "direction"))

    @property
    def m(self) -> int:
        return self.gamma.shape[0]

    @classmethod
    def from_gamma(cls, gamma, sigma_u_given_t) -> "SensitivitySpec":
        gamma = as_vector(gamma, "gamma")
        sigma = np.asarray(sigma_u_given_t, dtype=float)
        r2 = float(gamma @ sigma @ gamma)
        if r2 > 1.0 + R2_SLACK:
            raise CalibrationError(
                f"gamma' Sigma gamma = {r2:.6g} exceeds 1: the confounder would "
                "explain more than the whole residual variance"
            )
        r2 = min(r2, 1.0)
        if r2 <= 0.0:
            return cls(gamma=gamma, r2=0.0, direction=np.zeros_like(gamma))
        direction = sym_sqrt(sigma) @ gamma / np.sqrt(r2)
        return cls(gamma=gamma, r2=r2, direction=direction)

    @classmethod
    def from_r2_direction(cls, r2: float, direction, sigma_u_given_t) -> "SensitivitySpec":
        direction = as_vector(direction, "direction")
        if not (0.0 <= r2 <= 1.0 + R2_SLACK):
            raise CalibrationError(f"r2 = {r2:.6g} outside [0, 1]")
        r2 = min(float(r2), 1.0)
        nrm = float(np.linalg.norm(direction))
        if r2 == 0.0:
            return cls(gamma=np.zeros_like(direction), r2=0.0, direction=direction * 0.0)
        if abs(nrm - 1.0) > 1e-10:
            raise CalibrationError(
                f"direction must be a unit vector (norm {nrm:.12g}); "
                "normalize it explicitly before calling"
            )
        gamma = np.sqrt(r2) * (sym_inv_sqrt(np.asarray(sigma_u_given_t, dtype=float)) @ direction)
        return cls(gamma=gamma, r2=r2, direction=direction)

    def transformed(self, a: np.ndarray) -> "SensitivitySpec":
        """The equivalent gamma after reparameterizing the confounder by SPD A.

        With (coef, Sigma) -> (A coef, A Sigma A'), the copula is preserved
        by gamma -> A^{-1} gamma (A symmetric).
        """
        a = np.asarray(a, dtype=float)
        gamma_t = np.linalg.solve(a, self.gamma)
        return SensitivitySpec(gamma=gamma_t, r2=self.r2, direction=self.direction)


@dataclass(frozen=True)
class CopulaSpec:
    """Copula choice for the general estimator: the model's Gaussian copula
    (parameterized by gamma) or a custom density callback on (0,1)^{1+m}.

    A custom density must be vectorized: density(p, q) with p shaped (...,)
    and q shaped (..., m) returns densities shaped (...,).
    """

    kind: str
    gamma: np.ndarray | None = None
    density: Callable | None = None

    def __post_init__(self):
        if self.kind == "gaussian":
            if self.gamma is None:
                raise InvalidCopulaError("gaussian copula requires gamma")
            object.__setattr__(self, "gamma", as_vector(self.gamma, "gamma"))
        elif self.kind == "custom":
            if self.density is None:
                raise InvalidCopulaError("custom copula requires a density callback")
        else:
            raise InvalidCopulaError(f"unknown copula kind {self.kind!r}")

    def validate(self, m: int, n_mc: int = 20000, seed: int = 0, tol: float = 0.05) -> None:
        """Spot-check that the density integrates to 1 over q at a few p."""
        if self.kind == "gaussian":
            return
        rng = np.random.default_rng(seed)
        q = rng.uniform(size=(n_mc, m))
        for p in (0.2, 0.5, 0.8):
            vals = np.asarray(self.density(np.full(n_mc, p), q), dtype=float)
            if np.any(vals < 0):
                raise InvalidCopulaError("custom copula density is negative")
            total = float(np.mean(vals))
            se = float(np.std(vals) / np.sqrt(n_mc))
            if abs(total - 1.0) > max(5 * se, tol):
                raise InvalidCopulaError(
                    f"custom copula density integrates to {total:.4f} at p={p}, not 1"
                )


def _copula_correlation(gamma: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Correlation matrix of (ytilde, U) | t, normalizing the U margins."""
    gamma = as_vector(gamma, "gamma")
    sigma = np.asarray(sigma, dtype=float)
    m = gamma.shape[0]
    if sigma.shape != (m, m):
        raise DimensionError("gamma and sigma_u_given_t dimensions disagree")
    cross = sigma @ gamma
    cov = np.empty((m + 1, m + 1))
    cov[0, 0] = 1.0
    cov[0, 1:] = cross
    cov[1:, 0] = cross
    cov[1:, 1:] = sigma
    d = np.sqrt(np.diag(cov))
    if np.any(d <= 0):
        raise InvalidCopulaError("copula covariance has a zero-variance margin")
    corr = cov / np.outer(d, d)
    eigs = np.linalg.eigvalsh(corr)
    if eigs.min() <= 1e-12:
        raise InvalidCopulaError(
            f"copula correlation is not positive definite (min eigenvalue {eigs.min():.3e})"
        )
    return corr


def gaussian_copula_density(gamma, sigma_u_given_t, p, q):
    """Outcome-confounder dependence density at (p, q) in (0,1)^{1+m}.

    This is the factor c with f(y | t, u) = f(y | t) c(F_{Y|t}(y), F_{U|t}(u)):
    the (m+1)-dimensional Gaussian copula density of (ytilde, U) | t, with
    correlation implied by Cov = [[1, gamma' Sigma], [Sigma gamma, Sigma]]
    (U margins normalized to unit variance), divided by the copula density of
    the U block alone. It is identically 1 when gamma = 0, even when the U
    coordinates are mutually correlated. Vectorized over leading axes of p, q.
    """
    gamma = as_vector(gamma, "gamma")
    sigma = np.asarray(sigma_u_given_t, dtype=float)
    _copula_correlation(gamma, sigma)
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != sigma.shape[0]:
        raise DimensionError("q must have m entries in its last axis")
    z_y = norm.ppf(p)
    z_u = norm.ppf(q)
    # ytilde | u is Gaussian with mean gamma'(u - mu_{u|t}) and variance
    # 1 - gamma' Sigma gamma; u - mu recovered from q through the U margins
    sd_u = np.sqrt(np.diag(sigma))
    cond_mean = (z_u * sd_u) @ gamma
    resid_sd = math.sqrt(1.0 - float(gamma @ sigma @ gamma))
    log_c = 0.5 * z_y**2 - 0.5 * ((z_y - cond_mean) / resid_sd) ** 2
    return np.exp(log_c) / resid_sd


class MonteCarloMean(NamedTuple):
    value: float
    se: float
    n_rows: int


def _clamped_phi(ytilde: np.ndarray) -> np.ndarray:
    u = norm.cdf(ytilde)
    clamped = np.count_nonzero((u < CDF_CLAMP) | (u > 1 - CDF_CLAMP))
    if clamped > 0.001 * u.size:
        warnings.warn(
            f"{clamped} of {u.size} copula draws hit the CDF clamping bounds; "
            "tail behavior may be distorted",
            stacklevel=3,
        )
    return np.clip(u, CDF_CLAMP, 1 - CDF_CLAMP)


def _select_rows(observed: TreatmentMatrix, max_rows, rng) -> np.ndarray:
    data = observed.data
    if max_rows is not None and observed.n > max_rows:
        idx = rng.choice(observed.n, size=max_rows, replace=False)
        data = data[np.sort(idx)]
    return data


def intervention_mean_gaussian(
    t,
    spec: SensitivitySpec,
    cc: ConditionalConfounder,
    outcome,
    observed: TreatmentMatrix,
    v=None,
    n_sim: int = 200,
    seed: int = 0,
    max_rows: int | None = None,
    with_se: bool = False,
):
    """Monte Carlo E[v(Y) | do(T=t)] under the Gaussian-copula model.

    For each observed row t_i the Gaussianized outcome under do(t) given
    that row's confounder distribution is N(gamma'(mu_{u|t_i} - mu_{u|t}), 1)
    (the unit variance comes from the standardized-scale constraint), so the
    estimator shifts, maps through the conditional quantile at t, and
    averages. Deterministic given seed; the draw layout is indexed by
    (row, draw), independent of any scheduling.
    """
    if n_sim < 1:
        raise ValueError("n_sim must be at least 1")
    t = as_vector(t, "t")
    if t.shape[0] != cc.k:
        raise DimensionError(f"t has length {t.shape[0]}, expected {cc.k}")
    rng = np.random.Generator(np.random.Philox(key=seed))
    rows = _select_rows(observed, max_rows, rng)
    # mean shift per row: gamma' coef (t_i - t); the centering means cancel
    shifts = (rows - t) @ (cc.coef.T @ spec.gamma)
    z = rng.standard_normal(size=(rows.shape[0], n_sim))
    ytilde = shifts[:, None] + z
    _, quantile = conditional_cdf_quantile(outcome, t)
    y = quantile(_clamped_phi(ytilde))
    vals = y if v is None else np.asarray(v(y), dtype=float)
    value = float(np.mean(vals))
    if not with_se:
        return value
    n_rows = rows.shape[0]
    if n_sim > 1:
        row_var = np.var(vals, axis=1, ddof=1)
        se = float(np.sqrt(np.sum(row_var) / n_sim) / n_rows)
    else:
        se = float("nan")
    return MonteCarloMean(value=value, se=se, n_rows=n_rows)


def marginal_contrast(
    c: Contrast,
    spec: SensitivitySpec,
    cc: ConditionalConfounder,
    outcome,
    observed: TreatmentMatrix,
    v=None,
    tau_fn: str = "difference",
    n_sim: int = 200,
    seed: int = 0,
    max_rows: int | None = None,
    with_se: bool = False,
):
    """Contrast of two intervention means (difference for PATE, ratio for RR).

    The same seed drives both intervention means, so identical endpoints
    cancel exactly.
    """
    kwargs = dict(n_sim=n_sim, seed=seed, max_rows=max_rows, with_se=True)
    m1 = intervention_mean_gaussian(c.t1, spec, cc, outcome, observed, v, **kwargs)
    m2 = intervention_mean_gaussian(c.t2, spec, cc, outcome, observed, v, **kwargs)
    if tau_fn == "difference":
        value = m1.value - m2.value
        se = float(np.hypot(m1.se, m2.se))
    elif tau_fn == "ratio":
        if abs(m2.value) < 1e-12:
            raise ZeroDivisionError(
                "ratio contrast denominator is numerically zero"
            )
        value = m1.value / m2.value
        rel = np.hypot(
            m1.se / m1.value if m1.value != 0 else 0.0, m2.se / m2.value
        )
        se = float(abs(value) * rel)
    else:
        raise ValueError(f"unknown tau_fn {tau_fn!r}")
    if with_se:
        return MonteCarloMean(value=value, se=se, n_rows=m1.n_rows)
    return value


def intervention_mean_general(
    t,
    copula: CopulaSpec,
    cc: ConditionalConfounder,
    outcome,
    observed: TreatmentMatrix,
    v=None,
    m_draws: int = 200,
    n_draws: int = 50,
    seed: int = 0,
    max_rows: int | None = None,
):
    """Importance-sampling E[v(Y) | do(T=t)] for an arbitrary copula.

    Draws y from f(y|t) by inverse-CDF sampling (so F(y) is the uniform
    driving it), draws confounders from each observed row's conditional law,
    and weights by the copula density averaged over those draws.
    """
    if m_draws < 1 or n_draws < 1:
        raise ValueError("m_draws and n_draws must be at least 1")
    t = as_vector(t, "t")
    rng = np.random.Generator(np.random.Philox(key=seed))
    rows = _select_rows(observed, max_rows, rng)
    n = rows.shape[0]
    m = cc.m

    p = rng.uniform(CDF_CLAMP, 1 - CDF_CLAMP, size=m_draws)
    _, quantile = conditional_cdf_quantile(outcome, t)
    y = quantile(p)

    sigma = cc.sigma_u_given_t
    eigs = np.linalg.eigvalsh(sigma)
    if eigs.min() <= 1e-12 * max(eigs.max(), 1.0):
        raise InvalidCopulaError(
            "sigma_u_given_t is singular; the general estimator needs a "
            "proper confounder density"
        )
    root = sym_sqrt(sigma)
    mu_rows = cc.mu_u_given_t(rows)  # n x m
    zu = rng.standard_normal(size=(n, n_draws, m))
    u = mu_rows[:, None, :] + zu @ root.T

    # margins of U | t at the intervention point
    mu_t = cc.mu_u_given_t(t)
    sd_t = np.sqrt(np.diag(sigma))
    q = norm.cdf((u.reshape(n * n_draws, m) - mu_t) / sd_t)
    q = np.clip(q, CDF_CLAMP, 1 - CDF_CLAMP)

    if copula.kind == "gaussian":
        cvals = gaussian_copula_density(
            copula.gamma, sigma, np.repeat(p, n * n_draws), np.tile(q, (m_draws, 1))
        ).reshape(m_draws, n * n_draws)
    else:
        cvals = np.asarray(
            copula.density(np.repeat(p, n * n_draws), np.tile(q, (m_draws, 1))),
            dtype=float,
        ).reshape(m_draws, n * n_draws)
    w = cvals.mean(axis=1)
    w_se = float(np.std(w, ddof=1) / np.sqrt(m_draws)) if m_draws > 1 else float("nan")
    if m_draws > 1 and abs(float(np.mean(w)) - 1.0) > 5 * w_se:
        warnings.warn(
            f"importance weights average {np.mean(w):.4f}, not 1: the copula "
            "is inconsistent with the fitted margins",
            stacklevel=2,
        )
    vals = y if v is None else np.asarray(v(y), dtype=float)
    return float(np.mean(vals * w))


def gaussianize(outcome, t, y):
    """Map outcome values to the standardized Gaussian scale at t."""
    cdf, _ = conditional_cdf_quantile(outcome, t)
    u = np.asarray(cdf(y), dtype=float)
    clamped = np.count_nonzero((u < CDF_CLAMP) | (u > 1 - CDF_CLAMP))
    if clamped:
        warnings.warn(
            f"{clamped} outcome values hit the CDF clamping bounds during "
            "gaussianization",
            stacklevel=2,
        )
    return norm.ppf(np.clip(u, CDF_CLAMP, 1 - CDF_CLAMP))


def degaussianize(outcome, t, ytilde):
    """Inverse of gaussianize: map standardized Gaussian values back."""
    _, quantile = conditional_cdf_quantile(outcome, t)
    return quantile(_clamped_phi(np.asarray(ytilde, dtype=float)))

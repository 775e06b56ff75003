"""Treatment factor model and the conditional confounder distribution.

Treatments are modeled as a linear factor model T = B U + eps with
U ~ N(0, I_m) and eps ~ N(0, sigma2 I_k).  Fitting uses the probabilistic
PCA maximum-likelihood solution; the implied conditional law of the latent
confounder given treatments, U | T=t ~ N(M (t - mean), Sigma_u_given_t),
is what every downstream sensitivity computation consumes.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from ._linalg import (
    as_vector,
    eigh_desc,
    fix_column_signs,
    numerical_rank,
    sym_inv_sqrt,
    sym_pinv_sqrt,
    symmetrize,
)
from .errors import DegenerateModelError, DimensionError, InputFormatError


@dataclass(frozen=True)
class TreatmentMatrix:
    """Observed treatments: rows are units, columns are treatment variables."""

    data: np.ndarray
    column_names: list[str] | None = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2:
            raise DimensionError(f"treatment data must be 2-d, got shape {data.shape}")
        n, k = data.shape
        if n < 2:
            raise DimensionError(f"need at least 2 rows of treatments, got {n}")
        if k < 1:
            raise DimensionError("need at least 1 treatment column")
        if not np.all(np.isfinite(data)):
            raise ValueError("treatment data contains non-finite entries")
        if self.column_names is not None and len(self.column_names) != k:
            raise DimensionError(
                f"{len(self.column_names)} column names for {k} columns"
            )
        object.__setattr__(self, "data", data)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def k(self) -> int:
        return self.data.shape[1]

    def names(self) -> list[str]:
        if self.column_names is not None:
            return list(self.column_names)
        return [f"t{j + 1}" for j in range(self.k)]


@dataclass(frozen=True)
class FactorModel:
    """Maximum-likelihood treatment factor model.

    b_hat is k x m (loadings up to rotation), sigma2_t_given_u the isotropic
    treatment noise variance, singular_values the m leading factor scales
    (d_i of B, descending).  treatment_means are the column means removed
    during fitting so raw treatment vectors can be used downstream.
    """

    b_hat: np.ndarray
    sigma2_t_given_u: float
    m: int
    singular_values: np.ndarray
    treatment_means: np.ndarray = None

    def __post_init__(self):
        b = np.asarray(self.b_hat, dtype=float)
        if b.ndim != 2:
            raise DimensionError("b_hat must be a k x m matrix")
        k, m = b.shape
        if not (1 <= self.m < k):
            raise DimensionError(
                f"confounder dimension m={self.m} must satisfy 1 <= m < k={k}; "
                "outside that range the treatment noise variance is not identifiable"
            )
        if m != self.m:
            raise DimensionError(f"b_hat has {m} columns but m={self.m}")
        if self.sigma2_t_given_u <= 0:
            raise DegenerateModelError("sigma2_t_given_u must be positive")
        means = self.treatment_means
        means = np.zeros(k) if means is None else as_vector(means, "treatment_means")
        if means.shape[0] != k:
            raise DimensionError("treatment_means length must equal k")
        object.__setattr__(self, "b_hat", b)
        object.__setattr__(self, "singular_values", np.asarray(self.singular_values, dtype=float))
        object.__setattr__(self, "treatment_means", means)

    @property
    def k(self) -> int:
        return self.b_hat.shape[0]


@dataclass(frozen=True)
class ConditionalConfounder:
    """Conditional confounder law U | T=t ~ N(coef (t - means), sigma_u_given_t).

    coef is the m x k linear map; sigma_u_given_t does not depend on t.
    treatment_means default to zero (e.g. for externally estimated posteriors
    already expressed on centered treatments).
    """

    coef: np.ndarray
    sigma_u_given_t: np.ndarray
    rank: int = None
    treatment_means: np.ndarray = None

    def __post_init__(self):
        coef = np.asarray(self.coef, dtype=float)
        if coef.ndim != 2:
            raise DimensionError("coef must be an m x k matrix")
        m, k = coef.shape
        sigma = np.asarray(self.sigma_u_given_t, dtype=float)
        if sigma.shape != (m, m):
            raise DimensionError(
                f"sigma_u_given_t has shape {sigma.shape}, expected ({m}, {m})"
            )
        scale = float(np.max(np.abs(sigma))) if sigma.size else 0.0
        if scale > 0 and np.max(np.abs(sigma - sigma.T)) > 1e-12 * scale:
            raise ValueError("sigma_u_given_t is not symmetric within tolerance")
        sigma = symmetrize(sigma)
        eigs = np.linalg.eigvalsh(sigma)
        if eigs.min() < -1e-12 * max(scale, 1.0):
            raise ValueError(
                f"sigma_u_given_t has negative eigenvalue {eigs.min():.3e}"
            )
        rank = self.rank
        if rank is None:
            rank = numerical_rank(sigma)
        means = self.treatment_means
        means = np.zeros(k) if means is None else as_vector(means, "treatment_means")
        if means.shape[0] != k:
            raise DimensionError("treatment_means length must equal k")
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "sigma_u_given_t", sigma)
        object.__setattr__(self, "rank", int(rank))
        object.__setattr__(self, "treatment_means", means)

    @property
    def m(self) -> int:
        return self.coef.shape[0]

    @property
    def k(self) -> int:
        return self.coef.shape[1]

    def full_rank(self) -> bool:
        return self.rank == self.m

    def mu_u_given_t(self, t) -> np.ndarray:
        """Posterior mean of the confounder at a raw treatment vector."""
        t = np.asarray(t, dtype=float)
        return (t - self.treatment_means) @ self.coef.T

    def sigma_inv_sqrt(self) -> np.ndarray:
        return sym_inv_sqrt(self.sigma_u_given_t)

    def sigma_pinv_sqrt(self) -> np.ndarray:
        return sym_pinv_sqrt(self.sigma_u_given_t)

    def reparameterized(self, a: np.ndarray) -> "ConditionalConfounder":
        """Equivalent representation (A coef, A Sigma A^T) for invertible A."""
        a = np.asarray(a, dtype=float)
        if a.shape != (self.m, self.m):
            raise DimensionError("reparameterization matrix must be m x m")
        return ConditionalConfounder(
            coef=a @ self.coef,
            sigma_u_given_t=a @ self.sigma_u_given_t @ a.T,
            treatment_means=self.treatment_means,
        )


@dataclass(frozen=True)
class Contrast:
    """A pair of intervention points t1, t2 with their difference cached."""

    t1: np.ndarray
    t2: np.ndarray
    delta: np.ndarray = field(init=False)

    def __post_init__(self):
        t1 = as_vector(self.t1, "t1")
        t2 = as_vector(self.t2, "t2")
        if t1.shape != t2.shape:
            raise DimensionError("t1 and t2 must have the same length")
        object.__setattr__(self, "t1", t1)
        object.__setattr__(self, "t2", t2)
        object.__setattr__(self, "delta", t1 - t2)

    @classmethod
    def unit(cls, k: int, j: int) -> "Contrast":
        """The contrast e_j versus 0 in a k-dimensional treatment space."""
        t1 = np.zeros(k)
        t1[j] = 1.0
        return cls(t1, np.zeros(k))


def _ppca_from_eig(lam: np.ndarray, vec: np.ndarray, m: int):
    """Tipping-Bishop ML loadings from descending covariance eigenpairs."""
    k = lam.shape[0]
    sigma2 = float(np.mean(lam[m:]))
    gaps = lam[:m] - sigma2
    if np.any(gaps <= 0):
        raise DegenerateModelError(
            "leading eigenvalues do not exceed the noise level; "
            f"lambda - sigma2 = {np.round(gaps, 6)}"
        )
    d = np.sqrt(gaps)
    b = fix_column_signs(vec[:, :m]) * d
    return b, sigma2, d


def ppca_from_covariance(cov: np.ndarray, m: int, treatment_means=None) -> FactorModel:
    """Fit the factor model directly from a treatment covariance matrix."""
    cov = symmetrize(np.asarray(cov, dtype=float))
    k = cov.shape[0]
    if not (1 <= m < k):
        raise DimensionError(
            f"m={m} must satisfy 1 <= m < k={k}; with m >= k the treatment "
            "noise variance is not identifiable from the covariance"
        )
    lam, vec = eigh_desc(cov)
    b, sigma2, d = _ppca_from_eig(lam, vec, m)
    return FactorModel(
        b_hat=b,
        sigma2_t_given_u=sigma2,
        m=m,
        singular_values=d,
        treatment_means=treatment_means,
    )


def fit_ppca(treatments: TreatmentMatrix, m: int) -> FactorModel:
    """Maximum-likelihood factor model for the observed treatments.

    Columns are centered internally; the removed means are stored on the
    returned model so downstream code can keep working with raw t vectors.
    """
    n, k = treatments.n, treatments.k
    if n <= k:
        warnings.warn(
            f"n={n} <= k={k}: factor model estimates will be unstable",
            stacklevel=2,
        )
    means = treatments.data.mean(axis=0)
    centered = treatments.data - means
    cov = (centered.T @ centered) / n
    return ppca_from_covariance(cov, m, treatment_means=means)


def select_dim(treatments: TreatmentMatrix, method: str = "eigen_gap") -> int:
    """Choose the confounder dimension from the treatment spectrum.

    eigen_gap: the index maximizing the relative eigenvalue drop
    (lambda_i - lambda_{i+1}) / lambda_{i+1} over 1 <= i <= k-2.
    holdout: the m in {1..k-1} minimizing mean held-out per-entry Gaussian
    negative log-likelihood under 5-fold row splits (columns kept intact).
    """
    n, k = treatments.n, treatments.k
    if k < 3:
        raise DimensionError("dimension selection needs at least 3 treatment columns")
    centered = treatments.data - treatments.data.mean(axis=0)
    lam = np.linalg.eigvalsh((centered.T @ centered) / n)[::-1]
    if lam[0] - lam[-1] <= 1e-9 * max(abs(lam[0]), 1.0):
        raise DegenerateModelError(
            "treatment spectrum is flat: no factor structure to select"
        )
    if method == "eigen_gap":
        ratios = (lam[:-2] - lam[1:-1]) / lam[1:-1]
        return int(np.argmax(ratios)) + 1
    if method == "holdout":
        return _holdout_dim(treatments.data, k)
    raise ValueError(f"unknown method {method!r}")


def _holdout_dim(data: np.ndarray, k: int, folds: int = 5, seed: int = 0) -> int:
    n = data.shape[0]
    rng = np.random.default_rng(seed)
    chunks = np.array_split(rng.permutation(n), folds)
    m_grid = range(1, k)
    scores = np.zeros(k - 1)
    for held in chunks:
        mask = np.ones(n, dtype=bool)
        mask[held] = False
        train, test = data[mask], data[held]
        mu = train.mean(axis=0)
        cov = np.cov(train.T, bias=True)
        lam, vec = eigh_desc(cov)
        xc = test - mu
        for i, m in enumerate(m_grid):
            sigma2 = float(np.mean(lam[m:]))
            if sigma2 <= 0:
                scores[i] = np.inf
                continue
            gaps = np.maximum(lam[:m] - sigma2, 0.0)
            b = vec[:, :m] * np.sqrt(gaps)
            c = b @ b.T + sigma2 * np.eye(k)
            sign, logdet = np.linalg.slogdet(c)
            quad = np.einsum("ij,jk,ik->i", xc, np.linalg.inv(c), xc)
            nll = 0.5 * (k * np.log(2 * np.pi) * len(held) + logdet * len(held) + quad.sum())
            scores[i] += nll / (len(held) * k)
    return int(np.argmin(scores)) + 1


def conditional_confounder(fm: FactorModel) -> ConditionalConfounder:
    """Posterior law of U given T under the fitted factor model.

    Uses the m x m solve (B'B + sigma2 I)^{-1} B' rather than inverting the
    k x k treatment covariance, so large treatment counts stay cheap.
    """
    if fm.sigma2_t_given_u <= 0:
        raise DegenerateModelError("sigma2_t_given_u must be positive")
    b = fm.b_hat
    m = fm.m
    gram = b.T @ b + fm.sigma2_t_given_u * np.eye(m)
    coef = np.linalg.solve(gram, b.T)
    sigma = symmetrize(np.eye(m) - coef @ b)
    return ConditionalConfounder(
        coef=coef,
        sigma_u_given_t=sigma,
        treatment_means=fm.treatment_means,
    )


def mu_delta(cc: ConditionalConfounder, c: Contrast) -> np.ndarray:
    """Shift in the confounder posterior mean across a contrast: coef (t1 - t2)."""
    if c.delta.shape[0] != cc.k:
        raise DimensionError(
            f"contrast has length {c.delta.shape[0]} but confounder expects {cc.k}"
        )
    return cc.coef @ c.delta


def _write_json(payload: dict, path, provenance: dict | None) -> None:
    if provenance is not None:
        payload = {"_provenance": provenance, **payload}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def save_confounder(cc: ConditionalConfounder, path, provenance: dict | None = None) -> None:
    payload = {
        "m": cc.m,
        "k": cc.k,
        "coef": cc.coef.tolist(),
        "sigma_u_given_t": cc.sigma_u_given_t.tolist(),
        "treatment_means": cc.treatment_means.tolist(),
    }
    _write_json(payload, path, provenance)


def load_confounder(path) -> ConditionalConfounder:
    """Read a confounder JSON file, symmetrizing and validating the covariance."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputFormatError(f"cannot read confounder file {path}: {exc}") from exc
    try:
        m = int(payload["m"])
        k = int(payload["k"])
        coef = np.asarray(payload["coef"], dtype=float).reshape(m, k)
        sigma = np.asarray(payload["sigma_u_given_t"], dtype=float).reshape(m, m)
        means = np.asarray(
            payload.get("treatment_means", np.zeros(k)), dtype=float
        ).reshape(k)
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"malformed confounder file {path}: {exc}") from exc
    sigma = symmetrize(sigma)
    eigs = np.linalg.eigvalsh(sigma)
    scale = max(float(np.max(np.abs(eigs))), 1.0)
    if eigs.min() < -1e-8 * scale:
        raise InputFormatError(
            f"sigma_u_given_t in {path} is not positive semidefinite "
            f"(eigenvalue {eigs.min():.3e})"
        )
    if eigs.min() < 0:
        lam, vec = np.linalg.eigh(sigma)
        sigma = (vec * np.clip(lam, 0.0, None)) @ vec.T
    return ConditionalConfounder(coef=coef, sigma_u_given_t=sigma, treatment_means=means)


def save_factor_model(fm: FactorModel, path, provenance: dict | None = None) -> None:
    payload = {
        "k": fm.k,
        "m": fm.m,
        "b_hat": fm.b_hat.tolist(),
        "sigma2_t_given_u": fm.sigma2_t_given_u,
        "singular_values": fm.singular_values.tolist(),
        "treatment_means": fm.treatment_means.tolist(),
    }
    _write_json(payload, path, provenance)


def load_factor_model(path) -> FactorModel:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputFormatError(f"cannot read factor model file {path}: {exc}") from exc
    try:
        k = int(payload["k"])
        m = int(payload["m"])
        return FactorModel(
            b_hat=np.asarray(payload["b_hat"], dtype=float).reshape(k, m),
            sigma2_t_given_u=float(payload["sigma2_t_given_u"]),
            m=m,
            singular_values=np.asarray(payload["singular_values"], dtype=float),
            treatment_means=np.asarray(
                payload.get("treatment_means", np.zeros(k)), dtype=float
            ).reshape(k),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputFormatError(f"malformed factor model file {path}: {exc}") from exc

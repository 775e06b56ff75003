"""Multiple-contrast optimization: the sensitivity vector that minimizes an
Lp norm of the implied effect vector subject to a confounder-R2 cap.

The L2 problem is solved exactly (least squares plus a trust-region bisection on
the Lagrange multiplier); L1 and Linf use projected subgradient descent on
the whitened variable followed by a deterministic shrinking-step polish.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._linalg import as_vector, sym_inv_sqrt
from .copula import SensitivitySpec
from .errors import CalibrationError, ConvergenceError, DegenerateModelError, DimensionError
from .factor import ConditionalConfounder, TreatmentMatrix
from .outcome import GaussianOutcome

NORMS = ("l1", "l2", "linf")


@dataclass(frozen=True)
class ContrastBank:
    """A batch of contrasts sharing one confounder model: row k of deltas is
    the confounder mean difference of contrast k, naive[k] its naive effect.
    sigma_u_given_t rides along because the R2 constraint needs it."""

    deltas: np.ndarray
    naive: np.ndarray
    sigma_y_given_t: float
    sigma_u_given_t: np.ndarray
    ids: tuple[str, ...] | None = None

    def __post_init__(self):
        deltas = np.asarray(self.deltas, dtype=float)
        if deltas.ndim != 2 or deltas.shape[0] < 1:
            raise DimensionError("deltas must be a K x m matrix with K >= 1")
        naive = as_vector(self.naive, "naive")
        if naive.shape[0] != deltas.shape[0]:
            raise DimensionError("naive length must match the number of contrasts")
        if not np.all(np.isfinite(deltas)):
            raise DimensionError("deltas must be finite")
        if self.sigma_y_given_t <= 0:
            raise DegenerateModelError("sigma_y_given_t must be positive")
        sigma = np.asarray(self.sigma_u_given_t, dtype=float)
        if sigma.shape != (deltas.shape[1], deltas.shape[1]):
            raise DimensionError("sigma_u_given_t must be m x m")
        ids = self.ids
        if ids is None:
            ids = tuple(f"c{i + 1}" for i in range(deltas.shape[0]))
        else:
            ids = tuple(str(s) for s in ids)
            if len(ids) != deltas.shape[0]:
                raise DimensionError("ids length must match the number of contrasts")
        object.__setattr__(self, "deltas", deltas)
        object.__setattr__(self, "naive", naive)
        object.__setattr__(self, "sigma_u_given_t", sigma)
        object.__setattr__(self, "ids", ids)

    @property
    def n_contrasts(self) -> int:
        return self.deltas.shape[0]

    @property
    def m(self) -> int:
        return self.deltas.shape[1]


@dataclass(frozen=True)
class MccResult:
    gamma_star: np.ndarray
    achieved_norm: float
    achieved_r2: float
    norm: str
    r2_cap: float
    lambda_star: float | None
    n_iter: int


@dataclass(frozen=True)
class MccReportRow:
    contrast_id: str
    naive: float
    adjusted: float
    shrinkage_ratio: float


def build_bank_unitwise(
    cc: ConditionalConfounder,
    observed: TreatmentMatrix | None,
    outcome: GaussianOutcome,
    treatment_indices: Sequence[int] | None = None,
) -> ContrastBank:
    """Bank of averaged one-unit contrasts: switching treatment j on against
    off in every observed row gives delta t = e_j regardless of the row, so
    row j of the bank is column j of the confounder coefficient map and the
    naive effect is the linear outcome coefficient. observed is only needed
    for dimension validation and contrast names; None skips both."""
    if observed is not None and observed.k != cc.k:
        raise DimensionError("treatments and confounder dimensions disagree")
    if outcome.k != cc.k:
        raise DimensionError("confounder and outcome dimensions disagree")
    if treatment_indices is None:
        treatment_indices = range(cc.k)
    idx = list(treatment_indices)
    names = observed.names() if observed is not None else [
        f"t{i + 1}" for i in range(cc.k)
    ]
    for j in idx:
        if not (0 <= j < cc.k):
            raise DimensionError(f"treatment index {j} outside [0, {cc.k})")
    deltas = cc.coef.T[idx, :]
    naive = outcome.tau_naive[idx]
    return ContrastBank(
        deltas=deltas,
        naive=naive,
        sigma_y_given_t=math.sqrt(outcome.sigma2_y_given_t),
        sigma_u_given_t=cc.sigma_u_given_t,
        ids=tuple(names[j] for j in idx),
    )


def _adjusted_effects(bank: ContrastBank, gamma: np.ndarray) -> np.ndarray:
    return bank.naive - bank.sigma_y_given_t * (bank.deltas @ gamma)


def pate_vector(bank: ContrastBank, spec: SensitivitySpec) -> np.ndarray:
    """Adjusted effect vector naive - sigma_{y|t} * deltas gamma."""
    if spec.m != bank.m:
        raise DimensionError("sensitivity vector dimension does not match the bank")
    return _adjusted_effects(bank, spec.gamma)


def _norm_value(resid: np.ndarray, norm: str) -> float:
    if norm == "l1":
        return float(np.abs(resid).sum())
    if norm == "l2":
        return float(np.linalg.norm(resid))
    return float(np.abs(resid).max())


def _subgradient(g_mat: np.ndarray, resid: np.ndarray, norm: str) -> np.ndarray:
    """Subgradient of ||naive - G z||_p in z; exactly-zero residuals get a
    zero component (kink tie-break)."""
    if norm == "l1":
        s = np.sign(resid)
        s[np.abs(resid) < 1e-14] = 0.0
        return -(g_mat.T @ s)
    i = int(np.argmax(np.abs(resid)))
    return -np.sign(resid[i]) * g_mat[i]


def _l2_solve(g_mat: np.ndarray, naive: np.ndarray, cap: float, tol: float):
    """Exact L2 minimizer on the ||z|| <= sqrt(cap) ball: least squares when
    interior, else bisection on the multiplier of (G'G + lam I) z = G'naive."""
    z0, *_ = np.linalg.lstsq(g_mat, naive, rcond=None)
    if float(z0 @ z0) <= cap + tol:
        return z0, 0.0, 1
    gram = g_mat.T @ g_mat
    rhs = g_mat.T @ naive
    eye = np.eye(gram.shape[0])

    def z_of(lam: float) -> np.ndarray:
        return np.linalg.solve(gram + lam * eye, rhs)

    hi = 1.0
    it = 0
    while float(z_of(hi) @ z_of(hi)) > cap and it < 200:
        hi *= 2.0
        it += 1
    lo = 0.0
    z = z_of(hi)
    for it2 in range(200):
        mid = 0.5 * (lo + hi)
        z = z_of(mid)
        if float(z @ z) > cap:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-10 * max(hi, 1.0) and abs(float(z @ z) - cap) < tol:
            break
    lam = hi
    z = z_of(lam)
    return z, lam, it + it2 + 2


def _subgrad_solve(
    g_mat: np.ndarray,
    naive: np.ndarray,
    cap: float,
    norm: str,
    tol: float,
    max_iter: int,
    window: int,
    seed: int,
    polish_rounds: int,
    polish_iters: int,
):
    """Projected subgradient on the whitened ball with iterate averaging and
    best-point tracking, then shrinking-step polish sweeps around the
    incumbent. Raises if the objective never stabilizes within max_iter."""
    radius = math.sqrt(cap)
    m = g_mat.shape[1]
    rng = np.random.default_rng(seed)
    z = rng.normal(size=m)
    nz = float(np.linalg.norm(z))
    if nz > radius:
        z *= radius / nz

    def objective(zz: np.ndarray) -> float:
        return _norm_value(naive - g_mat @ zz, norm)

    f_best = objective(z)
    z_best = z.copy()
    z_bar = z.copy()
    f_mark = f_best
    last_sig = 0
    stabilized = False
    t = 0
    for t in range(1, max_iter + 1):
        resid = naive - g_mat @ z
        g = _subgradient(g_mat, resid, norm)
        ng = float(np.linalg.norm(g))
        if ng < 1e-15:
            stabilized = True
            break
        z = z - (radius / math.sqrt(t)) * g / ng
        nz = float(np.linalg.norm(z))
        if nz > radius:
            z *= radius / nz
        z_bar += (z - z_bar) / (t + 1)
        for cand in (z, z_bar):
            fc = objective(cand)
            if fc < f_best:
                f_best, z_best = fc, cand.copy()
        if f_mark - f_best >= tol:
            f_mark = f_best
            last_sig = t
        if t - last_sig >= window and t > 2 * window:
            stabilized = True
            break
    if not stabilized:
        raise ConvergenceError(
            f"{norm} objective did not stabilize within {max_iter} iterations",
            last_iterate=z_best,
        )

    scale = 0.1 * radius
    for _ in range(polish_rounds):
        z = z_best.copy()
        z_bar = z.copy()
        for s in range(1, polish_iters + 1):
            resid = naive - g_mat @ z
            g = _subgradient(g_mat, resid, norm)
            ng = float(np.linalg.norm(g))
            if ng < 1e-15:
                break
            z = z - (scale / math.sqrt(s)) * g / ng
            nz = float(np.linalg.norm(z))
            if nz > radius:
                z *= radius / nz
            z_bar += (z - z_bar) / (s + 1)
            for cand in (z, z_bar):
                fc = objective(cand)
                if fc < f_best:
                    f_best, z_best = fc, cand.copy()
        scale *= 0.15
    return z_best, f_best, t


def mcc_minimize(
    bank: ContrastBank,
    norm: str = "l2",
    r2_cap: float = 1.0,
    tol: float | None = None,
    max_iter: int = 50000,
    seed: int = 0,
    polish_rounds: int = 8,
    polish_iters: int = 2000,
) -> MccResult:
    """Minimize ||naive - sigma_{y|t} deltas gamma||_p over
    gamma' Sigma gamma <= r2_cap.

    Whitening z = Sigma^{1/2} gamma turns the constraint into a Euclidean
    ball, giving exact projection and a clean trust-region bisection for L2.
    Default tolerances: 1e-8 for L2, 1e-5 objective stabilization over 100
    iterations for L1 and Linf.
    """
    norm = norm.lower()
    if norm not in NORMS:
        raise ValueError(f"norm must be one of {NORMS}")
    if not (0.0 <= r2_cap <= 1.0):
        raise CalibrationError(f"r2_cap = {r2_cap:.6g} outside [0, 1]")
    if tol is None:
        tol = 1e-8 if norm == "l2" else 1e-5

    sigma = bank.sigma_u_given_t
    eigs = np.linalg.eigvalsh(sigma)
    if eigs.min() <= 1e-12 * max(eigs.max(), 1.0):
        raise DegenerateModelError(
            "sigma_u_given_t is singular; the R2 ball is degenerate and the "
            "whitened problem is ill-posed"
        )
    root_inv = sym_inv_sqrt(sigma)
    g_mat = bank.sigma_y_given_t * (bank.deltas @ root_inv)

    if r2_cap == 0.0:
        gamma = np.zeros(bank.m)
        return MccResult(
            gamma_star=gamma,
            achieved_norm=_norm_value(bank.naive, norm),
            achieved_r2=0.0,
            norm=norm,
            r2_cap=r2_cap,
            lambda_star=0.0 if norm == "l2" else None,
            n_iter=0,
        )

    if norm == "l2":
        z, lam, n_iter = _l2_solve(g_mat, bank.naive, r2_cap, tol)
    else:
        z, _, n_iter = _subgrad_solve(
            g_mat, bank.naive, r2_cap, norm, tol, max_iter, 100, seed,
            polish_rounds, polish_iters,
        )
        lam = None
    gamma = root_inv @ z
    return MccResult(
        gamma_star=gamma,
        achieved_norm=_norm_value(bank.naive - g_mat @ z, norm),
        achieved_r2=float(gamma @ sigma @ gamma),
        norm=norm,
        r2_cap=r2_cap,
        lambda_star=lam,
        n_iter=n_iter,
    )


def mcc_report(bank: ContrastBank, gamma_star) -> list[MccReportRow]:
    """Per-contrast naive vs adjusted table for a candidate sensitivity
    vector; shrinkage_ratio is adjusted/naive (nan when naive is zero)."""
    gamma = as_vector(gamma_star, "gamma_star")
    if gamma.shape[0] != bank.m:
        raise DimensionError("gamma_star dimension does not match the bank")
    adjusted = _adjusted_effects(bank, gamma)
    rows = []
    for i in range(bank.n_contrasts):
        nv = float(bank.naive[i])
        adj = float(adjusted[i])
        ratio = adj / nv if nv != 0.0 else math.nan
        rows.append(
            MccReportRow(
                contrast_id=bank.ids[i], naive=nv, adjusted=adj, shrinkage_ratio=ratio
            )
        )
    return rows

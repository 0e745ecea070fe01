"""Baseline sparse solvers over a class-partitioned dictionary.

Greedy family (sparsity-level K): omp, sp, romp, gomp, samp.
l1 family (weight lambda): fista, admm_fixed.

Conventions shared by every solver here:
  * correlation ties break toward the lowest atom index;
  * correlations at or below 1e-12 * ||x|| count as zero and are never
    selected (keeps exact-recovery supports free of numerical junk);
  * least-squares refits solve the SPD normal equations on the selected
    sub-Gram with one refinement step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dictionary import Dictionary, GramCache

GREEDY_TOL = 1e-10
_CORR_FLOOR_REL = 1e-12


@dataclass
class SparseCode:
    """A coefficient vector plus the index set of its exact nonzeros."""

    coeffs: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        self.support = np.asarray(self.support, dtype=np.int64)
        if not np.isfinite(self.coeffs).all():
            raise ValueError("sparse code contains non-finite coefficients")

    @classmethod
    def from_dense(cls, coeffs: np.ndarray) -> "SparseCode":
        coeffs = np.asarray(coeffs, dtype=np.float64)
        return cls(coeffs=coeffs, support=np.flatnonzero(coeffs))


@dataclass
class AdmmConfig:
    """Fixed parameters for the scaled-form ADMM lasso iteration.

    ``lam`` is the l1 weight, ``rho`` the penalty, ``relax`` the relaxation
    scalar in (0, 2], ``tau`` the dual step rate.
    """

    lam: float = 0.1
    rho: float = 1.0
    relax: float = 1.0
    tau: float = 1.0
    max_iters: int = 1000
    tol: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError(f"lam must be nonnegative, got {self.lam}")
        if self.rho <= 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if not 0.0 < self.relax <= 2.0:
            raise ValueError(f"relax must lie in (0, 2], got {self.relax}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tol < 0:
            raise ValueError(f"tol must be nonnegative, got {self.tol}")


def soft_threshold(v: np.ndarray, eta: float) -> np.ndarray:
    """Entrywise shrinkage sign(v) * max(|v| - eta, 0), the prox of eta*||.||_1."""
    if eta < 0:
        raise ValueError(f"threshold must be nonnegative, got {eta}")
    return np.sign(v) * np.maximum(np.abs(v) - eta, 0.0)


def lasso_objective(dictionary: Dictionary, x: np.ndarray, coeffs: np.ndarray,
                    lam: float) -> float:
    """0.5 * ||x - D a||^2 + lam * ||a||_1."""
    r = x - dictionary.atoms @ coeffs
    return 0.5 * float(r @ r) + lam * float(np.abs(coeffs).sum())


def lasso_kkt_violation(dictionary: Dictionary, x: np.ndarray, lam: float,
                        coeffs: np.ndarray) -> float:
    """Max stationarity violation of the lasso optimality conditions at ``coeffs``.

    On the support: | d_j^T (x - D a) - lam * sign(a_j) |.
    Off the support: max(| d_j^T (x - D a) | - lam, 0).
    """
    g = dictionary.atoms.T @ (x - dictionary.atoms @ coeffs)
    on = coeffs != 0
    viol_on = np.abs(g[on] - lam * np.sign(coeffs[on]))
    viol_off = np.maximum(np.abs(g[~on]) - lam, 0.0)
    worst = 0.0
    if viol_on.size:
        worst = max(worst, float(viol_on.max()))
    if viol_off.size:
        worst = max(worst, float(viol_off.max()))
    return worst


# ---------------------------------------------------------------------------
# greedy family


def _check_sparsity_level(dictionary: Dictionary, k: int) -> None:
    limit = min(dictionary.n_bands, dictionary.n_atoms)
    if not 1 <= k <= limit:
        raise ValueError(f"sparsity level K={k} outside 1..{limit}")


def _top_candidates(correlations: np.ndarray, how_many: int, floor: float,
                    selected: np.ndarray) -> np.ndarray:
    """Indices of up to ``how_many`` largest |correlations| above ``floor``,
    skipping already-selected atoms; ties go to the lowest index."""
    mags = np.abs(correlations).copy()
    if selected.size:
        mags[selected] = -1.0
    order = np.argsort(-mags, kind="stable")
    order = order[mags[order] > floor]
    return order[:how_many]


def _ls_on_support(atoms_s: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Least-squares coefficients on a small atom subset (normal equations
    with one refinement step; lstsq fallback for degenerate subsets)."""
    g = atoms_s.T @ atoms_s
    b = atoms_s.T @ x
    try:
        factor = cho_factor(g, lower=False)
        coef = cho_solve(factor, b)
        coef += cho_solve(factor, b - g @ coef)
    except np.linalg.LinAlgError:
        coef = np.linalg.lstsq(atoms_s, x, rcond=None)[0]
    return coef


def _code_from_support(n_atoms: int, support: np.ndarray, coef: np.ndarray) -> SparseCode:
    coeffs = np.zeros(n_atoms)
    coeffs[support] = coef
    return SparseCode.from_dense(coeffs)


def omp(dictionary: Dictionary, x: np.ndarray, k: int,
        tol: float = GREEDY_TOL) -> SparseCode:
    """Orthogonal matching pursuit: grow the support one atom at a time by
    max correlation with the residual, refitting least squares each step."""
    _check_sparsity_level(dictionary, k)
    atoms = dictionary.atoms
    floor = _CORR_FLOOR_REL * np.linalg.norm(x)
    support = np.empty(0, dtype=np.int64)
    coef = np.empty(0)
    residual = x.astype(np.float64, copy=True)
    for _ in range(k):
        if np.linalg.norm(residual) <= tol:
            break
        picks = _top_candidates(atoms.T @ residual, 1, floor, support)
        if picks.size == 0:
            break
        support = np.append(support, picks)
        coef = _ls_on_support(atoms[:, support], x)
        residual = x - atoms[:, support] @ coef
    return _code_from_support(dictionary.n_atoms, support, coef)


def sp(dictionary: Dictionary, x: np.ndarray, k: int, tol: float = GREEDY_TOL,
       max_iters: int = 100) -> SparseCode:
    """Subspace pursuit: keep exactly K atoms, expand by the K best
    correlations, prune back to the K largest refit coefficients; stop when
    the residual norm stops decreasing."""
    _check_sparsity_level(dictionary, k)
    atoms = dictionary.atoms
    floor = _CORR_FLOOR_REL * np.linalg.norm(x)
    none = np.empty(0, dtype=np.int64)

    support = np.sort(_top_candidates(atoms.T @ x, k, floor, none))
    if support.size == 0:
        return _code_from_support(dictionary.n_atoms, none, np.empty(0))
    coef = _ls_on_support(atoms[:, support], x)
    residual = x - atoms[:, support] @ coef
    best_norm = np.linalg.norm(residual)

    for _ in range(max_iters):
        if best_norm <= tol:
            break
        extra = _top_candidates(atoms.T @ residual, k, floor, support)
        if extra.size == 0:
            break
        candidate = np.sort(np.concatenate([support, extra]))
        cand_coef = _ls_on_support(atoms[:, candidate], x)
        keep = np.sort(candidate[np.argsort(-np.abs(cand_coef), kind="stable")[:k]])
        new_coef = _ls_on_support(atoms[:, keep], x)
        new_residual = x - atoms[:, keep] @ new_coef
        new_norm = np.linalg.norm(new_residual)
        if new_norm >= best_norm:
            break
        support, coef, residual, best_norm = keep, new_coef, new_residual, new_norm
    return _code_from_support(dictionary.n_atoms, support, coef)


def romp(dictionary: Dictionary, x: np.ndarray, k: int,
         tol: float = GREEDY_TOL) -> SparseCode:
    """Regularized OMP: per iteration take up to K strongest correlations,
    keep the maximal-energy group whose magnitudes are within a factor 2,
    add the whole group, refit. Stops at |support| >= 2K or a tiny residual."""
    _check_sparsity_level(dictionary, k)
    atoms = dictionary.atoms
    floor = _CORR_FLOOR_REL * np.linalg.norm(x)
    support = np.empty(0, dtype=np.int64)
    coef = np.empty(0)
    residual = x.astype(np.float64, copy=True)
    while support.size < 2 * k:
        if np.linalg.norm(residual) <= tol:
            break
        correlations = atoms.T @ residual
        picks = _top_candidates(correlations, k, floor, support)
        if picks.size == 0:
            break
        mags = np.abs(correlations[picks])  # descending by construction
        energy = np.concatenate(([0.0], np.cumsum(mags ** 2)))
        best_span, best_energy = (0, 1), -1.0
        for i in range(len(mags)):
            j = i
            while j + 1 < len(mags) and mags[i] <= 2.0 * mags[j + 1]:
                j += 1
            window_energy = energy[j + 1] - energy[i]
            if window_energy > best_energy:
                best_span, best_energy = (i, j + 1), window_energy
        group = picks[best_span[0]:best_span[1]]
        support = np.sort(np.concatenate([support, group]))
        coef = _ls_on_support(atoms[:, support], x)
        residual = x - atoms[:, support] @ coef
    return _code_from_support(dictionary.n_atoms, support, coef)


def gomp(dictionary: Dictionary, x: np.ndarray, k: int, s: int = 2,
         tol: float = GREEDY_TOL) -> SparseCode:
    """Generalized OMP: select ``s`` atoms per iteration by correlation
    magnitude, refit, run ceil(K/s) iterations. s=1 reproduces omp exactly."""
    _check_sparsity_level(dictionary, k)
    if s < 1:
        raise ValueError(f"atoms-per-iteration S={s} must be >= 1")
    n_iters = math.ceil(k / s)
    if s * n_iters > dictionary.n_atoms:
        raise ValueError(
            f"S*iterations = {s * n_iters} exceeds dictionary size {dictionary.n_atoms}")
    atoms = dictionary.atoms
    floor = _CORR_FLOOR_REL * np.linalg.norm(x)
    support = np.empty(0, dtype=np.int64)
    coef = np.empty(0)
    residual = x.astype(np.float64, copy=True)
    for _ in range(n_iters):
        if np.linalg.norm(residual) <= tol:
            break
        picks = _top_candidates(atoms.T @ residual, s, floor, support)
        if picks.size == 0:
            break
        support = np.append(support, picks)
        coef = _ls_on_support(atoms[:, support], x)
        residual = x - atoms[:, support] @ coef
    return _code_from_support(dictionary.n_atoms, support, coef)


def samp(dictionary: Dictionary, x: np.ndarray, step: int = 1,
         tol: float = GREEDY_TOL, max_iters: int = 1000) -> SparseCode:
    """Sparsity-adaptive matching pursuit: subspace pursuit at a growing
    size estimate, bumped by ``step`` whenever the residual stalls. Needs no
    sparsity level up front; stops at residual <= tol or support size
    min(bands, atoms)/2."""
    if step < 1:
        raise ValueError(f"step must be >= 1, got {step}")
    atoms = dictionary.atoms
    cap = min(dictionary.n_bands, dictionary.n_atoms) // 2
    floor = _CORR_FLOOR_REL * np.linalg.norm(x)
    none = np.empty(0, dtype=np.int64)
    support = none
    coef = np.empty(0)
    residual = x.astype(np.float64, copy=True)
    resid_norm = np.linalg.norm(residual)
    size = step
    for _ in range(max_iters):
        if resid_norm <= tol or size > cap:
            break
        prelim = _top_candidates(atoms.T @ residual, size, floor, support)
        if prelim.size == 0:
            break  # residual orthogonal to every unselected atom
        candidate = np.sort(np.concatenate([support, prelim]))
        cand_coef = _ls_on_support(atoms[:, candidate], x)
        keep = np.sort(candidate[np.argsort(-np.abs(cand_coef), kind="stable")[:size]])
        new_coef = _ls_on_support(atoms[:, keep], x)
        new_residual = x - atoms[:, keep] @ new_coef
        new_norm = np.linalg.norm(new_residual)
        if new_norm <= tol:
            support, coef = keep, new_coef
            break
        if new_norm >= resid_norm:
            size += step  # stage switch: residual stalled at this size
        else:
            support, coef, residual, resid_norm = keep, new_coef, new_residual, new_norm
    return _code_from_support(dictionary.n_atoms, support, coef)


# ---------------------------------------------------------------------------
# l1 family


def _largest_gram_eigenvalue(atoms: np.ndarray, n_iters: int = 100) -> float:
    """Power-iteration estimate of the top eigenvalue of D^T D."""
    m = atoms.shape[1]
    v = 1.0 + 0.001 * np.arange(m)  # deterministic, not axis-aligned
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(n_iters):
        w = atoms.T @ (atoms @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        lam = norm
    return float(lam)


def fista(dictionary: Dictionary, x: np.ndarray, lam: float,
          max_iters: int = 1000, tol: float = 1e-8, callback=None) -> SparseCode:
    """FISTA with function-value restart, so the lasso objective is
    non-increasing. Step size 1/L with L the power-iteration estimate of the
    top eigenvalue of D^T D; stops on |F_t - F_{t-1}| <= tol * max(1, F_{t-1}).
    ``callback``, when given, sees callback(alpha, objective) per accepted step."""
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam}")
    atoms = dictionary.atoms
    lipschitz = _largest_gram_eigenvalue(atoms)
    step = 1.0 / lipschitz if lipschitz > 0 else 1.0

    alpha = np.zeros(dictionary.n_atoms)
    y = alpha.copy()
    t = 1.0
    obj_prev = lasso_objective(dictionary, x, alpha, lam)

    def prox_step(point):
        grad = atoms.T @ (atoms @ point - x)
        return soft_threshold(point - step * grad, lam * step)

    for _ in range(max_iters):
        candidate = prox_step(y)
        obj = lasso_objective(dictionary, x, candidate, lam)
        if obj > obj_prev:
            # restart: kill the momentum, take a plain proximal step
            t = 1.0
            candidate = prox_step(alpha)
            obj = lasso_objective(dictionary, x, candidate, lam)
            if obj > obj_prev:
                break  # cannot decrease at working precision
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        y = candidate + ((t - 1.0) / t_next) * (candidate - alpha)
        alpha, t = candidate, t_next
        if callback is not None:
            callback(alpha, obj)
        if abs(obj - obj_prev) <= tol * max(1.0, obj_prev):
            obj_prev = obj
            break
        obj_prev = obj
    return SparseCode.from_dense(alpha)


def admm_fixed(dictionary: Dictionary, x: np.ndarray, cfg: AdmmConfig,
               cache: GramCache | None = None, callback=None) -> SparseCode:
    """Scaled-form ADMM for the lasso with fixed (lam, rho, relax, tau).

    Per iteration:
        alpha = relax * (D^T D + rho I)^-1 (D^T x + rho (z - u)) + (1 - relax) * z
        z     = soft_threshold(alpha + u, lam / rho)
        u     = u + tau * (alpha - z)
    Stops at max_iters or max(||alpha - z||, rho * ||z - z_prev||) <= tol.
    Returns z, which is exactly sparse by construction. ``callback``, when
    given, is invoked as callback(alpha, z, u) after every iteration.
    """
    cache = cache if cache is not None else GramCache(dictionary)
    dtx = cache.correlate(x)
    eta = cfg.lam / cfg.rho
    rho, relax, tau = cfg.rho, cfg.relax, cfg.tau
    z = np.zeros(dictionary.n_atoms)
    u = np.zeros(dictionary.n_atoms)
    for _ in range(cfg.max_iters):
        z_prev = z
        alpha = relax * cache.solve(rho, dtx + rho * (z - u)) + (1.0 - relax) * z
        z = soft_threshold(alpha + u, eta)
        u = u + tau * (alpha - z)
        if callback is not None:
            callback(alpha, z, u)
        primal = np.linalg.norm(alpha - z)
        dual = rho * np.linalg.norm(z - z_prev)
        if max(primal, dual) <= cfg.tol:
            break
    return SparseCode.from_dense(z)

"""Shared low-dimensional object-space learning and projection operators.

Per-class subspaces come from MAP-regularized EM for probabilistic PCA with
zero-mean Gaussian priors on both the basis and the mean (the regularization
that keeps fits sane when the sample count is far below the voxel dimension).
Class subspaces merge into one shared orthonormal basis by stacking
[W_1, ..., W_m, mu_1, ..., mu_m] column-wise and taking the left singular
vectors above a scale-relative rank cutoff.

Projection is W^T o, back-projection is W c (optionally rebinarized at 0.5),
and partial projection solves the normal equations restricted to the known
voxels of a partial observation, either directly or through an L1-regularized
coordinate-descent path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom3d.carve import PartialObservation
from .geom3d.voxel import VoxelGrid

_ORTHONORMAL_TOL = 1e-6
_RANK_CUTOFF = 1e-10
_NOISE_FLOOR = 1e-12


class ConvergenceError(RuntimeError):
    """Iterative solver failed to converge; `residual` holds the final value."""

    def __init__(self, message: str, residual: float = math.nan):
        super().__init__(message)
        self.residual = residual


@dataclass
class VBPCAConfig:
    variance_target: float = 0.6
    max_components: int = 64
    em_max_iters: int = 200
    em_rel_tolerance: float = 1e-8
    prior_variance: float = 1.0  # zero-mean Gaussian prior on basis entries and mean

    def __post_init__(self):
        if not 0.0 < self.variance_target <= 1.0:
            raise ValueError("variance_target must be in (0, 1]")
        if self.em_max_iters < 1:
            raise ValueError("em_max_iters must be >= 1")
        if self.max_components < 1:
            raise ValueError("max_components must be >= 1")
        if self.prior_variance <= 0:
            raise ValueError("prior_variance must be positive")


@dataclass
class ClassSubspace:
    class_id: str
    basis: np.ndarray = field(repr=False)   # (d, k)
    mean: np.ndarray = field(repr=False)    # (d,)
    noise_variance: float = 0.0
    coefficient_posteriors: np.ndarray = field(repr=False, default=None)  # (n, k)
    resolution: int = 0

    def __post_init__(self):
        if self.basis.ndim != 2 or self.basis.shape[1] < 1:
            raise ValueError("basis must be (d, k) with k >= 1")
        if not np.all(np.isfinite(self.basis)) or not np.all(np.isfinite(self.mean)):
            raise ValueError("subspace parameters must be finite")
        if self.noise_variance <= 0:
            raise ValueError("noise_variance must be positive")

    @property
    def n_components(self) -> int:
        return self.basis.shape[1]


@dataclass(frozen=True)
class SharedBasis:
    matrix: np.ndarray = field(repr=False)  # (d, k), orthonormal columns
    resolution: int
    class_ids: tuple

    def __post_init__(self):
        check_orthonormal(self.matrix)
        object.__setattr__(self, "class_ids", tuple(self.class_ids))

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    @property
    def k(self) -> int:
        return self.matrix.shape[1]


def check_orthonormal(w: np.ndarray, tol: float = _ORTHONORMAL_TOL) -> None:
    gram = w.T @ w
    err = float(np.abs(gram - np.eye(w.shape[1])).max())
    if err >= tol:
        raise ValueError(f"basis columns not orthonormal (max deviation {err:.3g})")


@dataclass
class SolverConfig:
    lasso_lambda: float = 0.0
    tolerance: float = 1e-12
    max_iterations: int = 2000

    def __post_init__(self):
        if self.lasso_lambda < 0:
            raise ValueError("lasso_lambda must be >= 0")


def _select_component_count(singular_values: np.ndarray, cfg: VBPCAConfig, n: int, d: int) -> int:
    power = singular_values ** 2
    total = power.sum()
    if total <= 0:
        return 1
    cumulative = np.cumsum(power) / total
    k = int(np.searchsorted(cumulative, cfg.variance_target - 1e-12) + 1)
    return max(1, min(k, cfg.max_components, n - 1, d))


def fit_class_subspace(
    X,
    cfg: VBPCAConfig,
    class_id: str = "",
    resolution: int = 0,
) -> ClassSubspace:
    """Fit one class subspace by EM with Gaussian MAP priors.

    The component count is the smallest one whose PCA spectrum captures at
    least `cfg.variance_target` of total variance, capped at
    `cfg.max_components`. EM alternates coefficient posteriors with updates of
    (basis, mean, noise variance); the tracked objective is the negative log
    posterior of the marginal model, which must not increase.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least 2 sample vectors")
    if not np.all(np.isfinite(X)):
        raise ValueError("input vectors must be finite")
    n, d = X.shape
    v0 = cfg.prior_variance

    xbar = X.mean(axis=0)
    centered = X - xbar
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    k = _select_component_count(s, cfg, n, d)

    w = vt[:k].T * (s[:k] / math.sqrt(n))
    mu = xbar.copy()
    tail = s[k:] ** 2
    sigma2 = float(tail.sum() / (n * max(d - k, 1))) if tail.size else 1e-2
    sigma2 = max(sigma2, 1e-6)

    def objective(w, mu, sigma2):
        m = w.T @ w + sigma2 * np.eye(k)
        chol = np.linalg.cholesky(m)
        logdet_m = 2.0 * float(np.log(np.diag(chol)).sum())
        logdet_c = (d - k) * math.log(sigma2) + logdet_m
        xc = X - mu
        total_sq = float((xc * xc).sum())
        cross = xc @ w
        solved = np.linalg.solve(m, cross.T).T
        quad = (total_sq - float((solved * cross).sum())) / sigma2
        nll = 0.5 * (quad + n * (logdet_c + d * math.log(2.0 * math.pi)))
        prior = 0.5 * (float((w * w).sum()) + float(mu @ mu)) / v0
        return nll + prior

    prev_obj = objective(w, mu, sigma2)
    rises = 0
    for _ in range(cfg.em_max_iters):
        # E-step: posterior moments of the coefficients.
        m = w.T @ w + sigma2 * np.eye(k)
        m_inv = np.linalg.inv(m)
        c_mean = (X - mu) @ w @ m_inv                       # (n, k)
        s_cc = c_mean.T @ c_mean + n * sigma2 * m_inv       # sum of E[c c^T]

        # M-step (conditional maximizations under the Gaussian priors).
        mu = (X - c_mean @ w.T).sum(axis=0) / (n + sigma2 / v0)
        xc = X - mu
        s_xc = xc.T @ c_mean                                # (d, k)
        w = np.linalg.solve(s_cc + (sigma2 / v0) * np.eye(k), s_xc.T).T
        resid = float((xc * xc).sum()) - 2.0 * float((s_xc * w).sum()) + float(((w.T @ w) * s_cc).sum())
        sigma2 = max(resid / (n * d), _NOISE_FLOOR)

        obj = objective(w, mu, sigma2)
        if obj > prev_obj + 1e-9 * max(1.0, abs(prev_obj)):
            rises += 1
            if rises >= 5:
                raise ConvergenceError("EM objective increased 5 consecutive iterations", residual=obj)
        else:
            rises = 0
        if abs(prev_obj - obj) < cfg.em_rel_tolerance * max(1.0, abs(prev_obj)):
            prev_obj = obj
            break
        prev_obj = obj

    m = w.T @ w + sigma2 * np.eye(k)
    c_mean = (X - mu) @ w @ np.linalg.inv(m)
    return ClassSubspace(class_id, w, mu, sigma2, c_mean, resolution)


def build_shared_basis(subspaces) -> SharedBasis:
    """Merge class subspaces and means into one shared orthonormal basis."""
    subspaces = list(subspaces)
    if not subspaces:
        raise ValueError("need at least one class subspace")
    d = subspaces[0].basis.shape[0]
    for sub in subspaces:
        if sub.basis.shape[0] != d or sub.mean.shape[0] != d:
            raise ValueError("class subspaces have mismatched dimension")
    stacked = np.hstack([s.basis for s in subspaces] + [s.mean[:, None] for s in subspaces])
    u, s, _ = np.linalg.svd(stacked, full_matrices=False)
    keep = s > s[0] * _RANK_CUTOFF if s.size and s[0] > 0 else np.zeros(s.shape, dtype=bool)
    if not keep.any():
        raise ValueError("stacked subspaces are numerically rank zero")
    resolutions = {s.resolution for s in subspaces}
    resolution = resolutions.pop() if len(resolutions) == 1 else 0
    return SharedBasis(u[:, keep].copy(), resolution, tuple(s.class_id for s in subspaces))


def _as_vector(o, d: int) -> np.ndarray:
    vec = o.values if isinstance(o, VoxelGrid) else np.asarray(o, dtype=np.float64).reshape(-1)
    if vec.shape[0] != d:
        raise ValueError(f"expected vector of length {d}, got {vec.shape[0]}")
    return vec


def project(o, basis: SharedBasis) -> np.ndarray:
    """Subspace coefficients W^T o of a voxel vector."""
    return basis.matrix.T @ _as_vector(o, basis.d)


def back_project(coeffs, basis: SharedBasis, binarize: bool = False) -> VoxelGrid:
    """Reconstruct W c as a voxel grid; binarization thresholds at 0.5."""
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if coeffs.shape[0] != basis.k:
        raise ValueError(f"expected {basis.k} coefficients, got {coeffs.shape[0]}")
    values = basis.matrix @ coeffs
    r = basis.resolution
    if r < 1:
        r = round(basis.d ** (1.0 / 3.0))
        if r ** 3 != basis.d:
            raise ValueError("basis dimension is not a cubic voxel count")
    if binarize:
        values = (values > 0.5).astype(np.float64)
    return VoxelGrid(r, values, binary=binarize)


def partial_error_and_gradient(coeffs, obs: PartialObservation, basis: SharedBasis):
    """Squared error on the known voxels and its gradient in coefficient space."""
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if obs.num_known == 0:
        raise ValueError("observation has no known voxels")
    if obs.known_indices[-1] >= basis.d:
        raise ValueError("observation indices exceed basis dimension")
    w_sub = basis.matrix[obs.known_indices]
    resid = w_sub @ coeffs - obs.known_values
    return float(resid @ resid), 2.0 * (w_sub.T @ resid)


def solve_partial_projection(obs: PartialObservation, basis: SharedBasis, cfg: SolverConfig | None = None) -> np.ndarray:
    """Best subspace coefficients for a partial observation.

    With no L1 weight this solves the normal equations A c = b (A restricted
    to known voxels) through a Cholesky factorization, adding the diagonal
    jitter 1e-10 * trace(A)/k when the system is singular. With a positive L1
    weight it runs coordinate descent on ||A c - b||_2^2 + lambda ||c||_1.
    """
    cfg = cfg or SolverConfig()
    if obs.num_known < 1:
        raise ValueError("observation has no known voxels")
    if obs.known_indices[-1] >= basis.d:
        raise ValueError("observation indices exceed basis dimension")
    w_sub = basis.matrix[obs.known_indices]
    a = w_sub.T @ w_sub
    b = w_sub.T @ obs.known_values
    if cfg.lasso_lambda == 0.0:
        try:
            chol = np.linalg.cholesky(a)
        except np.linalg.LinAlgError:
            jitter = _RANK_CUTOFF * float(np.trace(a)) / basis.k
            try:
                chol = np.linalg.cholesky(a + jitter * np.eye(basis.k))
            except np.linalg.LinAlgError:
                return np.linalg.lstsq(a, b, rcond=None)[0]
        y = np.linalg.solve(chol, b)
        return np.linalg.solve(chol.T, y)
    return _lasso_coordinate_descent(a, b, cfg)


def _lasso_coordinate_descent(a: np.ndarray, b: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    """Minimize ||A x - b||_2^2 + lambda ||x||_1 by cyclic coordinate descent."""
    k = a.shape[1]
    gram = a.T @ a
    h = a.T @ b
    col_sq = np.diag(gram).copy()
    x = np.zeros(k)
    half_lam = 0.5 * cfg.lasso_lambda
    for _ in range(cfg.max_iterations):
        max_delta = 0.0
        for j in range(k):
            if col_sq[j] <= 0.0:
                continue
            rho = h[j] - gram[j] @ x + col_sq[j] * x[j]
            new = math.copysign(max(abs(rho) - half_lam, 0.0), rho) / col_sq[j]
            delta = abs(new - x[j])
            if delta > max_delta:
                max_delta = delta
            x[j] = new
        if max_delta <= cfg.tolerance * max(1.0, float(np.abs(x).max())):
            return x
    resid = float(np.linalg.norm(a @ x - b))
    raise ConvergenceError(
        f"coordinate descent did not converge in {cfg.max_iterations} sweeps", residual=resid
    )

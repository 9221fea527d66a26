"""Search-based eigenobject inference: per-class Gaussian mixtures over
subspace coefficients and joint class/pose estimation over a rotation grid.

Each candidate rotation re-carves the observation into the hypothesized
canonical frame, solves the partial projection, and scores
log P(r) + log D(coeffs | c) + log P(c); the posterior table is the
normalized exponential of that grid. All density math stays in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geom3d.rotation import Rotation, identity
from .subspace import ConvergenceError, SharedBasis, SolverConfig, solve_partial_projection

_WEIGHT_TOL = 1e-9


class PoseSearchError(RuntimeError):
    pass


@dataclass
class ClassGMM:
    class_id: str
    weights: np.ndarray          # (n_components,)
    means: np.ndarray = field(repr=False)      # (n_components, k)
    variances: np.ndarray = field(repr=False)  # (n_components, k), diagonal
    covariance_floor: float = 1e-9

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if np.any(w <= 0) or abs(w.sum() - 1.0) > _WEIGHT_TOL:
            raise ValueError("mixture weights must be positive and sum to 1")
        if self.covariance_floor <= 0:
            raise ValueError("covariance_floor must be positive")
        if np.any(self.variances < self.covariance_floor - 1e-15):
            raise ValueError("variances must respect the covariance floor")
        object.__setattr__(self, "weights", w)

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _log_gaussian_diag(x: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """Log density of x under each diagonal Gaussian component."""
    diff = x[None, :] - means
    return -0.5 * (np.log(2.0 * math.pi * variances).sum(axis=1) + (diff * diff / variances).sum(axis=1))


def log_density(gmm: ClassGMM, coeffs) -> float:
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
    if coeffs.shape[0] != gmm.dim:
        raise ValueError(f"expected {gmm.dim}-dim coefficients, got {coeffs.shape[0]}")
    logs = np.log(gmm.weights) + _log_gaussian_diag(coeffs, gmm.means, gmm.variances)
    peak = logs.max()
    return float(peak + np.log(np.exp(logs - peak).sum()))


def _kmeanspp_centers(x: np.ndarray, n_components: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.shape[0])]]
    for _ in range(1, n_components):
        d2 = np.min([(np.square(x - c)).sum(axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(x[rng.integers(x.shape[0])])
            continue
        centers.append(x[np.searchsorted(np.cumsum(d2 / total), rng.random())])
    return np.array(centers)


def fit_class_gmm(
    projections,
    n_components: int,
    floor: float | None = None,
    class_id: str = "",
    seed: int = 0,
    max_iters: int = 200,
    tol: float = 1e-9,
) -> ClassGMM:
    """Diagonal-covariance mixture by EM, k-means++ seeded, floor-clamped.

    Degenerate input (all points identical) collapses to a single component
    at the floor covariance instead of erroring.
    """
    x = np.asarray(projections, dtype=np.float64)
    if x.ndim != 2:
        x = x.reshape(len(projections), -1)
    n, k = x.shape
    if n < n_components:
        raise ValueError("need at least n_components projection vectors")

    data_var = float(x.var(axis=0).mean())
    if floor is None:
        floor = max(1e-6 * data_var, 1e-12)
    if data_var <= 0 or np.allclose(x, x[0]):
        return ClassGMM(class_id, np.ones(1), x[:1].copy(), np.full((1, k), floor), floor)

    rng = np.random.default_rng(seed)
    means = _kmeanspp_centers(x, n_components, rng)
    assign = np.argmin(((x[:, None, :] - means[None]) ** 2).sum(axis=2), axis=1)
    weights = np.full(n_components, 1.0 / n_components)
    variances = np.full((n_components, k), max(data_var, floor))
    for j in range(n_components):
        sel = assign == j
        if sel.sum() >= 2:
            means[j] = x[sel].mean(axis=0)
            variances[j] = np.maximum(x[sel].var(axis=0), floor)

    prev_ll = -np.inf
    for _ in range(max_iters):
        # E-step in log space.
        logp = np.log(weights)[None, :] + np.stack(
            [_log_gaussian_diag_rows(x, means[j], variances[j]) for j in range(n_components)], axis=1
        )
        peak = logp.max(axis=1, keepdims=True)
        norm = peak[:, 0] + np.log(np.exp(logp - peak).sum(axis=1))
        ll = float(norm.sum())
        resp = np.exp(logp - norm[:, None])

        nk = resp.sum(axis=0)
        for j in np.nonzero(nk < 1e-10)[0]:
            # Reseed an empty component at the worst-explained point.
            worst = int(np.argmin(norm))
            means[j] = x[worst]
            variances[j] = np.maximum(x.var(axis=0), floor)
            resp[:, j] = 1.0 / n
            nk = resp.sum(axis=0)

        weights = nk / nk.sum()
        means = (resp.T @ x) / nk[:, None]
        for j in range(n_components):
            diff = x - means[j]
            variances[j] = np.maximum((resp[:, j, None] * diff * diff).sum(axis=0) / nk[j], floor)

        if abs(ll - prev_ll) < tol * max(1.0, abs(prev_ll)):
            break
        prev_ll = ll

    return ClassGMM(class_id, weights / weights.sum(), means, variances, floor)


def _log_gaussian_diag_rows(x: np.ndarray, mean: np.ndarray, var: np.ndarray) -> np.ndarray:
    diff = x - mean
    return -0.5 * (np.log(2.0 * math.pi * var).sum() + (diff * diff / var).sum(axis=1))


@dataclass(frozen=True)
class PriorConfig:
    class_priors: np.ndarray
    rotation_priors: np.ndarray

    def __post_init__(self):
        cp = np.asarray(self.class_priors, dtype=np.float64).reshape(-1)
        rp = np.asarray(self.rotation_priors, dtype=np.float64).reshape(-1)
        for name, p in (("class", cp), ("rotation", rp)):
            if np.any(p < 0) or abs(p.sum() - 1.0) > _WEIGHT_TOL:
                raise ValueError(f"{name} priors must be non-negative and sum to 1")
        object.__setattr__(self, "class_priors", cp)
        object.__setattr__(self, "rotation_priors", rp)

    @classmethod
    def uniform(cls, n_classes: int, n_rotations: int) -> "PriorConfig":
        return cls(np.full(n_classes, 1.0 / n_classes), np.full(n_rotations, 1.0 / n_rotations))


def _icosahedron_vertices() -> np.ndarray:
    phi = (1.0 + math.sqrt(5.0)) / 2.0
    raw = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    v = np.asarray(raw, dtype=np.float64)
    return v / np.linalg.norm(v, axis=1, keepdims=True)


_ICOSA_FACES = [
    (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
    (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
    (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
    (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
]


def icosphere_axes(subdivisions: int = 0) -> np.ndarray:
    """Unit axes from a subdivided icosahedron: 12, 42, or 162 vertices."""
    verts = [tuple(v) for v in _icosahedron_vertices()]
    faces = list(_ICOSA_FACES)
    index = {v: i for i, v in enumerate(verts)}

    def midpoint(i, j):
        m = np.asarray(verts[i]) + np.asarray(verts[j])
        m = tuple(m / np.linalg.norm(m))
        if m not in index:
            index[m] = len(verts)
            verts.append(m)
        return index[m]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    return np.asarray(verts, dtype=np.float64)


@dataclass(frozen=True)
class PoseSearchConfig:
    rotations: tuple

    def __post_init__(self):
        rots = tuple(self.rotations)
        if not rots:
            raise ValueError("need at least one candidate rotation")
        for r in rots:
            if not r.is_canonical():
                raise ValueError("candidate rotations must be canonical")
        object.__setattr__(self, "rotations", rots)

    @classmethod
    def grid(
        cls,
        axis_count: int,
        angle_count: int,
        max_angle: float,
        include_identity: bool = False,
    ) -> "PoseSearchConfig":
        """Icosahedral axis sampling crossed with uniform angle bins."""
        counts = {12: 0, 42: 1, 162: 2}
        if axis_count not in counts:
            raise ValueError("axis_count must be one of 12, 42, 162")
        axes = icosphere_axes(counts[axis_count])
        angles = max_angle * (np.arange(1, angle_count + 1)) / angle_count
        rots = []
        if include_identity:
            rots.append(identity())
        for axis in axes:
            for ang in angles:
                rots.append(Rotation(axis * ang))
        return cls(tuple(rots))

    def __len__(self) -> int:
        return len(self.rotations)


@dataclass(frozen=True)
class SearchResult:
    class_id: str
    rotation: Rotation
    coefficients: np.ndarray
    posterior: np.ndarray  # (n_rotations, n_classes), sums to 1
    class_index: int
    rotation_index: int


def classify_pose_search(
    obs_producer,
    basis: SharedBasis,
    gmms,
    priors: PriorConfig,
    search: PoseSearchConfig,
    solver: SolverConfig | None = None,
) -> SearchResult:
    """Joint class/pose argmax over the candidate rotation grid.

    `obs_producer(rotation)` must return the partial observation carved under
    that pose hypothesis. Candidates whose observation or solve fails are
    skipped (zero posterior); ties break toward the lowest (class index,
    rotation index).
    """
    gmms = list(gmms)
    n_rot = len(search.rotations)
    n_cls = len(gmms)
    if n_cls < 1:
        raise ValueError("need at least one class")
    if priors.class_priors.shape[0] != n_cls or priors.rotation_priors.shape[0] != n_rot:
        raise ValueError("prior sizes do not match the search grid")
    for gmm, cid in zip(gmms, basis.class_ids):
        if gmm.class_id and gmm.class_id != cid:
            raise ValueError("GMM order must match basis class order")

    with np.errstate(divide="ignore"):
        log_rot = np.log(priors.rotation_priors)
        log_cls = np.log(priors.class_priors)

    scores = np.full((n_rot, n_cls), -np.inf)
    coeff_rows = [None] * n_rot
    for ri, rot in enumerate(search.rotations):
        try:
            obs = obs_producer(rot)
            coeffs = solve_partial_projection(obs, basis, solver)
        except (ValueError, ConvergenceError):
            continue
        coeff_rows[ri] = coeffs
        for ci, gmm in enumerate(gmms):
            scores[ri, ci] = log_rot[ri] + log_density(gmm, coeffs) + log_cls[ci]

    finite = np.isfinite(scores)
    if not finite.any():
        raise PoseSearchError("every candidate rotation failed")

    peak = scores[finite].max()
    table = np.zeros_like(scores)
    table[finite] = np.exp(scores[finite] - peak)
    table /= table.sum()

    # Argmax with (class index, rotation index) tie-break.
    by_class = scores.T  # (n_cls, n_rot)
    flat = int(np.argmax(by_class))
    ci, ri = divmod(flat, n_rot)
    return SearchResult(
        class_id=basis.class_ids[ci] if ci < len(basis.class_ids) else str(ci),
        rotation=search.rotations[ri],
        coefficients=coeff_rows[ri],
        posterior=table,
        class_index=ci,
        rotation_index=ri,
    )

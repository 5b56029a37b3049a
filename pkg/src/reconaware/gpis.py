"""Gaussian process implicit surfaces.

Zero-mean GP over R^3 with a squared-exponential kernel. Surface points carry
label 0; the implicit function is negative inside and positive outside.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.spatial.distance import cdist

from .errors import EmptyQuery, EmptySurface, SingularKernel
from .geom import ObbFrame, PointCloud, apply_transform, pca_pose, write_ply

log = logging.getLogger(__name__)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
MAX_ENTROPY_POINTS = 400


@dataclass(frozen=True)
class GpisHyper:
    signal_sigma: float = 1.0
    length_scale: float = 0.05
    noise: float = 1e-4
    eta: float = 0.1

    def __post_init__(self):
        if self.signal_sigma <= 0 or self.length_scale <= 0:
            raise ValueError("signal_sigma and length_scale must be positive")
        if self.noise < 0:
            raise ValueError("noise variance must be non-negative")
        if self.eta <= 0:
            raise ValueError("eta must be positive")

    @property
    def signal_var(self):
        return self.signal_sigma ** 2


def kernel(a, b, hyper: GpisHyper):
    d2 = float(np.sum((np.asarray(a, dtype=float) - np.asarray(b, dtype=float)) ** 2))
    return hyper.signal_var * np.exp(-d2 / (2.0 * hyper.length_scale ** 2))


def kernel_matrix(A, B, hyper: GpisHyper):
    d2 = cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean")
    return hyper.signal_var * np.exp(-d2 / (2.0 * hyper.length_scale ** 2))


def jittered_cholesky(K, scale):
    """Lower Cholesky factor of K, adding diagonal jitter only if needed.

    Jitter starts at ``1e-10 * scale`` and grows tenfold up to ``1e-4 * scale``.
    Returns ``(L, jitter)``.
    """
    try:
        return cholesky(K, lower=True, check_finite=False), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START * scale
    eye = np.eye(K.shape[0])
    while jitter <= JITTER_MAX * scale * (1 + 1e-9):
        try:
            L = cholesky(K + jitter * eye, lower=True, check_finite=False)
            log.debug("cholesky needed jitter %.1e", jitter)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise SingularKernel(f"matrix not positive definite with jitter up to {JITTER_MAX * scale:g}")


@dataclass(frozen=True, eq=False)
class GpisModel:
    train_points: np.ndarray
    train_labels: np.ndarray
    hyper: GpisHyper
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0

    def __len__(self):
        return self.train_points.shape[0]

    def posterior(self, Q):
        """Vectorized posterior mean and variance at (M, 3) query points."""
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        Ks = kernel_matrix(self.train_points, Q, self.hyper)
        mean = Ks.T @ self.alpha
        V = solve_triangular(self.chol, Ks, lower=True, check_finite=False)
        var = self.hyper.signal_var - np.einsum("ij,ij->j", V, V)
        return mean, np.maximum(var, 0.0)


def fit(train, hyper: GpisHyper, labels=None) -> GpisModel:
    """Factor ``K + noise*I`` for the given training points.

    ``labels`` defaults to zeros (every training point on the surface).
    """
    X = train.points if isinstance(train, PointCloud) else np.atleast_2d(np.asarray(train, dtype=float))
    if len(X) == 0:
        raise ValueError("at least one training point is required")
    y = np.zeros(len(X)) if labels is None else np.asarray(labels, dtype=float).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ValueError("labels must match training points")
    K = kernel_matrix(X, X, hyper) + hyper.noise * np.eye(len(X))
    L, jitter = jittered_cholesky(K, hyper.signal_var)
    alpha = cho_solve((L, True), y, check_finite=False)
    X = X.copy()
    X.flags.writeable = False
    return GpisModel(X, y, hyper, L, alpha, jitter)


def object_anchors(cloud, length_scale, shell_margin=2.0, shell_spacing=1.0):
    """Signed anchor points for a surface-only training cloud.

    One interior point (label -1) at the PCA centroid, and exterior points
    (label +1) on the faces of the PCA box grown by ``shell_margin`` length
    scales, spaced about ``shell_spacing`` length scales apart. Returns
    ``(points, labels, shell_box)``.
    """
    obb = pca_pose(cloud, allow_degenerate=True)
    R, c = obb.axes, obb.pose.position
    half = obb.half_extents + shell_margin * length_scale
    step = shell_spacing * length_scale
    ticks = [np.linspace(-half[i], half[i], max(2, int(np.ceil(2 * half[i] / step)) + 1)) for i in range(3)]
    g = np.stack(np.meshgrid(*ticks, indexing="ij"), axis=-1).reshape(-1, 3)
    on_face = np.any(np.isclose(np.abs(g), half), axis=1)
    shell = g[on_face] @ R.T + c
    pts = np.vstack([c[None, :], shell])
    labels = np.concatenate([[-1.0], np.ones(len(shell))])
    return pts, labels, ObbFrame(obb.pose, half)


def fit_object(cloud, hyper: GpisHyper, shell_margin=2.0, shell_spacing=1.0):
    """Fit a GPIS to surface points augmented with interior/exterior anchors.

    Returns ``(model, shell_box)``; extracting the surface inside
    ``shell_box`` with zero padding keeps the zero-mean far field (where the
    mean decays back to 0) out of the estimate.
    """
    X = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
    anchors, alabels, box = object_anchors(X, hyper.length_scale, shell_margin, shell_spacing)
    pts = np.vstack([X, anchors])
    labels = np.concatenate([np.zeros(len(X)), alabels])
    return fit(pts, hyper, labels), box


def posterior(model: GpisModel, q):
    mean, var = model.posterior(np.asarray(q, dtype=float).reshape(1, 3))
    return float(mean[0]), float(var[0])


class SurfaceClass(enum.Enum):
    OUTSIDE = "outside"
    SURFACE = "surface"
    INSIDE = "inside"


def classify_mean(mu, eta):
    if mu > eta:
        return SurfaceClass.OUTSIDE
    if mu < -eta:
        return SurfaceClass.INSIDE
    return SurfaceClass.SURFACE


def classify(model: GpisModel, q) -> SurfaceClass:
    mu, _ = posterior(model, q)
    return classify_mean(mu, model.hyper.eta)


@dataclass(frozen=True, eq=False)
class SurfaceSet:
    """Estimated on-surface points with their posterior mean and variance."""

    points: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    spacing: float

    def __len__(self):
        return self.points.shape[0]

    @property
    def cloud(self):
        return PointCloud(self.points)

    def save_ply(self, path):
        write_ply(path, self.points, scalars={"mu": self.mean, "var": self.var})


def extract_surface(model: GpisModel, bounds: ObbFrame, resolution=None, pad=None, chunk=20000) -> SurfaceSet:
    """Posterior on a regular grid in the box frame, keeping points with |mu| <= eta.

    The box is first grown to enclose all training points, then padded by
    ``pad`` (default three length scales). ``resolution`` defaults to half a
    length scale.
    """
    hyper = model.hyper
    res = hyper.length_scale / 2.0 if resolution is None else float(resolution)
    if res <= 0:
        raise ValueError("resolution must be positive")
    pad = 3.0 * hyper.length_scale if pad is None else float(pad)
    R, c = bounds.axes, bounds.pose.position
    local = (model.train_points - c) @ R
    lo = np.minimum(-bounds.half_extents, local.min(axis=0)) - pad
    hi = np.maximum(bounds.half_extents, local.max(axis=0)) + pad
    axes = [np.arange(lo[i], hi[i] + 0.5 * res, res) for i in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)
    world = grid @ R.T + c
    keep_pts, keep_mu, keep_var = [], [], []
    for s in range(0, len(world), chunk):
        block = world[s:s + chunk]
        mu, var = model.posterior(block)
        m = np.abs(mu) <= hyper.eta
        keep_pts.append(block[m])
        keep_mu.append(mu[m])
        keep_var.append(var[m])
    pts = np.concatenate(keep_pts)
    if len(pts) == 0:
        raise EmptySurface("no grid point satisfies |mu| <= eta")
    return SurfaceSet(pts, np.concatenate(keep_mu), np.concatenate(keep_var), res)


def _canonical_order(P):
    return np.lexsort((P[:, 2], P[:, 1], P[:, 0]))


def conditional_covariance(model: GpisModel, Q):
    """Covariance of noisy observations at Q given the training inputs."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    hyper = model.hyper
    Kcc = kernel_matrix(Q, Q, hyper) + (hyper.noise + model.jitter) * np.eye(len(Q))
    V = solve_triangular(model.chol, kernel_matrix(model.train_points, Q, hyper), lower=True, check_finite=False)
    S = Kcc - V.T @ V
    return 0.5 * (S + S.T)


def conditional_entropy(model: GpisModel, query, max_points=MAX_ENTROPY_POINTS, seed=0):
    """Differential entropy (nats) of noisy observations at ``query`` given the training set.

    ``H = 0.5 * ln((2 pi e)^d |Sigma|)`` with ``d`` the number of query points.
    Query sets larger than ``max_points`` are uniformly subsampled with a
    generator seeded by ``seed`` (after sorting, so the result does not depend
    on input order).
    """
    Q = query.points if isinstance(query, PointCloud) else np.asarray(query, dtype=float).reshape(-1, 3)
    if len(Q) == 0:
        raise EmptyQuery("conditional entropy of an empty query set")
    Q = Q[_canonical_order(Q)]
    if max_points is not None and len(Q) > max_points:
        rng = np.random.default_rng(seed)
        Q = Q[np.sort(rng.choice(len(Q), size=max_points, replace=False))]
    S = conditional_covariance(model, Q)
    L, _ = jittered_cholesky(S, model.hyper.signal_var)
    logdet = 2.0 * np.sum(np.log(np.diag(L)))
    d = len(Q)
    return 0.5 * (d * np.log(2.0 * np.pi * np.e) + logdet)


def surface_to_world(surface: SurfaceSet, T):
    return apply_transform(T, surface.points)

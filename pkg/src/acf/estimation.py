"""Turning per-seed predictions into keypoints and directed axes."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .camera import SeedGrid
from .errors import DegenerateAxis, NoValidSeeds, RansacFailure

DEFAULT_MASK_THRESHOLD = 0.5


class AxisMethod(str, enum.Enum):
    ENDPOINTS = "endpoints"
    VECTOR = "vector"
    SCATTERLINE = "scatterline"


@dataclass(frozen=True)
class VoterSet:
    points: np.ndarray
    source_seed: np.ndarray

    def __len__(self):
        return len(self.points)


@dataclass(frozen=True)
class MeanShiftConfig:
    bandwidth: float = 0.03
    max_iterations: int = 50
    convergence_tol: float = 1e-5
    merge_radius: float | None = None

    def __post_init__(self):
        if self.bandwidth <= 0 or self.convergence_tol <= 0:
            raise ValueError("bandwidth and convergence_tol must be positive")
        if self.merge_radius is None:
            object.__setattr__(self, "merge_radius", self.bandwidth / 2)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 200
    inlier_threshold: float = 0.005
    min_inlier_fraction: float = 0.3
    rng_seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.inlier_threshold <= 0:
            raise ValueError("iterations must be >= 1 and inlier_threshold > 0")


@dataclass(frozen=True)
class AxisEstimate:
    origin: np.ndarray
    direction: np.ndarray
    kind: AxisMethod


def _admitted(seeds: SeedGrid, mask, threshold: float) -> np.ndarray:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("mask threshold must lie in [0, 1]")
    m = np.asarray(mask, dtype=float)
    if m.shape != (len(seeds),):
        raise ValueError(f"mask has shape {m.shape}, expected ({len(seeds)},)")
    return np.flatnonzero(seeds.valid & (m >= threshold))


def form_voters(seeds: SeedGrid, offsets, mask, threshold: float = DEFAULT_MASK_THRESHOLD) -> VoterSet:
    """Shift every admitted seed by its predicted offset."""
    t = np.asarray(offsets, dtype=float)
    if t.shape != (len(seeds), 3):
        raise ValueError(f"offsets have shape {t.shape}, expected ({len(seeds)}, 3)")
    idx = _admitted(seeds, mask, threshold)
    if len(idx) == 0:
        raise NoValidSeeds("no valid seed passes the mask threshold")
    return VoterSet(points=seeds.points[idx] + t[idx], source_seed=idx)


def _kernel(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=-1)
    return np.exp(-0.5 * d2 / bandwidth**2)


def kde(points, voters, bandwidth: float) -> np.ndarray:
    """Unnormalized Gaussian KDE of ``voters`` evaluated at ``points``."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    return _kernel(p, np.asarray(voters, dtype=float), bandwidth).sum(axis=1)


def _shift(x: np.ndarray, voters: np.ndarray, bandwidth: float) -> np.ndarray:
    w = _kernel(x, voters, bandwidth)
    return (w @ voters) / w.sum(axis=1, keepdims=True)


def mean_shift_mode(voters, config: MeanShiftConfig = MeanShiftConfig()) -> np.ndarray:
    """Mode of the voter cloud with the largest basin of attraction.

    Mean shift starts from every voter. Converged points closer than
    ``merge_radius`` to an existing cluster representative join it. The
    cluster with most members wins; ties go to the higher kernel density,
    then to the lexicographically smallest mode. The winning mode is then
    polished with extra iterations until the step is below
    ``convergence_tol * 1e-3``.
    """
    X = np.asarray(voters.points if isinstance(voters, VoterSet) else voters, dtype=float)
    if X.ndim != 2 or len(X) == 0:
        raise NoValidSeeds("mean shift needs at least one voter")
    h = config.bandwidth

    modes = X.copy()
    active = np.ones(len(X), dtype=bool)
    for _ in range(config.max_iterations):
        if not active.any():
            break
        new = _shift(modes[active], X, h)
        step = np.linalg.norm(new - modes[active], axis=1)
        modes[active] = new
        idx = np.flatnonzero(active)
        active[idx[step < config.convergence_tol]] = False

    reps: list[int] = []
    counts: list[int] = []
    members: list[list[int]] = []
    for i, m in enumerate(modes):
        for c, r in enumerate(reps):
            if np.linalg.norm(m - modes[r]) <= config.merge_radius:
                counts[c] += 1
                members[c].append(i)
                break
        else:
            reps.append(i)
            counts.append(1)
            members.append([i])

    density = kde(modes, X, h)
    best_pts = []
    for mem in members:
        j = mem[int(np.argmax(density[mem]))]
        best_pts.append((modes[j], density[j]))
    order = sorted(
        range(len(members)),
        key=lambda c: (-counts[c], -best_pts[c][1], tuple(best_pts[c][0])),
    )
    mode = best_pts[order[0]][0].copy()

    fine_tol = config.convergence_tol * 1e-3
    for _ in range(10_000):
        new = _shift(mode[None, :], X, h)[0]
        step = np.linalg.norm(new - mode)
        mode = new
        if step < fine_tol:
            break
    return mode


def estimate_keypoint(seeds: SeedGrid, offsets, mask, config: MeanShiftConfig = MeanShiftConfig(),
                      threshold: float = DEFAULT_MASK_THRESHOLD) -> np.ndarray:
    return mean_shift_mode(form_voters(seeds, offsets, mask, threshold), config)


def estimate_axis_endpoints(seeds: SeedGrid, endpoint_offsets, mask,
                            config: MeanShiftConfig = MeanShiftConfig(),
                            threshold: float = DEFAULT_MASK_THRESHOLD) -> AxisEstimate:
    """Vote each endpoint separately; the axis runs from endpoint 1 to 2."""
    t = np.asarray(endpoint_offsets, dtype=float)
    e1 = estimate_keypoint(seeds, t[:, 0], mask, config, threshold)
    e2 = estimate_keypoint(seeds, t[:, 1], mask, config, threshold)
    d = e2 - e1
    norm = np.linalg.norm(d)
    if norm < 1e-6:
        raise DegenerateAxis(f"endpoints coincide (separation {norm:.3g} m)")
    return AxisEstimate(origin=e1, direction=d / norm, kind=AxisMethod.ENDPOINTS)


def estimate_axis_vector(vectors, mask, origin=(0.0, 0.0, 0.0), threshold: float = DEFAULT_MASK_THRESHOLD,
                         valid=None) -> AxisEstimate:
    """Normalized mask-weighted mean of per-seed direction predictions.

    The prediction carries no position, so the caller supplies ``origin``
    (normally the keypoint estimate).
    """
    n = np.asarray(vectors, dtype=float)
    m = np.asarray(mask, dtype=float)
    keep = m >= threshold
    if valid is not None:
        keep &= np.asarray(valid, dtype=bool)
    if not keep.any():
        raise NoValidSeeds("no seed passes the mask threshold")
    mean = (m[keep, None] * n[keep]).sum(axis=0) / m[keep].sum()
    norm = np.linalg.norm(mean)
    if norm < 1e-9:
        raise DegenerateAxis("per-seed directions cancel out")
    return AxisEstimate(origin=np.asarray(origin, dtype=float), direction=mean / norm,
                        kind=AxisMethod.VECTOR)


def _line_distances(points: np.ndarray, anchors: np.ndarray, dirs: np.ndarray) -> np.ndarray:
    """Distances from every point to each (anchor, unit dir) line, shape (lines, points)."""
    r = points[None, :, :] - anchors[:, None, :]
    along = np.einsum("lpk,lk->lp", r, dirs)
    perp = r - along[..., None] * dirs[:, None, :]
    return np.linalg.norm(perp, axis=-1)


def _principal_line(points: np.ndarray):
    c = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - c, full_matrices=False)
    return c, vt[0]


def fit_line_ransac(points, config: RansacConfig = RansacConfig()):
    """RANSAC over two-point hypotheses followed by a total least squares refit.

    Returns ``(centroid, unit direction, inlier mask)``.
    """
    P = np.asarray(points, dtype=float)
    m = len(P)
    if m < 2:
        raise RansacFailure("need at least two points")
    rng = np.random.default_rng(config.rng_seed)
    pairs = np.array([rng.choice(m, size=2, replace=False) for _ in range(config.iterations)])
    a, b = P[pairs[:, 0]], P[pairs[:, 1]]
    d = b - a
    lengths = np.linalg.norm(d, axis=1)
    ok = lengths > 1e-12
    if not ok.any():
        raise RansacFailure("all sampled point pairs coincide")
    dirs = d[ok] / lengths[ok, None]
    dist = _line_distances(P, a[ok], dirs)
    counts = (dist <= config.inlier_threshold).sum(axis=1)
    best = int(np.argmax(counts))
    inliers = dist[best] <= config.inlier_threshold
    if counts[best] < max(2, config.min_inlier_fraction * m):
        raise RansacFailure(f"best hypothesis has {counts[best]} of {m} inliers")

    c, u = _principal_line(P[inliers])
    refined = _line_distances(P, c[None], u[None])[0] <= config.inlier_threshold
    if refined.sum() >= max(2, config.min_inlier_fraction * m) and not np.array_equal(refined, inliers):
        inliers = refined
        c, u = _principal_line(P[inliers])
    return c, u, inliers


def orient_by_labels(points, direction, labels, reference=None) -> np.ndarray:
    """Flip ``direction`` so points labelled 1 lie further along it than points labelled 0.

    With both label groups present, every (label-1, label-0) pair votes on
    the sign of their projection difference; a tied vote falls back to the
    group means. With a single group the labels alone cannot orient the
    line, so points vote on their side of ``reference`` (the keypoint
    estimate): label-1 points should lie ahead of it, label-0 points behind.
    """
    P = np.asarray(points, dtype=float)
    lab = np.asarray(labels, dtype=bool)
    s = P @ direction
    if lab.any() and (~lab).any():
        votes = float(np.sign(s[lab][:, None] - s[~lab][None, :]).sum())
        if votes == 0:
            votes = float(s[lab].mean() - s[~lab].mean())
    elif reference is not None:
        rel = s - np.asarray(reference, dtype=float) @ direction
        votes = float(np.sum(np.sign(rel) * np.where(lab, 1.0, -1.0)))
    else:
        votes = 0.0
    if votes == 0:
        raise DegenerateAxis("endpoint labels do not determine the axis orientation")
    return -direction if votes < 0 else direction


def estimate_axis_scatterline(seeds: SeedGrid, offsets, logits, mask,
                              config: RansacConfig = RansacConfig(),
                              threshold: float = DEFAULT_MASK_THRESHOLD,
                              reference=None) -> AxisEstimate:
    """Robust line through the voter cloud, oriented by per-seed endpoint labels.

    A positive logit means the seed's voter lies closer to endpoint 2.
    ``reference`` (usually the keypoint estimate) only matters when every
    inlier carries the same label.
    """
    voters = form_voters(seeds, offsets, mask, threshold)
    if len(voters) < 2:
        raise RansacFailure("need at least two voters")
    labels = np.asarray(logits, dtype=float)[voters.source_seed] > 0
    c, u, inliers = fit_line_ransac(voters.points, config)
    u = orient_by_labels(voters.points[inliers], u, labels[inliers], reference)
    return AxisEstimate(origin=c, direction=u, kind=AxisMethod.SCATTERLINE)

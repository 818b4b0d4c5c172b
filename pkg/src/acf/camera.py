"""Seed sampling inside detection ROIs and pinhole back-projection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDepth, RoiOutOfImage

DEFAULT_GRID = 14


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def project(self, points) -> np.ndarray:
        """Pinhole projection of camera-frame points (..., 3) to pixels (..., 2)."""
        p = np.asarray(points, dtype=float)
        u = self.fx * p[..., 0] / p[..., 2] + self.cx
        v = self.fy * p[..., 1] / p[..., 2] + self.cy
        return np.stack([u, v], axis=-1)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class Roi:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_max > self.x_min and self.y_max > self.y_min):
            raise ValueError("ROI must have positive extent")

    def to_list(self) -> list:
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass(frozen=True)
class DepthImage:
    """Row-major depth in meters; 0 marks a missing measurement."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError("depth image must be 2D")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("depth values must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SeedGrid:
    """n*n seeds in row-major order (v outer, u inner).

    ``points`` rows of invalid seeds are NaN.
    """

    n: int
    uv: np.ndarray
    depth: np.ndarray
    points: np.ndarray
    valid: np.ndarray

    def __len__(self):
        return self.n * self.n


def backproject(uv, d, intrinsics: CameraIntrinsics) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise NonPositiveDepth(f"depth must be positive, got {d}")
    uv = np.asarray(uv, dtype=float)
    x = (uv[..., 0] - intrinsics.cx) * d / intrinsics.fx
    y = (uv[..., 1] - intrinsics.cy) * d / intrinsics.fy
    return np.stack([x, y, d * np.ones_like(x)], axis=-1)


def seed_pixels(roi: Roi, n: int) -> np.ndarray:
    """Centers of an n x n subdivision of the ROI, shape (n*n, 2)."""
    k = (np.arange(n) + 0.5) / n
    us = roi.x_min + k * (roi.x_max - roi.x_min)
    vs = roi.y_min + k * (roi.y_max - roi.y_min)
    vv, uu = np.meshgrid(vs, us, indexing="ij")
    return np.stack([uu.ravel(), vv.ravel()], axis=-1)


def bilinear_depth(depth: DepthImage, uv: np.ndarray):
    """Bilinearly interpolate depth at pixel coordinates.

    Pixel (row r, col c) is centered at (u, v) = (c, r). Neighbours that
    receive zero interpolation weight are ignored, so a sample exactly on a
    pixel center only reads that pixel. Returns (depth, valid); a sample is
    invalid if it lies outside the image or touches a missing-depth pixel.
    """
    img = depth.values
    h, w = img.shape
    u = np.asarray(uv[:, 0], dtype=float)
    v = np.asarray(uv[:, 1], dtype=float)
    inside = (u >= -0.5) & (u <= w - 0.5) & (v >= -0.5) & (v <= h - 0.5)
    uc = np.clip(u, 0.0, w - 1.0)
    vc = np.clip(v, 0.0, h - 1.0)
    u0 = np.floor(uc).astype(int)
    v0 = np.floor(vc).astype(int)
    au = uc - u0
    av = vc - v0
    u1 = np.minimum(u0 + 1, w - 1)
    v1 = np.minimum(v0 + 1, h - 1)

    out = np.zeros(len(u))
    valid = inside.copy()
    for uu, vv, wgt in (
        (u0, v0, (1 - au) * (1 - av)),
        (u1, v0, au * (1 - av)),
        (u0, v1, (1 - au) * av),
        (u1, v1, au * av),
    ):
        z = img[vv, uu]
        used = wgt > 0
        valid &= ~(used & (z <= 0))
        out += np.where(used, wgt * z, 0.0)
    out = np.where(valid, out, 0.0)
    return out, valid


def sample_seeds(roi: Roi, depth: DepthImage, intrinsics: CameraIntrinsics,
                 n: int = DEFAULT_GRID) -> SeedGrid:
    if n < 1:
        raise ValueError("grid side must be >= 1")
    h, w = depth.height, depth.width
    if (roi.x_max <= -0.5 or roi.x_min >= w - 0.5
            or roi.y_max <= -0.5 or roi.y_min >= h - 0.5):
        raise RoiOutOfImage(f"ROI {roi.to_list()} lies outside a {w}x{h} image")
    uv = seed_pixels(roi, n)
    d, valid = bilinear_depth(depth, uv)
    points = np.full((n * n, 3), np.nan)
    if valid.any():
        points[valid] = backproject(uv[valid], d[valid], intrinsics)
    return SeedGrid(n=n, uv=uv, depth=d, points=points, valid=valid)

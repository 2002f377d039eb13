"""Scalp topography: project electrodes to 2-D and interpolate to a 32x32 image.

Electrodes live on a sphere (polar angle from the vertex Cz, azimuth measured
from the nose, positive toward the left ear). The azimuthal equidistant
projection maps them into a disk of radius 0.9; a cubic radial-basis
interpolant with a linear polynomial term fills the pixel grid.

Image convention: pixel (i, j) is centered at u = -1 + 2*(j+0.5)/N (front-back
axis, nose toward +u) and v = -1 + 2*(i+0.5)/N (left-right axis), row i
increasing downward. Pixels outside the unit disk are masked to exactly 0.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

GRID_N = 32
HEAD_SCALE = 0.9


@dataclass
class ElectrodeLayout:
    """Named electrodes with spherical coordinates (radians) and 2-D positions."""

    names: list[str]
    azimuth: np.ndarray
    polar: np.ndarray

    def __post_init__(self):
        self.azimuth = np.asarray(self.azimuth, dtype=np.float64)
        self.polar = np.asarray(self.polar, dtype=np.float64)
        if len(self.names) != self.azimuth.size or len(self.names) != self.polar.size:
            raise ValueError("names/azimuth/polar length mismatch")
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate electrode names")
        if (self.polar < 0).any() or (self.polar > np.pi).any():
            raise ValueError("polar angles must lie in [0, pi]")

    @property
    def n_channels(self) -> int:
        return len(self.names)

    @property
    def theta_max(self) -> float:
        return float(self.polar.max())

    @property
    def positions(self) -> np.ndarray:
        return project(self.polar, self.azimuth, self.theta_max)

    def index(self, name: str) -> int:
        return self.names.index(name)


def project(polar: np.ndarray, azimuth: np.ndarray, theta_max: float) -> np.ndarray:
    """Azimuthal equidistant projection onto the plane, scaled to radius 0.9.

    u = 0.9*(theta/theta_max)*cos(phi), v = 0.9*(theta/theta_max)*sin(phi);
    the vertex (theta=0) maps to the origin.
    """
    r = HEAD_SCALE * np.asarray(polar, dtype=np.float64) / theta_max
    return np.stack([r * np.cos(azimuth), r * np.sin(azimuth)], axis=-1)


@dataclass
class TopoImage:
    """Interpolated scalar field on the pixel grid plus the head-disk mask."""

    pixels: np.ndarray
    mask: np.ndarray = field(repr=False)


class RbfInterpolant:
    """Cubic RBF (phi(r) = r^3) with an added linear polynomial.

    The augmented (N+3)x(N+3) system enforces exact interpolation at the
    nodes and the side conditions sum(w) = sum(w*u) = sum(w*v) = 0, which
    make constants and linear fields reproduce exactly.
    """

    def __init__(self, nodes: np.ndarray, weights: np.ndarray, poly: np.ndarray):
        self.nodes = nodes
        self.weights = weights
        self.poly = poly  # (a0, a1, a2)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        d = np.linalg.norm(points[:, None, :] - self.nodes[None, :, :], axis=2)
        a0, a1, a2 = self.poly
        return d ** 3 @ self.weights + a0 + a1 * points[:, 0] + a2 * points[:, 1]


def fit_rbf(positions: np.ndarray, values: np.ndarray) -> RbfInterpolant:
    """Solve the augmented interpolation system for scattered 2-D data."""
    pos = np.asarray(positions, dtype=np.float64)
    val = np.asarray(values, dtype=np.float64)
    n = pos.shape[0]
    if n < 3:
        raise ValueError("need at least 3 nodes")
    d = np.linalg.norm(pos[:, None, :] - pos[None, :, :], axis=2)
    p = np.column_stack([np.ones(n), pos])
    a = np.zeros((n + 3, n + 3))
    a[:n, :n] = d ** 3
    a[:n, n:] = p
    a[n:, :n] = p.T
    rhs = np.concatenate([val, np.zeros(3)])
    try:
        sol = np.linalg.solve(a, rhs)
    except np.linalg.LinAlgError as exc:
        raise ValueError("singular interpolation system (duplicate electrode positions?)") from exc
    return RbfInterpolant(pos, sol[:n], sol[n:])


def pixel_grid(n: int = GRID_N) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(points, u, v): flattened pixel-center coordinates over [-1, 1]^2."""
    coords = -1.0 + 2.0 * (np.arange(n) + 0.5) / n
    v, u = np.meshgrid(coords, coords, indexing="ij")  # row i -> v, column j -> u
    return np.column_stack([u.ravel(), v.ravel()]), u, v


def head_mask(n: int = GRID_N) -> np.ndarray:
    _, u, v = pixel_grid(n)
    return u * u + v * v <= 1.0


def render_field(values: np.ndarray, layout: ElectrodeLayout, n: int = GRID_N) -> TopoImage:
    """Interpolate channel values onto the grid without standardization."""
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (layout.n_channels,):
        raise ValueError(f"expected one value per channel, got {values.shape}")
    points, _, _ = pixel_grid(n)
    mask = head_mask(n)
    interp = fit_rbf(layout.positions, values)
    img = np.zeros(n * n)
    inside = mask.ravel()
    img[inside] = interp(points[inside])
    return TopoImage(img.reshape(n, n), mask)


def render(values: np.ndarray, layout: ElectrodeLayout, n: int = GRID_N) -> TopoImage:
    """Interpolate and standardize masked-in pixels to mean 0, std 1.

    A zero-variance field (e.g., constant input values) yields the all-zero
    image with a warning.
    """
    topo = render_field(values, layout, n)
    inside = topo.pixels[topo.mask]
    std = inside.std()
    if std < 1e-12:
        warnings.warn("constant topographic field; rendering all-zero image")
        return TopoImage(np.zeros_like(topo.pixels), topo.mask)
    out = np.zeros_like(topo.pixels)
    out[topo.mask] = (inside - inside.mean()) / std
    return TopoImage(out, topo.mask)


def pixels_to_channels(importance: np.ndarray, layout: ElectrodeLayout) -> np.ndarray:
    """Aggregate a pixel map to per-channel scores by Voronoi assignment.

    Each masked-in pixel contributes to its nearest electrode; a channel's
    score is the mean importance over its pixels. A channel that wins no
    pixels falls back to the value of its single nearest masked-in pixel.
    """
    imp = np.asarray(importance, dtype=np.float64)
    n = imp.shape[0]
    if imp.shape != (n, n) or not np.isfinite(imp).all():
        raise ValueError("importance must be a finite square map")
    points, _, _ = pixel_grid(n)
    inside = head_mask(n).ravel()
    pts = points[inside]
    vals = imp.ravel()[inside]
    pos = layout.positions
    d2 = ((pts[:, None, :] - pos[None, :, :]) ** 2).sum(axis=2)
    owner = d2.argmin(axis=1)
    scores = np.zeros(layout.n_channels)
    for c in range(layout.n_channels):
        mine = owner == c
        scores[c] = vals[mine].mean() if mine.any() else vals[d2[:, c].argmin()]
    return scores


def save_pgm(pixels: np.ndarray, path) -> None:
    """Write an 8-bit binary PGM, min-max scaled over the whole image."""
    img = np.asarray(pixels, dtype=np.float64)
    lo, hi = img.min(), img.max()
    scaled = np.zeros_like(img) if hi == lo else (img - lo) / (hi - lo)
    data = np.round(scaled * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())

"""Differentiable warping of images and feature maps.

A feature map is an array shaped ``(..., H, W)``; all leading axes (batch,
channels) are warped by the same spatial warp. Pixel (i, j) sits at the
normalized coordinate ((j + 0.5) / W, (i + 0.5) / H).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .const import _LOGGER, SITE_JITTER
from .exceptions import ParseError, StructuralError
from .warp import Warp2D

FeatureMap = np.ndarray

_PNM_HEADER = re.compile(rb"\A(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)\s")


@dataclass(frozen=True)
class WarpGradients:
    """Gradients of a warp application w.r.t. its pixels and its knot values."""

    d_pixels: np.ndarray
    d_warp_values: np.ndarray


def _check_map(f: FeatureMap) -> np.ndarray:
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim < 2:
        raise StructuralError(f"feature map needs at least 2 axes, got shape {arr.shape}")
    return arr


def pixel_grid(height: int, width: int) -> tuple[np.ndarray, np.ndarray]:
    """Normalized (x, y) coordinates of every pixel center, each shaped (H, W)."""
    xs = (np.arange(width) + 0.5) / width
    ys = (np.arange(height) + 0.5) / height
    return np.meshgrid(xs, ys)


def coordinate_image(height: int, width: int) -> FeatureMap:
    """Two-channel image holding the normalized x and y of each pixel."""
    px, py = pixel_grid(height, width)
    return np.stack([px, py])


class _Sampling:
    """Bilinear interpolation weights of a feature map at normalized sample sites."""

    def __init__(self, height: int, width: int, u: np.ndarray, v: np.ndarray) -> None:
        self.height = height
        self.width = width
        raw_x = np.asarray(u, dtype=np.float64) * width - 0.5
        raw_y = np.asarray(v, dtype=np.float64) * height - 0.5
        cx = np.clip(raw_x, 0.0, width - 1)
        cy = np.clip(raw_y, 0.0, height - 1)
        self.x0 = np.minimum(np.floor(cx).astype(np.intp), max(width - 2, 0))
        self.y0 = np.minimum(np.floor(cy).astype(np.intp), max(height - 2, 0))
        self.x1 = np.minimum(self.x0 + 1, width - 1)
        self.y1 = np.minimum(self.y0 + 1, height - 1)
        self.tx = cx - self.x0
        self.ty = cy - self.y0
        # clamped sites do not move with the coordinate
        self.live_x = (raw_x >= 0.0) & (raw_x <= width - 1)
        self.live_y = (raw_y >= 0.0) & (raw_y <= height - 1)

    def corners(self, f: np.ndarray) -> tuple:
        return (
            f[..., self.y0, self.x0],
            f[..., self.y0, self.x1],
            f[..., self.y1, self.x0],
            f[..., self.y1, self.x1],
        )

    def forward(self, f: np.ndarray) -> np.ndarray:
        f00, f01, f10, f11 = self.corners(f)
        tx, ty = self.tx, self.ty
        top = (1.0 - tx) * f00 + tx * f01
        bottom = (1.0 - tx) * f10 + tx * f11
        return (1.0 - ty) * top + ty * bottom

    def backward(self, f: np.ndarray, upstream: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (d_f, d_u, d_v); coordinate gradients are summed over the leading axes."""
        tx, ty = self.tx, self.ty
        lead = f.shape[:-2]
        up = upstream.reshape((-1,) + upstream.shape[-2:])
        flat = np.concatenate([
            (self.y0 * self.width + self.x0).ravel(),
            (self.y0 * self.width + self.x1).ravel(),
            (self.y1 * self.width + self.x0).ravel(),
            (self.y1 * self.width + self.x1).ravel(),
        ])
        weights = np.concatenate([
            ((1.0 - tx) * (1.0 - ty)).ravel(),
            (tx * (1.0 - ty)).ravel(),
            ((1.0 - tx) * ty).ravel(),
            (tx * ty).ravel(),
        ])
        up_flat = up.reshape(up.shape[0], -1)
        contributions = np.tile(up_flat, (1, 4)) * weights
        d_f = np.zeros((up.shape[0], self.height * self.width))
        np.add.at(d_f.T, flat, contributions.T)

        f00, f01, f10, f11 = self.corners(f.reshape((-1,) + f.shape[-2:]))
        d_cx = np.sum(up * ((1.0 - ty) * (f01 - f00) + ty * (f11 - f10)), axis=0)
        d_cy = np.sum(up * ((1.0 - tx) * (f10 - f00) + tx * (f11 - f01)), axis=0)
        d_u = np.where(self.live_x, d_cx, 0.0) * self.width
        d_v = np.where(self.live_y, d_cy, 0.0) * self.height
        return d_f.reshape(lead + (self.height, self.width)), d_u, d_v


def bilinear_sample(f: FeatureMap, u: np.ndarray, v: np.ndarray) -> FeatureMap:
    """Samples ``f`` at normalized sites (u, v), clamping to the border pixels."""
    arr = _check_map(f)
    return _Sampling(arr.shape[-2], arr.shape[-1], u, v).forward(arr)


def resize_bilinear(f: FeatureMap, height: int, width: int) -> FeatureMap:
    """Resamples ``f`` onto a ``height`` x ``width`` pixel-center grid."""
    px, py = pixel_grid(height, width)
    return bilinear_sample(f, px, py)


def _off_knots(coords: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Moves coordinates within ``SITE_JITTER`` of an interior knot twice that far to its right."""
    interior = knots[(knots > 0.0) & (knots < 1.0)]
    if not interior.size:
        return coords
    near = np.any(np.abs(coords[..., None] - interior) < SITE_JITTER, axis=-1)
    return np.where(near, coords + 2.0 * SITE_JITTER, coords)


def _breakpoints(funcs: tuple, positions: np.ndarray) -> np.ndarray:
    return np.unique(np.concatenate([f.knots for f in funcs] + [positions]))


def _sample_sites(w: Warp2D, height: int, width: int, inverse: bool) -> tuple:
    source = w if inverse else w.inverse()
    px, py = pixel_grid(height, width)
    # the warp's derivative is one-sided at a knot; keep sites off them
    px = _off_knots(px, _breakpoints(source.row_funcs, source.col_positions))
    py = _off_knots(py, _breakpoints(source.col_funcs, source.row_positions))
    u, v = source(px, py)
    return px, py, source, u, v


def apply_warp(f: FeatureMap, w: Warp2D) -> FeatureMap:
    """S(f; w): output(p) = f(l^-1(p))."""
    arr = _check_map(f)
    if w.is_identity:
        return arr.copy()
    _, _, _, u, v = _sample_sites(w, arr.shape[-2], arr.shape[-1], inverse=False)
    return _Sampling(arr.shape[-2], arr.shape[-1], u, v).forward(arr)


def apply_warp_inverse(f: FeatureMap, w: Warp2D) -> FeatureMap:
    """S^-1(f; w): output(p) = f(l(p))."""
    arr = _check_map(f)
    if w.is_identity:
        return arr.copy()
    _, _, _, u, v = _sample_sites(w, arr.shape[-2], arr.shape[-1], inverse=True)
    return _Sampling(arr.shape[-2], arr.shape[-1], u, v).forward(arr)


def warp_backward(f: FeatureMap, w: Warp2D, upstream: FeatureMap, inverse: bool = False) -> WarpGradients:
    """Exact gradients of ``apply_warp`` (or ``apply_warp_inverse`` with ``inverse=True``).

    ``d_warp_values`` follows ``w.parameter_vector()``. For the forward warp the
    sample sites come from l^-1, whose knots are the values of ``w``, so the
    gradient is the knot VJP of the inverse.
    """
    arr = _check_map(f)
    up = np.asarray(upstream, dtype=np.float64)
    if up.shape != arr.shape:
        raise StructuralError(f"upstream shape {up.shape} does not match feature map {arr.shape}")
    height, width = arr.shape[-2:]
    px, py, source, u, v = _sample_sites(w, height, width, inverse)
    d_pixels, d_u, d_v = _Sampling(height, width, u, v).backward(arr, up)
    if w.is_identity:
        d_pixels = up.copy()
    if inverse:
        d_values = w.value_vjp(px, py, d_u, d_v)
    else:
        d_values = source.knot_vjp(px, py, d_u, d_v)
    return WarpGradients(d_pixels, d_values)


def round_trip_error(f: FeatureMap, w: Warp2D) -> float:
    """Mean squared error of S(S^-1(f; w); w) against f."""
    arr = _check_map(f)
    restored = apply_warp(apply_warp_inverse(arr, w), w)
    return float(np.mean((restored - arr) ** 2))


def draw_warp_grid(f: FeatureMap, w: Warp2D, lines: int = None, value: float = 1.0) -> FeatureMap:
    """Overlays the image of the lattice lines under ``w`` on a copy of ``f``."""
    arr = _check_map(f).copy()
    height, width = arr.shape[-2:]
    lines = w.grid_n if lines is None else lines
    trace = np.linspace(0.0, 1.0, 4 * max(height, width))
    for pos in np.linspace(0.0, 1.0, lines + 1):
        for x, y in ((np.full_like(trace, pos), trace), (trace, np.full_like(trace, pos))):
            u, v = w(x, y)
            cols = np.clip((u * width).astype(np.intp), 0, width - 1)
            rows = np.clip((v * height).astype(np.intp), 0, height - 1)
            arr[..., rows, cols] = value
    return arr


def write_pnm(path: Union[str, Path], f: FeatureMap) -> None:
    """Writes a [0, 1] image as binary PGM (H, W) or PPM (3, H, W)."""
    arr = np.asarray(f, dtype=np.float64)
    if arr.ndim == 2:
        magic, pixels = b"P5", arr
    elif arr.ndim == 3 and arr.shape[0] == 3:
        magic, pixels = b"P6", np.moveaxis(arr, 0, -1)
    else:
        raise StructuralError(f"cannot write image of shape {arr.shape} as PNM")
    height, width = arr.shape[-2:]
    data = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as handle:
        handle.write(magic + b"\n%d %d\n255\n" % (width, height))
        handle.write(data.tobytes())
    _LOGGER.debug("Wrote %s image %sx%s to %s", magic.decode(), width, height, path)


def read_pnm(path: Union[str, Path]) -> FeatureMap:
    """Reads a binary PGM/PPM into [0, 1] floats shaped (H, W) or (3, H, W)."""
    raw = Path(path).read_bytes()
    match = _PNM_HEADER.match(raw)
    if match is None:
        raise ParseError(0, f"{path} is not a binary PGM/PPM file")
    magic, width, height, maxval = match.group(1), *(int(g) for g in match.groups()[1:])
    if not 0 < maxval < 256:
        raise ParseError(match.start(4), f"unsupported maxval {maxval}")
    channels = 1 if magic == b"P5" else 3
    offset = match.end()
    expected = width * height * channels
    if len(raw) - offset < expected:
        raise ParseError(len(raw), f"expected {expected} pixel bytes after offset {offset}")
    data = np.frombuffer(raw, dtype=np.uint8, count=expected, offset=offset).astype(np.float64) / maxval
    if channels == 1:
        return data.reshape(height, width)
    return np.moveaxis(data.reshape(height, width, 3), -1, 0)

"""Sampling the n-regularized field on rectangular grids."""

import functools
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import CovarianceNotPSD, GridTooLarge, InvalidParameter, OutOfDomain
from .kernels import KernelParams, field_covariance

MAX_NODES = 4096
JITTER = 1e-10
PSD_TOL = 1e-8
GFLD_MAGIC = b"GFLD"
GFLD_VERSION = 1
_SNAP = 1e-9


@dataclass(frozen=True)
class GridSpec:
    """Rectangular lattice ``origin + (i*hx, j*hy)``, ``0 <= i < nx``, ``0 <= j < ny``.

    Node ``(i, j)`` is stored at flat index ``j*nx + i`` (row-major, rows
    along y).
    """

    origin: tuple
    extent: tuple
    resolution: tuple
    max_nodes: int = MAX_NODES

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "extent", tuple(float(v) for v in self.extent))
        object.__setattr__(self, "resolution", tuple(int(v) for v in self.resolution))
        if len(self.origin) != 2 or len(self.extent) != 2 or len(self.resolution) != 2:
            raise InvalidParameter("grids are two-dimensional")
        if min(self.extent) <= 0:
            raise InvalidParameter(f"extent must be positive, got {self.extent}")
        if min(self.resolution) < 2:
            raise InvalidParameter(f"resolution must be at least 2 per axis, got {self.resolution}")
        if self.size > self.max_nodes:
            raise GridTooLarge(f"{self.size} nodes exceeds the cap of {self.max_nodes}")

    @property
    def size(self):
        return self.resolution[0] * self.resolution[1]

    @property
    def spacing(self):
        return tuple(e / (r - 1) for e, r in zip(self.extent, self.resolution))

    @property
    def lo(self):
        return np.array(self.origin)

    @property
    def hi(self):
        return np.array(self.origin) + np.array(self.extent)

    def axes(self):
        nx, ny = self.resolution
        hx, hy = self.spacing
        return self.origin[0] + hx * np.arange(nx), self.origin[1] + hy * np.arange(ny)

    def nodes(self):
        """Node coordinates, shape ``(nx*ny, 2)``, in storage order."""
        xs, ys = self.axes()
        gx, gy = np.meshgrid(xs, ys)
        return np.column_stack([gx.ravel(), gy.ravel()])


@dataclass(frozen=True, eq=False)
class GridField:
    """One realization of ``X_n`` on a grid; bilinear between nodes."""

    grid: GridSpec
    values: np.ndarray
    variance: float
    params: KernelParams
    seed: int
    index: int = 0

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.size,):
            raise InvalidParameter(f"expected {self.grid.size} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidParameter("field values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def as_array(self):
        """Values shaped ``(ny, nx)``."""
        nx, ny = self.grid.resolution
        return self.values.reshape(ny, nx)


def build_covariance(params, grid):
    """Exact covariance matrix of ``X_n`` at the grid nodes.

    Entries depend only on the integer node offsets, so each distinct
    ``(|di|, |dj|)`` is integrated once.
    """
    if grid.size > grid.max_nodes:
        raise GridTooLarge(f"{grid.size} nodes exceeds the cap of {grid.max_nodes}")
    nx, ny = grid.resolution
    hx, hy = grid.spacing
    table = np.empty((nx, ny))
    for di in range(nx):
        for dj in range(ny):
            table[di, dj] = field_covariance(params, math.hypot(di * hx, dj * hy))
    ix = np.tile(np.arange(nx), ny)
    iy = np.repeat(np.arange(ny), nx)
    return table[np.abs(ix[:, None] - ix[None, :]), np.abs(iy[:, None] - iy[None, :])]


@functools.lru_cache(maxsize=8)
def covariance_factor(params, grid):
    """Lower factor ``L`` with ``L L^T`` equal to the jittered covariance."""
    cov = build_covariance(params, grid)
    size = cov.shape[0]
    trace = float(np.trace(cov))
    if trace == 0.0:
        return np.zeros_like(cov)
    jittered = cov + (JITTER * trace / size) * np.eye(size)
    try:
        factor = np.linalg.cholesky(jittered)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(jittered)
        if w[0] < -PSD_TOL * max(1.0, trace / size):
            raise CovarianceNotPSD(f"smallest eigenvalue {w[0]:.3e} after jitter")
        factor = v * np.sqrt(np.clip(w, 0.0, None))
    factor.setflags(write=False)
    return factor


def sample_values(params, grid, seed, count, start=0):
    """Nodal values of ``count`` independent fields, shape ``(count, nodes)``.

    Sample ``i`` is driven by its own stream ``(seed, "field", start + i)``.
    """
    factor = covariance_factor(params, grid)
    xi = rng.block_normals(seed, "field", range(start, start + count), (grid.size,))
    # one matrix-vector product per sample keeps each row independent of batching
    out = np.empty_like(xi)
    for row in range(count):
        out[row] = factor @ xi[row]
    return out


def sample_field(params, grid, seed, index=0):
    """Draw one :class:`GridField` realization."""
    values = sample_values(params, grid, seed, 1, start=index)[0]
    return GridField(grid, values, params.field_variance, params, int(seed), int(index))


def _cell_coords(grid, x):
    x = np.asarray(x, dtype=float)
    nx, ny = grid.resolution
    hx, hy = grid.spacing
    u = (x[..., 0] - grid.origin[0]) / hx
    v = (x[..., 1] - grid.origin[1]) / hy
    # snap coordinates that are nodes up to rounding so nodal values come back exactly
    u = np.where(np.abs(u - np.round(u)) < _SNAP, np.round(u), u)
    v = np.where(np.abs(v - np.round(v)) < _SNAP, np.round(v), v)
    if np.any((u < 0) | (u > nx - 1) | (v < 0) | (v > ny - 1)) or not np.all(np.isfinite(u + v)):
        raise OutOfDomain("point outside the grid bounding box")
    i = np.minimum(np.floor(u).astype(int), nx - 2)
    j = np.minimum(np.floor(v).astype(int), ny - 2)
    return i, j, u - i, v - j


def evaluate_field(field, x):
    """Bilinear interpolation of the nodal values at ``x`` (shape ``(..., 2)``)."""
    vals = field.as_array()
    i, j, fx, fy = _cell_coords(field.grid, x)
    v00, v10 = vals[j, i], vals[j, i + 1]
    v01, v11 = vals[j + 1, i], vals[j + 1, i + 1]
    return (v00 * (1 - fx) + v10 * fx) * (1 - fy) + (v01 * (1 - fx) + v11 * fx) * fy


def field_gradient(field, x):
    """Gradient of the bilinear interpolant, valid in cell interiors."""
    vals = field.as_array()
    hx, hy = field.grid.spacing
    i, j, fx, fy = _cell_coords(field.grid, x)
    v00, v10 = vals[j, i], vals[j, i + 1]
    v01, v11 = vals[j + 1, i], vals[j + 1, i + 1]
    gx = ((v10 - v00) * (1 - fy) + (v11 - v01) * fy) / hx
    gy = ((v01 - v00) * (1 - fx) + (v11 - v10) * fx) / hy
    return np.stack([gx, gy], axis=-1)


def write_field_csv(field, path):
    nodes = field.grid.nodes()
    nx = field.grid.resolution[0]
    with open(path, "w") as fh:
        fh.write("ix,iy,x,y,value\n")
        for k, (p, val) in enumerate(zip(nodes, field.values)):
            fh.write(f"{k % nx},{k // nx},{float(p[0])!r},{float(p[1])!r},{float(val)!r}\n")


def write_field_binary(field, path):
    """32-byte header (magic, version, nx, ny, 16 reserved bytes) then ``<f8`` values."""
    nx, ny = field.grid.resolution
    header = GFLD_MAGIC + struct.pack("<III", GFLD_VERSION, nx, ny) + bytes(16)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asarray(field.values, dtype="<f8").tobytes())


def read_field_binary(path):
    """Return ``(nx, ny, values)`` from a GFLD dump."""
    with open(path, "rb") as fh:
        header = fh.read(32)
        if len(header) != 32 or header[:4] != GFLD_MAGIC:
            raise InvalidParameter(f"{path} is not a GFLD file")
        version, nx, ny = struct.unpack("<III", header[4:16])
        if version != GFLD_VERSION:
            raise InvalidParameter(f"unsupported GFLD version {version}")
        values = np.frombuffer(fh.read(), dtype="<f8")
    if values.size != nx * ny:
        raise InvalidParameter(f"expected {nx * ny} values, found {values.size}")
    return nx, ny, values.astype(float)

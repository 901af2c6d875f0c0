"""Finite-difference derivatives as fixed 3x3 convolution stencils.

Spatial first derivatives are pure central differences (f[i+1]-f[i-1])/(2*d);
a row/column-smoothed variant (three stacked central rows, scaled 1/(6*d)) is
available behind ``smoothed=True``. The Laplacian is always assembled as
d2(x) + d2(y), which for dx == dy coincides with the classic 5-point filter.
Time derivatives slice along the leading axis of a [time, channel, y, x]
sequence; endpoints are excluded rather than patched with one-sided stencils.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .errors import DegenerateInputError, DimensionError
from .numcore import Tensor

Array = np.ndarray


@dataclass(frozen=True)
class DomainSpec:
    """Grid geometry: spatial extents/steps, time discretization, topology.

    For periodic boundaries the points x_i = x0 + i*dx, i in [0, nx), tile the
    interval of length nx*dx; for dirichlet boundaries the endpoints are grid
    points and the interval length is (nx-1)*dx.
    """

    nx: int
    ny: int
    nt: int
    dx: float
    dy: float
    dt: float
    boundary: str = "periodic"
    x0: float = 0.0
    y0: float = 0.0

    def __post_init__(self):
        if self.nx < 3 or self.ny < 3 or self.nt < 3:
            raise DimensionError("all extents must be >= 3")
        if self.dx <= 0 or self.dy <= 0 or self.dt <= 0:
            raise DimensionError("all steps must be > 0")
        if self.boundary not in ("periodic", "dirichlet"):
            raise DimensionError(f"unknown boundary topology {self.boundary!r}")

    @property
    def extent_x(self) -> float:
        return self.dx * (self.nx if self.boundary == "periodic" else self.nx - 1)

    @property
    def extent_y(self) -> float:
        return self.dy * (self.ny if self.boundary == "periodic" else self.ny - 1)

    @property
    def t_end(self) -> float:
        return self.dt * (self.nt - 1)

    def xs(self) -> Array:
        return self.x0 + self.dx * np.arange(self.nx)

    def ys(self) -> Array:
        return self.y0 + self.dy * np.arange(self.ny)

    def ts(self) -> Array:
        return self.dt * np.arange(self.nt)

    def meshgrid(self) -> tuple[Array, Array]:
        """(X, Y) arrays of shape [ny, nx]; rows index y, columns x."""
        return np.meshgrid(self.xs(), self.ys(), indexing="xy")


@dataclass(frozen=True)
class PadMode:
    """One-cell halo policy: periodic, replicate, zero, or a dirichlet
    lattice carrying explicit boundary values on the halo ring."""

    tag: str
    frame: Array | None = None

    @classmethod
    def periodic(cls) -> "PadMode":
        return cls("periodic")

    @classmethod
    def replicate(cls) -> "PadMode":
        return cls("replicate")

    @classmethod
    def zero(cls) -> "PadMode":
        return cls("zero")

    @classmethod
    def none(cls) -> "PadMode":
        return cls("none")

    @classmethod
    def dirichlet(cls, frame) -> "PadMode":
        return cls("dirichlet-lattice", np.asarray(frame, dtype=np.float64))


def pad_field(f: Tensor | Array, mode: PadMode) -> Tensor:
    """Surround the last two axes with a one-cell halo filled per ``mode``."""
    return nc.pad2d(nc.as_tensor(f), mode)


# --- stencil kernels -------------------------------------------------------


def laplace_kernel(channels: int = 1) -> Array:
    """The unscaled 5-point Laplace filter (divide by d^2 when applying)."""
    k = np.zeros((channels, channels, 3, 3))
    base = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
    for c in range(channels):
        k[c, c] = base
    return k


def _d1_kernel(axis: str, step: float, smoothed: bool, channels: int) -> Array:
    if smoothed:
        # Three stacked central rows; exact on affine fields at 1/(6*d).
        row = np.array([[-1.0, 0.0, 1.0]] * 3) / (6.0 * step)
    else:
        row = np.zeros((3, 3))
        row[1, 0], row[1, 2] = -1.0 / (2.0 * step), 1.0 / (2.0 * step)
    if axis == "y":
        row = row.T
    k = np.zeros((channels, channels, 3, 3))
    for c in range(channels):
        k[c, c] = row
    return k


def _d2_kernel(axis: str, step: float, channels: int) -> Array:
    row = np.zeros((3, 3))
    row[1, 0], row[1, 1], row[1, 2] = 1.0, -2.0, 1.0
    if axis == "y":
        row = row.T
    k = np.zeros((channels, channels, 3, 3))
    for c in range(channels):
        k[c, c] = row / (step * step)
    return k


def _channels(f: Tensor) -> int:
    if f.ndim < 3:
        raise DimensionError(f"expected [..., c, h, w], got shape {f.shape}")
    return f.shape[-3]


def d1(f: Tensor | Array, axis: str, spec: DomainSpec, mode: PadMode, smoothed: bool = False) -> Tensor:
    """Central first derivative along x (columns) or y (rows)."""
    f = nc.as_tensor(f)
    if axis not in ("x", "y"):
        raise DimensionError(f"axis must be 'x' or 'y', got {axis!r}")
    step = spec.dx if axis == "x" else spec.dy
    k = _d1_kernel(axis, step, smoothed, _channels(f))
    return nc.conv2d(f, Tensor(k), mode)


def d2(f: Tensor | Array, axis: str, spec: DomainSpec, mode: PadMode) -> Tensor:
    """Central second derivative along one spatial axis."""
    f = nc.as_tensor(f)
    if axis not in ("x", "y"):
        raise DimensionError(f"axis must be 'x' or 'y', got {axis!r}")
    step = spec.dx if axis == "x" else spec.dy
    k = _d2_kernel(axis, step, _channels(f))
    return nc.conv2d(f, Tensor(k), mode)


def laplacian(f: Tensor | Array, spec: DomainSpec, mode: PadMode) -> Tensor:
    """Five-point Laplacian, assembled as d2x + d2y so the identity
    laplacian(f) == d2(f,'x') + d2(f,'y') holds bitwise."""
    f = nc.as_tensor(f)
    return nc.add(d2(f, "x", spec, mode), d2(f, "y", spec, mode))


def ddt(seq: Tensor | Array, spec: DomainSpec, order: int = 1) -> Tensor:
    """Time derivative over interior time indices of a [nt, c, h, w] sequence.

    order=1: (u[t+1]-u[t-1])/(2*dt); order=2: (u[t+1]+u[t-1]-2u[t])/dt^2.
    """
    seq = nc.as_tensor(seq)
    if seq.shape[0] < 3:
        raise DegenerateInputError(f"ddt needs nt >= 3, got {seq.shape[0]}")
    if order == 1:
        return nc.mul(nc.sub(seq[2:], seq[:-2]), 1.0 / (2.0 * spec.dt))
    if order == 2:
        upper = nc.add(seq[2:], seq[:-2])
        return nc.mul(nc.sub(upper, nc.mul(seq[1:-1], 2.0)), 1.0 / (spec.dt * spec.dt))
    raise DimensionError(f"ddt order must be 1 or 2, got {order}")

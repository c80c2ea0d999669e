"""Uniform grids on the unit torus and probability vectors living on them.

Cells are the tensor grid with centers (k + 1/2) * h per axis, h = 1/n,
covering [0, 1)^dim with periodic adjacency. A Density stores cell MASSES
(probabilities), not density values, so the total is exactly 1 and values
stay comparable under grid refinement; entropies relative to Lebesgue are
sums p_k log(p_k / vol_k).

All objects are immutable after construction and every function here is
pure, so concurrent use needs no synchronization.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import (
    DegenerateDensityError,
    GridMismatchError,
    InvalidTemperatureError,
    UnsupportedDimensionError,
)

MASS_TOL = 1e-12          # |sum(p) - 1| allowed on any public Density
NEGATIVE_CLAMP = 1e-13    # raw entries in (-NEGATIVE_CLAMP, 0) are treated as 0


@dataclass(frozen=True)
class TorusGrid:
    """Uniform discretization of the dim-dimensional unit torus.

    spacing * points_per_dim == 1 exactly; cell k has volume spacing**dim.
    """

    dim: int
    points_per_dim: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise UnsupportedDimensionError(f"dim must be 1 or 2, got {self.dim}")
        if self.points_per_dim < 2:
            raise ValueError(f"need at least 2 points per dimension, got {self.points_per_dim}")

    @property
    def spacing(self) -> float:
        return 1.0 / self.points_per_dim

    @property
    def cell_count(self) -> int:
        return self.points_per_dim ** self.dim

    @property
    def cell_volume(self) -> float:
        return self.spacing ** self.dim

    @cached_property
    def axis_centers(self) -> np.ndarray:
        """Centers (k + 1/2) * h along one axis."""
        n = self.points_per_dim
        c = (np.arange(n) + 0.5) / n
        c.flags.writeable = False
        return c

    @cached_property
    def cell_centers(self) -> np.ndarray:
        """(cell_count, dim) array of centers, C-order flattening for dim=2."""
        c = self.axis_centers
        if self.dim == 1:
            out = c.reshape(-1, 1)
        else:
            x1, x2 = np.meshgrid(c, c, indexing="ij")
            out = np.stack([x1.ravel(), x2.ravel()], axis=1)
        out = np.ascontiguousarray(out)
        out.flags.writeable = False
        return out

    def shaped(self, flat: np.ndarray) -> np.ndarray:
        """View a flat cell vector as the (n,) or (n, n) spatial array."""
        n = self.points_per_dim
        return flat.reshape((n,) * self.dim)


def _frozen_copy(arr) -> np.ndarray:
    out = np.array(arr, dtype=float, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Density:
    """Probability masses on the cells of a grid.

    Invariant: mass >= 0 with sum(mass) = 1 within MASS_TOL. Strict
    positivity is additionally required wherever a relative entropy
    against this density is evaluated (checked at the point of use).
    """

    grid: TorusGrid
    mass: np.ndarray

    def __post_init__(self):
        m = _frozen_copy(self.mass)
        if m.shape != (self.grid.cell_count,):
            raise ValueError(f"mass has shape {m.shape}, expected ({self.grid.cell_count},)")
        if np.any(np.isnan(m)):
            raise DegenerateDensityError("mass contains NaN")
        if np.any(m < 0):
            raise DegenerateDensityError(f"negative mass entry: min={m.min()}")
        total = m.sum()
        if abs(total - 1.0) > MASS_TOL:
            raise DegenerateDensityError(f"masses sum to {total!r}, not 1")
        object.__setattr__(self, "mass", m)

    @property
    def min_mass(self) -> float:
        return float(self.mass.min())

    def is_strictly_positive(self) -> bool:
        return bool(self.mass.min() > 0.0)


@dataclass(frozen=True)
class PotentialField:
    """Real-valued cell function (units of loss) on a grid."""

    grid: TorusGrid
    value: np.ndarray

    def __post_init__(self):
        v = _frozen_copy(self.value)
        if v.shape != (self.grid.cell_count,):
            raise ValueError(f"value has shape {v.shape}, expected ({self.grid.cell_count},)")
        if not np.all(np.isfinite(v)):
            raise ValueError("potential field has non-finite entries")
        object.__setattr__(self, "value", v)


def check_same_grid(a, b) -> None:
    if a.grid != b.grid:
        raise GridMismatchError(f"grids differ: {a.grid} vs {b.grid}")


def uniform_density(grid: TorusGrid) -> Density:
    """All cells carry mass 1/cell_count."""
    return Density(grid, np.full(grid.cell_count, 1.0 / grid.cell_count))


def normalize(raw, grid: TorusGrid) -> Density:
    """Turn a nonnegative vector into a Density.

    Tiny negative entries (magnitude < NEGATIVE_CLAMP) coming from roundoff
    are clamped to zero; anything more negative, all-zero or NaN input is a
    DegenerateDensityError.
    """
    m = np.array(raw, dtype=float, copy=True)
    if m.shape != (grid.cell_count,):
        raise ValueError(f"raw vector has shape {m.shape}, expected ({grid.cell_count},)")
    if np.any(np.isnan(m)):
        raise DegenerateDensityError("raw vector contains NaN")
    if np.any(m < -NEGATIVE_CLAMP):
        raise DegenerateDensityError(f"raw vector has negative entry {m.min()}")
    m[m < 0] = 0.0
    total = m.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise DegenerateDensityError(f"raw vector sums to {total}, cannot normalize")
    return Density(grid, m / total)


def gibbs_from_potential(field: PotentialField, tau: float) -> Density:
    """Density with mass proportional to vol_k * exp(-A_k / tau).

    The minimum of A is subtracted before exponentiating so that annealing
    (tau -> 0) cannot overflow; adding a constant to A therefore leaves the
    output unchanged. On these uniform grids the cell volumes cancel.
    """
    if tau <= 0:
        raise InvalidTemperatureError(f"temperature must be positive, got {tau}")
    a = field.value
    w = np.exp(-(a - a.min()) / tau)
    return Density(field.grid, w / w.sum())


def smoothed(density: Density, eps: float) -> Density:
    """Add eps mass to every cell and renormalize (keeps entropies finite)."""
    return normalize(density.mass + eps, density.grid)

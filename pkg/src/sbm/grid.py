"""Uniform 1-D cell grids and density fields living on them."""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import cached_property

import numpy as np

from .errors import ConfigError

BOUNDARIES = ("dirichlet-zero", "neumann")


@dataclass(frozen=True)
class GridSpec:
    """Cell-centred grid on ``[left, right]`` with ``nx`` cells.

    Values stored on the grid are cell averages located at the centres
    ``left + (i + 1/2) dx``.  ``boundary`` selects what lies beyond the
    edges: zero density (``dirichlet-zero``) or a mirror (``neumann``).
    """

    left: float
    right: float
    nx: int
    boundary: str = "dirichlet-zero"

    def __post_init__(self):
        if not self.right > self.left:
            raise ConfigError(f"grid right ({self.right}) must exceed left ({self.left})", "grid")
        if int(self.nx) != self.nx or self.nx < 8:
            raise ConfigError(f"grid needs at least 8 cells, got {self.nx}", "grid.nx")
        if self.boundary not in BOUNDARIES:
            raise ConfigError(f"unknown boundary {self.boundary!r}", "grid.boundary")

    @property
    def dx(self) -> float:
        return (self.right - self.left) / self.nx

    @cached_property
    def x(self) -> np.ndarray:
        """Cell centres."""
        return self.left + (np.arange(self.nx) + 0.5) * self.dx

    @cached_property
    def faces(self) -> np.ndarray:
        return self.left + np.arange(self.nx + 1) * self.dx

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.left) & (x <= self.right)

    def face_index(self, a: float, tol: float = 1e-9) -> int | None:
        """Index of the face at coordinate ``a``, or None when ``a`` is not a face."""
        k = (a - self.left) / self.dx
        kr = int(round(k))
        if abs(k - kr) <= tol and 0 <= kr <= self.nx:
            return kr
        return None

    def refined(self, factor: int = 2) -> "GridSpec":
        return GridSpec(self.left, self.right, self.nx * factor, self.boundary)

    def to_dict(self) -> dict:
        return {"left": self.left, "right": self.right, "nx": self.nx, "boundary": self.boundary}


@dataclass
class Field:
    """Nonnegative density sample on a grid (mass per unit length)."""

    grid: GridSpec
    values: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.grid.nx,):
            raise ConfigError(
                f"field has shape {self.values.shape}, grid expects ({self.grid.nx},)", "field"
            )
        if not np.all(np.isfinite(self.values)):
            raise ConfigError("field contains non-finite values", "field")

    @property
    def mass(self) -> float:
        return float(self.grid.dx * np.sum(self.values))

    def is_nonnegative(self) -> bool:
        return bool(np.all(self.values >= 0.0))

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def at(self, x) -> np.ndarray:
        """Linear interpolation between cell centres, held constant past the outer centres."""
        g = self.grid
        return np.interp(x, g.x, self.values, left=self.values[0], right=self.values[-1])

    def mass_right_of(self, a: float) -> float:
        """Mass of the cell-average reconstruction on ``[a, right]``.

        Full cells are summed exactly; the cell containing ``a`` contributes
        its covered fraction.  For ``a <= left`` this is the total mass.
        """
        g = self.grid
        if a <= g.left:
            return self.mass
        if a >= g.right:
            return 0.0
        s = (a - g.left) / g.dx
        j = min(int(np.floor(s)), g.nx - 1)
        frac = (j + 1) - s
        return float(g.dx * (frac * self.values[j] + np.sum(self.values[j + 1:])))


# ---------------------------------------------------------------------------
# initial conditions

INITIAL_KINDS = {
    "triangle": ("center", "width", "mass"),
    "gaussian-bump": ("center", "sigma", "mass"),
    "uniform": ("left", "right", "mass"),
}


def _triangle_cdf(x, c, w):
    s = np.clip((x - c) / w, -1.0, 1.0)
    return np.where(s < 0, 0.5 * (1 + s) ** 2, 1.0 - 0.5 * (1 - s) ** 2)


def initial_field(desc: dict, grid: GridSpec) -> Field:
    """Cell averages of a catalogue profile, rescaled so that the field mass is exact.

    ``triangle(center, width, mass)`` has half-width ``width``;
    ``gaussian-bump`` is a normal density; ``uniform`` is flat on ``[left, right]``.
    """
    from scipy.special import ndtr

    kind = desc.get("kind") if isinstance(desc, dict) else None
    if kind not in INITIAL_KINDS:
        raise ConfigError(f"unknown initial condition {kind!r}", "initial.kind")
    try:
        p = {k: float(desc[k]) for k in INITIAL_KINDS[kind]}
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"{kind} needs numeric {INITIAL_KINDS[kind]}", "initial") from None
    if not p["mass"] >= 0 or not np.isfinite(p["mass"]):
        raise ConfigError("initial mass must be nonnegative", "initial.mass")
    f = grid.faces
    if kind == "triangle":
        if not p["width"] > 0:
            raise ConfigError("triangle width must be positive", "initial.width")
        cdf = _triangle_cdf(f, p["center"], p["width"])
    elif kind == "gaussian-bump":
        if not p["sigma"] > 0:
            raise ConfigError("gaussian sigma must be positive", "initial.sigma")
        cdf = ndtr((f - p["center"]) / p["sigma"])
    else:
        if not p["right"] > p["left"]:
            raise ConfigError("uniform needs right > left", "initial.right")
        cdf = np.clip((f - p["left"]) / (p["right"] - p["left"]), 0.0, 1.0)
    cell = np.diff(cdf)
    inside = cell.sum()
    if p["mass"] > 0 and inside <= 0:
        raise ConfigError("initial profile has no mass on the grid", "initial")
    vals = np.zeros(grid.nx) if p["mass"] == 0 else cell * (p["mass"] / inside) / grid.dx
    return Field(grid, vals)

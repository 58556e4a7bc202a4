"""Grids on the truncated half-line and gridded density fields.

Fields store point samples at cell centres, which double as cell averages to
second order.  Moments use the midpoint rule, optionally completed by an
analytic power-law tail beyond the last edge.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .params import power_tail_moment

__all__ = [
    "RadialGrid",
    "DensityField",
    "first_moment",
    "to_selfsim",
    "from_selfsim",
    "write_field_csv",
    "read_field_csv",
    "truncation_length",
]

PHYSICAL = "physical"
SELFSIM = "selfsim"
MIN_CELLS = 16


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Cell edges ``0 = x_0 < x_1 < ... < x_n = x_max``."""

    edges: np.ndarray

    def __post_init__(self) -> None:
        e = np.asarray(self.edges, dtype=float)
        if e.ndim != 1 or e.size < MIN_CELLS + 1:
            raise ValueError(f"grid needs at least {MIN_CELLS} cells")
        if e[0] != 0.0:
            raise ValueError("grid must start at 0")
        if not np.all(np.diff(e) > 0):
            raise ValueError("edges must be strictly increasing")
        object.__setattr__(self, "edges", e)

    @property
    def n_cells(self) -> int:
        return self.edges.size - 1

    @property
    def x_max(self) -> float:
        return float(self.edges[-1])

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[1:] + self.edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    def scaled(self, factor: float) -> "RadialGrid":
        return RadialGrid(self.edges * factor)

    def refined(self) -> "RadialGrid":
        """Split every cell in two."""
        e = self.edges
        mid = 0.5 * (e[1:] + e[:-1])
        out = np.empty(2 * e.size - 1)
        out[0::2] = e
        out[1::2] = mid
        return RadialGrid(out)

    @classmethod
    def uniform(cls, x_max: float, n: int) -> "RadialGrid":
        return cls(np.linspace(0.0, x_max, n + 1))

    @classmethod
    def geometric(
        cls,
        x_max: float,
        n: int,
        *,
        ratio: float | None = None,
        first_width: float | None = None,
    ) -> "RadialGrid":
        """Cells growing by a constant ``ratio``.

        Give either ``ratio`` or ``first_width``; the other is solved for.
        ``ratio = 1`` yields the uniform grid.
        """
        if (ratio is None) == (first_width is None):
            raise ValueError("give exactly one of ratio, first_width")
        if ratio is None:
            if first_width * n >= x_max:
                ratio = 1.0
            else:
                def excess(lr: float) -> float:
                    return first_width * math.expm1(n * lr) / math.expm1(lr) - x_max

                lr = brentq(excess, 1e-14, 50.0 / n + math.log(x_max / first_width),
                            xtol=1e-15, rtol=1e-15)
                ratio = math.exp(lr)
        if ratio < 1:
            raise ValueError("stretching ratio must be >= 1")
        w = ratio ** np.arange(n)
        e = np.concatenate(([0.0], np.cumsum(w)))
        return cls(e * (x_max / e[-1]))

    @classmethod
    def stretched(cls, x_max: float, n: int, first_width: float) -> "RadialGrid":
        """Uniform near 0 and logarithmic far out: ``x = A sinh(a s)``.

        The stretching ``a`` is solved so the first cell has ``first_width``.
        The last cell is a fraction ``1 - exp(-a/n)`` of ``x_max``.
        """
        if first_width * n >= x_max:
            return cls.uniform(x_max, n)

        def log_sinh(z: float) -> float:
            return z + math.log1p(-math.exp(-2.0 * z)) - math.log(2.0)

        def gap(a: float) -> float:
            return math.log(x_max / first_width) + log_sinh(a / n) - log_sinh(a)

        a = brentq(gap, 1e-9, 700.0, xtol=1e-14)
        s = np.linspace(0.0, 1.0, n + 1)
        e = x_max * np.expm1(a * s) * (1.0 + np.exp(-a * s)) / (math.expm1(a) * (1.0 + math.exp(-a)))
        e[-1] = x_max
        return cls(e)

    @classmethod
    def default(cls, x_max: float, n: int, first_width: float = 0.01) -> "RadialGrid":
        """Default layout: :meth:`stretched` with last cell at most 2% of ``x_max``."""
        grid = cls.stretched(x_max, n, first_width)
        if grid.widths[-1] > 0.02 * x_max:
            raise ValueError("increase n: last cell would exceed 2% of x_max")
        return grid


def truncation_length(gamma: float, t_end: float, tol: float = 1e-7) -> float:
    """Physical ``x_max`` leaving a tail-moment fraction ``<= tol`` of ``F_s``.

    For ``F_s ~ (1 + gamma*y)^(-theta)`` the moment fraction beyond ``Y`` is
    ``(theta-1) u^(2-theta) - (theta-2) u^(1-theta)`` with ``u = 1 + gamma*Y``,
    which is below ``(theta-1) u^(2-theta)``.
    """
    if gamma <= 0:
        return 60.0 * t_end
    theta = 1.0 + 0.5 / gamma
    u = ((theta - 1.0) / tol) ** (1.0 / (theta - 2.0))
    return t_end * (u - 1.0) / gamma


@dataclass(frozen=True, eq=False)
class DensityField:
    """Gridded density with variable tag and timestamp.

    ``time`` is the physical time ``t`` for ``variables="physical"`` and the
    log-time ``tau`` for ``variables="selfsim"``.
    """

    grid: RadialGrid
    values: np.ndarray
    variables: str = PHYSICAL
    time: float = 0.0
    signed: bool = False

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.grid.n_cells,):
            raise ValueError("values must have one entry per cell")
        if self.variables not in (PHYSICAL, SELFSIM):
            raise ValueError(f"unknown variables tag {self.variables!r}")
        if not self.signed and v.size:
            floor = -1e-12 * max(np.max(np.abs(v)), 1e-300)
            if np.min(v) < floor:
                raise ValueError("unsigned density has negative values")
        object.__setattr__(self, "values", v)

    @classmethod
    def sample(cls, grid: RadialGrid, func, **kw) -> "DensityField":
        return cls(grid, np.asarray(func(grid.centers), dtype=float), **kw)

    def clipped(self) -> np.ndarray:
        return self.values if self.signed else np.maximum(self.values, 0.0)

    def with_values(self, values: np.ndarray, **kw) -> "DensityField":
        return replace(self, values=np.asarray(values, dtype=float), **kw)


def first_moment(
    field: DensityField,
    *,
    tail_exponent: float | None = None,
    tail_gamma: float | None = None,
    tail_moment: float | None = None,
) -> float:
    """Midpoint rule for ``int x f dx`` plus an optional tail beyond ``x_max``.

    Parameters
    ----------
    tail_exponent:
        Extend the last cell value by a power law of this exponent.  With
        ``tail_gamma`` the law is ``(1 + g x)^(-p)``, otherwise ``x^(-p)``.
    tail_moment:
        Add this value directly (for example an analytic tail of ``F_s``).
    """
    g = field.grid
    xc = g.centers
    total = float(np.sum(xc * field.values * g.widths))
    if tail_moment is not None:
        total += tail_moment
    elif tail_exponent is not None:
        p = float(tail_exponent)
        X, xl, fl = g.x_max, xc[-1], field.values[-1]
        if tail_gamma:
            a = fl * (1.0 + tail_gamma * xl) ** p
            total += float(a * power_tail_moment(tail_gamma, p, X))
        else:
            total += float(fl * xl**p * X ** (2.0 - p) / (p - 2.0))
    return total


def to_selfsim(field: DensityField, t: float | None = None) -> DensityField:
    """``F(y) = t^(3/2) f(t y)`` on the grid with edges divided by ``t``."""
    if field.variables != PHYSICAL:
        raise ValueError("field is not in physical variables")
    t = field.time if t is None else t
    if not t > 0:
        raise ValueError("t must be positive")
    if t == 1.0:
        return replace(field, variables=SELFSIM, time=0.0)
    return DensityField(
        field.grid.scaled(1.0 / t), field.values * t**1.5, SELFSIM, math.log(t), field.signed
    )


def from_selfsim(field: DensityField) -> DensityField:
    """Inverse of :func:`to_selfsim`, using ``t = exp(tau)``."""
    if field.variables != SELFSIM:
        raise ValueError("field is not in self-similar variables")
    t = math.exp(field.time)
    if field.time == 0.0:
        return replace(field, variables=PHYSICAL, time=1.0)
    return DensityField(
        field.grid.scaled(t), field.values * t**-1.5, PHYSICAL, t, field.signed
    )


def write_field_csv(field: DensityField, path: str | Path) -> None:
    """Write ``# variables=... time=...`` followed by ``x,value`` rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# variables={field.variables} time={field.time:.15g}"]
    lines.append("# edges=" + ",".join(f"{e:.15g}" for e in field.grid.edges))
    vals = field.clipped()
    lines += [f"{x:.15g},{v:.15g}" for x, v in zip(field.grid.centers, vals)]
    path.write_text("\n".join(lines) + "\n")


def read_field_csv(path: str | Path, signed: bool = False) -> DensityField:
    text = Path(path).read_text().splitlines()
    meta = dict(item.split("=", 1) for item in text[0].lstrip("# ").split())
    edges = np.array([float(v) for v in text[1].split("=", 1)[1].split(",")])
    vals = np.array([float(row.split(",")[1]) for row in text[2:] if row])
    return DensityField(RadialGrid(edges), vals, meta["variables"], float(meta["time"]), signed)

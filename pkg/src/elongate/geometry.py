"""Cross-sections, elongated product domains, and structured tensor grids.

A domain is the Cartesian product of a dilated star-shaped cross-section
(the "horizontal" part, ``r`` axes) with a fixed box (the "vertical"
part).  The gauge (Minkowski functional) of the cross-section carves
nested subdomains and annular slabs out of a grid and is the building
block of the Lipschitz cutoff ramps used to blend candidate minimizers.

Everything here is a pure function of immutable values; grids never
mutate after construction and may be shared freely between tasks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

#: Refuse to build grids with more nodes than this unless overridden.
DEFAULT_NODE_BUDGET = 20_000_000


class NodeBudgetError(ValueError):
    """Requested grid exceeds the configured node budget."""


@dataclass(frozen=True)
class CrossSection:
    """Unit cross-section: the open box ``(-1, 1)^r`` or the Euclidean unit ball.

    Both shapes contain the origin, are star-shaped with respect to it,
    and have an explicitly known Lipschitz gauge, which is what the
    sub-region machinery and the cutoff ramps rely on.
    """

    shape: Literal["box", "ball"]
    r: int

    def __post_init__(self) -> None:
        if self.shape not in ("box", "ball"):
            raise ValueError(f"unknown cross-section shape {self.shape!r}")
        if self.r < 1:
            raise ValueError("cross-section needs at least one axis")

    @property
    def lipschitz_K(self) -> float:
        """Euclidean Lipschitz constant of the gauge (loose for the box)."""
        return math.sqrt(self.r) if self.shape == "box" else 1.0

    @property
    def r1(self) -> float:
        """Lower norm-equivalence constant: ``r1 * |x'| <= gauge(x')``."""
        return 1.0 / math.sqrt(self.r) if self.shape == "box" else 1.0

    @property
    def r2(self) -> float:
        """Upper norm-equivalence constant: ``gauge(x') <= r2 * |x'|``."""
        return 1.0


def gauge(cs: CrossSection, xp) -> np.ndarray | float:
    """Minkowski gauge of the cross-section at horizontal points ``xp``.

    ``xp`` has shape ``(..., r)``; the result drops the last axis.  The
    gauge is positively 1-homogeneous with ``gauge(0) = 0``, and its
    open sublevel set at ``t`` is the cross-section dilated by ``t``.
    """
    xp = np.asarray(xp, dtype=float)
    if xp.ndim == 0 or xp.shape[-1] != cs.r:
        raise ValueError(f"expected points with {cs.r} coordinates, got shape {xp.shape}")
    if cs.shape == "box":
        out = np.max(np.abs(xp), axis=-1)
    else:
        out = np.sqrt(np.sum(xp * xp, axis=-1))
    return float(out) if out.ndim == 0 else out


def cutoff(cs: CrossSection, xp, s: float, t: float) -> np.ndarray | float:
    """Lipschitz ramp in the gauge: 1 inside level ``t``, 0 outside level ``s``.

    Equals ``min((s - gauge)_+, s - t) / (s - t)``: affine in the gauge
    on the slab between the two levels, hence nonincreasing in the
    gauge.  Requires ``0 < t < s``.
    """
    if not 0.0 < t < s:
        raise ValueError(f"cutoff levels must satisfy 0 < t < s, got t={t}, s={s}")
    g = gauge(cs, xp)
    return np.clip((s - g) / (s - t), 0.0, 1.0)


@dataclass(frozen=True)
class DomainSpec:
    """Product domain: the cross-section dilated by ``ell`` times a fixed box.

    The family is monotone in ``ell``: the domain for a smaller ``ell``
    is contained in the domain for a larger one.
    """

    cross_section: CrossSection
    ell: float
    vertical_halfwidths: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "vertical_halfwidths", tuple(float(w) for w in self.vertical_halfwidths)
        )
        if self.ell <= 0:
            raise ValueError("elongation must be positive")
        if not self.vertical_halfwidths:
            raise ValueError("need at least one vertical axis")
        if any(w <= 0 for w in self.vertical_halfwidths):
            raise ValueError("vertical halfwidths must be positive")

    @property
    def r(self) -> int:
        return self.cross_section.r

    @property
    def n(self) -> int:
        return self.r + len(self.vertical_halfwidths)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid with Dirichlet-fixed node classification.

    Nodes on the bounding-box boundary are fixed; for ball cross-sections
    every node whose scaled gauge reaches 1 is fixed as well (staircase
    approximation, first order accurate, flagged experimental).  Cells
    are the axis-aligned boxes between adjacent nodes; a cell belongs to
    the domain when its horizontal centroid does.  The vertical axes
    depend only on the vertical halfwidths and the spacing target, never
    on ``ell``, so vertical profiles embed exactly into every grid of a
    sweep.

    ``r == 0`` denotes a purely vertical grid (no horizontal axes),
    used for the limit problem on the fixed box.
    """

    r: int
    ell: float
    cross_section: CrossSection | None
    lo: tuple[float, ...]
    h: tuple[float, ...]
    shape: tuple[int, ...]
    dirichlet: np.ndarray
    cell_mask: np.ndarray

    def __post_init__(self) -> None:
        self.dirichlet.setflags(write=False)
        self.cell_mask.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.shape)

    @property
    def cell_shape(self) -> tuple[int, ...]:
        return tuple(m - 1 for m in self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def node_count(self) -> int:
        return int(np.prod(self.shape))

    @property
    def interior(self) -> np.ndarray:
        return ~self.dirichlet

    def axis_nodes(self, a: int) -> np.ndarray:
        return self.lo[a] + self.h[a] * np.arange(self.shape[a])

    def axis_centers(self, a: int) -> np.ndarray:
        return self.lo[a] + self.h[a] * (0.5 + np.arange(self.shape[a] - 1))

    def node_meshgrid(self) -> list[np.ndarray]:
        return np.meshgrid(*[self.axis_nodes(a) for a in range(self.n)], indexing="ij", sparse=True)

    def node_gauge(self) -> np.ndarray:
        """Gauge of the horizontal node coordinates, shape = horizontal node dims."""
        if self.r == 0:
            raise ValueError("grid has no horizontal axes")
        mesh = np.meshgrid(*[self.axis_nodes(a) for a in range(self.r)], indexing="ij")
        return gauge(self.cross_section, np.stack(mesh, axis=-1))

    def cell_gauge(self) -> np.ndarray:
        """Gauge of the horizontal cell centroids, shape = horizontal cell dims."""
        if self.r == 0:
            raise ValueError("grid has no horizontal axes")
        mesh = np.meshgrid(*[self.axis_centers(a) for a in range(self.r)], indexing="ij")
        return gauge(self.cross_section, np.stack(mesh, axis=-1))


def _axis_cells(extent: float, target_h: float) -> int:
    return max(1, int(math.ceil(extent / target_h - 1e-12)))


def _assemble_grid(
    r: int,
    ell: float,
    cross_section: CrossSection | None,
    extents: Sequence[float],
    los: Sequence[float],
    target_h: float,
    max_nodes: int | None,
) -> Grid:
    if target_h <= 0:
        raise ValueError("target spacing must be positive")
    if target_h > min(extents) * (1 + 1e-12):
        raise ValueError("target spacing must not exceed the smallest axis extent")
    ncells = [_axis_cells(e, target_h) for e in extents]
    shape = tuple(m + 1 for m in ncells)
    budget = DEFAULT_NODE_BUDGET if max_nodes is None else max_nodes
    count = int(np.prod(shape))
    if count > budget:
        raise NodeBudgetError(f"grid would have {count} nodes, budget is {budget}")
    h = tuple(e / m for e, m in zip(extents, ncells))

    dirichlet = np.zeros(shape, dtype=bool)
    for a in range(len(shape)):
        idx: list = [slice(None)] * len(shape)
        idx[a] = 0
        dirichlet[tuple(idx)] = True
        idx[a] = -1
        dirichlet[tuple(idx)] = True

    cell_mask = np.ones(tuple(ncells), dtype=bool)
    if cross_section is not None and cross_section.shape == "ball":
        nodes = np.meshgrid(*[los[a] + h[a] * np.arange(shape[a]) for a in range(r)], indexing="ij")
        ng = gauge(cross_section, np.stack(nodes, axis=-1))
        outside = ng >= ell * (1 - 1e-12)
        dirichlet |= outside.reshape(outside.shape + (1,) * (len(shape) - r))
        centers = np.meshgrid(
            *[los[a] + h[a] * (0.5 + np.arange(ncells[a])) for a in range(r)], indexing="ij"
        )
        cg = gauge(cross_section, np.stack(centers, axis=-1))
        cell_mask &= (cg < ell).reshape(cg.shape + (1,) * (len(shape) - r))

    return Grid(
        r=r,
        ell=ell,
        cross_section=cross_section,
        lo=tuple(float(x) for x in los),
        h=h,
        shape=shape,
        dirichlet=dirichlet,
        cell_mask=cell_mask,
    )


def build_grid(domain: DomainSpec, target_h: float, max_nodes: int | None = None) -> Grid:
    """Discretize the domain with the largest spacings not exceeding ``target_h``.

    Each axis extent is divided into an integer number of cells, so the
    spacing is the largest value ``<= target_h`` that splits the axis
    exactly.  Grids above the node budget are rejected.
    """
    r = domain.r
    extents = [2.0 * domain.ell] * r + [2.0 * w for w in domain.vertical_halfwidths]
    los = [-domain.ell] * r + [-w for w in domain.vertical_halfwidths]
    return _assemble_grid(r, domain.ell, domain.cross_section, extents, los, target_h, max_nodes)


def build_vertical_grid(
    halfwidths: Sequence[float] | DomainSpec, target_h: float, max_nodes: int | None = None
) -> Grid:
    """Grid over the fixed vertical box alone, for the limit problem.

    Uses the same per-axis spacing rule as :func:`build_grid`, so the
    vertical node coordinates coincide exactly with the vertical axes of
    every full grid built at the same ``target_h``.
    """
    if isinstance(halfwidths, DomainSpec):
        halfwidths = halfwidths.vertical_halfwidths
    halfwidths = [float(w) for w in halfwidths]
    if not halfwidths or any(w <= 0 for w in halfwidths):
        raise ValueError("vertical halfwidths must be positive")
    extents = [2.0 * w for w in halfwidths]
    los = [-w for w in halfwidths]
    return _assemble_grid(0, 0.0, None, extents, los, target_h, max_nodes)


def region_cells(grid: Grid, kind: Literal["core", "slab"], t: float, s: float | None = None) -> np.ndarray:
    """Boolean cell mask of a nested subdomain (``core``) or annular slab.

    Membership is decided by the gauge of the horizontal centroid: cells
    below level ``t`` form the core; a slab collects the cells between
    levels ``t`` and ``s``.  Core and slab with matching endpoints
    partition the larger core exactly.  Empty selections are allowed.
    """
    if grid.r == 0:
        raise ValueError("regions need a horizontal axis")
    if t <= 0:
        raise ValueError("region level t must be positive")
    g = grid.cell_gauge()
    if kind == "core":
        hmask = g < t
    elif kind == "slab":
        if s is None or not t < s:
            raise ValueError("slab needs levels t < s")
        hmask = (g >= t) & (g < s)
    else:
        raise ValueError(f"unknown region kind {kind!r}")
    full = np.broadcast_to(hmask.reshape(hmask.shape + (1,) * (grid.n - grid.r)), grid.cell_shape)
    return full & grid.cell_mask


def embed_offsets(small: Grid, big: Grid) -> tuple[int, ...]:
    """Node-index offsets placing the smaller grid inside the larger one.

    Requires matching spacings and vertical axes, and horizontal offsets
    that land exactly on the larger grid's lattice (guaranteed for grids
    built from the same spacing target when the elongations differ by a
    lattice multiple).
    """
    if small.n != big.n or small.r != big.r:
        raise ValueError("grids have different axis structure")
    offsets = []
    for a in range(big.n):
        if abs(small.h[a] - big.h[a]) > 1e-12 * big.h[a]:
            raise ValueError(f"axis {a}: spacings differ")
        off = (small.lo[a] - big.lo[a]) / big.h[a]
        k = int(round(off))
        if abs(off - k) > 1e-9 or k < 0 or k + small.shape[a] > big.shape[a]:
            raise ValueError(f"axis {a}: grids are not aligned")
        offsets.append(k)
    return tuple(offsets)

"""Uniform box grids, potential-well coefficient fields, quadrature and the
discrete Laplacian.

The computational domain is a box in 1D or 2D with zero Dirichlet data on its
boundary.  The potential well sits at the origin: V vanishes on the closed
sup-norm ball of radius ``omega_radius`` (the well bottom, called the "well
region" throughout) and grows like a power of the distance to it outside.
All integrals are trapezoidal (tensor-trapezoidal in 2D), which makes the
discrete Green identity

    integrate(u * apply_laplacian(v)) == integrate(gradient_dot(u, v))

hold to machine precision for boundary-zero functions.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp


class FieldSpecError(ValueError):
    """A coefficient-field spec string is malformed or violates a sign rule."""


class GridError(ValueError):
    """Invalid grid geometry."""


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform tensor grid on a box with identified boundary nodes.

    Attributes:
        dim: 1 or 2.
        extents: per-axis (lo, hi) interval.
        shape: points per axis; values arrays carry this shape.
        spacing: per-axis grid step.
    """

    dim: int
    extents: tuple[tuple[float, float], ...]
    shape: tuple[int, ...]
    spacing: tuple[float, ...]
    axes: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.shape))

    @property
    def coords(self) -> tuple[np.ndarray, ...]:
        """Per-axis coordinate arrays broadcast to the full grid shape."""
        if self.dim == 1:
            return (self.axes[0],)
        return tuple(np.meshgrid(*self.axes, indexing="ij"))

    @property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            sl_lo = [slice(None)] * self.dim
            sl_hi = [slice(None)] * self.dim
            sl_lo[ax] = 0
            sl_hi[ax] = -1
            mask[tuple(sl_lo)] = True
            mask[tuple(sl_hi)] = True
        return mask

    @property
    def interior_mask(self) -> np.ndarray:
        return ~self.boundary_mask

    @property
    def quad_weights(self) -> np.ndarray:
        """Tensor-trapezoid weights; interior weight is the cell volume."""
        w = np.ones(self.shape)
        for ax in range(self.dim):
            w1 = np.full(self.shape[ax], self.spacing[ax])
            w1[0] *= 0.5
            w1[-1] *= 0.5
            shp = [1] * self.dim
            shp[ax] = self.shape[ax]
            w = w * w1.reshape(shp)
        return w

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)


@dataclass(eq=False)
class GridFunction:
    """A real-valued function sampled at the grid nodes."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise GridError(
                f"values shape {self.values.shape} does not match grid {self.grid.shape}"
            )

    @classmethod
    def from_callable(cls, grid: Grid, fn: Callable[..., np.ndarray]) -> "GridFunction":
        return cls(grid, np.asarray(fn(*grid.coords), dtype=float) + np.zeros(grid.shape))

    def copy_with(self, values: np.ndarray) -> "GridFunction":
        return GridFunction(self.grid, values)

    def is_boundary_zero(self, rel_tol: float = 1e-12) -> bool:
        """True when boundary values vanish up to rounding relative to the
        function scale (analytic samples of boundary-zero profiles carry
        O(1e-16) dirt)."""
        b = np.max(np.abs(self.values[self.grid.boundary_mask]))
        scale = np.max(np.abs(self.values))
        return b == 0.0 or (scale > 0 and b <= rel_tol * scale)


@dataclass(eq=False)
class CoefficientFields:
    """Potential V >= 0, sign-changing weights f and Q, and the well mask."""

    grid: Grid
    V: GridFunction
    f: GridFunction
    Q: GridFunction
    omega_mask: np.ndarray

    def __post_init__(self) -> None:
        if np.any(self.V.values < 0):
            raise FieldSpecError("potential V must be nonnegative everywhere")
        mask = self.V.values == 0.0
        if not mask.any():
            raise FieldSpecError("potential V must vanish somewhere (empty well)")
        if not np.array_equal(mask, self.omega_mask):
            raise FieldSpecError("omega_mask must be exactly the V == 0 node set")
        if not np.any(self.f.values[self.omega_mask] > 0):
            raise FieldSpecError("f must be positive at some node of the well region")
        if not np.any(self.Q.values[self.omega_mask] > 0):
            raise FieldSpecError("Q must be positive at some node of the well region")

    @property
    def omega_interior_mask(self) -> np.ndarray:
        """Well nodes all of whose axis neighbours are also well nodes.

        These are the unknowns of the well-restricted Dirichlet problem; the
        eroded ring is where the zero boundary data is imposed.
        """
        m = self.omega_mask
        out = m.copy()
        for ax in range(self.grid.dim):
            shifted_lo = np.zeros_like(m)
            shifted_hi = np.zeros_like(m)
            sl_src = [slice(None)] * self.grid.dim
            sl_dst = [slice(None)] * self.grid.dim
            sl_src[ax] = slice(1, None)
            sl_dst[ax] = slice(None, -1)
            shifted_lo[tuple(sl_dst)] = m[tuple(sl_src)]
            sl_src[ax] = slice(None, -1)
            sl_dst[ax] = slice(1, None)
            shifted_hi[tuple(sl_dst)] = m[tuple(sl_src)]
            out &= shifted_lo & shifted_hi
        return out & self.grid.interior_mask


@dataclass(eq=False)
class ProblemData:
    """A full instance of the well problem.

    The diffusion coefficient is M(s) = a*s + 1 (the linear coefficient is
    fixed at one); ``lam`` couples the linear term, ``mu`` scales the well
    depth, and ``p`` is the superlinear power.
    """

    grid: Grid
    fields: CoefficientFields
    a: float
    p: float
    lam: float
    mu: float
    meta: dict | None = None

    def __post_init__(self) -> None:
        if self.a < 0:
            raise ValueError("Kirchhoff coefficient a must be >= 0")
        if not 2.0 < self.p < 6.0:
            raise ValueError("power p must lie in (2, 6)")
        if self.mu <= 0:
            raise ValueError("well depth mu must be > 0")

    @property
    def b(self) -> float:
        return 1.0


def build_grid(
    dim: int,
    extents: Sequence[tuple[float, float]] | tuple[float, float],
    points_per_axis: Sequence[int] | int,
) -> Grid:
    """Build a uniform grid with at least 3 points per axis."""
    if dim not in (1, 2):
        raise GridError("dim must be 1 or 2")
    if isinstance(points_per_axis, int):
        points_per_axis = [points_per_axis] * dim
    ext = np.atleast_2d(np.asarray(extents, dtype=float))
    if ext.shape != (dim, 2):
        raise GridError(f"expected {dim} extent pairs, got {ext.shape}")
    pts = tuple(int(n) for n in points_per_axis)
    if len(pts) != dim:
        raise GridError(f"expected {dim} point counts, got {len(pts)}")
    axes = []
    spacing = []
    for (lo, hi), n in zip(ext, pts):
        if n < 3:
            raise GridError("need at least 3 points per axis")
        if not hi > lo:
            raise GridError(f"extent ({lo}, {hi}) is empty")
        axes.append(np.linspace(lo, hi, n))
        spacing.append((hi - lo) / (n - 1))
    return Grid(
        dim=dim,
        extents=tuple((float(lo), float(hi)) for lo, hi in ext),
        shape=pts,
        spacing=tuple(spacing),
        axes=tuple(axes),
    )


# ---------------------------------------------------------------------------
# analytic field primitives
# ---------------------------------------------------------------------------

def _radius(coords: tuple[np.ndarray, ...]) -> np.ndarray:
    return np.sqrt(sum(c**2 for c in coords))


def evaluate_field_spec(spec: str, grid: Grid) -> GridFunction:
    """Evaluate a named analytic primitive at the grid nodes.

    Supported forms (all arguments are floats):
        constant C
        radial_poly c0 c1 c2 ...        -> sum_k ck * r^k   (r = |x|)
        gaussian amp center... width    -> amp * exp(-|x-center|^2 / (2 width^2))
        step_radius r0 inside outside   -> inside where r <= r0 else outside
    """
    tokens = spec.split()
    if not tokens:
        raise FieldSpecError("empty field spec")
    name, args = tokens[0], tokens[1:]
    try:
        vals = [float(t) for t in args]
    except ValueError as exc:
        raise FieldSpecError(f"non-numeric argument in field spec {spec!r}") from exc
    coords = grid.coords
    if name == "constant":
        if len(vals) != 1:
            raise FieldSpecError("constant takes exactly one argument")
        return GridFunction(grid, np.full(grid.shape, vals[0]))
    if name == "radial_poly":
        if not vals:
            raise FieldSpecError("radial_poly needs at least one coefficient")
        r = _radius(coords)
        out = np.zeros(grid.shape)
        for k, ck in enumerate(vals):
            out += ck * r**k
        return GridFunction(grid, out)
    if name == "gaussian":
        if len(vals) != grid.dim + 2:
            raise FieldSpecError(
                f"gaussian takes amp, {grid.dim} center coordinate(s), width"
            )
        amp, center, width = vals[0], vals[1:-1], vals[-1]
        if width <= 0:
            raise FieldSpecError("gaussian width must be > 0")
        d2 = sum((c - c0) ** 2 for c, c0 in zip(coords, center))
        return GridFunction(grid, amp * np.exp(-d2 / (2 * width**2)))
    if name == "step_radius":
        if len(vals) != 3:
            raise FieldSpecError("step_radius takes r0, inside, outside")
        r0, inside, outside = vals
        r = _radius(coords)
        return GridFunction(grid, np.where(r <= r0, inside, outside))
    raise FieldSpecError(f"unknown field primitive {name!r}")


def make_well_fields(
    grid: Grid,
    omega_radius: float,
    ramp_power: float,
    f_spec: str | GridFunction,
    Q_spec: str | GridFunction,
) -> CoefficientFields:
    """Build V as a polynomial ramp of the sup-distance to the well, plus f, Q.

    V(x) = 0 on {|x|_inf <= omega_radius} and (|x|_inf - omega_radius)^ramp_power
    outside, so the well mask is exactly the V == 0 node set.
    """
    if ramp_power < 1:
        raise FieldSpecError("ramp_power must be >= 1")
    for (lo, hi) in grid.extents:
        if not (lo < -omega_radius and omega_radius < hi):
            raise FieldSpecError(
                "well of radius %g is not strictly inside the box %s" % (omega_radius, grid.extents)
            )
    coords = grid.coords
    sup_norm = np.maximum.reduce([np.abs(c) for c in coords])
    dist = np.maximum(sup_norm - omega_radius, 0.0)
    V = GridFunction(grid, np.where(dist > 0, dist**ramp_power, 0.0))
    omega_mask = V.values == 0.0
    f = evaluate_field_spec(f_spec, grid) if isinstance(f_spec, str) else f_spec
    Q = evaluate_field_spec(Q_spec, grid) if isinstance(Q_spec, str) else Q_spec
    return CoefficientFields(grid=grid, V=V, f=f, Q=Q, omega_mask=omega_mask)


# ---------------------------------------------------------------------------
# quadrature and the Dirichlet Laplacian
# ---------------------------------------------------------------------------

def integrate(grid: Grid, values: np.ndarray | GridFunction) -> float:
    """Trapezoidal quadrature; exact for affine integrands."""
    v = values.values if isinstance(values, GridFunction) else np.asarray(values)
    if v.shape != grid.shape:
        raise GridError(f"values shape {v.shape} does not match grid {grid.shape}")
    return float(np.sum(grid.quad_weights * v))


def neg_laplacian_values(grid: Grid, values: np.ndarray) -> np.ndarray:
    """-Delta via the centred second-order stencil; boundary rows are zero."""
    out = np.zeros_like(values)
    core = [slice(1, -1)] * grid.dim
    for ax in range(grid.dim):
        h2 = grid.spacing[ax] ** 2
        lo = [slice(1, -1)] * grid.dim
        hi = [slice(1, -1)] * grid.dim
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        out[tuple(core)] += (
            2.0 * values[tuple(core)] - values[tuple(lo)] - values[tuple(hi)]
        ) / h2
    return out


def apply_laplacian(grid: Grid, u: GridFunction) -> GridFunction:
    """-Delta u with zero Dirichlet data; rejects nonzero boundary values."""
    if not u.is_boundary_zero():
        raise GridError("apply_laplacian requires zero boundary values")
    return GridFunction(grid, neg_laplacian_values(grid, u.values))


def gradient_dot(grid: Grid, u: GridFunction, v: GridFunction) -> np.ndarray:
    """Nodal grad(u).grad(v) whose trapezoid integral reproduces the stiffness
    bilinear form exactly (face products averaged onto nodes, one-sided at the
    box faces)."""
    uu, vv = u.values, v.values
    out = np.zeros(grid.shape)
    for ax in range(grid.dim):
        h = grid.spacing[ax]
        sl_a = [slice(None)] * grid.dim
        sl_b = [slice(None)] * grid.dim
        sl_a[ax] = slice(0, -1)
        sl_b[ax] = slice(1, None)
        face = ((uu[tuple(sl_b)] - uu[tuple(sl_a)]) / h) * (
            (vv[tuple(sl_b)] - vv[tuple(sl_a)]) / h
        )
        lo = [slice(None)] * grid.dim
        hi = [slice(None)] * grid.dim
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        half = np.zeros(grid.shape)
        half[tuple(lo)] += face
        half[tuple(hi)] += face
        first = [slice(None)] * grid.dim
        last = [slice(None)] * grid.dim
        first[ax] = 0
        last[ax] = -1
        half[tuple(first)] *= 2.0
        half[tuple(last)] *= 2.0
        out += 0.5 * half
    return out


def stiffness_csr(grid: Grid, mask: np.ndarray) -> sp.csr_matrix:
    """Sparse -Delta over the True nodes of ``mask`` with zero data outside."""
    if mask.shape != grid.shape:
        raise GridError("mask shape mismatch")
    idx = -np.ones(grid.shape, dtype=np.int64)
    m = int(mask.sum())
    idx[mask] = np.arange(m)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    own = idx[mask]
    diag = np.zeros(m)
    for ax in range(grid.dim):
        diag += 2.0 / grid.spacing[ax] ** 2
        for shift in (-1, 1):
            nb = np.roll(idx, -shift, axis=ax)
            edge = [slice(None)] * grid.dim
            edge[ax] = -1 if shift == 1 else 0
            nb[tuple(edge)] = -1
            nb_masked = nb[mask]
            ok = nb_masked >= 0
            rows.append(own[ok])
            cols.append(nb_masked[ok])
            vals.append(np.full(int(ok.sum()), -1.0 / grid.spacing[ax] ** 2))
    rows.append(own)
    cols.append(own)
    vals.append(diag)
    A = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m, m),
    )
    return A.tocsr()


# ---------------------------------------------------------------------------
# flat CSV serialization (node coordinates + values)
# ---------------------------------------------------------------------------

def write_field_csv(path, grid: Grid, columns: dict[str, np.ndarray]) -> None:
    """Write node coordinates plus one column per named array."""
    coords = grid.coords
    names = ["x"] if grid.dim == 1 else ["x", "y"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names + list(columns))
        flat_coords = [c.ravel() for c in coords]
        flat_cols = [np.asarray(v).ravel() for v in columns.values()]
        for i in range(grid.n_nodes):
            writer.writerow(
                [repr(float(c[i])) for c in flat_coords]
                + [repr(float(v[i])) for v in flat_cols]
            )


def load_grid_function(path) -> GridFunction:
    """Rebuild a GridFunction from a flat CSV written by write_field_csv.

    The node set must form a full uniform tensor grid; the value column is the
    last one.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        data = np.array([[float(x) for x in row] for row in reader])
    ncoord = len(header) - 1
    if ncoord not in (1, 2):
        raise GridError(f"expected 1 or 2 coordinate columns, got {ncoord}")
    axes = [np.unique(data[:, k]) for k in range(ncoord)]
    shape = tuple(len(ax) for ax in axes)
    if int(np.prod(shape)) != data.shape[0]:
        raise GridError("node set is not a full tensor grid")
    grid = build_grid(
        ncoord,
        [(ax[0], ax[-1]) for ax in axes],
        [len(ax) for ax in axes],
    )
    order = np.lexsort(tuple(data[:, k] for k in reversed(range(ncoord))))
    vals = data[order, -1].reshape(shape)
    return GridFunction(grid, vals)

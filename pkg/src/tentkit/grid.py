"""Discretization substrate: periodic torus + geometric time ladder.

The spatial domain is a torus [0, period)^n with n in {1, 2}, sampled on a
uniform grid of points_per_axis cells per axis (power of two, so DFTs are
cheap and nested-grid comparisons are exact).  Time lives on a geometric
ladder t_k = t_min * rho^k; every space-time integral is a weighted sum over
ladder slabs [t_k, rho*t_k).  All field containers and the handful of
primitive quadratures (ball averages, Whitney averages, the L2 pairing) used
by every other module are defined here.

Serialization: a flat binary format with magic "TKF1" -- header of four
little-endian u32 (n, points_per_axis, time_levels, component count) after
the magic, then interleaved float64 re/im pairs in C order.  time_levels = 0
marks a purely spatial field.  The header does not carry the period or the
time range, so loading requires a GridSpec to validate against.
"""

import functools
import io
import math
from dataclasses import dataclass

import numpy as np

MAGIC = b"TKF1"


def _is_power_of_two(k):
    return k >= 1 and (k & (k - 1)) == 0


@dataclass(frozen=True)
class GridSpec:
    """Torus of side `period` with points_per_axis^n cells and a geometric
    time ladder of time_levels points from t_min to t_max inclusive.

    The one coupling invariant: h^2 <= t_min, so the ball B(x, sqrt(t)) of
    the finest time level always contains at least the center cell.
    """

    n: int
    period: float
    points_per_axis: int
    t_min: float
    t_max: float
    time_levels: int

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("n must be 1 or 2, got %r" % (self.n,))
        if not self.period > 0:
            raise ValueError("period must be positive")
        if not _is_power_of_two(self.points_per_axis):
            raise ValueError("points_per_axis must be a power of two, got %r"
                             % (self.points_per_axis,))
        if not (0 < self.t_min < self.t_max):
            raise ValueError("need 0 < t_min < t_max")
        if self.time_levels < 8:
            raise ValueError("time_levels must be >= 8")
        if self.h ** 2 > self.t_min * (1 + 1e-12):
            raise ValueError(
                "h^2 = %g exceeds t_min = %g; the finest time slab cannot "
                "resolve a one-cell ball" % (self.h ** 2, self.t_min))

    @property
    def h(self):
        return self.period / self.points_per_axis

    @property
    def ncells(self):
        return self.points_per_axis ** self.n

    @property
    def shape(self):
        return (self.points_per_axis,) * self.n

    @property
    def rho(self):
        """Ladder ratio t_{k+1}/t_k."""
        return (self.t_max / self.t_min) ** (1.0 / (self.time_levels - 1))

    def times(self):
        return np.geomspace(self.t_min, self.t_max, self.time_levels)

    def dt_weights(self):
        """Quadrature weights for plain dt: slab [t_k, rho t_k) has width (rho-1) t_k."""
        return (self.rho - 1.0) * self.times()

    def dlogt_weights(self):
        """Quadrature weights for dt/t: every slab has logarithmic width log(rho)."""
        return np.full(self.time_levels, math.log(self.rho))

    def window_weights(self, lo, hi, measure="dt"):
        """Slab weights restricted to the time window [lo, hi].

        Each ladder slab [t_k, rho t_k) is clipped to the window; the weight
        is the clipped width in the dt or dt/t measure.  Windows reaching
        below t_min or above rho*t_max are silently truncated (the ladder
        is the whole discretization of (0, inf)).
        """
        t = self.times()
        left = np.maximum(t, lo)
        right = np.minimum(self.rho * t, hi)
        if measure == "dt":
            return np.maximum(right - left, 0.0)
        if measure == "dt/t":
            with np.errstate(divide="ignore", invalid="ignore"):
                w = np.log(np.maximum(right, 1e-300) / left)
            return np.where(right > left, w, 0.0)
        raise ValueError("measure must be 'dt' or 'dt/t'")

    def axis_coords(self):
        return self.h * np.arange(self.points_per_axis)

    def centers(self):
        """Cell centers as an (ncells, n) array (C-order flattening)."""
        ax = self.axis_coords()
        if self.n == 1:
            return ax[:, None]
        xi, xj = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([xi.ravel(), xj.ravel()], axis=1)

    def wrap_dist(self, delta):
        """Torus distance for coordinate differences (any array shape)."""
        d = np.abs(np.asarray(delta)) % self.period
        return np.minimum(d, self.period - d)


def _coerce_values(values, ndim_min, n):
    arr = np.asarray(values, dtype=np.complex128)
    if arr.ndim == ndim_min - 1:
        arr = arr[..., None]
    if arr.ndim != ndim_min:
        raise ValueError("expected a %d-axis array, got shape %r"
                         % (ndim_min, arr.shape))
    if arr.shape[-1] not in (1, n):
        raise ValueError("component count must be 1 or n=%d, got %d"
                         % (n, arr.shape[-1]))
    if not np.all(np.isfinite(arr)):
        raise ValueError("field contains non-finite entries")
    return np.ascontiguousarray(arr)


@dataclass(frozen=True)
class SpatialField:
    """Complex samples on the torus, shape (ncells, components)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        arr = _coerce_values(self.values, 2, self.grid.n)
        if arr.shape[0] != self.grid.ncells:
            raise ValueError("expected %d cells, got %d"
                             % (self.grid.ncells, arr.shape[0]))
        object.__setattr__(self, "values", arr)

    @property
    def components(self):
        return self.values.shape[1]


@dataclass(frozen=True)
class SpaceTimeField:
    """Complex samples on ladder x torus, shape (time_levels, ncells, components)."""

    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        arr = _coerce_values(self.values, 3, self.grid.n)
        if arr.shape[:2] != (self.grid.time_levels, self.grid.ncells):
            raise ValueError("expected shape (%d, %d, C), got %r"
                             % (self.grid.time_levels, self.grid.ncells,
                                arr.shape))
        object.__setattr__(self, "values", arr)

    @property
    def components(self):
        return self.values.shape[2]

    def at_level(self, k):
        return SpatialField(self.grid, self.values[k])


@dataclass(frozen=True)
class WhitneyCube:
    """The parabolic unit (t, 2t) x B(x, sqrt(t)) anchored at a grid cell."""

    grid: GridSpec
    t: float
    cell: int

    def __post_init__(self):
        g = self.grid
        if not (g.t_min <= self.t < g.t_max):
            raise ValueError("Whitney anchor t = %r outside [t_min, t_max)"
                             % (self.t,))
        if not (0 <= self.cell < g.ncells):
            raise ValueError("cell index out of range")

    @property
    def radius(self):
        return math.sqrt(self.t)

    @property
    def extent(self):
        return (self.t, 2.0 * self.t)


# ---------------------------------------------------------------------------
# ball membership
#
# A ball is the set of cells whose centers lie at torus distance strictly
# less than the radius from the center cell.  Strict comparison makes
# membership deterministic (cells at exactly the radius are excluded, so no
# tie-breaking is ever exercised).

@functools.lru_cache(maxsize=512)
def _ball_offsets_cached(n, points, period, radius):
    h = period / points
    k = np.arange(points)
    d = np.minimum(k, points - k) * h
    if n == 1:
        mask = d < radius
        return (np.nonzero(mask)[0],)
    di, dj = np.meshgrid(d, d, indexing="ij")
    mask = np.hypot(di, dj) < radius
    ii, jj = np.nonzero(mask)
    return ii, jj


def ball_cells(grid, center, radius):
    """Flat indices of the cells of B(center, radius); always nonempty for
    radius >= h/2 (the center cell is at distance 0)."""
    if radius < grid.h / 2:
        raise ValueError("radius %g below half a cell width %g"
                         % (radius, grid.h / 2))
    offs = _ball_offsets_cached(grid.n, grid.points_per_axis, grid.period,
                                float(radius))
    P = grid.points_per_axis
    if grid.n == 1:
        return (center + offs[0]) % P
    ci, cj = divmod(int(center), P)
    return ((ci + offs[0]) % P) * P + (cj + offs[1]) % P


@functools.lru_cache(maxsize=512)
def _ball_kernel_fft_cached(n, points, period, radius):
    """FFT of the normalized ball indicator, for batched averaging.

    The kernel is symmetric under negation, so circular convolution equals
    correlation and a single forward FFT serves both.  Row sums of the
    implied averaging matrix are exactly 1 (the kernel entries sum to 1).
    """
    offs = _ball_offsets_cached(n, points, period, radius)
    shape = (points,) * n
    kernel = np.zeros(shape)
    if n == 1:
        kernel[offs[0]] = 1.0
    else:
        kernel[offs[0], offs[1]] = 1.0
    kernel /= kernel.sum()
    return np.fft.fftn(kernel)


def ball_average_all(grid, values, radius):
    """Ball average of a flat (ncells,) array at every center simultaneously.

    Same membership rule as ball_average; evaluated by FFT circular
    convolution with the normalized indicator.
    """
    if radius < grid.h / 2:
        raise ValueError("radius below half a cell width")
    khat = _ball_kernel_fft_cached(grid.n, grid.points_per_axis, grid.period,
                                   float(radius))
    arr = np.asarray(values).reshape(grid.shape)
    out = np.fft.ifftn(np.fft.fftn(arr) * khat)
    if np.isrealobj(values):
        out = out.real
    return out.reshape(-1)


def ball_average(field, center, radius):
    """Arithmetic mean of a spatial field over B(center cell, radius).

    Scalar fields return a complex number; vector fields a (components,)
    array.  Membership is center-in-ball with strict radius comparison.
    """
    cells = ball_cells(field.grid, center, radius)
    out = field.values[cells].mean(axis=0)
    return out[0] if out.shape[0] == 1 else out


def whitney_average_sq(field, cube):
    """Mean of |field|^2 over the Whitney cube (t,2t) x B(x, sqrt(t)).

    Time weights are proportional to slab widths clipped to (t, 2t); the
    spatial mean runs over the ball cells.  Vector components are summed
    before averaging (|F|^2 is the Euclidean square).
    """
    g = field.grid
    w = g.window_weights(cube.t, 2.0 * cube.t, "dt")
    total = w.sum()
    if total <= 0:
        raise ValueError("Whitney cube (t, 2t) with t = %g contains no ladder "
                         "slab mass" % (cube.t,))
    cells = ball_cells(g, cube.cell, cube.radius)
    sq = np.abs(field.values[:, cells, :]) ** 2
    per_level = sq.sum(axis=2).mean(axis=1)
    return float((w * per_level).sum() / total)


def forward_gradient(grid, values):
    """Forward-difference gradient of flat scalar values: (ncells,) -> (ncells, n).

    (D_a u)(x) = (u(x + h e_a) - u(x)) / h with periodic wrap.
    """
    u = np.asarray(values).reshape(grid.shape)
    out = np.empty(grid.shape + (grid.n,), dtype=np.complex128)
    for a in range(grid.n):
        out[..., a] = (np.roll(u, -1, axis=a) - u) / grid.h
    return out.reshape(grid.ncells, grid.n)


def backward_divergence(grid, values):
    """Backward-difference divergence of flat vector values: (ncells, n) -> (ncells,).

    Exact negative adjoint of forward_gradient under the discrete pairing:
    pair(grad u, w) = -pair(u, div w) holds to machine precision.
    """
    w = np.asarray(values).reshape(grid.shape + (grid.n,))
    out = np.zeros(grid.shape, dtype=np.complex128)
    for a in range(grid.n):
        wa = w[..., a]
        out += (wa - np.roll(wa, 1, axis=a)) / grid.h
    return out.reshape(grid.ncells)


def pair(field_a, field_b):
    """Discrete L2 pairing h^n * sum(A * conj(B)); both fields on one grid."""
    if field_a.grid != field_b.grid:
        raise ValueError("pair: grid mismatch")
    return complex(field_a.grid.h ** field_a.grid.n
                   * np.sum(field_a.values * np.conj(field_b.values)))


def norm_l2(field):
    """Discrete L2 norm sqrt(pair(f, f)) over cells and components."""
    return math.sqrt(max(pair(field, field).real, 0.0))


# ---------------------------------------------------------------------------
# serialization

def _pack_header(n, points, levels, comp):
    import struct
    return MAGIC + struct.pack("<4I", n, points, levels, comp)


def field_to_bytes(field):
    """Serialize a Spatial/SpaceTimeField to TKF1 bytes."""
    spatial = isinstance(field, SpatialField)
    levels = 0 if spatial else field.grid.time_levels
    head = _pack_header(field.grid.n, field.grid.points_per_axis, levels,
                        field.components)
    flat = field.values.ravel()
    out = np.empty(2 * flat.size, dtype="<f8")
    out[0::2] = flat.real
    out[1::2] = flat.imag
    return head + out.tobytes()


def field_from_bytes(data, grid):
    """Deserialize TKF1 bytes against a grid (header must match the grid)."""
    import struct
    if data[:4] != MAGIC:
        raise ValueError("not a TKF1 payload (bad magic)")
    n, points, levels, comp = struct.unpack("<4I", data[4:20])
    if n != grid.n or points != grid.points_per_axis:
        raise ValueError("TKF1 header (n=%d, points=%d) does not match grid "
                         "(n=%d, points=%d)" % (n, points, grid.n,
                                                grid.points_per_axis))
    raw = np.frombuffer(data[20:], dtype="<f8")
    vals = raw[0::2] + 1j * raw[1::2]
    if levels == 0:
        return SpatialField(grid, vals.reshape(grid.ncells, comp))
    if levels != grid.time_levels:
        raise ValueError("TKF1 header has %d time levels, grid has %d"
                         % (levels, grid.time_levels))
    return SpaceTimeField(grid, vals.reshape(levels, grid.ncells, comp))


def save_field(path, field):
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(field))


def load_field(path, grid):
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read(), grid)


def field_to_csv(field, stream=None):
    """CSV export for small grids: one row per (level, cell, component)."""
    import csv
    own = stream is None
    if own:
        stream = io.StringIO()
    writer = csv.writer(stream)
    if isinstance(field, SpatialField):
        writer.writerow(["cell", "comp", "re", "im"])
        for c in range(field.grid.ncells):
            for m in range(field.components):
                v = field.values[c, m]
                writer.writerow([c, m, repr(v.real), repr(v.imag)])
    else:
        writer.writerow(["level", "t", "cell", "comp", "re", "im"])
        ts = field.grid.times()
        for k in range(field.grid.time_levels):
            for c in range(field.grid.ncells):
                for m in range(field.components):
                    v = field.values[k, c, m]
                    writer.writerow([k, repr(float(ts[k])), c, m,
                                     repr(v.real), repr(v.imag)])
    return stream.getvalue() if own else None

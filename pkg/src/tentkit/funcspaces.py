"""Solution-space norms: weighted tent spaces, Z-spaces, slice spaces, atoms.

All quadratures ride on the grid's ladder-slab weights and the strict
center-in-ball membership from the grid module, so the p = 2 Fubini
identities hold to near machine precision (the averaging kernel row-sums to
exactly 1) and rescaled nested-grid comparisons carry no spurious error.
"""

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .grid import (SpaceTimeField, SpatialField, ball_average_all, ball_cells,
                   forward_gradient)
from .spectral import fft_field, ifft_field, wavevectors

INF = math.inf


@dataclass(frozen=True)
class TentNormSpec:
    """Parameters of a tent/Z norm: time weight beta, exponent p, cone
    aperture (ball radius multiplier, >= 1), and the Carleson deficit
    exponent used by the p = inf box norm."""

    beta: float
    p: float
    aperture: float = 1.0
    carleson_deficit: float = 0.0

    def __post_init__(self):
        if not (0 < self.p):
            raise ValueError("p must be positive")
        if self.aperture < 1.0:
            raise ValueError("aperture must be >= 1")
        if self.carleson_deficit < 0.0:
            raise ValueError("carleson_deficit must be >= 0")


def _square_density(field, beta):
    """Per-level arrays |t^{-beta} F(t_k, .)|^2 with components summed: (K, N)."""
    t = field.grid.times()
    sq = (np.abs(field.values) ** 2).sum(axis=2)
    return sq * (t ** (-2.0 * beta))[:, None]


def _lp_of_nonneg(grid, values, p):
    if p == INF:
        return float(values.max())
    return float((grid.h ** grid.n * (values ** p).sum()) ** (1.0 / p))


def tent_norm(F, spec):
    """Weighted tent norm: L^p in x of the cone functional
    ( integral over t of the ball average of |t^{-beta} F|^2, plain dt )^{1/2},
    with cone cross-section B(x, aperture * sqrt(t)).

    p = inf dispatches to carleson_norm.
    """
    if spec.p == INF:
        return carleson_norm(F, spec)
    g = F.grid
    sq = _square_density(F, spec.beta)
    w = g.dt_weights()
    cone = np.zeros(g.ncells)
    for k, t in enumerate(g.times()):
        cone += w[k] * ball_average_all(g, sq[k], spec.aperture * math.sqrt(t))
    cone = np.maximum(cone, 0.0)
    return _lp_of_nonneg(g, np.sqrt(cone), spec.p)


def dyadic_ball_radii(grid):
    """The fixed dyadic ball family: radii h * 2^k up to half the period."""
    radii = []
    r = grid.h
    while r <= grid.period / 2.0 + 1e-12:
        radii.append(r)
        r *= 2.0
    return radii


def carleson_norm(F, spec):
    """The p = inf tent norm: sup over the dyadic ball family of
    |B|^{-deficit} ( box integral of the ball average of |t^{-beta}F|^2 )^{1/2},
    box = [0, r(B)^2] x B.

    The sup runs over all center cells and dyadic radii only; against the
    continuum sup over all balls this loses at most a factor ~2^{n/2}
    (documented, fixed family).
    """
    g = F.grid
    sq = _square_density(F, spec.beta)
    best = 0.0
    for r in dyadic_ball_radii(g):
        w = g.window_weights(0.0, r * r, "dt")
        if not np.any(w > 0):
            continue
        boxsum = np.tensordot(w, sq, axes=(0, 0))
        boxavg = np.maximum(ball_average_all(g, boxsum, r), 0.0)
        measure = len(ball_cells(g, 0, r)) * g.h ** g.n
        val = measure ** (-spec.carleson_deficit) * math.sqrt(boxavg.max())
        best = max(best, val)
    return best


def z_norm(F, spec):
    """Whitney-average variant: per (t, x) the plain-ds integral over
    (t/2, t] of the ball average of |s^{-beta} F|^2 on B(x, sqrt(t)), then
    L^p over x and t with dt/t outer weights (sup over (t, x) at p = inf)."""
    g = F.grid
    sq = _square_density(F, spec.beta)
    ts = g.times()
    wlog = g.dlogt_weights()
    avgs = np.empty((g.time_levels, g.ncells))
    for k, t in enumerate(ts):
        win = g.window_weights(t / 2.0, t, "dt")
        inner = np.tensordot(win, sq, axes=(0, 0))
        avgs[k] = np.maximum(
            ball_average_all(g, inner, spec.aperture * math.sqrt(t)), 0.0)
    if spec.p == INF:
        return math.sqrt(float(avgs.max()))
    half = avgs ** (spec.p / 2.0)
    total = (g.h ** g.n) * float((wlog[:, None] * half).sum())
    return total ** (1.0 / spec.p)


def slice_norm(f, p, delta, order="plain", with_meta=False):
    """Slice-space norm: L^p of x -> ( mean over B(x, sqrt(delta)) of |g|^2 )^{1/2}.

    order selects g: "plain" uses f itself, "grad" its forward-difference
    gradient, "div" a divergence representation f = div G obtained by the
    Fourier projection G-hat = -i xi f-hat / |xi|^2.  The div branch is an
    upper bound for the representation-infimum norm (flagged in metadata);
    any nonzero mean of f is dropped there (a constant has no divergence
    representation) with a warning.
    """
    if not (1.0 <= p):
        raise ValueError("slice_norm needs p in [1, inf]")
    g = f.grid
    radius = math.sqrt(delta)
    if radius < g.h:
        raise ValueError("delta too small: sqrt(delta) = %g below cell width %g"
                         % (radius, g.h))
    meta = {"order": order, "delta": delta}
    if order == "plain":
        vals = f.values
    elif order == "grad":
        if f.values.shape[1] != 1:
            raise ValueError("grad slice norm expects a scalar field")
        vals = forward_gradient(g, f.values[:, 0])
    elif order == "div":
        if f.values.shape[1] != 1:
            raise ValueError("div slice norm expects a scalar field")
        xi, absxi = wavevectors(g)
        fhat = fft_field(g, f.values)[:, 0]
        mean = abs(fhat[0]) / g.ncells
        scale = np.abs(f.values).max() or 1.0
        if mean > 1e-12 * scale:
            warnings.warn("slice_norm(div): nonzero mean %g dropped (constants "
                          "have no divergence representation)" % mean,
                          RuntimeWarning, stacklevel=2)
        ghat = np.zeros((g.ncells, g.n), dtype=np.complex128)
        nz = absxi > 0
        ghat[nz] = -1j * xi[nz] * (fhat[nz] / absxi[nz] ** 2)[:, None]
        vals = ifft_field(g, ghat)
        meta["kind"] = "fourier_projection_upper_bound"
    else:
        raise ValueError("order must be plain, grad or div")
    dens = (np.abs(vals) ** 2).sum(axis=1)
    avg = np.maximum(ball_average_all(g, dens, radius), 0.0)
    val = _lp_of_nonneg(g, np.sqrt(avg), p)
    return (val, meta) if with_meta else val


@dataclass(frozen=True)
class TentAtom:
    """A tent-space atom: field supported in [0, r(B)^2] x B, normalized so
    its weighted space-time L2 norm is |B|^{-(1/p - 1/2)}."""

    field: SpaceTimeField
    ball_center: int
    ball_radius: float
    beta: float
    p: float

    def support_cells(self):
        return ball_cells(self.field.grid, self.ball_center, self.ball_radius)

    def box_weights(self):
        return self.field.grid.window_weights(0.0, self.ball_radius ** 2, "dt")

    def ball_measure(self):
        g = self.field.grid
        return len(self.support_cells()) * g.h ** g.n


def weighted_l2_sq(field, beta, time_weights=None, cells=None):
    """||t^{-beta} field||^2 in L2(dt dy), optionally restricted in t and x."""
    g = field.grid
    w = g.dt_weights() if time_weights is None else time_weights
    sq = _square_density(field, beta)
    if cells is not None:
        sq = sq[:, cells]
    return float(g.h ** g.n * (w[:, None] * sq).sum())


def make_atom(grid, ball_center, ball_radius, beta, p, shape="flat", seed=0):
    """Construct a tent-space atom on the given ball.

    The raw profile is either constant ("flat") or seeded complex Gaussian
    noise ("random") on the support cells and the ladder slabs meeting
    [0, r^2]; it is then rescaled so that the weighted L2 quadrature equals
    the atom normalization exactly.
    """
    if ball_radius ** 2 < grid.t_min * (1 - 1e-12):
        raise ValueError("atom box [0, r^2] with r^2 = %g sits below the "
                         "ladder foot t_min = %g" % (ball_radius ** 2,
                                                     grid.t_min))
    cells = ball_cells(grid, ball_center, ball_radius)
    win = grid.window_weights(0.0, ball_radius ** 2, "dt")
    lvl = np.nonzero(win > 0)[0]
    vals = np.zeros((grid.time_levels, grid.ncells, 1), dtype=np.complex128)
    if shape == "flat":
        vals[np.ix_(lvl, cells)] = 1.0
    elif shape == "random":
        rng = np.random.default_rng(seed)
        noise = (rng.standard_normal((len(lvl), len(cells), 1))
                 + 1j * rng.standard_normal((len(lvl), len(cells), 1)))
        vals[np.ix_(lvl, cells)] = noise
    else:
        raise ValueError("shape must be 'flat' or 'random'")
    field = SpaceTimeField(grid, vals)
    measure = len(cells) * grid.h ** grid.n
    target = measure ** (-(1.0 / p - 0.5))
    current = math.sqrt(weighted_l2_sq(field, beta, time_weights=win))
    if current == 0:
        raise ValueError("degenerate atom: empty support quadrature")
    field = SpaceTimeField(grid, vals * (target / current))
    return TentAtom(field, ball_center, ball_radius, beta, p)


def atom_is_valid(atom, tol=1e-10):
    """Check both atom invariants: exact support and normalized size."""
    g = atom.field.grid
    mask_x = np.zeros(g.ncells, dtype=bool)
    mask_x[atom.support_cells()] = True
    win = atom.box_weights()
    outside_t = np.nonzero(win == 0)[0]
    vals = atom.field.values
    if np.any(vals[:, ~mask_x, :] != 0):
        return False
    if np.any(vals[outside_t] != 0):
        return False
    target = atom.ball_measure() ** (-(1.0 / atom.p - 0.5))
    got = math.sqrt(weighted_l2_sq(atom.field, atom.beta, time_weights=win))
    return abs(got - target) <= tol * max(target, 1.0)


def aperture_ratio(F, spec, aperture2):
    """tent_norm at aperture2 divided by tent_norm at spec.aperture."""
    if aperture2 < 1.0:
        raise ValueError("aperture2 must be >= 1")
    base = tent_norm(F, spec)
    if base == 0:
        raise ValueError("aperture_ratio undefined for a zero field")
    wide = tent_norm(F, replace(spec, aperture=aperture2))
    return wide / base


def _scaling_index(spec, n):
    invp = 0.0 if spec.p == INF else 1.0 / spec.p
    return 2.0 * spec.beta - n * invp


def embedding_check(F, from_spec, to_spec, from_kind="tent", to_kind="tent",
                    budget=None):
    """Ratio ||F||_to / ||F||_from for an exponent-line embedding hop.

    Requires p_from < p_to, beta_from > beta_to and both specs on one
    scaling line 2 beta - n/p = const (to 1e-12); kinds select tent or
    zspace norms per side.  Returns a record dict; `passes` is set when a
    budget is supplied.
    """
    n = F.grid.n
    if (from_spec.p, from_spec.beta) != (to_spec.p, to_spec.beta):
        if not (from_spec.p < to_spec.p):
            raise ValueError("embedding needs strictly increasing p")
        if not (from_spec.beta > to_spec.beta):
            raise ValueError("embedding needs strictly decreasing beta")
    if abs(_scaling_index(from_spec, n) - _scaling_index(to_spec, n)) > 1e-12:
        raise ValueError("specs not on one scaling line 2*beta - n/p = const")
    norms = {"tent": tent_norm, "zspace": z_norm}
    if from_kind not in norms or to_kind not in norms:
        raise ValueError("kinds must be 'tent' or 'zspace'")
    val_from = norms[from_kind](F, from_spec)
    val_to = norms[to_kind](F, to_spec)
    record = {
        "from": {"beta": from_spec.beta, "p": from_spec.p, "kind": from_kind},
        "to": {"beta": to_spec.beta, "p": to_spec.p, "kind": to_kind},
        "norm_from": val_from,
        "norm_to": val_to,
        "ratio": (val_to / val_from) if val_from > 0 else None,
    }
    if budget is not None:
        record["budget"] = budget
        record["passes"] = (record["ratio"] is not None
                            and record["ratio"] <= budget)
    return record

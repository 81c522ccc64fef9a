import math

import numpy as np
import pytest

from tentkit.funcspaces import (
    TentNormSpec,
    aperture_ratio,
    atom_is_valid,
    carleson_norm,
    dyadic_ball_radii,
    embedding_check,
    make_atom,
    slice_norm,
    tent_norm,
    weighted_l2_sq,
    z_norm,
)
from tentkit.grid import (
    GridSpec,
    SpaceTimeField,
    SpatialField,
    ball_average_all,
    ball_cells,
    norm_l2,
)

G = GridSpec(1, 16.0, 128, 2.0 ** -6, 4.0, 17)
INF = math.inf


def st_noise(grid, seed):
    rng = np.random.default_rng(seed)
    v = (rng.standard_normal((grid.time_levels, grid.ncells, 1))
         + 1j * rng.standard_normal((grid.time_levels, grid.ncells, 1)))
    return SpaceTimeField(grid, v)


def st_smooth(grid, seed, kmax=8):
    """Band-limited in x, random per level; safe to subsample."""
    rng = np.random.default_rng(seed)
    x = grid.axis_coords()
    v = np.zeros((grid.time_levels, grid.ncells), dtype=np.complex128)
    for k in range(1, kmax + 1):
        c = (rng.standard_normal(grid.time_levels)
             + 1j * rng.standard_normal(grid.time_levels))
        v += np.outer(c, np.exp(2j * np.pi * k * x / grid.period))
    v += np.conj(v)
    return SpaceTimeField(grid, v[:, :, None])


def spike(grid, level=8, cell=None):
    v = np.zeros((grid.time_levels, grid.ncells, 1))
    v[level, cell if cell is not None else grid.ncells // 2, 0] = 1.0
    return SpaceTimeField(grid, v)


def test_spec_validation():
    with pytest.raises(ValueError):
        TentNormSpec(0.0, 0.0)
    with pytest.raises(ValueError):
        TentNormSpec(0.0, 2.0, aperture=0.5)
    with pytest.raises(ValueError):
        TentNormSpec(0.0, 2.0, carleson_deficit=-1.0)


def test_tent_norm_zero_field():
    z = SpaceTimeField(G, np.zeros((G.time_levels, G.ncells, 1)))
    assert tent_norm(z, TentNormSpec(-0.3, 1.5)) == 0.0
    assert z_norm(z, TentNormSpec(0.0, 2.0)) == 0.0
    assert carleson_norm(z, TentNormSpec(0.0, INF)) == 0.0


@pytest.mark.parametrize("beta", [0.0, -0.5, 0.25])
def test_tent_p2_fubini(beta):
    """At p = 2 the cone average integrates out and the tent norm is the
    plain weighted space-time quadrature."""
    for seed in range(5):
        F = st_noise(G, seed)
        got = tent_norm(F, TentNormSpec(beta, 2.0))
        t = G.times()
        sq = (np.abs(F.values) ** 2).sum(axis=2) * (t ** (-2 * beta))[:, None]
        direct = math.sqrt(G.h ** G.n * (G.dt_weights()[:, None] * sq).sum())
        assert got == pytest.approx(direct, rel=1e-10)


def test_tent_p2_aperture_free():
    F = st_noise(G, 42)
    spec = TentNormSpec(-0.25, 2.0)
    wide = TentNormSpec(-0.25, 2.0, aperture=3.0)
    assert tent_norm(F, wide) == pytest.approx(tent_norm(F, spec), rel=1e-10)


def test_parabolic_scaling_law():
    """Compressing a field by lambda = 2 in parabolic scaling moves the tent
    norm by lambda^(2 beta - 1 - n/p); subsampling a band-limited field onto
    the half-size grid realizes the rescale without interpolation."""
    base = GridSpec(1, 16.0, 256, 2.0 ** -6, 4.0, 17)
    half = GridSpec(1, 8.0, 128, 2.0 ** -8, 1.0, 17)
    rng_seed = 11
    rng = np.random.default_rng(rng_seed)
    x = base.axis_coords()
    v = np.zeros((base.time_levels, base.ncells), dtype=np.complex128)
    for k in range(1, 7):
        c = (rng.standard_normal(base.time_levels)
             + 1j * rng.standard_normal(base.time_levels))
        v += np.outer(c, np.exp(2j * np.pi * k * x / base.period))
    v += np.conj(v)
    F = SpaceTimeField(base, v[:, :, None])
    F_lam = SpaceTimeField(half, F.values[:, ::2, :])
    lam = 2.0
    for beta, p in ((0.0, 2.0), (-0.5, 1.0), (0.25, 4.0)):
        lhs = tent_norm(F_lam, TentNormSpec(beta, p))
        rhs = lam ** (2 * beta - 1.0 - 1.0 / p) * tent_norm(
            F, TentNormSpec(beta, p))
        assert lhs == pytest.approx(rhs, rel=0.03)


def test_aperture_monotone_p_le_2():
    """With mean-normalized ball averages the tent norm is nondecreasing in
    aperture for p <= 2 (p = 2 is aperture-free by Fubini; above 2 the
    normalization can reverse the inequality, so no claim there)."""
    for p in (0.7, 1.0, 2.0):
        for seed in range(4):
            F = st_noise(G, 100 + seed) if seed % 2 else st_smooth(G, seed)
            prev = 0.0
            for ap in (1.0, 1.5, 2.0, 4.0):
                cur = tent_norm(F, TentNormSpec(-0.25, p, aperture=ap))
                assert cur >= prev * (1 - 1e-12)
                prev = cur


def test_aperture_ratio_trivial_and_spike():
    F = st_noise(G, 7)
    spec = TentNormSpec(0.0, 1.0)
    assert aperture_ratio(F, spec, 1.0) == pytest.approx(1.0, rel=1e-12)
    assert aperture_ratio(spike(G), spec, 2.0) >= 1.0
    zero = SpaceTimeField(G, np.zeros((G.time_levels, G.ncells, 1)))
    with pytest.raises(ValueError):
        aperture_ratio(zero, spec, 2.0)
    with pytest.raises(ValueError):
        aperture_ratio(F, spec, 0.9)


def test_aperture_doubling_band_p1():
    """The change-of-angle constant at aperture 2, p = 1 stays well under
    the budget 2^{n/p} * 8."""
    ratios = [aperture_ratio(st_noise(G, 50 + s), TentNormSpec(0.0, 1.0), 2.0)
              for s in range(20)]
    assert min(ratios) >= 1.0
    assert max(ratios) <= 2.0 ** (G.n / 1.0) * 8.0


def test_quasi_norm_p_triangle():
    """For p <= 1 the p-th powers are subadditive (the cone functional is a
    pointwise seminorm, then the discrete p-triangle applies)."""
    for p in (0.5, 0.8, 1.0):
        for seed in range(6):
            F = st_noise(G, 200 + seed)
            H = st_noise(G, 300 + seed)
            S = SpaceTimeField(G, F.values + H.values)
            spec = TentNormSpec(-0.1, p)
            lhs = tent_norm(S, spec) ** p
            rhs = tent_norm(F, spec) ** p + tent_norm(H, spec) ** p
            assert lhs <= rhs * (1 + 1e-10)


def test_carleson_constant_field():
    """F = 1 at beta = 0: the box integral is the window length, so the sup
    sits at the largest dyadic ball and equals the capped horizon length."""
    F = SpaceTimeField(G, np.ones((G.time_levels, G.ncells, 1)))
    got = carleson_norm(F, TentNormSpec(0.0, INF))
    horizon = min(max(dyadic_ball_radii(G)) ** 2, G.rho * G.t_max)
    assert got == pytest.approx(math.sqrt(horizon - G.t_min), rel=1e-12)


def test_carleson_whitney_cube_argmax():
    """A field on one Whitney cube: the sup is found by the smallest dyadic
    ball whose box reaches the slab; cross-checked by an exhaustive sweep."""
    lvl = 6
    t = G.times()[lvl]
    cells = ball_cells(G, 40, math.sqrt(t))
    v = np.zeros((G.time_levels, G.ncells, 1))
    v[lvl, cells, 0] = 1.0
    F = SpaceTimeField(G, v)
    got = carleson_norm(F, TentNormSpec(0.0, INF))
    best, arg = 0.0, None
    sq = (np.abs(v) ** 2).sum(axis=2)
    for r in dyadic_ball_radii(G):
        w = G.window_weights(0.0, r * r, "dt")
        if not np.any(w > 0):
            continue
        boxsum = np.tensordot(w, sq, axes=(0, 0))
        val = math.sqrt(max(ball_average_all(G, boxsum, r).max(), 0.0))
        if val > best:
            best, arg = val, r
    assert got == pytest.approx(best, rel=1e-12)
    assert arg == pytest.approx(math.sqrt(2 * t))


def test_carleson_deficit_scaling():
    """The deficit factor multiplies each candidate by |B|^{-deficit}."""
    F = spike(G, level=4)
    plain = carleson_norm(F, TentNormSpec(0.0, INF))
    tilted = carleson_norm(F, TentNormSpec(0.0, INF, carleson_deficit=0.5))
    assert tilted > plain  # small balls win more with the deficit


def test_z_vs_tent_band_p2():
    """Both norms reduce to weighted space-time quadratures at p = 2; the
    Whitney window prices them within a fixed band."""
    ratios = []
    for seed in range(20):
        F = st_noise(G, 400 + seed)
        ratios.append(z_norm(F, TentNormSpec(0.0, 2.0))
                      / tent_norm(F, TentNormSpec(0.0, 2.0)))
    assert min(ratios) >= 1.0 / 4.0
    assert max(ratios) <= 4.0


def test_z_norm_p_inf_sup():
    F = spike(G, level=8)
    val = z_norm(F, TentNormSpec(0.0, INF))
    assert val > 0.0
    # doubling the field doubles the sup
    F2 = SpaceTimeField(G, 2.0 * F.values)
    assert z_norm(F2, TentNormSpec(0.0, INF)) == pytest.approx(2 * val,
                                                               rel=1e-12)


def test_slice_norm_p2_is_l2():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        f = SpatialField(G, rng.standard_normal((G.ncells, 1))
                         + 1j * rng.standard_normal((G.ncells, 1)))
        got = slice_norm(f, 2.0, 1.0)
        assert got == pytest.approx(norm_l2(f), rel=1e-12)


def test_slice_norm_constant():
    c = 1.7
    f = SpatialField(G, np.full((G.ncells, 1), c))
    for p in (1.0, 2.0, 4.0):
        assert slice_norm(f, p, 0.25) == pytest.approx(
            c * G.period ** (G.n / p), rel=1e-12)


def test_slice_norm_guards():
    f = SpatialField(G, np.ones((G.ncells, 1)))
    with pytest.raises(ValueError):
        slice_norm(f, 0.5, 1.0)
    with pytest.raises(ValueError):
        slice_norm(f, 2.0, (G.h / 2) ** 2)
    with pytest.raises(ValueError):
        slice_norm(f, 2.0, 1.0, order="curl")


def test_slice_norm_grad_and_div():
    """grad slices a forward difference; div solves f = div G spectrally and
    warns when a constant component has to be dropped."""
    x = G.axis_coords()
    f = SpatialField(G, np.sin(2 * np.pi * x / G.period)[:, None])
    gval = slice_norm(f, 2.0, 1.0, order="grad")
    assert gval > 0.0
    dval, meta = slice_norm(f, 2.0, 1.0, order="div", with_meta=True)
    assert meta["kind"] == "fourier_projection_upper_bound"
    assert dval > 0.0
    shifted = SpatialField(G, f.values + 1.0)
    with pytest.warns(RuntimeWarning):
        slice_norm(shifted, 2.0, 1.0, order="div")


def test_atom_construction_flat():
    """A flat atom's constant value solves the normalization equation."""
    beta, p, r = -0.25, 1.0, 1.0
    atom = make_atom(G, 30, r, beta, p)
    assert atom_is_valid(atom)
    cells = atom.support_cells()
    win = atom.box_weights()
    measure = len(cells) * G.h ** G.n
    wsum = float((win * G.times() ** (-2 * beta)).sum())
    expect = measure ** (-1.0 / p) / math.sqrt(wsum)
    on = atom.field.values[np.nonzero(win > 0)[0][0], cells[0], 0]
    assert on == pytest.approx(expect, rel=1e-12)
    # weighted quadrature hits the target exactly
    got = math.sqrt(weighted_l2_sq(atom.field, beta, time_weights=win))
    assert got == pytest.approx(measure ** (-(1.0 / p - 0.5)), rel=1e-10)


def test_atom_support_exact():
    atom = make_atom(G, 100, 0.5, 0.0, 2.0, shape="random", seed=3)
    assert atom_is_valid(atom)
    mask = np.zeros(G.ncells, dtype=bool)
    mask[atom.support_cells()] = True
    assert np.all(atom.field.values[:, ~mask, :] == 0)
    outside_t = np.nonzero(atom.box_weights() == 0)[0]
    assert np.all(atom.field.values[outside_t] == 0)


def test_atom_geometry_guard():
    with pytest.raises(ValueError):
        make_atom(G, 0, 0.1, 0.0, 2.0)  # box below the ladder foot
    with pytest.raises(ValueError):
        make_atom(G, 0, 1.0, 0.0, 2.0, shape="bumpy")


def test_atom_uniformity_band():
    """Tent norms of random atoms stay in a narrow band (C/c <= 16), and the
    band survives doubling the resolution within 25%."""
    def band(grid):
        rng = np.random.default_rng(7)
        vals = []
        for i in range(50):
            r = float(rng.choice([0.25, 0.5, 1.0, 2.0]))
            c = int(rng.integers(0, grid.ncells))
            shape = "flat" if i % 2 else "random"
            atom = make_atom(grid, c, r, 0.0, 1.0, shape=shape, seed=i)
            assert atom_is_valid(atom)
            vals.append(tent_norm(atom.field, TentNormSpec(0.0, 1.0)))
        return min(vals), max(vals)

    lo, hi = band(G)
    assert hi / lo <= 16.0
    lo2, hi2 = band(GridSpec(1, 16.0, 256, 2.0 ** -6, 4.0, 17))
    assert abs(lo2 - lo) <= 0.25 * lo
    assert abs(hi2 - hi) <= 0.25 * hi


def test_embedding_identity_and_guards():
    F = st_noise(G, 9)
    spec = TentNormSpec(0.0, 1.0)
    rec = embedding_check(F, spec, spec)
    assert rec["ratio"] == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):  # p must increase
        embedding_check(F, TentNormSpec(-0.25, 2.0), TentNormSpec(0.0, 1.0))
    with pytest.raises(ValueError):  # off the scaling line
        embedding_check(F, TentNormSpec(0.0, 1.0), TentNormSpec(-0.2, 2.0))
    with pytest.raises(ValueError):
        embedding_check(F, spec, TentNormSpec(-0.25, 2.0), to_kind="foo")


def test_embedding_line_hop_budget():
    """T at (0,1) into T at (-1/4,2) on the scaling line, n = 1: the ratio
    stays under the budget 32 and the pass flag reflects it."""
    worst = 0.0
    for seed in range(20):
        F = st_noise(G, 500 + seed) if seed % 2 else st_smooth(G, seed)
        rec = embedding_check(F, TentNormSpec(0.0, 1.0),
                              TentNormSpec(-0.25, 2.0), budget=32.0)
        assert rec["passes"]
        worst = max(worst, rec["ratio"])
    assert worst <= 32.0


def test_embedding_atom_scale_stability():
    """The embedding ratio on atoms barely moves across octaves of the atom
    radius (the line condition is scale invariant)."""
    ratios = []
    for r in (0.5, 1.0, 2.0):
        atom = make_atom(G, 64, r, 0.0, 1.0, shape="flat")
        rec = embedding_check(atom.field, TentNormSpec(0.0, 1.0),
                              TentNormSpec(-0.25, 2.0))
        ratios.append(rec["ratio"])
    assert max(ratios) / min(ratios) <= 1.5


def test_embedding_zspace_kinds():
    F = st_smooth(G, 33)
    rec = embedding_check(F, TentNormSpec(0.0, 1.0), TentNormSpec(-0.25, 2.0),
                          from_kind="tent", to_kind="zspace")
    assert rec["to"]["kind"] == "zspace"
    assert rec["ratio"] > 0.0

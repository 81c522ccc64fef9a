import io
import math

import pytest
from hypothesis import given, settings, strategies as st

from tentkit.exponents import (
    INF,
    ExponentProfile,
    SpaceParams,
    beta_L,
    holder_conjugate,
    p_L_beta,
    p_flat,
    p_minus_s,
    p_plus_s,
    p_tilde,
    parse_config,
    polyline_to_csv,
    profile_from_config,
    region_boundary_polyline,
    region_membership,
)

# the constant-coefficient reference profile in one dimension:
# p_- = q_- = n/(n+1) = 1/2 and p_+ = q_+ = infinity on both sides
LAPLACE_1D = ExponentProfile(1, 0.5, INF, 0.5, INF)


def random_profile(rng_val, n=1):
    """A valid profile: p_minus in [n/(n+1), 2n/(n+2)), q_plus in (2, inf]."""
    a, b, c, d = rng_val
    lo = n / (n + 1.0)
    hi = 2.0 * n / (n + 2.0)
    pm = lo + (0.01 + 0.98 * a) * (hi - lo)
    pms = lo + (0.01 + 0.98 * b) * (hi - lo)
    # draw q below the cap the opposite p_minus imposes
    cap_qp = 1.0 / (1.0 + 1.0 / n - 1.0 / pms)
    cap_qps = 1.0 / (1.0 + 1.0 / n - 1.0 / pm)
    qp = 2.0 + (0.01 + 0.98 * c) * (cap_qp - 2.0)
    qps = 2.0 + (0.01 + 0.98 * d) * (cap_qps - 2.0)
    return ExponentProfile(n, pm, qp, pms, qps)


def test_holder_conjugate_values():
    assert holder_conjugate(2.0) == 2.0
    assert holder_conjugate(1.0) == INF
    assert holder_conjugate(INF) == 1.0
    # 1/p + 1/p' = 1 at p = 4/3 gives p' = 4
    assert holder_conjugate(4.0 / 3.0) == pytest.approx(4.0, rel=1e-14)


def test_holder_conjugate_rejects_below_one():
    with pytest.raises(ValueError):
        holder_conjugate(0.9)


def test_p_minus_s_laplacian_closed_form():
    """For the 1-d constant-coefficient profile, p_-(s) = n/(n+s+1)."""
    assert p_minus_s(LAPLACE_1D, 0.0) == pytest.approx(0.5, abs=1e-15)
    assert p_minus_s(LAPLACE_1D, 1.0) == pytest.approx(1.0 / 3.0, abs=1e-15)
    assert p_minus_s(LAPLACE_1D, -1.0) == pytest.approx(1.0, abs=1e-15)
    for k in range(201):
        s = -1.0 + k / 100.0
        assert p_minus_s(LAPLACE_1D, s) == pytest.approx(
            1.0 / (2.0 + s), rel=1e-12)


def test_p_minus_s_rejects_out_of_range():
    with pytest.raises(ValueError):
        p_minus_s(LAPLACE_1D, 1.5)
    with pytest.raises(ValueError):
        p_minus_s(LAPLACE_1D, -1.5)


def test_p_plus_s_laplacian_is_infinite():
    for s in (-1.0, -0.5, 0.0, 0.5, 1.0):
        assert p_plus_s(LAPLACE_1D, s) == INF


def test_p_plus_s_endpoint_is_gradient_exponent():
    prof = ExponentProfile(1, 0.52, 7.0, 0.53, 5.0)
    assert p_plus_s(prof, 1.0) == pytest.approx(7.0, rel=1e-14)


def test_beta_L_values():
    assert beta_L(LAPLACE_1D) == pytest.approx(-1.0, abs=1e-15)
    # formula pin on an out-of-range input (check=False skips validation)
    prof = ExponentProfile(1, 1.0, INF, 1.0, INF, check=False)
    assert beta_L(prof) == pytest.approx(-0.5, abs=1e-15)


def test_profile_rejects_too_small_p_minus():
    # below n/(n+1) the Gaussian-regime lower bound is violated
    with pytest.raises(ValueError):
        ExponentProfile(2, 0.5, INF, 0.5, INF)


def test_profile_rejects_uncoupled_endpoints():
    """An unbounded semigroup range cannot pair with a p_minus above the
    Gaussian endpoint; the dual gradient family caps it."""
    with pytest.raises(ValueError):
        ExponentProfile(1, 0.6, INF, 0.6, INF)
    # same numbers with a capped q are fine
    ExponentProfile(1, 0.6, 3.0, 0.6, 3.0)


def test_p_L_beta_values():
    assert p_L_beta(LAPLACE_1D, -0.5) == pytest.approx(0.5, abs=1e-15)
    prof = ExponentProfile(1, 1.0, INF, 1.0, INF, check=False)
    assert p_L_beta(prof, 0.0) == pytest.approx(0.5, abs=1e-15)
    with pytest.raises(ValueError):
        p_L_beta(LAPLACE_1D, -1.0)


def test_p_tilde_laplacian_closed_form():
    """p~ collapses to n/(n+2*beta+2) for the reference profile."""
    # at beta = -3/4 the closed form reads 1/(1 - 3/2 + 2) = 2/3
    assert p_tilde(LAPLACE_1D, -0.75) == pytest.approx(2.0 / 3.0, rel=1e-13)
    for k in range(1, 200):
        beta = -1.0 + k / 100.0
        assert p_tilde(LAPLACE_1D, beta) == pytest.approx(
            1.0 / (3.0 + 2.0 * beta), rel=1e-12)


def test_p_tilde_is_one_at_beta_L():
    for draws in [(0.1, 0.2, 0.3, 0.4), (0.7, 0.1, 0.95, 0.2),
                  (0.0, 0.0, 0.99, 0.99), (0.5, 0.5, 0.5, 0.5)]:
        prof = random_profile(draws)
        assert p_tilde(prof, beta_L(prof)) == pytest.approx(1.0, rel=1e-12)


def test_p_tilde_beta_to_minus_one_limit():
    """As beta drops to -1 the value approaches the dual conjugate."""
    prof = ExponentProfile(1, 0.6, 3.0, 0.5, 3.0)
    target = holder_conjugate(3.0)
    val = p_tilde(prof, -1.0 + 1e-9)
    assert val == pytest.approx(target, rel=1e-6)


def test_p_flat_values():
    assert p_flat(LAPLACE_1D, 0.0) == pytest.approx(0.5, abs=1e-15)
    prof = ExponentProfile(1, 1.5, INF, 1.5, INF, check=False)
    assert p_flat(prof, 0.0) == pytest.approx(0.6, rel=1e-14)
    with pytest.raises(ValueError):
        p_flat(LAPLACE_1D, -0.5)


def test_branch_continuity_at_zero_and_half():
    """Both piecewise formulas agree where their branches meet."""
    profs = [LAPLACE_1D,
             ExponentProfile(1, 0.51, 6.0, 0.52, 9.0),
             ExponentProfile(2, 0.8, 4.0, 0.7, 4.0),
             ExponentProfile(1, 1.2, 9.0, 1.1, 6.0, check=False)]
    for prof in profs:
        eps = 1e-9
        left = p_minus_s(prof, -eps)
        right = p_minus_s(prof, eps)
        assert abs(left - right) <= 1e-7 * right
        bl = beta_L(prof)
        knot = -0.5 if prof.p_minus_L >= 1.0 else bl
        if knot > -1.0 + eps:
            lo = p_tilde(prof, knot - eps)
            hi = p_tilde(prof, knot + eps)
            assert abs(lo - hi) <= 1e-6 * hi


def test_ordering_chain_on_sweep():
    """p~ >= p_L(beta) >= n/(n+2 beta+2) along the whole beta axis."""
    profs = [LAPLACE_1D, ExponentProfile(1, 0.55, 3.0, 0.6, 5.0),
             ExponentProfile(2, 0.95, 2.3, 0.9, 2.2)]
    for prof in profs:
        n = prof.n
        for k in range(1, 400):
            beta = -1.0 + k / 200.0
            lo = n / (n + 2.0 * beta + 2.0)
            mid = p_L_beta(prof, beta)
            hi = p_tilde(prof, beta)
            assert hi >= mid - 1e-12
            assert mid >= lo - 1e-12


@settings(max_examples=40, deadline=None)
@given(st.tuples(*(st.floats(0.0, 1.0) for _ in range(4))),
       st.floats(-1.0, 1.0))
def test_duality_property(draws, s):
    """p_+(s,L) equals the conjugate of max(p_-(-s,L*), 1)."""
    prof = random_profile(draws)
    dual = ExponentProfile(prof.n, prof.p_minus_Lstar, prof.q_plus_Lstar,
                           prof.p_minus_L, prof.q_plus_L)
    direct = p_plus_s(prof, s)
    expected = holder_conjugate(max(p_minus_s(dual, -s), 1.0))
    if direct == INF or expected == INF:
        assert direct == expected
    else:
        assert direct == pytest.approx(expected, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.tuples(*(st.floats(0.0, 1.0) for _ in range(4))))
def test_p_tilde_dominates_p_L(draws):
    prof = random_profile(draws)
    for beta in (-0.9, -0.6, -0.5, -0.3, 0.0, 0.5):
        assert p_tilde(prof, beta) >= p_L_beta(prof, beta) - 1e-12


def test_region_membership_examples():
    dec = region_membership(LAPLACE_1D, SpaceParams(p=1.0, beta=-0.5),
                            "wellposed_hc")
    assert dec.member
    assert bool(dec)
    # positive beta is outside the well-posedness statement entirely
    dec = region_membership(LAPLACE_1D, SpaceParams(p=2.0, beta=0.1),
                            "wellposed_hc")
    assert not dec.member
    assert dec.reason


def test_region_membership_boundary_is_strict_below():
    """p must exceed the critical value strictly; p = infinity is allowed."""
    prof = LAPLACE_1D
    beta = -0.5
    crit = p_tilde(prof, beta)
    assert not region_membership(prof, SpaceParams(p=crit, beta=beta),
                                 "wellposed_hc").member
    assert region_membership(prof, SpaceParams(p=INF, beta=beta),
                             "wellposed_hc").member


def test_source_pair_region():
    a = SpaceParams(p=2.0, beta=-0.5)
    assert region_membership(LAPLACE_1D, a, "source_pair",
                             source_params=a).member
    # gamma below beta violates the ordering condition
    b = SpaceParams(p=2.0, beta=-0.75)
    assert not region_membership(LAPLACE_1D, a, "source_pair",
                                 source_params=b).member


def test_boundary_polyline_laplacian():
    poly = region_boundary_polyline(LAPLACE_1D, "wellposed_hc",
                                    resolution=129)
    assert len(poly) >= 129
    for inv_p, beta in poly:
        assert -1.0 - 1e-12 <= beta <= 0.0 + 1e-12
        assert 0.0 - 1e-12 <= inv_p
    # interior vertices on the sloped edge satisfy 1/p = (n+2b+2)/n
    sloped = [(ip, b) for ip, b in poly if 0.0 < ip < 3.0 and -1.0 < b < 0.0]
    assert sloped
    for inv_p, beta in sloped:
        assert inv_p == pytest.approx(3.0 + 2.0 * beta, abs=1e-9)


def test_boundary_polyline_vertex_at_beta_L():
    """Profiles with p_- < 1 show the corner at (1, beta(L))."""
    prof = ExponentProfile(1, 0.6, 3.0, 0.6, 3.0)
    poly = region_boundary_polyline(prof, "wellposed_hc", resolution=65)
    bl = beta_L(prof)
    assert any(abs(ip - 1.0) < 1e-10 and abs(b - bl) < 1e-10
               for ip, b in poly)


def test_boundary_polyline_resolution_two():
    poly = region_boundary_polyline(LAPLACE_1D, "wellposed_hc", resolution=2)
    assert len(poly) >= 2


def test_polyline_csv_header():
    poly = region_boundary_polyline(LAPLACE_1D, "lions", resolution=5)
    buf = io.StringIO()
    polyline_to_csv(poly, buf)
    lines = buf.getvalue().strip().splitlines()
    assert lines[0] == "inv_p,beta"
    assert len(lines) == len(poly) + 1


def test_config_roundtrip():
    text = """
    # comment line
    dimension = 1
    p_minus_L = 0.5
    q_plus_L = inf
    p_minus_Lstar = 0.5
    q_plus_Lstar = inf
    """
    prof = profile_from_config(parse_config(text))
    assert prof.n == 1
    assert prof.p_minus_L == 0.5
    assert prof.q_plus_L == INF


def test_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        profile_from_config(parse_config("dimension = 1\nbogus = 2\n"))


def test_config_rejects_missing_keys():
    with pytest.raises(ValueError):
        profile_from_config(parse_config("dimension = 1\n"))


def test_space_params_ties_s_to_beta():
    a = SpaceParams(p=2.0, s=0.0)
    assert a.beta == pytest.approx(-0.5)
    b = SpaceParams(p=2.0, beta=0.0)
    assert b.s == pytest.approx(1.0)
    with pytest.raises(ValueError):
        SpaceParams(p=2.0, s=1.0, beta=1.0)

"""Critical-exponent arithmetic for divergence-form parabolic generators.

Everything here is exact scalar arithmetic on a handful of critical numbers
attached to a generator: the lower/upper exponents of its semigroup and
gradient-semigroup families, for the operator and its adjoint.  No grids are
involved.  Infinity is ``math.inf`` and every formula branches on it
explicitly, so ``1/inf == 0`` is exact rather than approximate.

Conventions: ``s`` is a smoothness order, ``beta`` a time weight, and the two
are always tied by ``s = 2*beta + 1``.
"""

import csv
import math
from dataclasses import dataclass, field

INF = math.inf

__all__ = [
    "INF",
    "ExponentProfile",
    "SpaceParams",
    "RegionDecision",
    "holder_conjugate",
    "p_minus_s",
    "p_plus_s",
    "beta_L",
    "p_L_beta",
    "p_tilde",
    "p_flat",
    "region_membership",
    "region_boundary_polyline",
    "polyline_to_csv",
    "profile_from_config",
    "parse_config",
]

REGIONS = ("wellposed_hc", "identification", "lions", "source_pair")
VARIANTS = ("hardy_sobolev", "besov", "tent", "zspace")


def _inv(p):
    """1/p with the convention 1/inf = 0.  Assumes p > 0."""
    if p == INF:
        return 0.0
    return 1.0 / p


def holder_conjugate(p):
    """Holder conjugate p' with 1/p + 1/p' = 1; maps 1 -> inf, inf -> 1."""
    if p < 1.0:
        raise ValueError("holder_conjugate needs p >= 1, got %r" % (p,))
    if p == 1.0:
        return INF
    if p == INF:
        return 1.0
    return p / (p - 1.0)


@dataclass(frozen=True)
class ExponentProfile:
    """The four critical numbers of a generator/adjoint pair in dimension n.

    p_minus_* is the lower exponent of the gradient-semigroup family and
    q_plus_* the upper exponent of the plain semigroup family.  Admissible
    profiles satisfy n/(n+1) <= p_minus < 2n/(n+2) and 2 < q_plus <= inf
    (for n = 1 and n = 2 the upper bound 2n/(n+2) is 2/3 and 1).

    Cross-operator coupling: 1/p_minus_L + 1/q_plus_Lstar >= 1 + 1/n, and
    the same with the roles of L and its adjoint swapped.  A gradient bound
    at exponent q composes with the Sobolev embedding W^{1,q} -> L^{q#} to
    push the adjoint semigroup range up, and by duality that caps how far
    p_minus can sit above the Gaussian endpoint n/(n+1); equality holds for
    constant coefficients.  Without this coupling the monotone ordering of
    the derived exponent curves breaks below beta(L).

    ``check=False`` skips validation; it exists only so tests can pin the raw
    formula arithmetic on out-of-range inputs.
    """

    n: int
    p_minus_L: float
    q_plus_L: float
    p_minus_Lstar: float
    q_plus_Lstar: float
    check: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("dimension n must be 1 or 2, got %r" % (self.n,))
        if not self.check:
            return
        lo = self.n / (self.n + 1.0)
        hi = 2.0 * self.n / (self.n + 2.0)
        for name in ("p_minus_L", "p_minus_Lstar"):
            p = getattr(self, name)
            if not (lo <= p < hi):
                raise ValueError(
                    "%s = %r outside [n/(n+1), 2n/(n+2)) = [%g, %g)"
                    % (name, p, lo, hi)
                )
        for name in ("q_plus_L", "q_plus_Lstar"):
            q = getattr(self, name)
            if not (q > 2.0):
                raise ValueError("%s = %r must exceed 2" % (name, q))
        floor = 1.0 + 1.0 / self.n - 1e-9
        for pname, qname in (("p_minus_L", "q_plus_Lstar"),
                             ("p_minus_Lstar", "q_plus_L")):
            p, q = getattr(self, pname), getattr(self, qname)
            if 1.0 / p + (0.0 if q == INF else 1.0 / q) < floor:
                raise ValueError(
                    "uncoupled endpoints: need 1/%s + 1/%s >= 1 + 1/n "
                    "(a semigroup range this wide forces the dual gradient "
                    "endpoint down to %g)"
                    % (pname, qname,
                       1.0 / (1.0 + 1.0 / self.n
                              - (0.0 if q == INF else 1.0 / q)))
                )

    @classmethod
    def laplacian(cls, n):
        """Profile of the (negative) Laplacian: p_minus = n/(n+1), q_plus = inf."""
        pm = n / (n + 1.0)
        return cls(n, pm, INF, pm, INF)

    def dual(self):
        """Profile of the adjoint generator (swap the starred/unstarred rows)."""
        return ExponentProfile(
            self.n, self.p_minus_Lstar, self.q_plus_Lstar,
            self.p_minus_L, self.q_plus_L,
        )


@dataclass(frozen=True)
class SpaceParams:
    """A point (s, p) resp. (beta, p) in the smoothness/integrability plane.

    s and beta are tied by s = 2*beta + 1 and must agree at construction if
    both are given; giving one fills in the other.  ``variant`` picks the
    scale the point refers to.
    """

    p: float
    s: float = None
    beta: float = None
    variant: str = "tent"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError("unknown variant %r (expected one of %s)"
                             % (self.variant, ", ".join(VARIANTS)))
        if self.s is None and self.beta is None:
            raise ValueError("need at least one of s, beta")
        if self.s is None:
            object.__setattr__(self, "s", 2.0 * self.beta + 1.0)
        elif self.beta is None:
            object.__setattr__(self, "beta", (self.s - 1.0) / 2.0)
        elif abs(self.s - (2.0 * self.beta + 1.0)) > 1e-12:
            raise ValueError("inconsistent pair: s = %r but 2*beta + 1 = %r"
                             % (self.s, 2.0 * self.beta + 1.0))
        if not (0.0 < self.p):
            raise ValueError("p must be positive, got %r" % (self.p,))


def p_minus_s(profile, s):
    """Lower critical exponent with smoothness s, for -1 <= s <= 1.

    For s >= 0 this is the downward Sobolev shift of p_minus(L); for s < 0 it
    interpolates between p_minus(L) and the conjugate of q_plus(L*).
    """
    if not (-1.0 <= s <= 1.0):
        raise ValueError("p_minus_s needs -1 <= s <= 1, got s = %r" % (s,))
    if s >= 0.0:
        inv = _inv(profile.p_minus_L) + s / profile.n
    else:
        q_dual = holder_conjugate(profile.q_plus_Lstar)
        inv = (1.0 + s) * _inv(profile.p_minus_L) - s * _inv(q_dual)
    return 1.0 / inv


def p_plus_s(profile, s):
    """Upper critical exponent with smoothness s, by duality: max(p_minus(-s, L*), 1)'."""
    if not (-1.0 <= s <= 1.0):
        raise ValueError("p_plus_s needs -1 <= s <= 1, got s = %r" % (s,))
    return holder_conjugate(max(p_minus_s(profile.dual(), -s), 1.0))


def beta_L(profile):
    """Knee weight -1/2 - (n/2)(1/p_minus(L) - 1); always >= -1 on admissible profiles."""
    return -0.5 - 0.5 * profile.n * (_inv(profile.p_minus_L) - 1.0)


def p_L_beta(profile, beta):
    """The scaling exponent n p_minus / (n + (2 beta + 1) p_minus), beta > -1."""
    if not (beta > -1.0):
        raise ValueError("p_L_beta needs beta > -1, got %r" % (beta,))
    pm = profile.p_minus_L
    return profile.n * pm / (profile.n + (2.0 * beta + 1.0) * pm)


def p_tilde(profile, beta):
    """Sharp lower endpoint of the well-posedness p-interval at weight beta > -1.

    Piecewise in beta with the knee at -1/2 when p_minus(L) >= 1 and at
    beta_L(profile) otherwise.  Continuous across the knee, and equal to
    the conjugate of q_plus(L*) in the limit beta -> -1.
    """
    if not (beta > -1.0):
        raise ValueError("p_tilde needs beta > -1, got %r" % (beta,))
    pm = profile.p_minus_L
    if pm >= 1.0:
        if beta >= -0.5:
            return p_L_beta(profile, beta)
        return p_minus_s(profile, 2.0 * beta + 1.0)
    knee = beta_L(profile)
    if beta >= knee:
        return p_L_beta(profile, beta)
    q = profile.q_plus_Lstar
    if q == INF:
        return 1.0
    x = (knee + 1.0) * q
    return x / (x + beta - knee)


def p_flat(profile, gamma):
    """Forcing-exponent threshold n*m/(n + (2 gamma + 1) m), m = max(p_minus, 1)."""
    if not (gamma > -0.5):
        raise ValueError("p_flat needs gamma > -1/2, got %r" % (gamma,))
    m = max(profile.p_minus_L, 1.0)
    return profile.n * m / (profile.n + (2.0 * gamma + 1.0) * m)


@dataclass(frozen=True)
class RegionDecision:
    """Outcome of a region-membership query: verdict plus its paper trail."""

    member: bool
    region: str
    reason: str
    clauses: dict

    def __bool__(self):
        return self.member


def _scaling_line(beta, p, n):
    """The scale-invariant quantity 2*beta - n/p (with 1/inf = 0)."""
    return 2.0 * beta - n * _inv(p)


def region_membership(profile, params, region, source_params=None):
    """Decide whether (beta, p) [and (gamma, q)] lies in a named parameter region.

    ``region`` is one of wellposed_hc, identification, lions, source_pair.
    source_pair compares ``params`` (the gradient pair) against
    ``source_params`` (the forcing pair): it requires gamma >= beta and both
    pairs on the same scaling line, to 1e-12.  Out-of-domain inputs yield a
    non-member decision with a reason, never an exception.
    """
    if region not in REGIONS:
        raise ValueError("unknown region %r (expected one of %s)"
                         % (region, ", ".join(REGIONS)))
    beta, p = params.beta, params.p

    if region == "wellposed_hc":
        in_beta = -1.0 < beta < 0.0
        clauses = {"beta_in_(-1,0)": in_beta}
        if not in_beta:
            return RegionDecision(False, region, "beta outside (-1, 0)", clauses)
        thr = p_tilde(profile, beta)
        clauses["p_tilde"] = thr
        clauses["p_above_p_tilde"] = p > thr
        ok = clauses["p_above_p_tilde"]
        reason = ("p > p_tilde(beta); gradient tent norm at weight beta+1/2 "
                  "equivalent to the homogeneous data norm" if ok
                  else "p <= p_tilde(beta)")
        return RegionDecision(ok, region, reason, clauses)

    if region == "lions":
        in_beta = beta > -1.0
        clauses = {"beta_above_-1": in_beta}
        if not in_beta:
            return RegionDecision(False, region, "beta <= -1", clauses)
        thr = p_tilde(profile, beta)
        clauses["p_tilde"] = thr
        clauses["p_above_p_tilde"] = p > thr
        ok = clauses["p_above_p_tilde"]
        reason = ("p > p_tilde(beta); integral-solution well-posedness holds"
                  if ok else "p <= p_tilde(beta)")
        return RegionDecision(ok, region, reason, clauses)

    if region == "identification":
        s = 2.0 * beta + 1.0
        clauses = {"s": s, "s_in_[-1,1]": -1.0 <= s <= 1.0}
        if not clauses["s_in_[-1,1]"]:
            return RegionDecision(False, region,
                                  "s = 2 beta + 1 outside [-1, 1]", clauses)
        lo = p_minus_s(profile, s)
        hi = p_plus_s(profile, s)
        clauses["p_minus_s"] = lo
        clauses["p_plus_s"] = hi
        ok = lo < p < hi
        reason = ("p strictly between the critical pair at smoothness s"
                  if ok else "p outside (p_minus(s), p_plus(s))")
        return RegionDecision(ok, region, reason, clauses)

    # source_pair
    if source_params is None:
        raise ValueError("source_pair needs a second (gamma, q) parameter point")
    gamma, q = source_params.beta, source_params.p
    lhs = _scaling_line(beta, p, profile.n)
    rhs = _scaling_line(gamma, q, profile.n)
    # doubles are binary rationals, so the scaling lines can be compared
    # exactly through Fraction; fall back to a 1e-12 float tolerance.
    from fractions import Fraction

    def _line_exact(b, pp):
        inv = Fraction(0) if pp == INF else 1 / Fraction(pp)
        return 2 * Fraction(b) - profile.n * inv

    same = _line_exact(beta, p) == _line_exact(gamma, q) or abs(lhs - rhs) <= 1e-12
    clauses = {
        "gamma_ge_beta": gamma >= beta,
        "scaling_line_lhs": lhs,
        "scaling_line_rhs": rhs,
        "same_scaling_line": same,
    }
    # Companion hypotheses of the inhomogeneous theorem, reported but not
    # part of the membership verdict (the compatibility condition is the
    # membership; the theorem adds its own domain restrictions).
    theorem = {"beta_above_-1": beta > -1.0, "gamma_above_-1/2": gamma > -0.5}
    if theorem["beta_above_-1"]:
        theorem["p_above_p_tilde"] = p > p_tilde(profile, beta)
    if theorem["gamma_above_-1/2"]:
        theorem["q_above_p_flat"] = q > p_flat(profile, gamma)
    clauses["theorem_domain"] = theorem
    ok = clauses["gamma_ge_beta"] and clauses["same_scaling_line"]
    reason = ("gamma >= beta and 2 beta - n/p = 2 gamma - n/q" if ok else
              "compatibility fails: needs gamma >= beta and matching scaling lines")
    return RegionDecision(ok, region, reason, clauses)


def _p_tilde_curve_betas(profile, lo, hi, resolution):
    """Sample points in [lo, hi] including the exact knee of p_tilde."""
    betas = [lo + (hi - lo) * i / (resolution - 1.0) for i in range(resolution)]
    knee = -0.5 if profile.p_minus_L >= 1.0 else beta_L(profile)
    if lo < knee < hi and not any(abs(b - knee) < 1e-15 for b in betas):
        betas.append(knee)
        betas.sort()
    return betas


def region_boundary_polyline(profile, region, resolution=65):
    """Closed boundary polyline of a plottable region in the (1/p, beta) plane.

    Returns a list of (inv_p, beta) vertices tracing the region boundary;
    p = inf is the line inv_p = 0, so every polyline is finite.  Knee points
    of p_tilde (beta = -1/2, resp. beta = beta_L) appear as exact vertices.
    Only wellposed_hc, identification and lions have a two-parameter plot;
    source_pair does not and is rejected.
    """
    if region not in REGIONS:
        raise ValueError("unknown region %r" % (region,))
    if region == "source_pair":
        raise ValueError("source_pair is a four-parameter condition; "
                         "it has no (1/p, beta) boundary to plot")
    if resolution < 2:
        raise ValueError("resolution must be at least 2")

    if region == "identification":
        # band p_minus(s) < p < p_plus(s) for s = 2 beta + 1 in [-1, 1]
        betas = [-1.0 + i / (resolution - 1.0) for i in range(resolution)]
        upper = [(_inv(p_minus_s(profile, 2 * b + 1)), b) for b in betas]
        lower = [(_inv(p_plus_s(profile, 2 * b + 1)), b) for b in betas]
        return upper + lower[::-1] + upper[:1]

    if region == "wellposed_hc":
        b_lo, b_hi = -1.0, 0.0
    else:  # lions; beta unbounded above, clamp the plot at beta = 1
        b_lo, b_hi = -1.0, 1.0
    betas = _p_tilde_curve_betas(profile, b_lo, b_hi, resolution)
    curve = []
    for b in betas:
        if b == -1.0:
            # continuous limit of p_tilde at the bottom edge
            thr = holder_conjugate(profile.q_plus_Lstar)
        else:
            thr = p_tilde(profile, b)
        curve.append((_inv(thr), b))
    # region is 0 <= 1/p < 1/p_tilde(beta): close along the top edge,
    # down the p = inf axis, and back to the start.
    top = [(0.0, b_hi)]
    bottom = [(0.0, b_lo)]
    return curve + top + bottom + curve[:1]


def polyline_to_csv(polyline, stream):
    """Write an (inv_p, beta) polyline as CSV with header inv_p,beta."""
    writer = csv.writer(stream)
    writer.writerow(["inv_p", "beta"])
    for inv_p, beta in polyline:
        writer.writerow([repr(float(inv_p)), repr(float(beta))])


PROFILE_CONFIG_KEYS = ("dimension", "p_minus_L", "q_plus_L",
                       "p_minus_Lstar", "q_plus_Lstar")


def parse_config(text):
    """Parse ``key = value`` lines ('#' comments, blank lines ok) into a dict."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError("config line %d: expected key = value, got %r"
                             % (lineno, raw))
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _parse_extended_float(text):
    t = text.strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return INF
    return float(text)


def profile_from_config(mapping):
    """Build an ExponentProfile from a parsed config mapping.

    Accepts exactly the keys dimension, p_minus_L, q_plus_L, p_minus_Lstar,
    q_plus_Lstar; the value "inf" is accepted for the q entries.
    """
    unknown = sorted(set(mapping) - set(PROFILE_CONFIG_KEYS))
    if unknown:
        raise ValueError("unknown profile config keys: %s" % ", ".join(unknown))
    missing = sorted(set(PROFILE_CONFIG_KEYS) - set(mapping))
    if missing:
        raise ValueError("missing profile config keys: %s" % ", ".join(missing))
    return ExponentProfile(
        n=int(mapping["dimension"]),
        p_minus_L=_parse_extended_float(mapping["p_minus_L"]),
        q_plus_L=_parse_extended_float(mapping["q_plus_L"]),
        p_minus_Lstar=_parse_extended_float(mapping["p_minus_Lstar"]),
        q_plus_Lstar=_parse_extended_float(mapping["q_plus_Lstar"]),
    )

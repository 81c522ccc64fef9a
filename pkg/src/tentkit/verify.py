"""Experiment orchestration: equivalence bands, decay profiles, embedding
sweeps, and deterministic report emission.

An ExperimentSpec pins everything an experiment consumes -- grid, coefficient
preset, exponent points, test-function family, seed, budgets -- and rerunning
the same spec yields byte-identical JSON (canonical serialization, no
timestamps, no absolute paths; the spec hash is embedded).  Every report also
embeds a grid-sensitivity record for its headline number: the experiment is
rerun with t_min halved, with t_max doubled, and with points doubled, and the
drift is reported.  The points-doubled run doubles as the resolution-stability
leg of the pass verdict: a ratio band only counts as an equivalence when
max/min <= budget_band AND the band endpoints move by less than
budget_stability under refinement.

Report schema (tentkit-report-v1, JSON):
    schema, kind, spec, spec_hash, band [lo, hi] or null, ratios,
    stability_factor, budgets, passed (true/false/null), labels,
    sensitivity {headline, variants{...}}, extras (runner-specific tables,
    per-point bands, fitted exponents).

Test families draw in physical coordinates (positions, widths, explicit
Fourier modes), never in grid indices, so the same seed denotes the same
function at every resolution -- without that the sensitivity legs would
measure sampling noise instead of discretization drift.
"""

import concurrent.futures
import csv
import hashlib
import io
import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import cauchy
from .exponents import ExponentProfile, SpaceParams, region_membership
from .funcspaces import (TentNormSpec, embedding_check, make_atom, tent_norm,
                         weighted_l2_sq, z_norm)
from .grid import (GridSpec, SpaceTimeField, SpatialField, ball_cells,
                   forward_gradient)
from .operator import assemble, preset_coefficients
from .spectral import (LPFamily, besov_norm, gradient_heat_extension,
                       hardy_sobolev_norm, heat_extension)

FAMILIES = ("band_limited", "gaussian", "atoms", "spikes")

# ratios with a denominator below this are dropped from band statistics
# (0/0 guard; families are unit-normalized so the scale is absolute)
_ZERO_GUARD = 1e-8


@dataclass(frozen=True)
class ExperimentSpec:
    """Everything an experiment run consumes, hashable and serializable.

    preset_params and options are tuples of (key, value) pairs so the spec
    stays frozen; space_params is a tuple of SpaceParams.  out is a label
    for the artifact file (never consulted during the run itself).
    """

    name: str
    grid: GridSpec
    preset: str = "identity"
    preset_params: tuple = ()
    space_params: tuple = ()
    family: str = "band_limited"
    count: int = 20
    seed: int = 0
    budget_band: float = 16.0
    budget_stability: float = 1.5
    options: tuple = ()
    out: str = ""

    def __post_init__(self):
        if not self.name:
            raise ValueError("spec needs a name")
        if self.family not in FAMILIES:
            raise ValueError("unknown family %r (have: %s)"
                             % (self.family, ", ".join(FAMILIES)))
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not (self.budget_band > 1.0):
            raise ValueError("budget_band must exceed 1")
        if not (self.budget_stability >= 1.0):
            raise ValueError("budget_stability must be >= 1")

    def opt(self, key, default=None):
        return dict(self.options).get(key, default)


@dataclass(frozen=True)
class EquivalenceReport:
    """Outcome of one equivalence experiment.

    pass is true exactly when the band satisfies max/min <= budget_band and
    the refinement stability factor stays within budget_stability; None when
    the spec was entirely outside the theory range (labeled, not crashed).
    """

    spec: ExperimentSpec
    kind: str
    ratios: tuple
    band: tuple
    stability_factor: float
    passed: object
    labels: tuple = ()
    sensitivity: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        spec_dict = spec_to_dict(self.spec)
        return {
            "schema": "tentkit-report-v1",
            "kind": self.kind,
            "spec": spec_dict,
            "spec_hash": _sha(canonical_json(spec_dict)),
            "ratios": list(self.ratios),
            "band": list(self.band) if self.band else None,
            "stability_factor": self.stability_factor,
            "budgets": {"band": self.spec.budget_band,
                        "stability": self.spec.budget_stability},
            "passed": self.passed,
            "labels": list(self.labels),
            "sensitivity": self.sensitivity,
            "extras": self.extras,
        }

    def to_json(self):
        return canonical_json(self.to_dict())


# ---------------------------------------------------------------------------
# serialization plumbing

def _grid_dict(g):
    return {"n": g.n, "period": g.period, "points_per_axis": g.points_per_axis,
            "t_min": g.t_min, "t_max": g.t_max, "time_levels": g.time_levels}


def spec_to_dict(spec):
    return {
        "name": spec.name,
        "grid": _grid_dict(spec.grid),
        "preset": spec.preset,
        "preset_params": dict(spec.preset_params),
        "space_params": [{"p": q.p, "s": q.s, "beta": q.beta,
                          "variant": q.variant} for q in spec.space_params],
        "family": spec.family,
        "count": spec.count,
        "seed": spec.seed,
        "budgets": {"band": spec.budget_band,
                    "stability": spec.budget_stability},
        "options": dict(spec.options),
        "out": spec.out,
    }


def _plain_scalar(obj):
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    raise TypeError("not JSON serializable: %r" % type(obj))


def canonical_json(obj):
    """Deterministic JSON text: sorted keys, fixed separators, newline end."""
    return json.dumps(obj, sort_keys=True, indent=1, default=_plain_scalar) \
        + "\n"


def _sha(text):
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def write_report(report, path):
    """Write the canonical JSON of a report (dict or EquivalenceReport)."""
    payload = report.to_dict() if hasattr(report, "to_dict") else report
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(canonical_json(payload))
    return path


def table_to_csv(columns, stream=None):
    """CSV text from a dict of equal-length columns (keys become headers,
    emitted in sorted order for determinism)."""
    keys = sorted(columns)
    rows = zip(*[columns[k] for k in keys])
    out = stream or io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(keys)
    for row in rows:
        w.writerow(row)
    return out if stream else out.getvalue()


def thread_budget():
    """Worker cap: TENTKIT_THREADS if set (>= 1), else the CPU count."""
    raw = os.environ.get("TENTKIT_THREADS", "").strip()
    if raw:
        try:
            v = int(raw)
        except ValueError:
            raise ValueError("TENTKIT_THREADS must be an integer, got %r"
                             % raw)
        return max(1, v)
    return max(1, os.cpu_count() or 1)


def run_experiments(jobs, workers=None):
    """Run (runner, spec) pairs on a thread pool; results in job order.

    Each job is independent and internally deterministic, so the pool size
    changes wall time, never results.
    """
    jobs = list(jobs)
    if not jobs:
        return []
    if workers is None:
        workers = min(thread_budget(), len(jobs))
    with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(runner, spec) for runner, spec in jobs]
        return [f.result() for f in futures]


# ---------------------------------------------------------------------------
# test-function families (all draws in physical coordinates)

def _normalized(grid, v):
    v = v - v.mean(axis=0, keepdims=True)
    scale = math.sqrt(float((np.abs(v) ** 2).mean()))
    if scale > 0:
        v = v / scale
    return SpatialField(grid, v.astype(np.complex128))


def _mode_list(grid, kmin, kmax):
    """Integer-frequency modes with kmin <= |xi| <= kmax, in a fixed
    resolution-independent order."""
    jmax = int(math.floor(kmax * grid.period / (2.0 * math.pi))) + 1
    modes = []
    if grid.n == 1:
        ranges = [(j,) for j in range(-jmax, jmax + 1)]
    else:
        ranges = [(i, j) for i in range(-jmax, jmax + 1)
                  for j in range(-jmax, jmax + 1)]
    for jvec in sorted(ranges):
        xi = 2.0 * math.pi * np.array(jvec) / grid.period
        a = math.sqrt(float((xi ** 2).sum()))
        if kmin <= a <= kmax:
            modes.append(xi)
    return modes


def spatial_family(grid, family, count, seed, options=None):
    """Deterministic scalar test fields, mean-zero and unit-RMS."""
    opts = dict(options or {})
    rng = np.random.default_rng(seed)
    x = grid.centers()
    out = []
    if family == "band_limited":
        modes = _mode_list(grid, float(opts.get("kmin", 0.5)),
                           float(opts.get("kmax", 3.0)))
        if not modes:
            raise ValueError("no modes in the requested band")
        for _ in range(count):
            coef = rng.standard_normal(len(modes)) \
                + 1j * rng.standard_normal(len(modes))
            v = np.zeros((grid.ncells, 1), dtype=np.complex128)
            for c, xi in zip(coef, modes):
                v[:, 0] += (c * np.exp(1j * (x @ xi))).real
            out.append(_normalized(grid, v))
        return out
    for _ in range(count):
        if family == "gaussian":
            v = np.zeros((grid.ncells, 1))
            for _ in range(int(opts.get("bumps", 3))):
                c = rng.uniform(0.0, grid.period, size=grid.n)
                w = rng.uniform(grid.period / 16.0, grid.period / 4.0)
                amp = rng.standard_normal()
                d2 = (grid.wrap_dist(x - c) ** 2).sum(axis=1)
                v[:, 0] += amp * np.exp(-d2 / (2.0 * w * w))
        elif family == "atoms":
            c = rng.uniform(0.0, grid.period, size=grid.n)
            # fixed physical radius range so the draw is grid-independent
            r = math.exp(rng.uniform(math.log(grid.period / 64.0),
                                     math.log(grid.period / 6.0)))
            d2 = (grid.wrap_dist(x - c) ** 2).sum(axis=1)
            v = (d2 < r * r).astype(float)[:, None]
        elif family == "spikes":
            v = np.zeros((grid.ncells, 1))
            for _ in range(int(opts.get("spikes", 4))):
                c = rng.uniform(0.0, grid.period, size=grid.n)
                d2 = (grid.wrap_dist(x - c) ** 2).sum(axis=1)
                v[int(np.argmin(d2)), 0] += rng.choice((-1.0, 1.0)) \
                    * grid.h ** (-grid.n / 2.0)
        else:
            raise ValueError("unknown family %r" % family)
        out.append(_normalized(grid, v))
    return out


def vector_family(grid, family, count, seed, options=None):
    """Mean-zero vector fields: one scalar draw per component."""
    parts = spatial_family(grid, family, count * grid.n, seed, options)
    out = []
    for i in range(count):
        comps = [parts[i * grid.n + a].values[:, 0] for a in range(grid.n)]
        out.append(SpatialField(grid, np.stack(comps, axis=1)))
    return out


def spacetime_family(grid, family, count, seed, options=None):
    """Space-time test fields for tent/Z-space experiments.

    The non-atom families are sums of two separable terms g_i(x) e^{-t/tau_i}
    with physical draws; "atoms" produces genuine tent-space atoms at
    log-uniform radii (octave coverage for the scale-invariance checks).
    """
    opts = dict(options or {})
    rng = np.random.default_rng(seed)
    t = grid.times()
    if family == "atoms":
        beta = float(opts.get("beta", 0.0))
        p = float(opts.get("p", 1.0))
        r_lo = math.sqrt(grid.t_min) * 1.01
        r_hi = min(grid.period / 4.0, math.sqrt(grid.rho * grid.t_max))
        out = []
        x = grid.centers()
        for i in range(count):
            c = rng.uniform(0.0, grid.period, size=grid.n)
            r = math.exp(rng.uniform(math.log(r_lo), math.log(r_hi)))
            d2 = (grid.wrap_dist(x - c) ** 2).sum(axis=1)
            center_cell = int(np.argmin(d2))
            atom = make_atom(grid, center_cell, r, beta, p, shape="random",
                             seed=seed * 1009 + i)
            out.append(atom.field)
        return out
    scalars = spatial_family(grid, family, 2 * count, seed, options)
    out = []
    for i in range(count):
        tau = np.exp(rng.uniform(math.log(4.0 * grid.t_min),
                                 math.log(grid.t_max), size=2))
        vals = (scalars[2 * i].values[None, :, :]
                * np.exp(-t / tau[0])[:, None, None]
                + scalars[2 * i + 1].values[None, :, :]
                * np.exp(-t / tau[1])[:, None, None])
        out.append(SpaceTimeField(grid, vals))
    return out


# ---------------------------------------------------------------------------
# sensitivity scaffolding

def _levels_for(grid, t_min, t_max):
    octaves = math.log2(grid.t_max / grid.t_min)
    per_octave = (grid.time_levels - 1) / octaves
    return int(round(per_octave * math.log2(t_max / t_min))) + 1


def variant_grids(g):
    """The three sensitivity grids: t_min halved (points doubled too when
    the resolution floor h^2 <= t_min would break), t_max doubled, points
    doubled.  Ladder density rho is preserved."""
    out = {}
    tm = g.t_min / 2.0
    pts = g.points_per_axis
    if (g.period / pts) ** 2 > tm * (1.0 + 1e-12):
        pts *= 2
    out["t_min_half"] = GridSpec(g.n, g.period, pts, tm, g.t_max,
                                 _levels_for(g, tm, g.t_max))
    out["t_max_double"] = GridSpec(g.n, g.period, g.points_per_axis, g.t_min,
                                   2.0 * g.t_max,
                                   _levels_for(g, g.t_min, 2.0 * g.t_max))
    out["points_double"] = GridSpec(g.n, g.period, 2 * g.points_per_axis,
                                    g.t_min, g.t_max, g.time_levels)
    return out


def _band(ratios):
    vals = [r for r in ratios if r is not None]
    if not vals:
        return None
    return (min(vals), max(vals))


def _endpoint_factor(a, b):
    """Largest relative movement between two bands (or two scalars)."""
    if a is None or b is None:
        return math.inf
    pairs = zip(a, b) if isinstance(a, (tuple, list)) else [(a, b)]
    worst = 1.0
    for x, y in pairs:
        if x <= 0 or y <= 0:
            return math.inf
        worst = max(worst, x / y, y / x)
    return worst


def _assemble_report(spec, kind, once):
    """Run `once(spec, grid)` on the spec grid and the sensitivity grids,
    then fold everything into an EquivalenceReport.

    `once` returns a dict with keys: ratios (list), headline (float),
    labels (list), extras (dict); band/stability/pass handling is shared.
    """
    base = once(spec, spec.grid)
    band = _band(base["ratios"])
    sens = {"headline": base["headline"], "variants": {}}
    stability = math.inf
    for name, g2 in sorted(variant_grids(spec.grid).items()):
        alt = once(spec, g2)
        entry = {"headline": alt["headline"], "grid": _grid_dict(g2)}
        alt_band = _band(alt["ratios"])
        if alt_band:
            entry["band"] = list(alt_band)
        sens["variants"][name] = entry
        if name == "points_double":
            stability = _endpoint_factor(band if band else base["headline"],
                                         alt_band if band else
                                         alt["headline"])
    if band is None:
        passed = None
    else:
        passed = bool(band[1] / band[0] <= spec.budget_band
                      and stability <= spec.budget_stability)
    return EquivalenceReport(
        spec=spec, kind=kind, ratios=tuple(base["ratios"]),
        band=band if band else (), stability_factor=stability,
        passed=passed, labels=tuple(base["labels"]),
        sensitivity=sens, extras=base["extras"])


def _hs(params):
    return SpaceParams(p=params.p, s=params.s, variant="hardy_sobolev")


# ---------------------------------------------------------------------------
# heat characterization (constant coefficients)

def run_heat_characterization(spec):
    """Band of || heat extension of f ||_{T^p_{(s+1)/2}} / ||f||_{H^{s,p}}
    over the family, plus the gradient variant at weight s/2.

    The extension variant needs s < 0 and the gradient variant s < 1;
    out-of-range variants are labeled and skipped, never crash.
    """
    return _assemble_report(spec, "heat_characterization", _heat_once)


def _heat_once(spec, grid):
    fields = spatial_family(grid, spec.family, spec.count, spec.seed,
                            dict(spec.options))
    fam = LPFamily(grid)
    ratios, labels = [], []
    per_point = {}
    for params in spec.space_params:
        key = "s=%g,p=%g" % (params.s, params.p)
        ext_ok, grad_ok = params.s < 0.0, params.s < 1.0
        if not ext_ok:
            labels.append("extension:%s:out_of_theory" % key)
        if not grad_ok:
            labels.append("gradient:%s:out_of_theory" % key)
        point_ratios = []
        for f in fields:
            rhs = hardy_sobolev_norm(f, _hs(params), fam=fam)
            if rhs < _ZERO_GUARD:
                continue
            if ext_ok:
                lhs = tent_norm(heat_extension(f),
                                TentNormSpec((params.s + 1.0) / 2.0, params.p))
                point_ratios.append(lhs / rhs)
            if grad_ok:
                lhs = tent_norm(gradient_heat_extension(f),
                                TentNormSpec(params.s / 2.0, params.p))
                point_ratios.append(lhs / rhs)
        ratios.extend(point_ratios)
        pb = _band(point_ratios)
        per_point[key] = list(pb) if pb else None
    band = _band(ratios)
    return {"ratios": ratios,
            "headline": (band[1] / band[0]) if band else math.inf,
            "labels": labels,
            "extras": {"per_point_bands": per_point}}


# ---------------------------------------------------------------------------
# rough-coefficient parabolic equivalence

def run_parabolic_equivalence(spec):
    """Band of ||grad of the semigroup orbit||_{T^p_{beta+1/2}} against
    ||u0||_{H^{2 beta + 1, p}} for the preset generator; for
    -1 < beta < -1/2 the solution band in T^p_{beta+1} is reported too.

    Membership of (beta, p) in the homogeneous well-posedness region is
    evaluated for the profile named in options (default: the Laplacian
    profile) and recorded as a label -- out-of-region points are computed
    and labeled, not rejected.
    """
    return _assemble_report(spec, "parabolic_equivalence", _parabolic_once)


def _laplace_profile(n):
    return ExponentProfile(n, n / (n + 1.0), math.inf, n / (n + 1.0),
                           math.inf)


def _parabolic_once(spec, grid):
    coeff = preset_coefficients(grid, spec.preset, **dict(spec.preset_params))
    gen = assemble(coeff)
    fields = spatial_family(grid, spec.family, spec.count, spec.seed,
                            dict(spec.options))
    orbits, _, _ = cauchy.walk_bank(gen, u0_fields=fields)
    fam = LPFamily(grid)
    profile = _laplace_profile(grid.n)
    ratios, labels = [], []
    solution_bands = {}
    for params in spec.space_params:
        key = "beta=%g,p=%g" % (params.beta, params.p)
        decision = region_membership(profile, params, "wellposed_hc")
        if not decision.member:
            labels.append("%s:outside_wellposed_region" % key)
        point_ratios, sol_ratios = [], []
        for f, orbit in zip(fields, orbits):
            rhs = hardy_sobolev_norm(f, _hs(params), fam=fam)
            if rhs < _ZERO_GUARD:
                continue
            lhs = tent_norm(cauchy.field_gradient(orbit),
                            TentNormSpec(params.beta + 0.5, params.p))
            point_ratios.append(lhs / rhs)
            if -1.0 < params.beta < -0.5:
                sol = tent_norm(orbit, TentNormSpec(params.beta + 1.0,
                                                    params.p))
                sol_ratios.append(sol / rhs)
        ratios.extend(point_ratios)
        if sol_ratios:
            sb = _band(sol_ratios)
            solution_bands[key] = list(sb) if sb else None
    band = _band(ratios)
    return {"ratios": ratios,
            "headline": (band[1] / band[0]) if band else math.inf,
            "labels": labels,
            "extras": {"solution_tent_bands": solution_bands}}


# ---------------------------------------------------------------------------
# molecular decay profiles

def run_molecular_decay(spec):
    """Decay table of the Duhamel image of a tent atom across the three
    space-time regions around the atom's ball.

    For u the Duhamel integral of an atom on ball B with radius r, the
    profile at scale j is ||u||_{L^2_{beta+1}(region)} * |2^{j+1}B|^{1/p-1/2}
    with regions: (1) early times (0, (8r)^2] on the annulus
    2^{j+1}B minus 2^j B, (2) middle times up to (2^j r)^2 on the same
    annulus, (3) the late slab [(2^j r)^2, (2^{j+1} r)^2) on all of
    2^{j+1}B.  Decay exponents are fitted per region; the expected power
    rate for the outer regions is -(2 beta + 1 + n(1/q - 1/p)).
    """
    spec_params = spec.space_params[0] if spec.space_params \
        else SpaceParams(p=1.0, beta=0.0)
    j_lo = int(spec.opt("j_min", 4))
    j_hi = int(spec.opt("j_max", 7))
    if j_lo < 4 or j_hi < j_lo:
        raise ValueError("need 4 <= j_min <= j_max")
    base = _molecular_once(spec, spec.grid)
    sens = {"headline": base["headline"], "variants": {}}
    for name, g2 in sorted(variant_grids(spec.grid).items()):
        alt = _molecular_once(spec, g2)
        sens["variants"][name] = {"headline": alt["headline"],
                                  "grid": _grid_dict(g2)}
    stability = _endpoint_factor(base["headline"],
                                 sens["variants"]["points_double"]
                                 ["headline"])
    monotone = base["extras"]["monotone"]
    passed = bool(all(monotone.values())
                  and stability <= spec.budget_stability)
    labels = ["region%s:not_monotone" % k
              for k, ok in sorted(monotone.items()) if not ok]
    if spec.preset == "identity":
        if not base["extras"]["superexponential_region1"]:
            passed = False
            labels.append("region1:not_superexponential")
    return EquivalenceReport(
        spec=spec, kind="molecular_decay", ratios=(),
        band=(), stability_factor=stability, passed=passed,
        labels=tuple(labels), sensitivity=sens, extras=base["extras"])


def _exact_slab_duhamel(gen, F):
    """Duhamel image of a slab-piecewise-constant divergence source under
    identity coefficients, with the per-slab time integrals done in closed
    form per Fourier mode.  Zero quadrature error, so the far-field tails
    stay meaningful down to the float-cancellation floor -- the ladder
    walker's source interpolation noise would swamp them."""
    g = gen.grid
    sym = gen.symbol()
    t = g.times()
    K = g.time_levels
    qlev = cauchy._source_levels(g, F=F)

    def fftn(v):
        return np.fft.fftn(v.reshape(g.shape), axes=tuple(range(g.n))) \
            .reshape(g.ncells)

    def ifftn(v):
        return np.fft.ifftn(v.reshape(g.shape), axes=tuple(range(g.n))) \
            .reshape(g.ncells)

    qhat = np.stack([fftn(qlev[k, :, 0]) for k in range(K)])
    out = np.zeros((K, g.ncells, 1), dtype=np.complex128)
    safe = np.where(sym == 0, 1.0, sym)
    for k in range(1, K):
        lo = t[:k]
        hi = np.minimum(g.rho * t[:k], t[k])
        # integral of e^{-sigma (t_k - s)} over s in [lo, hi)
        ints = (np.exp(-np.outer(t[k] - hi, sym))
                - np.exp(-np.outer(t[k] - lo, sym))) / safe
        ints[:, sym == 0] = (hi - lo)[:, None]
        out[k, :, 0] = ifftn((qhat[:k] * ints).sum(axis=0))
    return SpaceTimeField(g, out)


def _molecular_once(spec, grid):
    params = spec.space_params[0] if spec.space_params \
        else SpaceParams(p=1.0, beta=0.0)
    beta, p = params.beta, params.p
    q = float(spec.opt("q", 1.5))
    j_lo = int(spec.opt("j_min", 4))
    j_hi = int(spec.opt("j_max", 7))
    r = float(spec.opt("radius", grid.h))
    if 2.0 ** (j_hi + 1) * r > grid.period / 2.0 * (1 + 1e-12):
        raise ValueError("ball 2^%d B (radius %g) exceeds the half-period"
                         % (j_hi + 1, 2.0 ** (j_hi + 1) * r))
    if (2.0 ** (j_hi + 1) * r) ** 2 > grid.rho * grid.t_max * (1 + 1e-12):
        raise ValueError("region 3 at j=%d needs t_max >= %g"
                         % (j_hi, (2.0 ** (j_hi + 1) * r) ** 2 / grid.rho))
    center = 0
    atom = make_atom(grid, center, r, beta + 0.5, p,
                     shape=str(spec.opt("shape", "flat")), seed=spec.seed)
    coeff = preset_coefficients(grid, spec.preset, **dict(spec.preset_params))
    gen = assemble(coeff)
    if gen.is_identity:
        u = _exact_slab_duhamel(gen, atom.field)
    else:
        _, lions, _ = cauchy.walk_bank(gen, F_fields=[atom.field])
        u = lions[0]
    js = list(range(j_lo, j_hi + 1))
    profiles = {"1": [], "2": [], "3": []}
    for j in js:
        inner = ball_cells(grid, center, 2.0 ** j * r)
        outer = ball_cells(grid, center, 2.0 ** (j + 1) * r)
        annulus = np.setdiff1d(outer, inner)
        measure = len(outer) * grid.h ** grid.n
        norm_fac = measure ** (1.0 / p - 0.5)
        windows = [
            ("1", 0.0, (8.0 * r) ** 2, annulus),
            ("2", (8.0 * r) ** 2, (2.0 ** j * r) ** 2, annulus),
            ("3", (2.0 ** j * r) ** 2, (2.0 ** (j + 1) * r) ** 2, outer),
        ]
        for key, lo, hi, cells in windows:
            w = grid.window_weights(lo, hi, "dt")
            val = math.sqrt(weighted_l2_sq(u, beta + 1.0, time_weights=w,
                                           cells=cells))
            profiles[key].append(val * norm_fac)
    fits, monotone, rep_count, worst = {}, {}, {}, 0.0
    for key, prof in profiles.items():
        # the representable prefix: once a value falls within a guard of
        # the float-cancellation floor it carries no decay information
        guard = 1e-9 * max(prof)
        rep = []
        for v in prof:
            if v <= guard:
                break
            rep.append(v)
        rep_count[key] = len(rep)
        steps = [b / a for a, b in zip(rep, rep[1:])]
        monotone[key] = bool(steps and max(steps) < 1.0)
        worst = max(worst, max(steps) if steps else math.inf)
        if len(rep) >= 2:
            fits[key] = float(np.polyfit(js[:len(rep)],
                                         [math.log2(v) for v in rep], 1)[0])
        else:
            fits[key] = None
    # super-exponential signature in region 1: the log-profile steps must
    # accelerate downward (a plain exponential would keep them constant)
    l1 = [math.log(profiles["1"][i]) for i in range(rep_count["1"])]
    superexp = bool(len(l1) >= 3
                    and all(l1[i + 1] - l1[i] < l1[i] - l1[i - 1] - 1e-9
                            for i in range(1, len(l1) - 1)))
    expected = -(2.0 * beta + 1.0 + grid.n * (1.0 / q - 1.0 / p))
    return {"ratios": [], "headline": worst, "labels": [],
            "extras": {"j": js, "profiles": profiles, "fits": fits,
                       "monotone": monotone, "representable": rep_count,
                       "superexponential_region1": superexp,
                       "expected_outer_rate": expected}}


def decay_table_csv(report):
    """CSV of a molecular-decay report's profile table."""
    ex = report.extras if hasattr(report, "extras") else report["extras"]
    cols = {"j": ex["j"]}
    for key, prof in ex["profiles"].items():
        cols["region" + key] = prof
    return table_to_csv(cols)


# ---------------------------------------------------------------------------
# embedding chain sweeps

def run_embedding_sweep(spec):
    """Max hop ratios along tent -> Z -> tent chains on one scaling line.

    options: beta0, p0, p1, p2 (strictly increasing p); the intermediate and
    final weights are forced onto the scaling line 2 beta - n/p = const.
    For the atoms family the extras include per-octave ratio bands keyed by
    the atom radius octave (scale-stability evidence).
    """
    return _assemble_report(spec, "embedding_sweep", _embedding_once)


def _embedding_once(spec, grid):
    n = grid.n
    beta0 = float(spec.opt("beta0", 0.0))
    p0 = float(spec.opt("p0", 1.0))
    p1 = float(spec.opt("p1", 2.0))
    p2raw = spec.opt("p2", math.inf)
    p2 = math.inf if p2raw in ("inf", math.inf) else float(p2raw)
    if not (0.0 < p0 < p1 < p2):
        raise ValueError("need strictly increasing 0 < p0 < p1 < p2")
    line = 2.0 * beta0 - n / p0
    beta1 = (line + (0.0 if p1 == math.inf else n / p1)) / 2.0
    beta2 = (line + (0.0 if p2 == math.inf else n / p2)) / 2.0
    s0 = TentNormSpec(beta0, p0)
    s1 = TentNormSpec(beta1, p1)
    s2 = TentNormSpec(beta2, p2)
    fields = spacetime_family(grid, spec.family, spec.count, spec.seed,
                              dict(spec.options) | {"beta": beta0, "p": p0})
    hop1, hop2, octaves = [], [], {}
    for F in fields:
        rec1 = embedding_check(F, s0, s1, "tent", "zspace")
        rec2 = embedding_check(F, s1, s2, "zspace", "tent")
        if rec1["ratio"] is None or rec2["ratio"] is None:
            continue
        hop1.append(rec1["ratio"])
        hop2.append(rec2["ratio"])
        if spec.family == "atoms":
            # recover the atom scale from the support's time extent
            tt = grid.times()[np.nonzero(
                np.abs(F.values).sum(axis=(1, 2)))[0]]
            octave = int(math.floor(math.log2(math.sqrt(grid.rho * tt[-1]))
                                    )) if len(tt) else 0
            octaves.setdefault(octave, []).append(max(rec1["ratio"],
                                                      rec2["ratio"]))
    ratios = hop1 + hop2
    band = _band(ratios)
    extras = {"hop1": hop1, "hop2": hop2,
              "hop1_band": list(_band(hop1)) if hop1 else None,
              "hop2_band": list(_band(hop2)) if hop2 else None,
              "line": line,
              "specs": [{"beta": beta0, "p": p0}, {"beta": beta1, "p": p1},
                        {"beta": beta2, "p": p2}]}
    if octaves:
        extras["octave_max_ratio"] = {str(k): max(v)
                                      for k, v in sorted(octaves.items())}
    return {"ratios": ratios,
            "headline": max(ratios) if ratios else math.inf,
            "labels": [], "extras": extras}


# ---------------------------------------------------------------------------
# global inhomogeneous estimate

def run_global_estimate(spec):
    """Implied constant of the full a-priori estimate: the gradient tent
    norm of the solution against initial data + both sources.

    space_params must hold (beta, p) and (gamma, q) on one compatibility
    line 2 beta - n/p = 2 gamma - n/q (checked to 1e-12, error otherwise).
    """
    if len(spec.space_params) < 2:
        raise ValueError("need (beta,p) and (gamma,q) space params")
    bp, gq = spec.space_params[0], spec.space_params[1]
    n = spec.grid.n
    if abs((2 * bp.beta - n / bp.p) - (2 * gq.beta - n / gq.p)) > 1e-12:
        raise ValueError("(beta,p) and (gamma,q) must satisfy "
                         "2b - n/p = 2g - n/q")
    return _assemble_report(spec, "global_estimate", _global_once)


def _global_once(spec, grid):
    bp, gq = spec.space_params[0], spec.space_params[1]
    coeff = preset_coefficients(grid, spec.preset, **dict(spec.preset_params))
    gen = assemble(coeff)
    fam = LPFamily(grid)
    u0s = spatial_family(grid, spec.family, spec.count, spec.seed,
                         dict(spec.options))
    Fs = [SpaceTimeField(grid, np.repeat(
        v.values[None, :, :], grid.time_levels, axis=0)
        * np.exp(-grid.times() / 2.0)[:, None, None])
        for v in vector_family(grid, spec.family, spec.count,
                               spec.seed + 1, dict(spec.options))]
    fs = spacetime_family(grid, "gaussian", spec.count, spec.seed + 2,
                          dict(spec.options))
    orbits, lions, plain = cauchy.walk_bank(gen, u0s, Fs, fs)
    ratios, residues = [], []
    for u0, F, f, eu, rF, rf in zip(u0s, Fs, fs, orbits, lions, plain):
        u = SpaceTimeField(grid, eu.values + rF.values + rf.values)
        lhs = tent_norm(cauchy.field_gradient(u),
                        TentNormSpec(bp.beta + 0.5, bp.p))
        rhs = (hardy_sobolev_norm(u0, _hs(bp), fam=fam)
               + tent_norm(F, TentNormSpec(bp.beta + 0.5, bp.p))
               + tent_norm(f, TentNormSpec(gq.beta, gq.p)))
        if rhs < _ZERO_GUARD:
            continue
        ratios.append(lhs / rhs)
        drift = SpaceTimeField(grid, u.values - eu.values)
        residues.append(tent_norm(drift, TentNormSpec(bp.beta + 1.0, bp.p)))
    return {"ratios": ratios,
            "headline": max(ratios) if ratios else math.inf,
            "labels": [],
            "extras": {"constant": max(ratios) if ratios else None,
                       "drift_tent_norms": residues,
                       "drift_finite": bool(all(map(math.isfinite,
                                                    residues)))}}


# ---------------------------------------------------------------------------
# Besov / Z-space suite

def run_besov_suite(spec):
    """Z-space analogues of the heat characterization.

    options variant: "besov" compares the heat extension in Z^p_{(s+1)/2}
    against the Besov p,p norm for each space point; "lipschitz" compares
    the gradient of the heat extension in Z^inf_{1/2} against the discrete
    Lipschitz surrogate max |grad_h g|.
    """
    return _assemble_report(spec, "besov_suite", _besov_once)


def _besov_once(spec, grid):
    variant = str(spec.opt("variant", "besov"))
    fields = spatial_family(grid, spec.family, spec.count, spec.seed,
                            dict(spec.options))
    ratios, labels = [], []
    per_point = {}
    if variant == "lipschitz":
        znorm_spec = TentNormSpec(0.5, math.inf)
        for g_field in fields:
            rhs = float(np.abs(forward_gradient(
                grid, g_field.values[:, 0])).max())
            if rhs < _ZERO_GUARD:
                continue
            lhs = z_norm(gradient_heat_extension(g_field), znorm_spec)
            ratios.append(lhs / rhs)
    elif variant == "besov":
        fam = LPFamily(grid)
        for params in spec.space_params:
            key = "s=%g,p=%g" % (params.s, params.p)
            pt = []
            for f in fields:
                rhs = besov_norm(f, SpaceParams(p=params.p, s=params.s,
                                                variant="besov"), fam=fam)
                if rhs < _ZERO_GUARD:
                    continue
                lhs = z_norm(heat_extension(f),
                             TentNormSpec((params.s + 1.0) / 2.0, params.p))
                pt.append(lhs / rhs)
            ratios.extend(pt)
            pb = _band(pt)
            per_point[key] = list(pb) if pb else None
    else:
        raise ValueError("variant must be 'besov' or 'lipschitz'")
    band = _band(ratios)
    return {"ratios": ratios,
            "headline": (band[1] / band[0]) if band else math.inf,
            "labels": labels,
            "extras": {"variant": variant, "per_point_bands": per_point}}

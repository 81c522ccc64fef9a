"""Command-line front end: config parsing, preset catalog, experiment
dispatch, artifact emission.

Exit codes are a contract: 0 when every check passed (out-of-theory warnings
included), 1 when a budget failed, 2 on any configuration error (unknown
keys, missing seed, unparseable values).  Every artifact is written inside
the --out directory and nowhere else.

Settings resolve in three layers: command defaults, then the --config file
(flat ``key = value`` lines), then command-line overrides (trailing
``key=value`` arguments, then named flags).  Unknown keys are rejected.
"""

import argparse
import math
import os
import sys
from dataclasses import dataclass, field

from . import cauchy, verify
from .exponents import (ExponentProfile, SpaceParams, beta_L, holder_conjugate,
                        p_flat, p_L_beta, p_minus_s, p_plus_s, p_tilde,
                        parse_config, profile_from_config,
                        region_boundary_polyline, polyline_to_csv)
from .grid import GridSpec
from .operator import (PRESETS, accretivity_check, assemble,
                       coefficients_to_bytes, estimate_exponents,
                       load_coefficients, preset_coefficients,
                       save_coefficients)

COMMANDS = ("exponents", "regions", "heat", "parabolic", "lions", "molecular",
            "embeddings", "global", "besov", "probe", "presets")

# commands whose test functions are random draws; these require a seed
SEEDED = ("heat", "parabolic", "embeddings", "global", "besov")

KNOWN_KEYS = frozenset((
    "seed", "family", "preset", "budget", "stability", "count",
    "n", "s", "p", "beta", "gamma", "q", "profile", "points", "period",
    "t_min", "t_max", "levels", "variant", "beta0", "p0", "p1", "p2",
    "radius", "j_min", "j_max", "shape", "contrast", "blocks", "kappa",
    "resolution", "trials", "kmin", "kmax", "bumps", "spikes",
))

# settings that parametrize the coefficient preset rather than the run
PRESET_KEYS = ("contrast", "blocks", "kappa")


class ConfigError(Exception):
    pass


@dataclass
class RunManifest:
    """One dispatchable run: the command plus its resolved inputs."""

    command: str
    config: str = ""
    seed: int = None
    out: str = "tentkit_out"
    overrides: dict = field(default_factory=dict)
    json_echo: bool = False


def _fail(msg):
    raise ConfigError(msg)


def _float(settings, key, default=None):
    raw = settings.get(key)
    if raw is None:
        return default
    if isinstance(raw, float):
        return raw
    t = str(raw).strip().lower()
    if t in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        return float(raw)
    except ValueError:
        _fail("key %r: expected a number, got %r" % (key, raw))


def _int(settings, key, default=None):
    raw = settings.get(key)
    if raw is None:
        return default
    try:
        return int(str(raw))
    except ValueError:
        _fail("key %r: expected an integer, got %r" % (key, raw))


def resolve_settings(manifest):
    """Merge config file and overrides; reject unknown keys."""
    settings = {}
    if manifest.config:
        try:
            with open(manifest.config, "r", encoding="utf-8") as fh:
                settings.update(parse_config(fh.read()))
        except OSError as e:
            _fail("cannot read config %s: %s" % (manifest.config, e))
        except ValueError as e:
            _fail(str(e))
    settings.update(manifest.overrides)
    unknown = sorted(set(settings) - KNOWN_KEYS)
    if unknown:
        _fail("unknown config keys: %s (known: %s)"
              % (", ".join(unknown), ", ".join(sorted(KNOWN_KEYS))))
    if manifest.seed is not None:
        settings["seed"] = manifest.seed
    if manifest.command in SEEDED and "seed" not in settings:
        _fail("command %r draws random test functions: a seed is mandatory "
              "(--seed or seed= in the config)" % manifest.command)
    return settings


def _grid(settings, command):
    n = _int(settings, "n", 1)
    if command == "molecular" and n == 1:
        defaults = (32.0, 1024, 2.0 ** -10, 256.0, 73)
    elif command == "lions" and n == 1:
        # identity residuals are ladder-limited; a finer ladder is cheap here
        defaults = (32.0, 512, 2.0 ** -8, 4.0, 65)
    elif n == 1:
        defaults = (32.0, 512, 2.0 ** -8, 4.0, 33)
    elif n == 2:
        defaults = (32.0, 64, 0.25, 4.0, 17)
    else:
        _fail("n must be 1 or 2 at desk scale, got %r" % n)
    period = _float(settings, "period", defaults[0])
    points = _int(settings, "points", defaults[1])
    t_min = _float(settings, "t_min", defaults[2])
    t_max = _float(settings, "t_max", defaults[3])
    levels = _int(settings, "levels", defaults[4])
    try:
        return GridSpec(n, period, points, t_min, t_max, levels)
    except ValueError as e:
        _fail("bad grid: %s" % e)


def _profile(settings):
    name = str(settings.get("profile", "laplacian"))
    n = _int(settings, "n", 1)
    if name == "laplacian":
        return ExponentProfile(n, n / (n + 1.0), math.inf,
                               n / (n + 1.0), math.inf)
    try:
        with open(name, "r", encoding="utf-8") as fh:
            return profile_from_config(parse_config(fh.read()))
    except OSError as e:
        _fail("profile %r is neither 'laplacian' nor a readable config "
              "file: %s" % (name, e))
    except ValueError as e:
        _fail("profile config %s: %s" % (name, e))


def _preset_params(settings, preset):
    known = PRESETS.get(preset)
    if known is None:
        _fail("unknown preset %r (have: %s)"
              % (preset, ", ".join(sorted(PRESETS))))
    schema = known[1]
    out = []
    for key in PRESET_KEYS:
        if key in settings and key in schema:
            val = _float(settings, key)
            out.append((key, int(val) if key == "blocks" else val))
        elif key in settings:
            _fail("preset %r does not take %r" % (preset, key))
    if "seed" in schema:
        out.append(("seed", _int(settings, "seed", 0)))
    return tuple(out)


def _experiment_spec(settings, command, grid, space_params, budget,
                     options=(), family=None, count=None,
                     default_preset="identity"):
    preset = str(settings.get("preset", default_preset))
    try:
        return verify.ExperimentSpec(
            name=command,
            grid=grid,
            preset=preset,
            preset_params=_preset_params(settings, preset),
            space_params=space_params,
            family=family or str(settings.get("family", "band_limited")),
            count=count or _int(settings, "count", 20),
            seed=_int(settings, "seed", 0),
            budget_band=budget,
            budget_stability=_float(settings, "stability", 1.5),
            options=tuple(options),
            out=command + ".json",
        )
    except ValueError as e:
        _fail(str(e))


def _emit_json(out_dir, name, payload):
    path = os.path.join(out_dir, name)
    verify.write_report(payload, path)
    return path


def _say(line, json_echo):
    """Verdict lines go to stderr under --json so stdout stays pure JSON."""
    print(line, file=sys.stderr if json_echo else sys.stdout)


def _verdict(report, name):
    if report.passed is None:
        status = "WARN"
    else:
        status = "PASS" if report.passed else "FAIL"
    if report.band:
        shape = "band=[%.4g, %.4g] spread=%.3g (budget %g) stability=%.3g" \
            % (report.band[0], report.band[1],
               report.band[1] / report.band[0], report.spec.budget_band,
               report.stability_factor)
    else:
        shape = "stability=%.3g" % report.stability_factor
    line = "%s: %s %s" % (name, status, shape)
    if report.labels:
        line += "  [%s]" % "; ".join(report.labels)
    return line


def _finish(report, out_dir, name, json_echo, csv_text=None):
    paths = [_emit_json(out_dir, name + ".json", report)]
    if csv_text is not None:
        p = os.path.join(out_dir, name + ".csv")
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(csv_text)
        paths.append(p)
    _say("%s  -> %s" % (_verdict(report, name), ", ".join(paths)),
         json_echo)
    if json_echo:
        print(report.to_json(), end="")
    if report.passed is None:
        print("warning: every requested point sits outside the theory "
              "range; nothing was scored", file=sys.stderr)
        return 0
    skipped = [lab for lab in report.labels if "out_of_theory" in lab]
    for lab in skipped:
        print("warning: %s skipped (outside the theory range)" % lab,
              file=sys.stderr)
    return 0 if report.passed else 1


# ---------------------------------------------------------------------------
# command handlers

def _cmd_exponents(settings, out_dir, json_echo):
    prof = _profile(settings)
    s = _float(settings, "s", -1.0)
    beta = _float(settings, "beta", -0.5)
    gamma = _float(settings, "gamma", -0.25)
    p = _float(settings, "p", 2.0)
    table = {"profile": _profile_dict(prof),
             "s": s, "beta": beta, "gamma": gamma}
    # each exponent has its own domain; out-of-domain entries are labeled,
    # not fatal (the table is still useful for the in-domain rest)
    for key, fn, arg in (("p_minus_s", p_minus_s, s),
                         ("p_plus_s", p_plus_s, s),
                         ("beta_L", beta_L, None),
                         ("p_L_beta", p_L_beta, beta),
                         ("p_tilde", p_tilde, beta),
                         ("p_flat", p_flat, gamma),
                         ("holder_conjugate_p", holder_conjugate, p)):
        try:
            val = fn(prof) if arg is None else (
                fn(arg) if fn is holder_conjugate else fn(prof, arg))
            table[key] = "inf" if math.isinf(val) else val
        except ValueError as e:
            table[key] = None
            table[key + "_error"] = str(e)
    path = _emit_json(out_dir, "exponents.json", table)
    _say("exponents: PASS table for s=%g beta=%g  -> %s" % (s, beta, path),
         json_echo)
    if json_echo:
        print(verify.canonical_json(table), end="")
    return 0


def _profile_dict(prof):
    def enc(v):
        return "inf" if math.isinf(v) else v
    return {"n": prof.n, "p_minus_L": enc(prof.p_minus_L),
            "q_plus_L": enc(prof.q_plus_L),
            "p_minus_Lstar": enc(prof.p_minus_Lstar),
            "q_plus_Lstar": enc(prof.q_plus_Lstar)}


def _cmd_regions(settings, out_dir, json_echo):
    prof = _profile(settings)
    res = _int(settings, "resolution", 65)
    paths = []
    for region in ("wellposed_hc", "identification", "lions"):
        poly = region_boundary_polyline(prof, region, resolution=res)
        path = os.path.join(out_dir, "regions-%s.csv" % region)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            polyline_to_csv(poly, fh)
        paths.append(path)
    _say("regions: PASS boundary polylines (resolution %d)  -> %s"
         % (res, ", ".join(paths)), json_echo)
    if json_echo:
        print(verify.canonical_json({"profile": _profile_dict(prof),
                                     "files": [os.path.basename(p)
                                               for p in paths]}), end="")
    return 0


def _cmd_heat(settings, out_dir, json_echo):
    g = _grid(settings, "heat")
    s = _float(settings, "s", -1.0)
    p = _float(settings, "p", 2.0)
    spec = _experiment_spec(
        settings, "heat", g, (SpaceParams(p=p, s=s),),
        _float(settings, "budget", 16.0))
    return _finish(verify.run_heat_characterization(spec), out_dir, "heat",
                   json_echo)


def _cmd_parabolic(settings, out_dir, json_echo):
    g = _grid(settings, "parabolic")
    beta = _float(settings, "beta", -0.5)
    p = _float(settings, "p", 2.0)
    spec = _experiment_spec(
        settings, "parabolic", g, (SpaceParams(p=p, beta=beta),),
        _float(settings, "budget", 32.0), default_preset="checkerboard")
    return _finish(verify.run_parabolic_equivalence(spec), out_dir,
                   "parabolic", json_echo)


def _cmd_lions(settings, out_dir, json_echo):
    g = _grid(settings, "lions")
    preset = str(settings.get("preset", "checkerboard"))
    coeff = preset_coefficients(g, preset,
                                **dict(_preset_params(settings, preset)))
    gen = assemble(coeff)
    fields = verify.spatial_family(g, str(settings.get("family",
                                                       "band_limited")),
                                   1, _int(settings, "seed", 0))
    Fs = verify.spacetime_family(g, "gaussian", 1,
                                 _int(settings, "seed", 0) + 1)
    rec = cauchy.duhamel_identities(fields[0], Fs[0], gen)
    problem = cauchy.CauchyProblem(gen, u0=fields[0], F=Fs[0])
    u = cauchy.solve(problem)
    wres = cauchy.weak_residual(u, problem)
    budget = _float(settings, "budget", 1e-3)
    residuals = {k: float(v) for k, v in rec.items()
                 if isinstance(v, float)}
    wres = float(wres)
    passed = bool(all(v <= budget for v in residuals.values())
                  and wres <= budget)
    payload = {
        "schema": "tentkit-report-v1", "kind": "duhamel_identities",
        "preset": preset, "grid": verify._grid_dict(g),
        "identity_residuals": residuals,
        "weak_residual": wres, "budget": budget,
        "passed": passed,
    }
    path = _emit_json(out_dir, "lions.json", payload)
    worst = max(list(residuals.values()) + [wres])
    _say("lions: %s worst residual %.3e (budget %g)  -> %s"
         % ("PASS" if passed else "FAIL", worst, budget, path), json_echo)
    if json_echo:
        print(verify.canonical_json(payload), end="")
    return 0 if passed else 1


def _cmd_molecular(settings, out_dir, json_echo):
    g = _grid(settings, "molecular")
    beta = _float(settings, "beta", 0.0)
    p = _float(settings, "p", 1.0)
    options = [("radius", _float(settings, "radius", 1.0 / 16.0)),
               ("q", _float(settings, "q", 1.5)),
               ("j_min", _int(settings, "j_min", 4)),
               ("j_max", _int(settings, "j_max", 7)),
               ("shape", str(settings.get("shape", "flat")))]
    spec = _experiment_spec(
        settings, "molecular", g, (SpaceParams(p=p, beta=beta),),
        _float(settings, "budget", 16.0), options=options,
        family="atoms", count=1)
    try:
        report = verify.run_molecular_decay(spec)
    except ValueError as e:
        _fail("molecular geometry: %s" % e)
    return _finish(report, out_dir, "molecular", json_echo,
                   csv_text=verify.decay_table_csv(report))


def _cmd_embeddings(settings, out_dir, json_echo):
    g = _grid(settings, "embeddings")
    p2 = _float(settings, "p2", math.inf)
    options = [("beta0", _float(settings, "beta0", 0.0)),
               ("p0", _float(settings, "p0", 1.0)),
               ("p1", _float(settings, "p1", 2.0)),
               ("p2", "inf" if math.isinf(p2) else p2)]
    spec = _experiment_spec(settings, "embeddings", g, (),
                            _float(settings, "budget", 32.0),
                            options=options)
    try:
        report = verify.run_embedding_sweep(spec)
    except ValueError as e:
        _fail("embedding triple: %s" % e)
    cols = {"hop_tent_to_z": report.extras["hop1"],
            "hop_z_to_tent": report.extras["hop2"]}
    return _finish(report, out_dir, "embeddings", json_echo,
                   csv_text=verify.table_to_csv(cols))


def _cmd_global(settings, out_dir, json_echo):
    g = _grid(settings, "global")
    beta = _float(settings, "beta", -0.5)
    p = _float(settings, "p", 2.0)
    q = _float(settings, "q", p)
    # default gamma lands (gamma, q) on the compatibility line of (beta, p)
    gamma = _float(settings, "gamma",
                   beta + (g.n / q - g.n / p) / 2.0)
    spec = _experiment_spec(
        settings, "global", g,
        (SpaceParams(p=p, beta=beta), SpaceParams(p=q, beta=gamma)),
        _float(settings, "budget", 64.0), default_preset="checkerboard")
    try:
        report = verify.run_global_estimate(spec)
    except ValueError as e:
        _fail("global estimate: %s" % e)
    return _finish(report, out_dir, "global", json_echo)


def _cmd_besov(settings, out_dir, json_echo):
    g = _grid(settings, "besov")
    variant = str(settings.get("variant", "besov"))
    if variant not in ("besov", "lipschitz"):
        _fail("variant must be 'besov' or 'lipschitz', got %r" % variant)
    s = _float(settings, "s", -0.5)
    p = _float(settings, "p", 2.0)
    pts = (SpaceParams(p=p, s=s, variant="besov"),) \
        if variant == "besov" else ()
    spec = _experiment_spec(settings, "besov", g, pts,
                            _float(settings, "budget", 32.0),
                            options=[("variant", variant)])
    return _finish(verify.run_besov_suite(spec), out_dir, "besov", json_echo)


def _cmd_probe(settings, out_dir, json_echo):
    g = _grid(settings, "probe")
    preset = str(settings.get("preset", "checkerboard"))
    coeff = preset_coefficients(g, preset,
                                **dict(_preset_params(settings, preset)))
    gen = assemble(coeff)
    margin = accretivity_check(gen, trials=_int(settings, "trials", 50),
                               seed=_int(settings, "seed", 0))
    est = estimate_exponents(
        gen, p_grid=(0.5, 0.75, 1.0, 1.25, 1.5, 2.0, 3.0, 4.0, 6.0, 8.0),
        trials=_int(settings, "trials", 8), seed=_int(settings, "seed", 0))
    cand = est.pop("profile_candidate", None)
    est["profile_candidate"] = _profile_dict(cand) if cand else None
    passed = margin >= 0.0
    payload = {
        "schema": "tentkit-report-v1", "kind": "operator_probe",
        "preset": preset, "grid": verify._grid_dict(g),
        "accretivity_margin": margin, "estimate": est, "passed": passed,
    }
    path = _emit_json(out_dir, "probe.json", payload)
    _say("probe: %s accretivity margin %.3e; indicative p-interval %s"
         "  -> %s" % ("PASS" if passed else "FAIL", margin,
                      est["p_interval"], path), json_echo)
    if json_echo:
        print(verify.canonical_json(payload), end="")
    return 0 if passed else 1


def _cmd_presets(settings, out_dir, json_echo):
    g = _grid(settings, "presets")
    catalog = {"presets": {}, "families": {}}
    worst = True
    for name in sorted(PRESETS):
        schema = PRESETS[name][1]
        coeff = preset_coefficients(g, name)
        blob = coefficients_to_bytes(coeff)
        path = os.path.join(out_dir, "preset-%s.tkf" % name)
        save_coefficients(path, coeff)
        again = coefficients_to_bytes(load_coefficients(path, g))
        ok = again == blob
        worst = worst and ok
        catalog["presets"][name] = {
            "parameters": {k: v for k, v in schema.items()},
            "tkf_bytes": len(blob),
            "roundtrip_bit_exact": ok,
        }
    catalog["families"] = {
        "band_limited": {"kmin": 0.5, "kmax": 3.0},
        "gaussian": {"bumps": 3},
        "atoms": {"beta": "tent weight", "p": "tent exponent"},
        "spikes": {"spikes": 4},
    }
    if json_echo:
        print(verify.canonical_json(catalog), end="")
    else:
        for name, entry in catalog["presets"].items():
            params = ", ".join("%s=%r" % kv
                               for kv in sorted(entry["parameters"].items()))
            print("preset %-20s %-40s TKF1 roundtrip %s"
                  % (name, params or "(no parameters)",
                     "ok" if entry["roundtrip_bit_exact"] else "BROKEN"))
        for name, params in catalog["families"].items():
            print("family %-20s %s" % (name, ", ".join(
                "%s=%r" % kv for kv in sorted(params.items()))))
    _emit_json(out_dir, "presets.json", catalog)
    return 0 if worst else 1


_HANDLERS = {
    "exponents": _cmd_exponents,
    "regions": _cmd_regions,
    "heat": _cmd_heat,
    "parabolic": _cmd_parabolic,
    "lions": _cmd_lions,
    "molecular": _cmd_molecular,
    "embeddings": _cmd_embeddings,
    "global": _cmd_global,
    "besov": _cmd_besov,
    "probe": _cmd_probe,
    "presets": _cmd_presets,
}


def dispatch(manifest):
    """Resolve settings, run the command, emit artifacts; returns exit code."""
    try:
        settings = resolve_settings(manifest)
        os.makedirs(manifest.out, exist_ok=True)
        return _HANDLERS[manifest.command](settings, manifest.out,
                                           manifest.json_echo)
    except ConfigError as e:
        print("config error: %s" % e, file=sys.stderr)
        return 2


def build_manifest(argv):
    ap = argparse.ArgumentParser(
        prog="tentkit",
        description="Desk-scale experiments for parabolic function-space "
                    "equivalences over rough divergence-form generators.")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", default="", help="flat key=value config file")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--out", default="tentkit_out",
                    help="output directory (all artifacts land here)")
    ap.add_argument("--profile", default=None,
                    help="'laplacian' or a profile config path")
    ap.add_argument("--n", default=None, help="space dimension (1 or 2)")
    ap.add_argument("--s", default=None, help="smoothness exponent")
    ap.add_argument("--p", default=None, help="integrability exponent")
    ap.add_argument("--beta", default=None, help="tent-space weight")
    ap.add_argument("--family", default=None,
                    help="band_limited | gaussian | atoms | spikes")
    ap.add_argument("--preset", default=None,
                    help="coefficient preset (see the presets command)")
    ap.add_argument("--budget", default=None, help="equivalence band budget")
    ap.add_argument("--json", action="store_true",
                    help="echo the machine-readable report to stdout")
    ns, extra = ap.parse_known_args(argv)
    overrides = {}
    for item in extra:
        # bare key=value arguments anywhere on the line are config overrides
        if "=" not in item or item.startswith("-"):
            print("config error: unrecognized argument %r (overrides are "
                  "key=value)" % item, file=sys.stderr)
            raise SystemExit(2)
        key, val = item.split("=", 1)
        overrides[key.strip()] = val.strip()
    for key in ("profile", "n", "s", "p", "beta", "family", "preset",
                "budget"):
        val = getattr(ns, key)
        if val is not None:
            overrides[key] = val
    manifest = RunManifest(command=ns.command, config=ns.config,
                           seed=ns.seed, out=ns.out, overrides=overrides,
                           json_echo=ns.json)
    return manifest


def main(argv=None):
    manifest = build_manifest(sys.argv[1:] if argv is None else argv)
    return dispatch(manifest)


if __name__ == "__main__":
    sys.exit(main())

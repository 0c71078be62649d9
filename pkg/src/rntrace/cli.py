"""Scenario driver: ``rntrace {trace,bundle,caustic,residual,asymptotics}``.

A scenario is one JSON document, optionally starting from a shipped preset.
Every output carries the hash of the resolved configuration so that runs can
be matched to their inputs; identical configs give byte-identical CSV/JSON.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from .caustic import match_and_cross
from .eikonal import BundleSpec, propagate_bundle
from .errors import ConfigError, RNError
from .geodesic import (
    EventKind,
    IntegrationOptions,
    horizon_approach_rate,
    initial_state,
    integrate,
    turning_radius,
)
from .metric import Regime, classify
from .transport import BumpSpec, bump_chi, integrate_amplitude
from .wavecheck import WaveAnsatz, probe_points, residual_scaling

PRESETS = ("subextremal", "extremal", "naked", "fastray")
REQUIRED = ("m", "e", "initial.rho0", "initial.phi0", "initial.xi0", "initial.xi_phi", "x0_max")


# -- configuration -------------------------------------------------------------------------

def load_preset(name: str) -> dict:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    text = resources.files("rntrace").joinpath("presets", f"{name}.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def _get(cfg: dict, path: str):
    node = cfg
    for part in path.split("."):
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"missing config field '{path}'")
        node = node[part]
    return node


def validate(cfg: dict) -> dict:
    for path in REQUIRED:
        v = _get(cfg, path)
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise ConfigError(f"config field '{path}' must be a finite number")
    if not cfg["m"] > 0:
        raise ConfigError("config field 'm' must be positive")
    if not cfg["initial"]["rho0"] > 0:
        raise ConfigError("config field 'initial.rho0' must be positive")
    if not cfg["x0_max"] > 0:
        raise ConfigError("config field 'x0_max' must be positive")
    ks = cfg.get("k_list", [])
    if list(ks) != sorted(ks):
        raise ConfigError("config field 'k_list' must be sorted ascending")
    return cfg


def resolve_config(preset: str | None, path: str | None) -> dict:
    cfg = load_preset(preset) if preset else {}
    if path:
        try:
            cfg = _merge(cfg, json.loads(Path(path).read_text()))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    if not cfg:
        raise ConfigError("give --preset or --config")
    return validate(cfg)


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def options_from(cfg: dict) -> IntegrationOptions:
    tol = cfg.get("tolerances", {})
    base = IntegrationOptions()
    return IntegrationOptions(rtol=tol.get("ode_rel", base.rtol), atol=tol.get("ode_abs", base.atol))


def bundle_spec_from(cfg: dict, node: dict) -> BundleSpec:
    ini = cfg["initial"]
    keys = ("rho_center", "phi_center", "eps", "delta", "n_rho", "n_phi", "n_alpha", "rho_10")
    kw = {k: node[k] for k in keys if k in node}
    kw.setdefault("rho_center", ini["rho0"])
    kw.setdefault("phi_center", ini["phi0"])
    return BundleSpec(xi0=ini["xi0"], xi_phi=ini["xi_phi"], **kw)


# -- writers -------------------------------------------------------------------------------

def _num(v) -> str:
    if isinstance(v, str):
        return v
    return format(float(v), ".17g")


def write_csv(path: Path, header: list, rows, chash: str, note: str | None = None):
    buf = io.StringIO()
    buf.write(f"# config_hash={chash}\n")
    if note:
        buf.write(f"# {note}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) for v in row])
    path.write_text(buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, complex):
        return {"re": _jsonable(obj.real), "im": _jsonable(obj.imag)}
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    return obj


def write_json(path: Path, payload: dict, chash: str):
    doc = {"config_hash": chash, **_jsonable(payload)}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def polar_svg(traj, params, r0, chash: str, size: int = 600) -> str:
    """Polar plot: horizon and turning circles plus the ray in the (x1, x2) plane."""
    half = 1.2 * (params.r_plus if params.r_plus else max(params.m, r0 or params.m))
    scale = size / (2.0 * half)

    def xy(r, p):
        return (r * math.cos(p) + half) * scale, (half - r * math.sin(p)) * scale

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f"<!-- config_hash={chash} -->",
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    circles = []
    if params.r_plus:
        if params.r_plus == params.r_minus:
            circles.append(("horizon", params.r_plus, "#444"))
        else:
            circles.append(("r_plus", params.r_plus, "#444"))
            if params.r_minus > 0:
                circles.append(("r_minus", params.r_minus, "#888"))
    if r0:
        circles.append(("r0", r0, "#c33"))
    c = half * scale
    for name, r, color in circles:
        parts.append(f'<circle class="{name}" cx="{c:.3f}" cy="{c:.3f}" r="{r * scale:.3f}" '
                     f'fill="none" stroke="{color}" stroke-dasharray="4 3"/>')
    n = len(traj.x0)
    idx = np.unique(np.linspace(0, n - 1, min(n, 2000)).astype(int))
    pts = " ".join("{:.3f},{:.3f}".format(*xy(traj.rho[i], traj.phi[i])) for i in idx)
    parts.append(f'<polyline class="ray" points="{pts}" fill="none" stroke="#1f5fbf" stroke-width="1.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- scenario steps --------------------------------------------------------------------------

def _trace(cfg):
    p = classify(cfg["m"], cfg["e"])
    ini = cfg["initial"]
    st = initial_state(ini["rho0"], ini["phi0"], ini["xi0"], ini["xi_phi"], p)
    traj = integrate(st, cfg["x0_max"], p, options_from(cfg))
    return p, traj


def run_trace(cfg, out: Path, chash: str, threads: int = 1) -> dict:
    p, traj = _trace(cfg)
    write_csv(out / "trajectory.csv", ["x0", "rho", "phi", "xi_rho", "branch", "H0_residual"],
              traj.to_rows(), chash)
    events = [e.to_dict() for e in traj.events]
    write_json(out / "events.json", {"events": events, "stop_reason": traj.stop_reason}, chash)
    try:
        r0 = turning_radius(traj.xi0, traj.xi_phi, p)
    except RNError:
        r0 = None
    (out / "trace.svg").write_text(polar_svg(traj, p, r0, chash))
    print(f"trace: {len(traj.x0)} samples, events " + ", ".join(e["kind"] for e in events)
          + f"; stop={traj.stop_reason}; max|H0|={traj.max_residual():.3e}")
    return {"events": events}


def run_bundle(cfg, out: Path, chash: str, threads: int = 1) -> dict:
    p = classify(cfg["m"], cfg["e"])
    node = cfg.get("bundle")
    if node is None:
        raise ConfigError("missing config field 'bundle'")
    spec = bundle_spec_from(cfg, node)
    b = propagate_bundle(spec, p, node.get("x0_max", cfg["x0_max"]), options_from(cfg), threads=threads)
    rays_dir = out / "rays"
    rays_dir.mkdir(exist_ok=True)
    manifest = {"spec": {k: getattr(spec, k) for k in ("rho_center", "phi_center", "eps", "delta", "n_rho",
                                                       "n_phi", "n_alpha", "xi0", "xi_phi", "rho_10")},
                "rays": []}
    for (i, j), tr in sorted(b.rays.items()):
        name = f"ray_{i:03d}_{j:03d}.csv"
        write_csv(rays_dir / name, ["x0", "rho", "phi", "xi_rho", "branch", "H0_residual"], tr.to_rows(), chash)
        manifest["rays"].append({"i": i, "j": j, "S0": b.s0[i, j], "t0": tr.turning_time, "file": f"rays/{name}"})
    manifest["caustic_time"] = b.caustic_time
    manifest["richardson_gap"] = b.richardson_gap
    write_json(out / "bundle.json", manifest, chash)
    print(f"bundle: {len(b.rays)} rays, centre caustic time {b.caustic_time[b.center]:.6f}")
    return manifest


def run_caustic(cfg, out: Path, chash: str, threads: int = 1) -> dict:
    p = classify(cfg["m"], cfg["e"])
    node = _get(cfg, "caustic")
    bnode = _get(cfg, "caustic.bundle")
    spec = bundle_spec_from(cfg, bnode)
    b = propagate_bundle(spec, p, bnode.get("x0_max", cfg["x0_max"]), options_from(cfg), threads=threads)
    centre = (spec.rho_center * math.cos(spec.phi_center), spec.rho_center * math.sin(spec.phi_center), 0.0)
    bump = BumpSpec(centre, node.get("bump_width", 0.15))
    ks = cfg.get("k_list", [100, 200, 400, 800])
    eps = node.get("eps_band", 0.2)
    tol = node.get("tol_match", 5.0)
    an = match_and_cross(b, bump, ks, eps, tol_match=tol, check=False)
    ic = spec.n_rho // 2
    rep_m = an.reports.get(("minus", ic))
    rep_p = an.reports.get(("plus", ic))
    match_ok = all(v <= tol / k for k, v in an.mismatch.items())
    report = {
        "t0": an.t0,
        "eps_band": an.eps_band,
        "eta0": {"minus": rep_m.eta0 if rep_m else None, "plus": rep_p.eta0 if rep_p else None},
        "L_second_deriv": {"minus": rep_m.second_derivative if rep_m else None,
                           "plus": rep_p.second_derivative if rep_p else None},
        "maslov_sign": {"minus": rep_m.maslov_sign if rep_m else None, "plus": rep_p.maslov_sign if rep_p else None},
        "maslov_jump": an.maslov_jump,
        "phase_identity_error": list(an.phase_identity_error),
        "mismatch_at_band_edges": {format(k, "g"): v for k, v in an.mismatch.items()},
        "match_ok": match_ok,
        "k_list": ks,
    }
    write_json(out / "caustic.json", report, chash)
    # amplitude of the centre ray through the band
    j = spec.n_phi // 2
    tr = b.rays[(ic, j)]
    chi = float(bump_chi(centre, bump))
    track = integrate_amplitude(tr, chi, 0, band=(eps, eps), plus_initial=[an.plus_initial(ic)],
                                x0_end=float(tr.x0[-1]))[0]
    rows = ((x, v.real, v.imag, "nan", "nan", m) for x, v, m in zip(track.x0, track.values, track.m_coeff))
    write_csv(out / "amplitude_centre.csv", ["x0", "re_a00", "im_a00", "re_a10", "im_a10", "M"], rows, chash,
              note="a10 is not solved along bundle rays; see the residual command")
    print(f"caustic: t0={an.t0:.6f} jump={an.maslov_jump:.3f} phase identity "
          f"{max(an.phase_identity_error):.2e}; mismatch*k "
          + ", ".join(f"{k:g}:{v * k:.2f}" for k, v in an.mismatch.items())
          + ("" if match_ok else f" (exceeds {tol:g}/k)"))
    return report


def run_residual(cfg, out: Path, chash: str, threads: int = 1) -> dict:
    p = classify(cfg["m"], cfg["e"])
    node = cfg.get("residual", {})
    ini = cfg["initial"]
    spec = BundleSpec(ini["rho0"], ini["phi0"], xi0=ini["xi0"], xi_phi=ini["xi_phi"])
    centre = (ini["rho0"] * math.cos(ini["phi0"]), ini["rho0"] * math.sin(ini["phi0"]), 0.0)
    ans = WaveAnsatz(p, spec, BumpSpec(centre, node.get("bump_width", 0.6)), eps_band=node.get("eps_band", 0.15))
    probes = probe_points(ans)
    ks = node.get("k_list", [100, 200, 400, 800, 1600])
    reports = {f"N{n}": residual_scaling(ans, probes, ks, n).to_dict() for n in (0, 1)}
    diff = reports["N0"]["slope"] - reports["N1"]["slope"]
    payload = {"k_list": ks, "reports": reports, "slope_difference": diff,
               "normalization_note": reports["N0"]["normalization_note"], "n_probes": len(probes)}
    write_json(out / "residual.json", payload, chash)
    print(f"residual: slope N=0 {reports['N0']['slope']:.4f}, N=1 {reports['N1']['slope']:.4f}, "
          f"difference {diff:.4f} (t_N slopes {reports['N0']['slope_tN']:.4f}, {reports['N1']['slope_tN']:.4f})")
    return payload


def run_asymptotics(cfg, out: Path, chash: str, threads: int = 1) -> dict:
    p, traj = _trace(cfg)
    if p.regime is Regime.NAKED:
        escaped = any(e.kind is EventKind.ESCAPE for e in traj.events)
        payload = {"regime": p.regime.value, "escaped": escaped, "stop_reason": traj.stop_reason}
        write_json(out / "asymptotics.json", payload, chash)
        print(f"asymptotics: naked regime, no horizon; escaped={escaped}")
        return payload
    fit = horizon_approach_rate(traj, p)
    value = fit.rate if fit.model == "Exponential" else fit.coeff
    payload = {"regime": p.regime.value, "model": fit.model, "fitted": value, "closed_form": fit.expected,
               "relative_gap": fit.rel_error, "window": list(fit.window), "n": fit.n}
    write_json(out / "asymptotics.json", payload, chash)
    print(f"asymptotics: {p.regime.value} fitted {value:.8g} vs closed form {fit.expected:.8g} "
          f"(relative gap {fit.rel_error:.2e})")
    return payload


COMMANDS = {
    "trace": run_trace,
    "bundle": run_bundle,
    "caustic": run_caustic,
    "residual": run_residual,
    "asymptotics": run_asymptotics,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rntrace", description="Null geodesics and geometric optics on Reissner-Nordstrom.")
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON scenario file (overrides the preset)")
    ap.add_argument("--preset", help="shipped scenario: " + ", ".join(PRESETS))
    ap.add_argument("--out", help="output directory (default: outputs.dir of the config)")
    ap.add_argument("--threads", type=int, default=1, help="worker cap for ray bundles")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args.preset, args.config)
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        out = Path(args.out or cfg.get("outputs", {}).get("dir", "out"))
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](cfg, out, config_hash(cfg), args.threads)
    except ConfigError as exc:
        print(f"rntrace: config error: {exc}", file=sys.stderr)
        return 2
    except RNError as exc:
        print(f"rntrace: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``hhgstat {simulate,correlate,scan,params,theory}``.

Each command reads an optional flat ``key = value`` config file; command-line
flags override file values. Exit codes: 0 success, 1 domain error, 2 input or
format error.
"""
from __future__ import annotations

import argparse
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from .errors import FormatError, HHGError

EXIT_OK, EXIT_DOMAIN, EXIT_FORMAT = 0, 1, 2


# ---------------------------------------------------------------------------
# config handling


def _floats(text: str) -> list[float]:
    return [float(x) for x in str(text).replace(";", ",").split(",") if x.strip()]


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _opt_float(text):
    return None if text in (None, "", "none") else float(text)


def _opt_int(text):
    return None if text in (None, "", "none") else int(text)


@dataclass(frozen=True)
class Key:
    conv: Callable[[str], Any]
    default: Any
    help: str = ""


def parse_config_text(text: str, schema: dict[str, Key]) -> dict[str, Any]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"config line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in schema:
            raise FormatError(f"config line {lineno}: unknown key {key!r}")
        try:
            out[key] = schema[key].conv(value)
        except ValueError as exc:
            raise FormatError(f"config line {lineno}: bad value for {key}: {exc}") from exc
    return out


def resolve(args: argparse.Namespace, schema: dict[str, Key]) -> dict[str, Any]:
    params = {k: v.default for k, v in schema.items()}
    if getattr(args, "config", None):
        path = Path(args.config)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        params.update(parse_config_text(text, schema))
    for key, spec in schema.items():
        val = getattr(args, key, None)
        if val is not None:
            try:
                params[key] = spec.conv(val)
            except ValueError as exc:
                raise FormatError(f"--{key.replace('_', '-')}: {exc}") from exc
    return params


def _add_schema(p: argparse.ArgumentParser, schema: dict[str, Key]) -> None:
    p.add_argument("--config", help="flat key = value file; flags override it")
    for key, spec in schema.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                       help=f"{spec.help} (default: {spec.default})")


# ---------------------------------------------------------------------------
# output helpers


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def _clean(v):
    if isinstance(v, float) and not math.isfinite(v):
        return None
    return v


def manifest(command: str, args: argparse.Namespace, params: dict, out_dir: Path | None) -> tuple[dict, str]:
    m = {
        "command": command,
        "config": getattr(args, "config", None),
        "params": params,
        "seed": params.get("seed"),
        "output_dir": str(out_dir) if out_dir is not None else None,
        "version": __version__,
    }
    blob = json.dumps(m, sort_keys=True, separators=(",", ":"), default=_json_default)
    return m, hashlib.sha256(blob.encode()).hexdigest()


def atomic_write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)


def csv_bytes(header: list[str], rows: list[list], manifest_hash: str | None = None) -> bytes:
    buf = io.StringIO(newline="")
    if manifest_hash:
        buf.write(f"# manifest: {manifest_hash}\n")
    buf.write(",".join(header) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue().encode("utf-8")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return "" if not math.isfinite(v) else repr(float(v))
    return str(v)


def _write_manifest(out: Path, stem: str, m: dict, h: str, artifacts: dict[str, bytes]) -> None:
    body = dict(m, manifest_sha256=h,
                artifacts={k: hashlib.sha256(v).hexdigest() for k, v in sorted(artifacts.items())})
    text = json.dumps(body, sort_keys=True, indent=2, default=_json_default) + "\n"
    atomic_write(out / f"{stem}.manifest.json", text.encode("utf-8"))


# ---------------------------------------------------------------------------
# simulate

SIM_SCHEMA = {
    "source": Key(str, "coherent", "coherent | thermal | tmsv"),
    "mu3": Key(float, 0.05, "mean H3 photons per pulse (coherent, thermal)"),
    "mu5": Key(float, 0.0, "mean H5 photons per pulse (coherent, thermal)"),
    "n_mean": Key(float, 0.1, "mean photons per mode (tmsv)"),
    "n_pulses": Key(int, 1_000_000, "number of laser pulses"),
    "seed": Key(int, 0, "RNG seed"),
    "topology": Key(str, "single_beam_hbt", "single_beam_hbt | double_beam"),
    "mode": Key(str, "H3", "harmonic for single_beam_hbt"),
    "rep_rate_hz": Key(float, 18.66e6, "laser repetition rate"),
    "attenuation": Key(float, 1.0, "extra per-photon survival probability"),
    "quantum_efficiency": Key(_floats, [0.6], "one value or one per channel"),
    "dark_rate_cps": Key(float, 100.0, "dark counts per second"),
    "dead_time_ns": Key(float, 22.0, "non-paralyzable dead time"),
    "afterpulse_prob": Key(float, 0.01, "afterpulse probability per click"),
    "afterpulse_mean_ns": Key(float, 10.0, "mean afterpulse delay after recovery"),
    "tail_prob": Key(float, 0.1, "diffusion-tail probability per photon"),
    "tail_tau_ns": Key(float, 2.0, "diffusion-tail time constant"),
    "jitter_ps": Key(float, 150.0, "Gaussian timing jitter sigma"),
    "output": Key(str, "tags.hhgt", "tag file name inside --out"),
}


def build_run_config(p: dict):
    from .detector import DetectorParams, RunConfig, SourceModel, TOPOLOGIES
    from .errors import ConfigError

    kind = p["source"]
    if kind == "coherent":
        src = SourceModel.coherent(p["mu3"], p["mu5"])
    elif kind == "thermal":
        src = SourceModel.thermal(p["mu3"], p["mu5"])
    elif kind == "tmsv":
        src = SourceModel.tmsv(p["n_mean"])
    else:
        raise ConfigError(f"unknown source {kind!r}")
    if p["topology"] not in TOPOLOGIES:
        raise ConfigError(f"unknown topology {p['topology']!r}")
    etas = p["quantum_efficiency"]
    n_ch = TOPOLOGIES[p["topology"]]
    if len(etas) == 1:
        etas = etas * n_ch
    if len(etas) != n_ch:
        raise ConfigError(f"quantum_efficiency needs 1 or {n_ch} values")
    dets = [DetectorParams(e, p["dark_rate_cps"], p["dead_time_ns"], p["afterpulse_prob"],
                           p["afterpulse_mean_ns"], p["tail_prob"], p["tail_tau_ns"], p["jitter_ps"])
            for e in etas]
    return RunConfig(src, p["n_pulses"], p["seed"], p["topology"], dets, p["rep_rate_hz"],
                     p["attenuation"], p["mode"])


def cmd_simulate(args) -> int:
    from .detector import encode_tags, simulate_run

    p = resolve(args, SIM_SCHEMA)
    out = Path(args.out)
    cfg = build_run_config(p)
    stream = simulate_run(cfg)
    data = encode_tags(stream)
    m, h = manifest("simulate", args, p, out)
    name = p["output"]
    atomic_write(out / name, data)
    _write_manifest(out, name, m, h, {name: data})
    print(f"wrote {out / name}: {len(stream)} tags on {stream.n_channels} channels "
          f"(counts {stream.counts().tolist()}), manifest {h[:12]}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# correlate

COR_SCHEMA = {
    "bin_width_ps": Key(int, 100, "histogram bin width"),
    "max_delay_ns": Key(_opt_float, None, "histogram half-range (default: 4.5 periods)"),
    "r2_min": Key(float, 0.95, "acceptance threshold on fit R^2"),
    "dark_correct": Key(_bool, False, "subtract the inter-peak background"),
    "n_satellites": Key(int, 4, "satellites fitted on each side"),
    "half_window_ns": Key(float, 2.0, "peak fit half-window"),
    "pairs": Key(str, "auto", "auto, or named pair sets like g33=0-1;g35=0-2+1-3"),
    "prefix": Key(str, "", "output file prefix (default: tag file stem)"),
}


def _parse_pairs(text: str, n_channels: int) -> dict[str, tuple[tuple[int, int], ...]]:
    from .correlator import H33_PAIRS, H35_PAIRS, H55_PAIRS

    if text == "auto":
        if n_channels >= 4:
            return {"g33": H33_PAIRS, "g55": H55_PAIRS, "g35": H35_PAIRS}
        return {"g2": ((0, 1),)}
    out = {}
    try:
        for item in text.split(";"):
            name, spec = item.split("=")
            pairs = tuple(tuple(int(c) for c in pr.split("-")) for pr in spec.split("+"))
            if any(len(pr) != 2 for pr in pairs):
                raise ValueError
            out[name.strip()] = pairs
    except ValueError as exc:
        raise FormatError(f"cannot parse pairs {text!r}") from exc
    return out


def cmd_correlate(args) -> int:
    from .correlator import csi_test, default_max_delay_ps, estimate_g2
    from .detector import read_tags
    from .errors import RejectedInput

    p = resolve(args, COR_SCHEMA)
    path = Path(args.tagfile)
    try:
        stream = read_tags(path)
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    out = Path(args.out)
    stem = p["prefix"] or path.stem
    sets = _parse_pairs(p["pairs"], stream.n_channels)
    md = (int(round(p["max_delay_ns"] * 1000)) if p["max_delay_ns"] is not None
          else default_max_delay_ps(stream.rep_rate_hz, p["n_satellites"]))
    m, h = manifest("correlate", args, dict(p, tagfile=str(path)), out)
    artifacts: dict[str, bytes] = {}
    lines = []
    ests = {}
    for name, pairs in sets.items():
        res = estimate_g2(stream, pairs, bin_width=p["bin_width_ps"], max_delay=md, r2_min=p["r2_min"],
                          n_satellites=p["n_satellites"], half_window=p["half_window_ns"] * 1000,
                          dark_correct=p["dark_correct"])
        hist = res.histogram
        rows = [[int(d), int(c)] for d, c in zip(hist.delays, hist.counts)]
        fname = f"{stem}_{name}_hist.csv"
        artifacts[fname] = csv_bytes(["delay_ps", "counts"], rows, h)
        e = res.estimate
        ests[name] = e
        rec = {"manifest": h, "quantity": name, "pairs": [list(x) for x in pairs],
               "value": _clean(e.value), "std_error": _clean(e.std_error), "fit_r2": _clean(e.fit_r2),
               "accepted": e.accepted, "total_starts": hist.total_starts, "total_stops": hist.total_stops,
               "background_per_bin": res.background, "note": res.note}
        if res.satellites is not None:
            rec["satellite_amplitude"] = res.satellites.amplitude
            rec["satellite_centers_ps"] = [round(c, 1) for c in res.satellites.centers.tolist()]
        lines.append(rec)
    if all(k in ests for k in ("g33", "g55", "g35")):
        try:
            r = csi_test(ests["g33"], ests["g55"], ests["g35"])
            lines.append({"manifest": h, "quantity": "R", "value": r.value, "std_error": r.std_error,
                          "violated": r.violated})
        except RejectedInput as exc:
            lines.append({"manifest": h, "quantity": "R", "value": None, "std_error": None,
                          "violated": None, "note": str(exc)})
    report = "".join(json.dumps(rec, sort_keys=True, default=_json_default) + "\n" for rec in lines)
    artifacts[f"{stem}_report.jsonl"] = report.encode("utf-8")
    for fname, data in artifacts.items():
        atomic_write(out / fname, data)
    _write_manifest(out, f"{stem}_correlate", m, h, artifacts)
    sys.stdout.write(report)
    return EXIT_OK


# ---------------------------------------------------------------------------
# scan

SCAN_SCHEMA = {
    "intensities_tw_cm2": Key(_floats, [0.05, 0.1, 0.15], "increasing peak intensities"),
    "wavelength_nm": Key(float, 2100.0, "drive wavelength"),
    "duration_fs": Key(float, 80.0, "intensity FWHM of the Gaussian pulse"),
    "lattice_nm": Key(float, 0.565, "lattice constant; K_c = pi / a"),
    "n_e": Key(float, 1.0, "effective electron number"),
    "e_g_halfwidth_ev": Key(float, 1.0, "conduction-band half-width"),
    "c3": Key(float, 0.05, "H3 coupling (c5 follows from the frequency ratio)"),
    "volume_nm3": Key(_opt_float, None, "quantization volume; overrides c3 when set"),
    "cutoff": Key(int, 8, "Fock cutoff per mode"),
    "terms": Key(str, "linear,single_mode,two_mode,mixing", "enabled Hamiltonian terms"),
    "linear_scale": Key(float, 1.0, "scale on the linear (displacement) couplings"),
    "quadratic_scale": Key(float, 1.0, "scale on the quadratic (squeezing) couplings"),
    "n_e_exponent": Key(_opt_float, None, "n_e ~ (I / I_max)^k when set"),
    "window_fwhm": Key(float, 2.0, "evolution window, +- this many FWHM"),
    "steps_per_period": Key(int, 40, "minimum steps per fastest rotating period"),
    "output": Key(str, "scan.csv", "CSV file name inside --out"),
}


def cmd_scan(args) -> int:
    from .fock import vacuum
    from .hamiltonian import HamiltonianParams, Term, carrier_omega, pulse_from_laser, scan_intensity
    from .errors import NonPositiveInput

    p = resolve(args, SCAN_SCHEMA)
    try:
        terms = {Term(t.strip()) for t in p["terms"].split(",") if t.strip()}
    except ValueError as exc:
        raise FormatError(f"unknown term in {p['terms']!r}") from exc
    if p["lattice_nm"] <= 0 or p["cutoff"] < 1:
        raise NonPositiveInput("lattice_nm and cutoff must be positive")
    if p["volume_nm3"] is not None:
        params = HamiltonianParams.from_lattice(p["n_e"], p["e_g_halfwidth_ev"], p["lattice_nm"],
                                                p["wavelength_nm"], p["volume_nm3"])
    else:
        params = HamiltonianParams.from_coupling(p["n_e"], p["e_g_halfwidth_ev"], np.pi / p["lattice_nm"],
                                                 carrier_omega(p["wavelength_nm"]), p["c3"])

    def family(i):
        return pulse_from_laser(i, p["wavelength_nm"], p["duration_fs"])

    cut = (p["cutoff"], p["cutoff"])
    recs = scan_intensity(params, family, vacuum(cut), p["intensities_tw_cm2"], cutoffs=cut, terms=terms,
                          linear_scale=p["linear_scale"], quadratic_scale=p["quadratic_scale"],
                          n_e_exponent=p["n_e_exponent"], window=p["window_fwhm"],
                          steps_per_period=p["steps_per_period"])
    out = Path(args.out)
    m, h = manifest("scan", args, p, out)
    rows = [[r.intensity, r.g33, r.g55, r.g35, r.r, r.status] for r in recs]
    data = csv_bytes(["intensity", "g2_33", "g2_55", "g2_35", "R", "status"], rows, h)
    atomic_write(out / p["output"], data)
    _write_manifest(out, p["output"], m, h, {p["output"]: data})
    sys.stdout.write(data.decode("utf-8"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# params

PARAM_SCHEMA = {
    "material": Key(str, "GaAs", "built-in material name, or 'custom'"),
    "m_star": Key(_opt_float, None, "reduced mass / m_e"),
    "e_gap_ev": Key(_opt_float, None, "bandgap"),
    "lattice_nm": Key(_opt_float, None, "lattice constant (for the Bloch parameter)"),
    "intensity_tw_cm2": Key(float, 0.15, "peak intensity"),
    "wavelength_nm": Key(float, 2100.0, "drive wavelength"),
    "convention": Key(str, "vacuum", "field convention: vacuum | medium"),
    "refractive_index": Key(float, 1.0, "used by the medium convention"),
}


def cmd_params(args) -> int:
    from .strongfield import MATERIALS, LaserParams, MaterialParams, regime_report

    p = resolve(args, PARAM_SCHEMA)
    base = MATERIALS.get(p["material"])
    if base is None and (p["m_star"] is None or p["e_gap_ev"] is None):
        known = ", ".join(sorted(MATERIALS))
        raise HHGError(f"unknown material {p['material']!r} (built in: {known}); "
                       "supply m_star and e_gap_ev (and optionally lattice_nm)")
    mat = MaterialParams(
        p["material"],
        p["m_star"] if p["m_star"] is not None else base.m_star,
        p["e_gap_ev"] if p["e_gap_ev"] is not None else base.e_gap_ev,
        p["lattice_nm"] if p["lattice_nm"] is not None else (base.lattice_nm if base else None),
    )
    laser = LaserParams(wavelength_nm=p["wavelength_nm"], intensity_tw_cm2=p["intensity_tw_cm2"])
    rep = regime_report(mat, laser, convention=p["convention"], refractive_index=p["refractive_index"])
    data = csv_bytes(["quantity", "value"], [list(r) for r in rep.rows()])
    if args.out:
        out = Path(args.out)
        m, h = manifest("params", args, p, out)
        data = csv_bytes(["quantity", "value"], [list(r) for r in rep.rows()], h)
        atomic_write(out / "params.csv", data)
        _write_manifest(out, "params.csv", m, h, {"params.csv": data})
    sys.stdout.write(data.decode("utf-8"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# theory

THEORY_SCHEMA = {
    "k": Key(_opt_float, None, "Schmidt number of a uniform spectrum"),
    "weights": Key(_floats, [], "squared Schmidt weights lambda_k^2"),
    "spectrum_file": Key(str, "", "file of squared weights (comma or newline separated)"),
    "gains": Key(_floats, [1e-3, 0.1, 1.0, 3.0, 6.0], "optical gain values B"),
}


def cmd_theory(args) -> int:
    from .photostat import SqueezerSpectrum, g2_multimode_twin_beam, schmidt_number
    from .errors import InvalidK

    p = resolve(args, THEORY_SCHEMA)
    lam2 = p["weights"]
    if p["spectrum_file"]:
        try:
            lam2 = _floats(Path(p["spectrum_file"]).read_text(encoding="utf-8").replace("\n", ","))
        except OSError as exc:
            raise FormatError(f"cannot read spectrum file: {exc}") from exc
        except ValueError as exc:
            raise FormatError(f"bad spectrum file: {exc}") from exc
    rows = []
    for b in p["gains"]:
        if lam2:
            spec = SqueezerSpectrum.from_squared_weights(lam2, b)
        else:
            k = p["k"] if p["k"] is not None else 1.0
            if k < 1 or k != int(k):
                raise InvalidK(f"uniform spectrum needs an integer K >= 1, got {k}")
            spec = SqueezerSpectrum.uniform(int(k), b)
        rows.append([b, schmidt_number(spec), g2_multimode_twin_beam(spec)])
    data = csv_bytes(["gain", "schmidt_number", "g2"], rows)
    if args.out:
        out = Path(args.out)
        m, h = manifest("theory", args, p, out)
        data = csv_bytes(["gain", "schmidt_number", "g2"], rows, h)
        atomic_write(out / "theory.csv", data)
        _write_manifest(out, "theory.csv", m, h, {"theory.csv": data})
    sys.stdout.write(data.decode("utf-8"))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hhgstat", description="Photon statistics of harmonic emission: "
                                 "simulation, HBT analysis and model predictions.")
    ap.add_argument("--version", action="version", version=f"hhgstat {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="Monte-Carlo SPAD time tags")
    s.add_argument("--out", default=".", help="output directory")
    _add_schema(s, SIM_SCHEMA)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("correlate", help="histograms, g2 estimates and the CSI test from a tag file")
    c.add_argument("tagfile")
    c.add_argument("--out", default=".", help="output directory")
    _add_schema(c, COR_SCHEMA)
    c.set_defaults(func=cmd_correlate)

    sc = sub.add_parser("scan", help="model g2 and R versus drive intensity")
    sc.add_argument("--out", default=".", help="output directory")
    _add_schema(sc, SCAN_SCHEMA)
    sc.set_defaults(func=cmd_scan)

    pa = sub.add_parser("params", help="Keldysh, ponderomotive, dipole, relativistic and Bloch checks")
    pa.add_argument("--out", default=None, help="also write params.csv here")
    _add_schema(pa, PARAM_SCHEMA)
    pa.set_defaults(func=cmd_params)

    th = sub.add_parser("theory", help="multimode twin-beam g2 table")
    th.add_argument("--out", default=None, help="also write theory.csv here")
    _add_schema(th, THEORY_SCHEMA)
    th.set_defaults(func=cmd_theory)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        print(f"hhgstat: input error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (HHGError, ValueError) as exc:
        print(f"hhgstat: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())

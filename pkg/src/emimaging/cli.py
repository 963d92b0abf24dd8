"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 nothing detected above the noise level, 1 anything unexpected.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import subprocess
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .acquisition import NoiseSpec, acquire
from .core_model import NumericalError, ParameterError, SearchGrid, SensingMatrix
from .experiments import run_plan, write_outputs, write_table
from .forward import (
    forward_response,
    load_response,
    read_response_csv,
    save_response,
    write_response_csv,
)
from .inversion import (
    DetectionError,
    estimate_reflectivity,
    extract_peaks,
    image_many,
    write_json,
)
from .rmt import spectral_analysis, tracy_widom2
from .scene import load_plan, load_scene, scene_to_dict

EXIT_OK, EXIT_UNEXPECTED, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_NOTHING = 0, 1, 2, 3, 4
NO_PEAK_RATIO = 3.0


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def tool_version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], capture_output=True,
                             text=True, timeout=5, cwd=Path(__file__).parent)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def write_manifest(out_dir: Path, command: str, config: dict, outputs, started: float,
                   flags: dict | None = None) -> Path:
    outputs = [Path(p) for p in outputs]
    record = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "version": tool_version(),
        "started": _dt.datetime.fromtimestamp(started, _dt.timezone.utc).isoformat(),
        "finished": _dt.datetime.now(_dt.timezone.utc).isoformat(),
        "wall_time_s": time.time() - started,
        "flags": flags or {},
        "outputs": [{"path": p.name, "bytes": p.stat().st_size, "sha256": _sha256(p)}
                    for p in outputs],
    }
    path = out_dir / f"{command}_manifest.json"
    write_json(path, record)
    return path


def _scene_with_overrides(args):
    scene = load_scene(args.scene)
    if getattr(args, "sensing", None):
        scene = scene.with_sensing(SensingMatrix.parse(args.sensing))
    return scene


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


# -- subcommands --------------------------------------------------------------------

def cmd_forward(args) -> int:
    started = time.time()
    scene = _scene_with_overrides(args)
    resp = forward_response(scene.geometry, scene.inclusions, scene.sensing,
                            scene.wavenumber, scene.far_field)
    if args.noise:
        sigma1 = None
        if args.reference == "complete" and not scene.sensing.complete:
            full = forward_response(scene.geometry, scene.inclusions, SensingMatrix(),
                                    scene.wavenumber, scene.far_field)
            sigma1 = float(full.singular_values()[0])
        spec = NoiseSpec(args.noise, args.seed, args.scheme, args.reference)
        resp = acquire(resp, spec, sigma1)
    out_dir = _out_dir(args)
    path = out_dir / args.out
    if path.suffix == ".csv":
        write_response_csv(path, resp)
    else:
        save_response(path, resp)
    config = {"scene": scene_to_dict(scene), "noise": args.noise, "seed": args.seed,
              "scheme": args.scheme, "reference": args.reference}
    write_manifest(out_dir, "forward", config, [path], started)
    s = resp.singular_values()[:6]
    print("singular values:", " ".join(f"{v:.6g}" for v in s))
    return EXIT_OK


def _grid_from_args(args, scene) -> SearchGrid:
    grid = scene.grid
    if args.grid_lower or args.grid_upper or args.grid_step:
        if grid is None and not (args.grid_lower and args.grid_upper):
            raise ParameterError("scene has no grid: give both --grid-lower and --grid-upper")
        lo = args.grid_lower or list(grid.lower)
        hi = args.grid_upper or list(grid.upper)
        st = args.grid_step or (list(grid.step) if grid else [0.5] * 3)
        st = st * 3 if len(st) == 1 else st
        grid = SearchGrid(tuple(lo), tuple(hi), tuple(st))
    if grid is None:
        raise ParameterError("no search grid: define one in the scene or via --grid-lower/--grid-upper")
    return grid


def cmd_invert(args) -> int:
    started = time.time()
    scene = _scene_with_overrides(args)
    path = Path(args.data)
    if path.suffix == ".csv":
        resp = read_response_csv(path, scene.sensing)
    else:
        resp = load_response(path)
    if resp.sensing != scene.sensing:
        scene = scene.with_sensing(resp.sensing)
    M = scene.sensing.size * scene.geometry.n_sensors
    if resp.M != M:
        raise ParameterError(f"data is {resp.M}x{resp.M} but the scene implies M = {M}")
    grid = _grid_from_args(args, scene)
    out_dir = _out_dir(args)
    sd = spectral_analysis(resp.data, args.theta)
    config = {"data": str(path), "scene": scene.name, "theta": args.theta, "kind": args.kind,
              "grid": {"lower": grid.lower, "upper": grid.upper, "step": grid.step},
              "peaks": args.peaks, "separation": args.separation, "seed": None}
    diag = {"M": resp.M, "sigma_e": sd.sigma_e, "rank": sd.rank,
            "leading_singular_values": sd.singular_values[:10].tolist()}
    if sd.rank == 0:
        p = out_dir / "diagnostics.json"
        write_json(p, diag)
        write_manifest(out_dir, "invert", config, [p], started, {"nothing_detected": True})
        print("nothing detected above the noise level", file=sys.stderr)
        return EXIT_NOTHING
    vol = image_many([sd], grid, scene.geometry, scene.sensing, args.kind,
                     k=scene.wavenumber, far_field=scene.far_field, workers=args.threads)[0]
    peaks = extract_peaks(vol, args.peaks, geometry=scene.geometry, multiplier=args.separation)
    files = [out_dir / "image.csv", out_dir / "peaks.json", out_dir / "reflectivity.json",
             out_dir / "diagnostics.json"]
    vol.to_csv(files[0])
    write_json(files[1], peaks.to_dict())
    truth = {tuple(np.round(inc.center, 9)): inc.rho for inc in scene.inclusions}
    records = []
    for y in peaks.locations:
        est = estimate_reflectivity(resp, y, scene.geometry, scene.sensing,
                                    truth.get(tuple(np.round(y, 9))), scene.wavenumber, scene.far_field)
        records.append(est.to_dict())
    write_json(files[2], records)
    ratio = vol.peak_to_median()
    diag.update(peak_to_median=ratio, sigma_corrected=sd.sigma_corrected.tolist(),
                cos2=sd.cos2.tolist(), gamma=sd.gamma.tolist())
    write_json(files[3], diag)
    flags = {"no_significant_peak": bool(ratio < NO_PEAK_RATIO)}
    write_manifest(out_dir, "invert", config, files, started, flags)
    for y, v in zip(peaks.locations, peaks.values):
        print(f"peak at ({y[0]:g}, {y[1]:g}, {y[2]:g}) value {v:.4g}")
    if flags["no_significant_peak"]:
        print(f"no significant peak (peak/median = {ratio:.3g})")
    return EXIT_OK


def cmd_montecarlo(args) -> int:
    started = time.time()
    plan = load_plan(args.plan)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.trials is not None:
        over["trials"] = args.trials
    if args.theta is not None:
        over["theta"] = args.theta
    if args.scheme is not None:
        over["scheme"] = args.scheme
    if args.sensing is not None:
        over["sensing"] = args.sensing
    if args.noise is not None:
        over["fractions"] = tuple(args.noise)
    if args.kind is not None:
        over["imaging"] = args.kind
    plan = replace(plan, **over)
    out_dir = _out_dir(args)
    result = run_plan(plan, out_dir, args.threads)
    files = write_outputs(result, out_dir)
    write_manifest(out_dir, "montecarlo", plan.to_dict(), files, started)
    print(f"{plan.name}: {len(files)} files written to {out_dir} in {result.wall_time:.1f} s")
    return EXIT_OK


def cmd_tw2(args) -> int:
    started = time.time()
    tw = tracy_widom2()
    z = np.linspace(args.zmin, args.zmax, args.n)
    out_dir = _out_dir(args)
    path = out_dir / args.out
    write_table(path, [{"z": float(a), "cdf": float(c), "pdf": float(f)}
                       for a, c, f in zip(z, tw.cdf(z), tw.pdf(z))])
    write_manifest(out_dir, "tw2", {"zmin": args.zmin, "zmax": args.zmax, "n": args.n,
                                    "seed": None}, [path], started)
    print(f"mean {tw.mean():.6f} variance {tw.var():.6f}")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="emimaging", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="directory for output files (default: .)")
    common.add_argument("--threads", type=int, default=1, help="worker threads (results do not depend on it)")

    p = sub.add_parser("forward", parents=[common], help="synthesize a response matrix from a scene")
    p.add_argument("--scene", required=True, help="scene JSON path or bundled scene name")
    p.add_argument("--out", default="response.emrm", help="output file name (.emrm binary or .csv)")
    p.add_argument("--sensing", choices=["123", "12", "13", "23", "1", "2", "3"],
                   help="measured field components (default: from scene)")
    p.add_argument("--noise", type=float, default=0.0, help="noise level sigma/sigma_1 (default 0)")
    p.add_argument("--seed", type=int, default=0, help="noise seed")
    p.add_argument("--scheme", choices=["direct", "hadamard"], default="direct", help="acquisition scheme")
    p.add_argument("--reference", choices=["measured", "complete"], default="measured",
                   help="sigma_1 of the measured or of the complete-data matrix")
    p.set_defaults(func=cmd_forward)

    p = sub.add_parser("invert", parents=[common], help="image and estimate reflectivities from data")
    p.add_argument("--data", required=True, help="response matrix file (.emrm or .csv)")
    p.add_argument("--scene", required=True, help="scene providing array geometry and search grid")
    p.add_argument("--sensing", choices=["123", "12", "13", "23", "1", "2", "3"],
                   help="sensing set override for CSV data")
    p.add_argument("--theta", type=float, default=0.01, help="false-alarm rate of rank detection")
    p.add_argument("--kind", choices=["music", "single", "multi"], default="single", help="imaging function")
    p.add_argument("--peaks", type=int, default=1, help="number of peaks to extract")
    p.add_argument("--separation", type=float, default=1.0,
                   help="peak separation in units of the resolution lengths")
    p.add_argument("--grid-lower", type=float, nargs=3, help="search box lower corner")
    p.add_argument("--grid-upper", type=float, nargs=3, help="search box upper corner")
    p.add_argument("--grid-step", type=float, nargs="+", help="grid step (one or three values)")
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("montecarlo", parents=[common], help="run an experiment plan")
    p.add_argument("--plan", required=True, help="plan JSON path or bundled plan name")
    p.add_argument("--seed", type=int, help="override the plan seed")
    p.add_argument("--trials", type=int, help="override the trial count")
    p.add_argument("--noise", type=float, nargs="+", help="override the noise fractions")
    p.add_argument("--theta", type=float, help="override the false-alarm rate")
    p.add_argument("--kind", choices=["music", "single", "multi"], help="override the imaging function")
    p.add_argument("--scheme", choices=["direct", "hadamard"], help="override the acquisition scheme")
    p.add_argument("--sensing", choices=["123", "12", "13", "23", "1", "2", "3"],
                   help="override the sensing set")
    p.set_defaults(func=cmd_montecarlo)

    p = sub.add_parser("tw2", parents=[common], help="dump the Tracy-Widom (beta=2) table as CSV")
    p.add_argument("--out", default="tw2.csv", help="output CSV name")
    p.add_argument("--zmin", type=float, default=-10.0)
    p.add_argument("--zmax", type=float, default=6.0)
    p.add_argument("--n", type=int, default=321, help="number of samples")
    p.set_defaults(func=cmd_tw2)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParameterError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DetectionError as exc:
        print(f"nothing detected: {exc}", file=sys.stderr)
        return EXIT_NOTHING
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, (FileNotFoundError, ValueError)) else EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())

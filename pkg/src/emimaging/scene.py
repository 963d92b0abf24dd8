"""JSON scene and experiment-plan files.

A scene describes the array, the inclusions, the sensing set and the default
search grid. A plan names a scene and the Monte Carlo settings. Bundled files
live in ``emimaging/data`` and can be referenced by bare name.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .core_model import (
    ArrayGeometry,
    Ellipsoid,
    Inclusion,
    ParameterError,
    PhysicalConfig,
    SearchGrid,
    SensingMatrix,
    build_square_array,
)


class SchemaError(ParameterError):
    """Malformed scene or plan file; the message names the offending field."""


def _get(obj: dict, key: str, path: str, default=Ellipsis):
    if not isinstance(obj, dict):
        raise SchemaError(f"{path}: expected an object")
    if key not in obj:
        if default is Ellipsis:
            raise SchemaError(f"{path}.{key}: required field missing")
        return default
    return obj[key]


def _vector(value, path: str, n: int = 3) -> np.ndarray:
    try:
        v = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}: expected {n} numbers") from None
    if v.shape != (n,) or not np.all(np.isfinite(v)):
        raise SchemaError(f"{path}: expected {n} finite numbers")
    return v


def _matrix(value, path: str) -> np.ndarray:
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise SchemaError(f"{path}: expected a 3x3 matrix") from None
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise SchemaError(f"{path}: expected a 3x3 matrix of finite numbers")
    return m


@dataclass(frozen=True)
class Scene:
    name: str
    geometry: ArrayGeometry
    inclusions: tuple
    sensing: SensingMatrix = SensingMatrix()
    physical: PhysicalConfig = PhysicalConfig()
    far_field: bool = False
    grid: Optional[SearchGrid] = None

    @property
    def wavenumber(self) -> float:
        return self.physical.wavenumber

    @property
    def centers(self) -> np.ndarray:
        return np.array([inc.center for inc in self.inclusions])

    def with_sensing(self, sensing: SensingMatrix) -> "Scene":
        from dataclasses import replace
        return replace(self, sensing=sensing)


def _wrap(path: str, fn, *args):
    try:
        return fn(*args)
    except SchemaError:
        raise
    except ParameterError as exc:
        raise SchemaError(f"{path}: {exc}") from None


def parse_inclusion(obj: dict, path: str) -> Inclusion:
    center = _vector(_get(obj, "center", path), f"{path}.center")
    if "rho" in obj:
        return _wrap(path, Inclusion, center, _matrix(obj["rho"], f"{path}.rho"))
    if "ellipsoid" in obj:
        e = obj["ellipsoid"]
        ep = f"{path}.ellipsoid"
        axes = _vector(_get(e, "semiaxes", ep), f"{ep}.semiaxes")
        contrast = _get(e, "contrast", ep)
        if not isinstance(contrast, (int, float)):
            raise SchemaError(f"{ep}.contrast: expected a number")
        rot = _matrix(e.get("rotation", np.eye(3).tolist()), f"{ep}.rotation")
        ell = _wrap(ep, Ellipsoid, tuple(axes), float(contrast), rot)
        return _wrap(path, Inclusion.from_ellipsoid, center, ell)
    raise SchemaError(f"{path}: inclusion needs 'rho' or 'ellipsoid'")


def parse_grid(obj: dict, path: str) -> SearchGrid:
    step = obj.get("step", 0.5)
    if "center" in obj:
        c = _vector(obj["center"], f"{path}.center")
        w = _vector(_get(obj, "half_widths", path), f"{path}.half_widths")
        lo, hi = c - w, c + w
    else:
        lo = _vector(_get(obj, "lower", path), f"{path}.lower")
        hi = _vector(_get(obj, "upper", path), f"{path}.upper")
    step = step if isinstance(step, list) else [step] * 3
    return _wrap(path, SearchGrid, tuple(lo), tuple(hi), tuple(_vector(step, f"{path}.step")))


def parse_scene(obj: dict, name: str = "scene") -> Scene:
    if not isinstance(obj, dict):
        raise SchemaError("scene: expected a JSON object")
    arr = _get(obj, "array", "scene")
    if "positions" in arr:
        pos = np.asarray(arr["positions"], float)
        geometry = _wrap("scene.array", ArrayGeometry, pos, float(_get(arr, "aperture", "scene.array")),
                         float(_get(arr, "L", "scene.array")))
    else:
        geometry = _wrap("scene.array", build_square_array, _get(arr, "side_count", "scene.array"),
                         float(_get(arr, "spacing", "scene.array")), float(_get(arr, "L", "scene.array")))
    incs = _get(obj, "inclusions", "scene")
    if not isinstance(incs, list) or len(incs) == 0:
        raise SchemaError("scene.inclusions: at least one inclusion is required")
    inclusions = tuple(parse_inclusion(o, f"scene.inclusions[{i}]") for i, o in enumerate(incs))
    sensing = _wrap("scene.sensing", SensingMatrix.parse, str(obj.get("sensing", "123")))
    physical = _wrap("scene.wavelength", PhysicalConfig, float(obj.get("wavelength", 1.0)))
    grid = parse_grid(obj["grid"], "scene.grid") if "grid" in obj else None
    return Scene(str(obj.get("name", name)), geometry, inclusions, sensing, physical,
                 bool(obj.get("far_field", False)), grid)


def scene_to_dict(scene: Scene) -> dict:
    out: dict[str, Any] = {
        "name": scene.name,
        "array": {"positions": scene.geometry.positions.tolist(),
                  "aperture": scene.geometry.aperture, "L": scene.geometry.range_scale},
        "inclusions": [{"center": inc.center.tolist(), "rho": inc.rho.tolist()}
                       for inc in scene.inclusions],
        "sensing": scene.sensing.label,
        "wavelength": scene.physical.wavelength,
        "far_field": scene.far_field,
    }
    if scene.grid is not None:
        out["grid"] = {"lower": list(scene.grid.lower), "upper": list(scene.grid.upper),
                       "step": list(scene.grid.step)}
    return out


def _resolve(ref: str, kind: str) -> Path | Any:
    p = Path(ref)
    if p.suffix == ".json" or p.exists():
        if not p.exists():
            raise SchemaError(f"{kind} file not found: {ref}")
        return p
    res = resources.files("emimaging") / "data" / kind / f"{ref}.json"
    if not res.is_file():
        raise SchemaError(f"unknown bundled {kind[:-1]} {ref!r}")
    return res


def _read_json(src) -> dict:
    try:
        return json.loads(src.read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{src}: invalid JSON ({exc})") from None


def load_scene(ref: str) -> Scene:
    """Scene from a JSON path or a bundled name such as ``single_large``."""
    src = _resolve(str(ref), "scenes")
    return parse_scene(_read_json(src), Path(str(ref)).stem)


def bundled(kind: str) -> list[str]:
    d = resources.files("emimaging") / "data" / kind
    return sorted(p.name[:-5] for p in d.iterdir() if p.name.endswith(".json"))


PLAN_KINDS = ("spectrum", "noise_level", "rank", "localization", "reflectivity", "image")


@dataclass(frozen=True)
class TrialPlan:
    """Monte Carlo settings. ``fractions`` are noise levels sigma/sigma_1."""

    name: str
    kind: str
    scene: str
    fractions: tuple
    trials: int = 100
    seed: int = 0
    theta: float = 0.01
    scheme: str = "direct"
    reference: str = "measured"
    sensing: Optional[str] = None
    imaging: str = "single"
    peaks: int = 1
    separation: float = 1.0
    rank_assumed: Optional[int] = None
    common_noise: bool = False
    locate: str = "estimate"
    grid: Optional[dict] = None
    slices: tuple = ()
    record_raw: bool = True
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in PLAN_KINDS:
            raise SchemaError(f"plan.kind: unknown kind {self.kind!r}; expected one of {PLAN_KINDS}")
        if int(self.trials) < 1:
            raise SchemaError("plan.trials: trial count must be >= 1")
        if len(self.fractions) == 0 or any(not f >= 0 for f in self.fractions):
            raise SchemaError("plan.fractions: need a non-empty list of noise fractions >= 0")
        if not 0 < self.theta < 1:
            raise SchemaError("plan.theta: must be in (0, 1)")
        if self.imaging not in ("music", "single", "multi"):
            raise SchemaError(f"plan.imaging: unknown imaging kind {self.imaging!r}")
        if self.locate not in ("estimate", "true"):
            raise SchemaError("plan.locate: expected 'estimate' or 'true'")
        if self.scheme not in ("direct", "hadamard"):
            raise SchemaError(f"plan.scheme: unknown scheme {self.scheme!r}")

    def to_dict(self) -> dict:
        from dataclasses import asdict
        d = asdict(self)
        d["fractions"] = list(self.fractions)
        d["slices"] = [list(s) for s in self.slices]
        return d


def parse_plan(obj: dict, name: str = "plan") -> TrialPlan:
    if not isinstance(obj, dict):
        raise SchemaError("plan: expected a JSON object")
    known = set(TrialPlan.__dataclass_fields__)
    unknown = set(obj) - known
    if unknown:
        raise SchemaError(f"plan.{sorted(unknown)[0]}: unknown field")
    kw = dict(obj)
    kw.setdefault("name", name)
    for key in ("kind", "scene", "fractions"):
        _get(obj, key, "plan")
    if not isinstance(kw["fractions"], list):
        raise SchemaError("plan.fractions: expected a list")
    kw["fractions"] = tuple(float(f) for f in kw["fractions"])
    kw["slices"] = tuple(tuple(s) for s in kw.get("slices", ()))
    return TrialPlan(**kw)


def load_plan(ref: str) -> TrialPlan:
    src = _resolve(str(ref), "plans")
    return parse_plan(_read_json(src), Path(str(ref)).stem)

"""Monte Carlo harness for the spectral, localization and reflectivity studies.

Every trial draws its noise from a generator seeded with
``derive_seed(plan.seed, index)``, so results do not depend on the number of
worker threads or on the order in which trials finish.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .acquisition import derive_seed, hadamard_decode, synthesize_noise
from .core_model import SearchGrid, SensingMatrix
from .forward import forward_response
from .inversion import (
    COMPONENT_NAMES,
    DetectionError,
    estimate_reflectivity,
    extract_peaks,
    image_many,
    resolution_lengths,
)
from .rmt import (
    leading_svd,
    predict_cos2,
    predict_singular_value,
    predict_singular_value_std,
    spectral_analysis,
)
from .scene import Scene, TrialPlan, load_scene, parse_grid

IMAGE_BATCH = 25


@dataclass
class StatSummary:
    """Empirical mean, standard deviation and histogram of one quantity."""

    name: str
    fraction: float
    mean: float
    std: float
    edges: np.ndarray
    counts: np.ndarray
    samples: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, name: str, fraction: float, samples, bin_width: float = 1.0,
                     keep: bool = True, **extra) -> "StatSummary":
        s = np.asarray(samples, float)
        finite = s[np.isfinite(s)]
        if len(finite) == 0:
            return cls(name, fraction, float("nan"), float("nan"), np.array([0.0, bin_width]),
                       np.array([len(s)]) * 0, s if keep else None, dict(extra, missing=len(s)))
        mean = float(np.mean(finite))
        std = 0.0 if np.all(finite == finite[0]) else float(np.std(finite, ddof=1))
        lo = np.floor(finite.min() / bin_width - 0.5) + 0.5
        hi = np.ceil(finite.max() / bin_width + 0.5) - 0.5
        edges = np.arange(lo, hi + 0.5, 1.0) * bin_width
        if len(edges) < 2:
            edges = np.array([lo, lo + 1.0]) * bin_width
        counts, _ = np.histogram(finite, edges)
        return cls(name, fraction, mean, std, edges, counts, s if keep else None,
                   dict(extra, missing=int(len(s) - len(finite))))

    def median(self) -> float:
        return float(np.nanmedian(self.samples)) if self.samples is not None else float("nan")


@dataclass
class ExperimentResult:
    plan: TrialPlan
    summaries: list
    table: list
    raw: dict = field(default_factory=dict)
    wall_time: float = 0.0

    def summary(self, name: str, fraction: float) -> StatSummary:
        for s in self.summaries:
            if s.name == name and np.isclose(s.fraction, fraction):
                return s
        raise KeyError((name, fraction))

    def rows(self, **match) -> list:
        return [r for r in self.table if all(r.get(k) == v for k, v in match.items())]


# -- helpers ---------------------------------------------------------------------

def _pmap(fn: Callable, items, threads: int = 1) -> list:
    items = list(items)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def resolve_scene(plan: TrialPlan) -> Scene:
    scene = load_scene(plan.scene)
    if plan.sensing:
        scene = scene.with_sensing(SensingMatrix.parse(plan.sensing))
    return scene


def plan_grid(plan: TrialPlan, scene: Scene) -> SearchGrid:
    if plan.grid is not None:
        return parse_grid(plan.grid, "plan.grid")
    if scene.grid is None:
        raise ValueError("neither plan nor scene defines a search grid")
    return scene.grid


def noiseless_matrix(scene: Scene, sensing: Optional[SensingMatrix] = None) -> np.ndarray:
    return forward_response(scene.geometry, scene.inclusions, sensing or scene.sensing,
                            scene.wavenumber, scene.far_field).data


def reference_sigma1(plan: TrialPlan, scene: Scene, D: np.ndarray) -> float:
    """sigma_1 that noise fractions refer to (measured or complete data)."""
    if plan.reference == "complete" and not scene.sensing.complete:
        D = noiseless_matrix(scene, SensingMatrix())
    return float(np.linalg.svd(D, compute_uv=False)[0])


def unit_noise(M: int, seed: int, scheme: str = "direct", dtype=np.complex128) -> np.ndarray:
    """Effective noise matrix for sigma = 1 under the given acquisition scheme."""
    if scheme == "hadamard":
        raw = synthesize_noise(M, np.sqrt(M), seed, np.complex128)
        return hadamard_decode(raw).astype(dtype)
    return synthesize_noise(M, 1.0, seed, dtype)


def _trial_seed(plan: TrialPlan, fi: int, t: int) -> int:
    index = t if plan.common_noise else fi * plan.trials + t
    return derive_seed(plan.seed, index)


def _noisy(D: np.ndarray, sigma: float, plan: TrialPlan, fi: int, t: int, dtype=np.complex128):
    if sigma == 0:
        return D.astype(dtype)
    W = unit_noise(D.shape[0], _trial_seed(plan, fi, t), plan.scheme, dtype)
    W *= W.real.dtype.type(sigma)
    W += D.astype(dtype)
    return W


# -- spectrum statistics ---------------------------------------------------------

def run_spectrum_sweep(plan: TrialPlan, threads: int = 1, n_values: int = 3) -> ExperimentResult:
    """Leading singular values and angles of noisy data across noise levels."""
    t0 = time.perf_counter()
    scene = resolve_scene(plan)
    D = noiseless_matrix(scene)
    M = D.shape[0]
    U0, s0, _ = np.linalg.svd(D)
    U0 = U0[:, :n_values]
    s0 = s0[:n_values]
    s1 = reference_sigma1(plan, scene, D)
    F = len(plan.fractions)

    def trial(t):
        out = np.empty((F, 2 * n_values))
        noise = None
        for fi, p in enumerate(plan.fractions):
            sigma = p * s1
            if sigma == 0:
                A = D
            elif plan.common_noise:
                if noise is None:
                    noise = unit_noise(M, _trial_seed(plan, fi, t), plan.scheme, np.complex64)
                A = D.astype(np.complex64) + np.float32(sigma) * noise
            else:
                A = _noisy(D, sigma, plan, fi, t, np.complex64)
            if sigma == 0:
                U, s, _ = np.linalg.svd(A)
                s, U = s[:n_values], U[:, :n_values]
            else:
                s, U = leading_svd(A, n_values, tol=1e-4, seed=t)
            out[fi, :n_values] = s
            out[fi, n_values:] = np.abs(np.einsum("mj,mj->j", U.conj(), U0)) ** 2
        return out

    samples = np.stack(_pmap(trial, range(plan.trials), threads))   # (T, F, 2n)
    summaries, table = [], []
    for fi, p in enumerate(plan.fractions):
        sigma = p * s1
        norm = sigma if sigma > 0 else 1.0
        for j in range(n_values):
            sv = samples[:, fi, j]
            c2 = samples[:, fi, n_values + j]
            pred = predict_singular_value(s0[j], sigma)
            pred_std = predict_singular_value_std(s0[j], sigma, M)
            pred_c2 = predict_cos2(s0[j], sigma) if s0[j] > sigma else float("nan")
            summ = StatSummary.from_samples(f"sigma{j + 1}", p, sv / norm, bin_width=0.01,
                                            keep=plan.record_raw)
            summc = StatSummary.from_samples(f"cos2_{j + 1}", p, c2, bin_width=0.01,
                                             keep=plan.record_raw)
            summaries += [summ, summc]
            table.append({
                "fraction": p, "sigma": sigma, "j": j + 1, "sigma_j": s0[j],
                "ratio": s0[j] / sigma if sigma > 0 else float("inf"),
                "mean": summ.mean, "std": summ.std, "pred_mean": pred / norm,
                "pred_std": pred_std / norm, "mean_cos2": summc.mean, "std_cos2": summc.std,
                "pred_cos2": pred_c2,
            })
    return ExperimentResult(plan, summaries, table, {"spectra": samples},
                            time.perf_counter() - t0)


# -- noise level and rank ----------------------------------------------------------

def run_noise_level(plan: TrialPlan, threads: int = 1) -> ExperimentResult:
    """Noise-level estimates and detected effective ranks across noise levels."""
    from .rmt import effective_rank, estimate_noise_level

    t0 = time.perf_counter()
    scene = resolve_scene(plan)
    D = noiseless_matrix(scene)
    M = D.shape[0]
    s1 = reference_sigma1(plan, scene, D)
    R = plan.rank_assumed if plan.rank_assumed is not None else 3 * len(scene.inclusions)
    k = max(R + 3, 8)

    def trial(args):
        fi, t = args
        sigma = plan.fractions[fi] * s1
        A = _noisy(D, sigma, plan, fi, t, np.complex64)
        total = float(np.vdot(A, A).real)
        s, _ = leading_svd(A, k, tol=1e-6, seed=t)
        se = estimate_noise_level(s, R, M, total)
        return se, effective_rank(s, se, M, plan.theta)

    F = len(plan.fractions)
    res = _pmap(trial, [(fi, t) for fi in range(F) for t in range(plan.trials)], threads)
    res = np.array(res, float).reshape(F, plan.trials, 2)
    summaries, table = [], []
    for fi, p in enumerate(plan.fractions):
        sigma = p * s1
        ratio = res[fi, :, 0] / sigma if sigma > 0 else res[fi, :, 0]
        ranks = res[fi, :, 1]
        sr = StatSummary.from_samples("sigma_e_ratio", p, ratio, bin_width=0.001, keep=plan.record_raw)
        rk = StatSummary.from_samples("rank", p, ranks, bin_width=1.0, keep=plan.record_raw)
        summaries += [sr, rk]
        vals, counts = np.unique(ranks.astype(int), return_counts=True)
        table.append({"fraction": p, "sigma": sigma, "sigma1_over_sigma": 1.0 / p if p else float("inf"),
                      "mean_sigma_e_ratio": sr.mean, "std_sigma_e_ratio": sr.std,
                      "rank_mode": int(vals[np.argmax(counts)]),
                      "rank_counts": ";".join(f"{v}:{c}" for v, c in zip(vals, counts))})
    return ExperimentResult(plan, summaries, table, {"noise_level": res}, time.perf_counter() - t0)


# -- localization ---------------------------------------------------------------------

def cell_peak_values(volume, centers, geometry, multiplier: float = 1.0) -> np.ndarray:
    """Largest image value inside the resolution cell around each center."""
    s_cross, s_range = resolution_lengths(geometry, multiplier)
    pts = volume.grid.points()
    out = []
    for c in np.atleast_2d(centers):
        d = pts - c
        inside = (np.hypot(d[:, 0], d[:, 1]) <= s_cross) & (np.abs(d[:, 2]) <= s_range)
        out.append(float(volume.values[inside].max()) if inside.any() else float("nan"))
    return np.array(out)


def _trial_spectra(D, sigma, plan, fi, threads, k=12):
    def one(t):
        A = _noisy(D, sigma, plan, fi, t, np.complex64)
        return spectral_analysis(A, plan.theta, plan.rank_assumed, k=k, dtype=np.complex64)
    return _pmap(one, range(plan.trials), threads)


def run_localization_histograms(plan: TrialPlan, threads: int = 1) -> ExperimentResult:
    """Peak locations of the imaging function over noise realizations."""
    t0 = time.perf_counter()
    scene = resolve_scene(plan)
    grid = plan_grid(plan, scene)
    D = noiseless_matrix(scene)
    s1 = reference_sigma1(plan, scene, D)
    centers = scene.centers
    P = len(centers)
    compare = plan.options.get("compare")
    summaries, table, raw = [], [], {}
    for fi, p in enumerate(plan.fractions):
        sigma = p * s1
        spectra = _trial_spectra(D, sigma, plan, fi, threads)
        T = plan.trials
        peaks = np.full((T, plan.peaks, 3), np.nan)
        ratio = np.full(T, np.nan)
        cells = np.full((T, P), np.nan)
        ranks = np.array([sd.rank for sd in spectra])
        cmp_ratio = np.full(T, np.nan)
        ok = [t for t in range(T) if spectra[t].rank > 0]
        for start in range(0, len(ok), IMAGE_BATCH):
            batch = ok[start:start + IMAGE_BATCH]
            sds = [spectra[t] for t in batch]
            try:
                vols = image_many(sds, grid, scene.geometry, scene.sensing, plan.imaging,
                                  k=scene.wavenumber, far_field=scene.far_field, workers=threads)
            except DetectionError:
                vols = []
                for sd in sds:
                    try:
                        vols += image_many([sd], grid, scene.geometry, scene.sensing, plan.imaging,
                                           k=scene.wavenumber, far_field=scene.far_field)
                    except DetectionError:
                        vols.append(None)
            for t, vol in zip(batch, vols):
                if vol is None:
                    continue
                res = extract_peaks(vol, plan.peaks, geometry=scene.geometry,
                                    multiplier=plan.separation)
                peaks[t, : len(res.locations)] = res.locations
                ratio[t] = vol.peak_to_median()
                cells[t] = cell_peak_values(vol, centers, scene.geometry)
            if compare:
                cvols = image_many(sds, grid, scene.geometry, scene.sensing, compare,
                                   k=scene.wavenumber, far_field=scene.far_field, workers=threads)
                for t, vol in zip(batch, cvols):
                    cmp_ratio[t] = vol.peak_to_median()
        raw[f"peaks_{p}"] = peaks
        raw[f"ratio_{p}"] = ratio
        raw[f"cells_{p}"] = cells
        raw[f"ranks_{p}"] = ranks
        if compare:
            raw[f"compare_ratio_{p}"] = cmp_ratio
        step = grid.step
        for a, name in enumerate(("y1", "y2", "y3")):
            summaries.append(StatSummary.from_samples(name, p, peaks[:, 0, a], bin_width=step[a],
                                                      keep=plan.record_raw))
        summaries.append(StatSummary.from_samples("peak_to_median", p, ratio, keep=plan.record_raw))
        summaries.append(StatSummary.from_samples("rank", p, ranks, keep=plan.record_raw))
        # which true locations appear among the extracted peaks
        snapped = np.array([grid.points()[grid.nearest_index(c)] for c in centers])
        found = np.array([[np.any(np.all(np.isclose(peaks[t], c), axis=1)) for c in snapped]
                          for t in range(T)])
        raw[f"found_{p}"] = found
        row = {"fraction": p, "sigma": sigma, "trials": T,
               "rank_mode": int(np.bincount(ranks).argmax()),
               "all_found": int(np.sum(found.all(axis=1))),
               "mean_peak_to_median": float(np.nanmean(ratio))}
        d = peaks[:, 0, :] - centers[0]
        row["cross_exact"] = int(np.sum(np.all(np.abs(d[:, :2]) < 1e-9, axis=1)))
        row["range_within_1.5"] = int(np.sum(np.abs(d[:, 2]) <= 1.5 + 1e-9))
        row["cross_within_1"] = int(np.sum(np.max(np.abs(d[:, :2]), axis=1) <= 1.0 + 1e-9))
        row["y3_std"] = float(np.nanstd(peaks[:, 0, 2], ddof=1)) if T > 1 else 0.0
        if compare:
            row[f"{compare}_below_{plan.imaging}"] = int(np.sum(cmp_ratio < ratio))
        if P > 1:
            weakest = np.nanargmin(np.where(np.isnan(cells), np.inf, cells), axis=1)
            for q in range(P):
                row[f"weakest_is_{q + 1}"] = int(np.sum(weakest == q))
        table.append(row)
    return ExperimentResult(plan, summaries, table, raw, time.perf_counter() - t0)


# -- reflectivity -----------------------------------------------------------------------

def _match_peaks(peaks: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Extracted peak nearest to each true center (cross-range first, then range)."""
    out = np.full((len(centers), 3), np.nan)
    valid = peaks[np.all(np.isfinite(peaks), axis=1)]
    if len(valid) == 0:
        return out
    for i, c in enumerate(centers):
        d = valid - c
        out[i] = valid[np.argmin(np.hypot(d[:, 0], d[:, 1]) + 1e-3 * np.abs(d[:, 2]))]
    return out


def run_reflectivity_errors(plan: TrialPlan, threads: int = 1) -> ExperimentResult:
    """Relative errors of reflectivity estimates across noise realizations.

    With ``plan.locate == "true"`` the estimate is evaluated at the true
    centers, otherwise at the matched peaks of the imaging function.
    """
    t0 = time.perf_counter()
    scene = resolve_scene(plan)
    D = noiseless_matrix(scene)
    s1 = reference_sigma1(plan, scene, D)
    centers = scene.centers
    truths = [inc.rho for inc in scene.inclusions]
    P = len(centers)
    grid = plan_grid(plan, scene) if plan.locate == "estimate" else None
    summaries, table, raw = [], [], {}
    for fi, p in enumerate(plan.fractions):
        sigma = p * s1
        T = plan.trials
        locs = np.repeat(centers[None], T, axis=0).astype(float)
        if plan.locate == "estimate" and sigma > 0:
            loc_plan = plan
            spectra = _trial_spectra(D, sigma, loc_plan, fi, threads)
            for start in range(0, T, IMAGE_BATCH):
                idx = list(range(start, min(start + IMAGE_BATCH, T)))
                sds = [spectra[t] for t in idx if spectra[t].rank > 0]
                ids = [t for t in idx if spectra[t].rank > 0]
                vols = image_many(sds, grid, scene.geometry, scene.sensing, plan.imaging,
                                  k=scene.wavenumber, far_field=scene.far_field, workers=threads) if sds else []
                for t in idx:
                    locs[t] = np.nan
                for t, vol in zip(ids, vols):
                    res = extract_peaks(vol, max(plan.peaks, P), geometry=scene.geometry,
                                        multiplier=plan.separation)
                    locs[t] = _match_peaks(res.locations, centers)

        def trial(t):
            A = _noisy(D, sigma, plan, fi, t, np.complex128)
            errs = np.full((P, 6), np.nan)
            for q in range(P):
                if np.all(np.isfinite(locs[t, q])):
                    est = estimate_reflectivity(A, locs[t, q], scene.geometry, scene.sensing,
                                                truths[q], scene.wavenumber, scene.far_field)
                    errs[q] = est.relative_errors(mode=plan.options.get("error_mode", "modulus"))
            return errs

        errs = np.stack(_pmap(trial, range(T), threads))       # (T, P, 6)
        raw[f"errors_{p}"] = errs
        raw[f"locations_{p}"] = locs
        for q in range(P):
            for c, cname in enumerate(COMPONENT_NAMES):
                s = StatSummary.from_samples(f"inc{q + 1}_{cname}", p, errs[:, q, c], bin_width=1.0,
                                             keep=plan.record_raw)
                summaries.append(s)
            table.append({"fraction": p, "inclusion": q + 1, "statistic": "median",
                          **{n: float(np.nanmedian(errs[:, q, c])) for c, n in enumerate(COMPONENT_NAMES)}})
            table.append({"fraction": p, "inclusion": q + 1, "statistic": "first_trial",
                          **{n: float(errs[0, q, c]) for c, n in enumerate(COMPONENT_NAMES)}})
    return ExperimentResult(plan, summaries, table, raw, time.perf_counter() - t0)


# -- single-realization images ---------------------------------------------------------

def run_images(plan: TrialPlan, out_dir, threads: int = 1) -> ExperimentResult:
    """One noisy realization per level; writes the image volume and planar slices."""
    t0 = time.perf_counter()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scene = resolve_scene(plan)
    grid = plan_grid(plan, scene)
    D = noiseless_matrix(scene)
    s1 = reference_sigma1(plan, scene, D)
    kinds = [plan.imaging] + ([plan.options["compare"]] if "compare" in plan.options else [])
    table, files = [], []
    for fi, p in enumerate(plan.fractions):
        A = _noisy(D, p * s1, plan, fi, 0)
        sd = spectral_analysis(A, plan.theta, plan.rank_assumed)
        for kind in kinds:
            vol = image_many([sd], grid, scene.geometry, scene.sensing, kind,
                             k=scene.wavenumber, far_field=scene.far_field, workers=threads)[0]
            res = extract_peaks(vol, plan.peaks, geometry=scene.geometry, multiplier=plan.separation)
            stem = f"{plan.name}_{kind}_p{p:g}"
            vol.to_csv(out_dir / f"{stem}_volume.csv")
            files.append(out_dir / f"{stem}_volume.csv")
            for axis, value in plan.slices:
                name = out_dir / f"{stem}_slice_{'y' + str(int(axis) + 1)}_{value:g}.csv"
                vol.slice_to_csv(name, int(axis), float(value))
                files.append(name)
            table.append({"fraction": p, "kind": kind, "rank": sd.rank, "sigma_e": sd.sigma_e,
                          "peak_to_median": vol.peak_to_median(),
                          "peaks": ";".join("(%g,%g,%g)" % tuple(y) for y in res.locations)})
    return ExperimentResult(plan, [], table, {"files": files}, time.perf_counter() - t0)


RUNNERS = {
    "spectrum": run_spectrum_sweep,
    "noise_level": run_noise_level,
    "rank": run_noise_level,
    "localization": run_localization_histograms,
    "reflectivity": run_reflectivity_errors,
}


def run_plan(plan: TrialPlan, out_dir=None, threads: int = 1) -> ExperimentResult:
    if plan.kind == "image":
        if out_dir is None:
            raise ValueError("image plans need an output directory")
        return run_images(plan, out_dir, threads)
    return RUNNERS[plan.kind](plan, threads)


# -- output ---------------------------------------------------------------------------

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_table(path, rows: list) -> None:
    keys: list = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(keys)
        for r in rows:
            w.writerow([_fmt(r.get(k, "")) for k in keys])


def write_outputs(result: ExperimentResult, out_dir) -> list:
    """Summary table, statistics, histograms and raw samples as CSV files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    name = result.plan.name
    files = list(result.raw.get("files", []))
    path = out_dir / f"{name}_table.csv"
    write_table(path, result.table)
    files.append(path)
    if result.summaries:
        stats = [{"quantity": s.name, "fraction": s.fraction, "mean": s.mean, "std": s.std,
                  "median": s.median(), "count": int(np.sum(s.counts)),
                  "missing": s.extra.get("missing", 0)} for s in result.summaries]
        path = out_dir / f"{name}_stats.csv"
        write_table(path, stats)
        files.append(path)
        hist = [{"quantity": s.name, "fraction": s.fraction, "left": s.edges[i],
                 "right": s.edges[i + 1], "count": int(c)}
                for s in result.summaries for i, c in enumerate(s.counts)]
        path = out_dir / f"{name}_histograms.csv"
        write_table(path, hist)
        files.append(path)
        if result.plan.record_raw:
            rows = []
            for s in result.summaries:
                if s.samples is not None:
                    rows += [{"quantity": s.name, "fraction": s.fraction, "trial": i, "value": v}
                             for i, v in enumerate(s.samples)]
            path = out_dir / f"{name}_samples.csv"
            write_table(path, rows)
            files.append(path)
    return files

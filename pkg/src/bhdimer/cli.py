"""Config-driven experiment runner: ``bhdimer run|scan|validate``.

Configs are flat ``key = value`` files. Lists are comma separated; a
logarithmic grid can be written ``log:start:stop:count``. Every run writes CSV
tables, JSON summaries and a ``manifest.json`` with SHA-256 checksums.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import math
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .ica import (IcaVariant, cached_table, compare_variants, comparison_to_json,
                  ica_final_split, schedule_to_csv, build_schedule, crossing_probabilities,
                  with_diabatic_pairs)
from .model import DomainError, ModelParams, SweepProtocol
from .propagate import (Mixture, PropagationError, eigenstate, microcanonical_mixture, occupations_to_csv,
                        project_adiabatic, propagate, return_probability_scan,
                        split_final_distribution, sweep_final_occupation)
from .semiclassics import (area_table, area_table_to_csv, energy_for_action, enclosed_action,
                           ensemble_to_csv, evolve_ensemble, kruskal_return_probability,
                           sample_microcanonical, swallowtail_halfwidth, upper_lobe_area)
from .spectrum import (SolverError, crossings_to_csv, density_of_states, detect_crossings,
                       eigen_at, min_gap, scan_spectrum, spectrum_to_csv, symmetric_splitting)

log = logging.getLogger("bhdimer")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INVALID, EXIT_COMPUTE = 0, 1, 2

KINDS = ("spectrum-scan", "gap-vs-N", "dos", "sweep-map", "final-split", "return-scan",
         "ica-compare", "classical-ensemble", "correspondence")

# key -> (parser, default); None default means "no default"
FIELDS = {
    "schema_version": (int, None),
    "kind": (str, None),
    "n_particles": (int, None),
    "u": (float, None),
    "omega": (float, 1.0),
    "delta_initial": (float, None),
    "delta_turn": (float, None),
    "delta": (float, None),
    "half_time": (float, None),
    "half_times": ("floats", None),
    "n_values": ("ints", None),
    "u_values": ("floats", None),
    "level": (int, None),
    "mixture_size": (int, None),
    "center_level": (int, None),
    "center_levels": ("ints", None),
    "target_energy": (float, None),
    "action": (float, None),
    "action_fraction": (float, None),
    "energy": (float, None),
    "samples": (int, 400),
    "dt": (float, 0.01),
    "tolerance": (float, 1e-6),
    "snapshots": (int, 200),
    "energy_bins": (int, 50),
    "grid_count": (int, None),
    "variant": (str, "improved"),
    "exact": ("bool", False),
    "drift_threshold": (float, 1e-8),
    "failure_threshold": (float, 0.01),
    "workers": (int, None),
    "seed": (int, 0),
    "out": (str, None),
}

WINDOW = ("n_particles", "u", "delta_initial", "delta_turn")
REQUIRED = {
    "spectrum-scan": WINDOW,
    "gap-vs-N": ("n_values", "u_values"),
    "dos": ("n_particles", "u", "delta"),
    "sweep-map": WINDOW + ("half_time",),
    "final-split": WINDOW + ("half_time",),
    "return-scan": WINDOW + ("half_times",),
    "ica-compare": WINDOW + ("half_time",),
    "classical-ensemble": WINDOW + ("half_times",),
    "correspondence": WINDOW + ("half_times", "mixture_size", "center_levels"),
}
NEEDS_INITIAL = ("sweep-map", "final-split", "return-scan")
SCAN_AXES = {"N": "n_particles", "T": "half_time", "u": "u", "level": "level",
             "width": "mixture_size"}

# calibrated step model of the adaptive propagator: dt ~ 1.55 tol^(1/4) (N/30)^(-0.17)
STEP_WARN = 5e7


class ConfigError(ValueError):
    """Schema violation; the message names the offending field."""


def _parse_list(text, conv):
    text = text.strip()
    if text.startswith("log:"):
        try:
            _, a, b, n = text.split(":")
            return [conv(x) for x in np.geomspace(float(a), float(b), int(n))]
        except ValueError as exc:
            raise ValueError(f"bad log grid {text!r}; expected log:start:stop:count") from exc
    return [conv(x) for x in text.split(",") if x.strip()]


def _convert(key, raw):
    kind, _ = FIELDS[key]
    try:
        if kind == "floats":
            return _parse_list(raw, float)
        if kind == "ints":
            return _parse_list(raw, int)
        if kind == "bool":
            v = raw.strip().lower()
            if v not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return v in ("true", "1", "yes")
        return kind(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} ({exc})") from None


@dataclass
class ExperimentConfig:
    values: dict
    source: str = ""

    def __getattr__(self, key):
        try:
            return self.__dict__["values"][key]
        except KeyError:
            raise AttributeError(key) from None

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.n_particles, self.u, self.omega)

    def protocol(self, half_time=None) -> SweepProtocol:
        return SweepProtocol(self.delta_initial, self.delta_turn,
                             self.half_time if half_time is None else half_time)

    @property
    def window(self):
        return (self.delta_initial, self.delta_turn)

    def with_value(self, key, value) -> "ExperimentConfig":
        v = dict(self.values)
        v[key] = value
        if key == "half_time":
            v["half_times"] = [value]
        return replace(self, values=v)

    def canonical(self) -> str:
        return json.dumps({k: v for k, v in sorted(self.values.items()) if v is not None},
                          sort_keys=True)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a flat key = value config."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string("[experiment]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    raw = dict(cp["experiment"])
    unknown = sorted(set(raw) - set(FIELDS))
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown field")
    values = {k: d for k, (_, d) in FIELDS.items()}
    for k, r in raw.items():
        values[k] = _convert(k, r)
    cfg = ExperimentConfig(values, text)
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    v = cfg.values
    if v["schema_version"] is None:
        raise ConfigError("schema_version: required")
    if v["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported {v['schema_version']}, expected {SCHEMA_VERSION}")
    kind = v["kind"]
    if kind is None:
        raise ConfigError("kind: required")
    if kind not in KINDS:
        raise ConfigError(f"kind: unknown {kind!r}; one of {', '.join(KINDS)}")
    # a single half_time is accepted where a grid is expected, and vice versa
    if v["half_times"] is None and v["half_time"] is not None:
        v["half_times"] = [v["half_time"]]
    if v["half_time"] is None and v["half_times"] and len(v["half_times"]) == 1:
        v["half_time"] = v["half_times"][0]
    for key in REQUIRED[kind]:
        if v[key] is None:
            raise ConfigError(f"{key}: required for kind {kind}")
        if isinstance(v[key], list) and not v[key]:
            raise ConfigError(f"{key}: empty list")
    if kind in NEEDS_INITIAL and v["level"] is None and v["mixture_size"] is None:
        raise ConfigError("level: required (or mixture_size with center_level/target_energy)")
    if v["mixture_size"] is not None and kind in NEEDS_INITIAL:
        if v["center_level"] is None and v["target_energy"] is None:
            raise ConfigError("center_level: required with mixture_size")
    if kind == "classical-ensemble":
        given = [k for k in ("action", "action_fraction", "energy") if v[k] is not None]
        if len(given) != 1:
            raise ConfigError("action: give exactly one of action, action_fraction, energy")
    try:
        if all(v[k] is not None for k in ("n_particles", "u")):
            ModelParams(v["n_particles"], v["u"], v["omega"])
        for T in v["half_times"] or []:
            if v["delta_initial"] is not None:
                SweepProtocol(v["delta_initial"], v["delta_turn"], T)
        for N in v["n_values"] or []:
            ModelParams(N, 0.0)
    except DomainError as exc:
        raise ConfigError(f"{_field_of(exc)}: {exc}") from None
    if v["n_particles"] is not None:
        dim = v["n_particles"] + 1
        if v["level"] is not None and not 0 <= v["level"] < dim:
            raise ConfigError(f"level: {v['level']} outside 0..{dim - 1}")
        if v["mixture_size"] is not None and not 1 <= v["mixture_size"] <= dim:
            raise ConfigError(f"mixture_size: {v['mixture_size']} outside 1..{dim}")
    for key in ("tolerance", "dt"):
        if not v[key] > 0:
            raise ConfigError(f"{key}: must be positive")
    if v["samples"] < 1:
        raise ConfigError("samples: must be >= 1")
    if v["variant"] not in {x.value for x in IcaVariant}:
        raise ConfigError(f"variant: unknown {v['variant']!r}")


def _field_of(exc) -> str:
    msg = str(exc)
    for key in ("n_particles", "omega", "half_time", "delta_initial", "delta_turn"):
        if key in msg:
            return key
    return "delta_initial" if "delta" in msg else "config"


# --- output helpers -------------------------------------------------------

def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if x is None:
        return ""
    return x


def _clean(x):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats mapped to null."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        x = x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True, allow_nan=False)
        fh.write("\n")


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out: Path, cfg: ExperimentConfig, status: str, started: float,
                   stages: dict, message: str = "") -> Path:
    files = sorted(p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json")
    doc = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "kernel_backend": kernels.BACKEND,
        "config_sha256": cfg.digest(),
        "config": json.loads(cfg.canonical()),
        "status": status,
        "message": message,
        "started": started,
        "finished": time.time(),
        "stage_seconds": stages,
        "files": [{"path": str(p.relative_to(out)), "sha256": _sha256(p),
                   "bytes": p.stat().st_size} for p in files],
    }
    fd, tmp = tempfile.mkstemp(dir=out, prefix=".manifest", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    final = out / "manifest.json"
    os.replace(tmp, final)
    return final


class ComputeFailure(RuntimeError):
    """A flagged integration failure above the configured threshold."""


# --- experiment kinds -----------------------------------------------------

def _initial(cfg: ExperimentConfig, params: ModelParams) -> Mixture:
    """Equal-weight mixture for the configured initial condition (one level is a 1-state mixture)."""
    if cfg.mixture_size is None:
        return _window_mixture(params, cfg.delta_initial, cfg.level, 1)
    if cfg.center_level is not None:
        return _window_mixture(params, cfg.delta_initial, cfg.center_level, cfg.mixture_size)
    return microcanonical_mixture(params, cfg.delta_initial, cfg.target_energy, cfg.mixture_size)


def _window_mixture(params, delta, center, k) -> Mixture:
    E = eigen_at(params, delta).values
    lo = min(max(center - k // 2, 0), params.dim - k)
    levels = np.arange(lo, lo + k)
    return Mixture(levels, np.full(k, 1.0 / k), E[levels], float(delta))


def _check_drift(cfg, drift):
    if drift > cfg.drift_threshold:
        raise ComputeFailure(f"norm drift {drift:.3g} above threshold {cfg.drift_threshold:.3g}")


def run_spectrum_scan(cfg, out, stages):
    spec = scan_spectrum(cfg.params, cfg.window, cfg.grid_count)
    cs = detect_crossings(spec)
    spectrum_to_csv(spec, out / "spectrum.csv")
    crossings_to_csv(cs, out / "crossings.csv")
    gmin = min([float(spec.gaps.min())] + [m.gap for m in spec.minima]) if cfg.params.dim > 1 else None
    summary = {"delta_min": gmin, "crossings": len(cs),
               "unreliable": sum(not c.reliable for c in cs),
               "unresolved": sum(not c.resolved for c in cs), "gap_floor": spec.floor}
    _write_json(out / "summary.json", summary)
    return summary


def run_gap_vs_n(cfg, out, stages):
    rows = []
    for u in cfg.u_values:
        for N in cfg.n_values:
            p = ModelParams(N, u, cfg.omega)
            if u > -1:
                # subcritical: global minimum gap over the window (default +-2)
                lo = -2.0 if cfg.delta_initial is None else cfg.delta_initial
                hi = 2.0 if cfg.delta_turn is None else cfg.delta_turn
                g = min_gap(p, lo, hi, cfg.grid_count)
                ref = math.sqrt(1 + u) * cfg.omega
                method = "scan"
            else:
                # supercritical: the first avoided crossing, tunnelling-split pair at zero detuning
                g, ref, method = symmetric_splitting(p, 0), None, "parity"
            rows.append((u, N, g, ref, method))
    _write_csv(out / "gaps.csv", ["u", "n_particles", "delta_min", "asymptote", "method"], rows)
    summary = {"rows": len(rows)}
    for u in cfg.u_values:
        sub = [r for r in rows if r[0] == u]
        if u <= -1 and len(sub) >= 2:
            Ns = np.array([r[1] for r in sub], float)
            lg = np.log([r[2] for r in sub])
            a, b = np.polyfit(Ns, lg, 1)
            summary[f"log_gap_slope_u{u!r}"] = float(a)
    _write_json(out / "summary.json", summary)
    return summary


def run_dos(cfg, out, stages):
    dos = density_of_states(cfg.params, cfg.delta, cfg.energy_bins)
    rows = [(a, b, int(c)) for a, b, c in zip(dos.edges[:-1], dos.edges[1:], dos.counts)]
    _write_csv(out / "dos.csv", ["energy_lo", "energy_hi", "count"], rows)
    lo, hi = dos.peak_bin
    summary = {"peak_bin": [lo, hi], "levels": int(dos.counts.sum())}
    _write_json(out / "summary.json", summary)
    return summary


def run_sweep_map(cfg, out, stages):
    params = cfg.params
    pr = cfg.protocol()
    mix = _initial(cfg, params)
    traj = propagate(mix.state(params, pr), params, pr, cfg.tolerance, snapshots=cfg.snapshots)
    _check_drift(cfg, traj.stats.max_norm_drift)
    occs = [project_adiabatic(s, params, mix.weights) for s in traj.states]
    occupations_to_csv(occs, out / "occupations.csv")
    summary = {"snapshots": len(occs), "norm_drift": traj.stats.max_norm_drift,
               "steps": traj.stats.steps, "levels": mix.levels.tolist()}
    _write_json(out / "summary.json", summary)
    return summary


def _split_json(split):
    return {"low_peak_mass": split.low_peak_mass, "high_peak_mass": split.high_peak_mass,
            "gap_range": split.gap_range, "separable": split.separable,
            "return_probability": split.return_probability, "residual": split.residual,
            "initial_mass": split.initial_mass}


def run_final_split(cfg, out, stages):
    params = cfg.params
    pr = cfg.protocol()
    mix = _initial(cfg, params)
    occ, traj = sweep_final_occupation(mix, params, pr, cfg.tolerance)
    _check_drift(cfg, traj.stats.max_norm_drift)
    split = split_final_distribution(occ, mix.mean_energy, mix.levels)
    _write_csv(out / "final.csv", ["level", "energy", "probability"],
               [(n, e, p) for n, (e, p) in enumerate(zip(occ.energies, occ.probabilities))])
    summary = _split_json(split)
    summary.update(norm_drift=traj.stats.max_norm_drift, levels=mix.levels.tolist())
    _write_json(out / "summary.json", summary)
    return summary


def run_return_scan(cfg, out, stages):
    params = cfg.params
    mix = _initial(cfg, params)
    protos = [cfg.protocol(T) for T in cfg.half_times]
    rows = return_probability_scan(mix, params, protos, cfg.tolerance, _workers(cfg))
    t0 = time.time()
    table = cached_table(params, cfg.window)
    stages["crossing_table"] = time.time() - t0
    header = ["half_time", "rate", "return_probability", "separable", "initial_mass",
              "residual", "norm_drift", "ica_return_probability", "ica_initial_mass"]
    out_rows = []
    for r, pr in zip(rows, protos):
        pf, isplit = ica_final_split(mix, table, pr)
        out_rows.append((r["half_time"], r["rate"], r["return_probability"], r["separable"],
                         r["initial_mass"], r["residual"], r["norm_drift"],
                         isplit.return_probability if isplit.separable else None,
                         isplit.initial_mass))
    _write_csv(out / "return.csv", header, out_rows)
    drift = max(r["norm_drift"] for r in rows)
    summary = {"points": len(rows), "max_norm_drift": drift, "levels": mix.levels.tolist(),
               "return_probability": rows[0]["return_probability"] if len(rows) == 1 else None}
    _write_json(out / "summary.json", summary)
    _check_drift(cfg, drift)
    return summary


def run_ica_compare(cfg, out, stages):
    params = cfg.params
    pr = cfg.protocol()
    t0 = time.time()
    table = cached_table(params, cfg.window)
    stages["crossing_table"] = time.time() - t0
    exact = None
    drift = 0.0
    if cfg.exact:
        t0 = time.time()
        traj = propagate(eigenstate(params, pr, 0), params, pr, cfg.tolerance, forward_only=True)
        stages["exact_forward"] = time.time() - t0
        drift = traj.stats.max_norm_drift
        exact = project_adiabatic(traj.final, params).probabilities
    cmp = compare_variants(table, pr, exact)
    comparison_to_json(cmp, out / "variants.json")
    names = list(cmp.distributions)
    cols = [cmp.distributions[n] for n in names]
    header = ["level"] + names + ([] if exact is None else ["exact"])
    rows = []
    for k in range(params.dim):
        r = [k] + [float(c[k]) for c in cols]
        if exact is not None:
            r.append(float(exact[k]))
        rows.append(r)
    _write_csv(out / "distributions.csv", header, rows)
    sched = build_schedule(table.crossings, pr)
    if cfg.variant != "improved":
        sched = with_diabatic_pairs(sched, params)
    schedule_to_csv(sched, crossing_probabilities(sched, params, pr.rate, cfg.variant),
                    out / "schedule.csv")
    summary = {"l1_distance": cmp.l1, "norm_drift": drift, "crossings": len(sched)}
    _write_json(out / "summary.json", summary)
    if exact is not None:
        _check_drift(cfg, drift)
    return summary


def _classical_action(cfg, params):
    if cfg.action is not None:
        return cfg.action
    if cfg.action_fraction is not None:
        dc = swallowtail_halfwidth(params.interaction_u) * params.omega
        return cfg.action_fraction * upper_lobe_area(-dc + 1e-9 * max(dc, 1.0), params)
    return enclosed_action(cfg.energy, cfg.delta_initial, params)


def run_classical_ensemble(cfg, out, stages):
    params = cfg.params
    I = _classical_action(cfg, params)
    E = energy_for_action(I, cfg.delta_initial, params)
    ens = sample_microcanonical(E, cfg.delta_initial, params, cfg.samples, cfg.seed)
    ensemble_to_csv(ens.q, ens.p, params, out / "initial.csv")
    kr = kruskal_return_probability(I, params, cfg.protocol(cfg.half_times[0]))
    rows = []
    worst = 0.0
    for k, T in enumerate(cfg.half_times):
        res = evolve_ensemble(ens, params, cfg.protocol(T), cfg.dt)
        worst = max(worst, res.failure_rate)
        rows.append((T, res.return_probability, res.threshold, res.failure_rate))
        if k == len(cfg.half_times) - 1:
            ensemble_to_csv(res.final_q, res.final_p, params, out / "final.csv")
    _write_csv(out / "ensemble.csv", ["half_time", "return_probability", "energy_threshold",
                                      "failure_rate"], rows)
    lo, hi = cfg.window
    area_table_to_csv(area_table(params, np.linspace(lo, hi, 81)), out / "areas.csv")
    summary = {"action": I, "energy": E, "period": ens.period, "kruskal": kr.to_json(),
               "return_probability": rows[-1][1], "max_failure_rate": worst}
    _write_json(out / "summary.json", summary)
    if worst > cfg.failure_threshold:
        raise ComputeFailure(f"trajectory failure rate {worst:.3g} above {cfg.failure_threshold}")
    return summary


def run_correspondence(cfg, out, stages):
    params = cfg.params
    t0 = time.time()
    table = cached_table(params, cfg.window)
    stages["crossing_table"] = time.time() - t0
    rows, summary_rows = [], []
    for c in cfg.center_levels:
        mix = _window_mixture(params, cfg.delta_initial, c, cfg.mixture_size)
        E_cl = mix.mean_energy - params.energy_offset
        I = enclosed_action(E_cl, cfg.delta_initial, params)
        try:
            kr = kruskal_return_probability(I, params, cfg.protocol(cfg.half_times[0]))
            pk, ds = kr.probability, kr.delta_s
        except DomainError as exc:
            log.warning("no Kruskal value for center level %d: %s", c, exc)
            pk, ds = None, None
        vals = []
        for T in cfg.half_times:
            _, split = ica_final_split(mix, table, cfg.protocol(T))
            p = split.return_probability if split.separable else None
            vals.append(p)
            rows.append((c, I, T, p, split.initial_mass, pk))
        good = [v for v in vals if v is not None]
        summary_rows.append({"center_level": c, "action": I, "delta_s": ds, "kruskal": pk,
                             "ica_mean": float(np.mean(good)) if good else None,
                             "ica_spread": float(np.ptp(good)) if good else None})
    _write_csv(out / "correspondence.csv", ["center_level", "action", "half_time",
                                            "ica_return_probability", "ica_initial_mass",
                                            "kruskal_return_probability"], rows)
    summary = {"mixture_size": cfg.mixture_size, "ensembles": summary_rows}
    _write_json(out / "summary.json", summary)
    return summary


RUNNERS = {
    "spectrum-scan": run_spectrum_scan,
    "gap-vs-N": run_gap_vs_n,
    "dos": run_dos,
    "sweep-map": run_sweep_map,
    "final-split": run_final_split,
    "return-scan": run_return_scan,
    "ica-compare": run_ica_compare,
    "classical-ensemble": run_classical_ensemble,
    "correspondence": run_correspondence,
}


def _workers(cfg) -> int:
    return cfg.workers if cfg.workers else (os.cpu_count() or 1)


def execute(cfg: ExperimentConfig, out: Path) -> tuple[int, dict]:
    """Run one experiment into ``out``; returns (exit code, summary)."""
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    stages: dict = {}
    summary: dict = {}
    try:
        t0 = time.time()
        summary = RUNNERS[cfg.kind](cfg, out, stages) or {}
        stages["compute"] = time.time() - t0
    except (ComputeFailure, PropagationError, SolverError, DomainError, ArithmeticError) as exc:
        log.error("%s failed: %s", cfg.kind, exc)
        write_manifest(out, cfg, "failed", started, stages, str(exc))
        return EXIT_COMPUTE, {"error": str(exc)}
    write_manifest(out, cfg, "ok", started, stages)
    return EXIT_OK, summary


# --- validate -------------------------------------------------------------

def estimate(cfg: ExperimentConfig) -> dict:
    """Resource estimate without heavy compute."""
    rep: dict = {"kind": cfg.kind, "warnings": []}
    if cfg.n_particles is not None:
        N = cfg.n_particles
        rep["dimension"] = N + 1
        if cfg.delta_initial is not None:
            width = abs(cfg.delta_turn - cfg.delta_initial)
            rep["grid_count"] = cfg.grid_count or int(max(401, math.ceil(1.2 * N * width) + 1))
        if cfg.kind in ("sweep-map", "final-split", "return-scan", "ica-compare"):
            dt = 1.55 * cfg.tolerance ** 0.25 * (max(N, 2) / 30.0) ** -0.17
            legs = 1 if cfg.kind == "ica-compare" else 2
            steps = [legs * T / dt for T in cfg.half_times]
            rep["projected_steps"] = [int(s) for s in steps]
            rep["projected_work"] = float(sum(steps) * (N + 1))
            if cfg.kind == "sweep-map":
                rep["snapshots"] = cfg.snapshots
            if max(steps) > STEP_WARN:
                rep["warnings"].append(
                    f"direct propagation needs ~{max(steps):.2g} steps; consider the ICA "
                    "surrogate (return-scan/correspondence use the crossing cascade)")
    if cfg.kind == "classical-ensemble":
        rep["rk4_steps"] = int(sum(2 * T / cfg.dt for T in cfg.half_times) * cfg.samples)
    return rep


# --- CLI ------------------------------------------------------------------

def _load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc}") from None
    return parse_config(text)


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if args.seed is not None:
        cfg = cfg.with_value("seed", args.seed)
    if args.workers is not None:
        cfg = cfg.with_value("workers", args.workers)
    return cfg


def _out_dir(cfg, args) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.out:
        return Path(cfg.out)
    return Path("runs") / f"{cfg.kind}-{cfg.digest()[:12]}"


def _scan_point(job):
    cfg, out = job
    try:
        validate_config(cfg)
        code, summary = execute(cfg, out)
    except ConfigError as exc:
        return EXIT_INVALID, {"error": str(exc)}
    except Exception as exc:  # isolate the point; the scan continues
        log.exception("scan point failed")
        return EXIT_COMPUTE, {"error": f"{type(exc).__name__}: {exc}"}
    return code, summary


def _flatten(summary: dict) -> dict:
    flat = {}
    for k, v in summary.items():
        if isinstance(v, dict):
            for k2, v2 in v.items():
                if not isinstance(v2, (dict, list)):
                    flat[f"{k}.{k2}"] = v2
        elif not isinstance(v, list):
            flat[k] = v
    return flat


def scan(cfg: ExperimentConfig, axis: str, values, out: Path, workers: int = 1) -> int:
    if axis not in SCAN_AXES:
        raise ConfigError(f"axis: must be one of {', '.join(SCAN_AXES)}")
    key = SCAN_AXES[axis]
    conv = FIELDS[key][0]
    conv = float if conv == "floats" else conv
    vals = [conv(v) for v in values]
    if not vals:
        raise ConfigError("values: empty list")
    out.mkdir(parents=True, exist_ok=True)
    jobs = []
    for v in vals:
        c = cfg.with_value(key, v)
        jobs.append((c, out / f"{axis}={v}"))
    if workers > 1 and len(jobs) > 1:
        # scan points run serially inside each worker
        jobs = [(c.with_value("workers", 1), o) for c, o in jobs]
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_scan_point, jobs))
    else:
        results = [_scan_point(j) for j in jobs]
    flats = [_flatten(s) for _, s in results]
    cols = sorted({k for f in flats for k in f})
    rows = [[v, code] + [f.get(c) for c in cols] for v, (code, _), f in zip(vals, results, flats)]
    _write_csv(out / "scan.csv", [axis, "exit_code"] + cols, rows)
    started = time.time()
    write_manifest(out, cfg, "ok" if all(c == 0 for c, _ in results) else "partial",
                   started, {}, f"scan over {axis}")
    return EXIT_OK if all(c == 0 for c, _ in results) else EXIT_COMPUTE


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bhdimer", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "scan", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="flat key = value experiment file")
        p.add_argument("--out", help="output directory (overrides the config)")
        p.add_argument("--workers", type=int, help="parallel workers (default: all cores)")
        p.add_argument("--seed", type=int, help="seed for classical phase offsets")
        p.add_argument("--quiet", action="store_true", help="only log errors")
        if name == "scan":
            p.add_argument("--axis", required=True, choices=sorted(SCAN_AXES))
            p.add_argument("--values", required=True, help="comma list or log:start:stop:count")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(_load(args.config), args)
        if args.command == "validate":
            rep = estimate(cfg)
            print(json.dumps(rep, indent=2, sort_keys=True))
            return EXIT_OK
        out = _out_dir(cfg, args)
        if args.command == "run":
            code, summary = execute(cfg, out)
            if not args.quiet:
                print(json.dumps(_clean(summary), indent=2, sort_keys=True))
            return code
        values = _parse_list(args.values, str) if not args.values.startswith("log:") \
            else [repr(x) for x in _parse_list(args.values, float)]
        return scan(cfg, args.axis, values, out, _workers(cfg))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())

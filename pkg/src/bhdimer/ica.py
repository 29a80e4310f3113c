"""Independent crossing approximation and the incoherent Landau-Zener cascade."""

from __future__ import annotations

import csv
import enum
import json
import os
from pathlib import Path
from dataclasses import dataclass, replace

import numpy as np

from . import kernels
from .model import DomainError, ModelParams, SweepProtocol, fock_imbalance, hopping
from .propagate import AdiabaticOccupation, FinalSplit, split_final_distribution
from .spectrum import AvoidedCrossing, detect_crossings, eigen_at, scan_spectrum

EXPONENT_FLOOR = 1e-12


class IcaVariant(str, enum.Enum):
    STANDARD = "standard"
    MODIFIED = "modified"
    IMPROVED = "improved"


def lz_probability(gap: float, sweep_rate: float, slope: float) -> float:
    """Diabatic passage probability ``exp(-pi gap^2 / (2 rate slope))``.

    Exponents below 1e-12 are clamped to P = 1.
    """
    if not sweep_rate > 0:
        raise DomainError(f"sweep rate must be positive, got {sweep_rate!r}")
    if not slope > 0:
        raise DomainError(f"slope must be positive, got {slope!r}")
    if gap < 0:
        raise DomainError(f"gap must be nonnegative, got {gap!r}")
    x = np.pi * gap * gap / (2.0 * sweep_rate * slope)
    if x < EXPONENT_FLOOR:
        return 1.0
    return float(np.exp(-x))


@dataclass(frozen=True)
class DiabaticPair:
    """Fock levels a < b that cross at an avoided crossing, read off the local eigenvectors."""

    a: int
    b: int

    @property
    def separation(self) -> int:
        return self.b - self.a


def diabatic_pair(params: ModelParams, crossing: AvoidedCrossing) -> DiabaticPair:
    """Identify the two diabatic (Fock) levels meeting at a crossing.

    The imbalance operator projected onto the two adiabatic states at the gap
    minimum has eigenvalues close to the imbalances of the crossing diabatic
    levels; rounding gives their Fock indices.
    """
    n = crossing.lower_level
    es = eigen_at(params, crossing.delta_c, want_vectors=True, select=(n, n + 1))
    v = es.vectors
    p = fock_imbalance(params.n_particles)
    lam = np.linalg.eigvalsh(v.T @ (p[:, None] * v))
    a, b = sorted(int(round(x + params.n_particles / 2)) for x in lam)
    return DiabaticPair(a, b)


@dataclass(frozen=True)
class CrossingSchedule:
    """Crossings in encounter order: ascending delta forward, the exact reverse backward."""

    forward: tuple[AvoidedCrossing, ...]
    diabatic: tuple[DiabaticPair | None, ...] | None = None

    @property
    def backward(self) -> tuple[AvoidedCrossing, ...]:
        return self.forward[::-1]

    def __len__(self):
        return len(self.forward)

    def legs(self):
        yield "forward", self.forward
        yield "backward", self.backward


def build_schedule(crossings, protocol: SweepProtocol | tuple[float, float]) -> CrossingSchedule:
    if isinstance(protocol, SweepProtocol):
        lo, hi = protocol.delta_initial, protocol.delta_turn
    else:
        lo, hi = protocol
    kept = [c for c in crossings if lo <= c.delta_c <= hi]
    kept.sort(key=lambda c: (c.delta_c, c.lower_level))
    return CrossingSchedule(tuple(kept))


def with_diabatic_pairs(schedule: CrossingSchedule, params: ModelParams) -> CrossingSchedule:
    """Attach the diabatic level identification needed by the standard and modified variants."""
    if schedule.diabatic is not None:
        return schedule
    pairs = tuple(diabatic_pair(params, c) for c in schedule.forward)
    return replace(schedule, diabatic=pairs)


def crossing_probabilities(schedule: CrossingSchedule, params: ModelParams, sweep_rate: float,
                           variant: IcaVariant | str = IcaVariant.IMPROVED) -> np.ndarray:
    """Diabatic passage probability of each crossing in forward order."""
    variant = IcaVariant(variant)
    out = np.empty(len(schedule))
    if variant is not IcaVariant.IMPROVED:
        schedule = with_diabatic_pairs(schedule, params)
    v = np.abs(hopping(params))
    for k, c in enumerate(schedule.forward):
        if not c.reliable:
            out[k] = 1.0
        elif variant is IcaVariant.IMPROVED:
            out[k] = lz_probability(c.gap, sweep_rate, c.slope)
        else:
            pair = schedule.diabatic[k]
            sep = pair.separation
            if variant is IcaVariant.MODIFIED:
                out[k] = lz_probability(c.gap, sweep_rate, float(max(sep, 1)))
            elif sep == 1:
                # only adjacent Fock levels have a direct matrix element
                out[k] = lz_probability(2.0 * v[pair.a], sweep_rate, 1.0)
            else:
                out[k] = 1.0
    return out


def incoherent_cascade(initial, schedule: CrossingSchedule, sweep_rate: float,
                       params: ModelParams | None = None,
                       variant: IcaVariant | str = IcaVariant.IMPROVED,
                       legs=("forward", "backward"), probabilities=None) -> np.ndarray:
    """Push a level distribution through the schedule with 2x2 doubly stochastic mixes.

    ``probabilities`` (forward order) may be precomputed; otherwise they are
    evaluated from the crossings and the requested variant.
    """
    p = np.array(initial, dtype=float)
    if probabilities is None:
        if params is None and IcaVariant(variant) is not IcaVariant.IMPROVED:
            raise DomainError("params required for the standard and modified variants")
        probabilities = crossing_probabilities(schedule, params, sweep_rate, variant)
    P = np.ascontiguousarray(probabilities, dtype=float)
    lower = np.ascontiguousarray([c.lower_level for c in schedule.forward], dtype=np.int_)
    for leg in legs:
        if leg == "forward":
            kernels.cascade(p, lower, P)
        elif leg == "backward":
            kernels.cascade(p, lower[::-1].copy(), P[::-1].copy())
        else:
            raise ValueError(f"unknown leg {leg!r}")
    return p


@dataclass
class CrossingTable:
    """Crossings plus the adiabatic energies at both ends of a sweep window."""

    params: ModelParams
    window: tuple[float, float]
    crossings: list[AvoidedCrossing]
    energies_initial: np.ndarray
    energies_turn: np.ndarray

    @classmethod
    def compute(cls, params: ModelParams, window, base_grid_count=None) -> "CrossingTable":
        lo, hi = window
        spec = scan_spectrum(params, (lo, hi), base_grid_count)
        return cls(params, (lo, hi), detect_crossings(spec), spec.levels[0].copy(),
                   spec.levels[-1].copy())

    def save(self, path) -> None:
        fields = ["lower_level", "delta_c", "gap", "delta_max", "gap_max", "slope",
                  "reliable", "resolved"]
        cols = {f: np.array([getattr(c, f) for c in self.crossings]) for f in fields}
        np.savez(path, n_particles=self.params.n_particles, u=self.params.interaction_u,
                 omega=self.params.omega, window=np.array(self.window),
                 e_initial=self.energies_initial, e_turn=self.energies_turn, **cols)

    @classmethod
    def load(cls, path) -> "CrossingTable":
        z = np.load(path)
        params = ModelParams(int(z["n_particles"]), float(z["u"]), float(z["omega"]))
        n = z["lower_level"].size
        crossings = [AvoidedCrossing(int(z["lower_level"][k]), float(z["delta_c"][k]),
                                     float(z["gap"][k]), float(z["delta_max"][k]),
                                     float(z["gap_max"][k]), float(z["slope"][k]),
                                     bool(z["reliable"][k]), bool(z["resolved"][k]))
                     for k in range(n)]
        return cls(params, tuple(z["window"]), crossings, z["e_initial"], z["e_turn"])


def cache_dir() -> Path:
    """Directory for precomputed crossing tables (``BHDIMER_CACHE`` or ``~/.cache/bhdimer``)."""
    env = os.environ.get("BHDIMER_CACHE")
    return Path(env) if env else Path.home() / ".cache" / "bhdimer"


def table_path(params: ModelParams, window) -> Path:
    lo, hi = window
    name = f"crossings_N{params.n_particles}_u{params.interaction_u!r}_{float(lo)!r}_{float(hi)!r}"
    if params.omega != 1.0:
        name += f"_om{params.omega!r}"
    return cache_dir() / (name + ".npz")


def cached_table(params: ModelParams, window) -> CrossingTable:
    """Load the crossing table for ``params`` and ``window`` from the cache, computing it once."""
    path = table_path(params, window)
    if path.exists():
        t = CrossingTable.load(path)
        if t.params == params and tuple(map(float, t.window)) == tuple(map(float, window)):
            return t
    t = CrossingTable.compute(params, window)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(".tmp.npz")
    t.save(tmp)
    os.replace(tmp, path)
    return t


def _initial_distribution(initial, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Level distribution and occupied levels from a level index, mixture or vector."""
    p = np.zeros(params.dim)
    if isinstance(initial, (int, np.integer)):
        p[int(initial)] = 1.0
        return p, np.array([int(initial)])
    if hasattr(initial, "levels") and hasattr(initial, "weights"):
        p[np.asarray(initial.levels)] = initial.weights
        return p, np.asarray(initial.levels)
    p = np.array(initial, dtype=float)
    if p.shape != (params.dim,):
        raise DomainError(f"distribution must have length {params.dim}")
    return p, np.nonzero(p > 0)[0]


def ica_final_split(initial, table: CrossingTable, protocol: SweepProtocol,
                    variant: IcaVariant | str = IcaVariant.IMPROVED,
                    schedule: CrossingSchedule | None = None) -> tuple[np.ndarray, FinalSplit]:
    params = table.params
    p0, levels = _initial_distribution(initial, params)
    if schedule is None:
        schedule = build_schedule(table.crossings, protocol)
    pf = incoherent_cascade(p0, schedule, protocol.rate, params, variant)
    E = table.energies_initial
    occ = AdiabaticOccupation(pf, protocol.delta_initial, protocol.half_time, E)
    split = split_final_distribution(occ, float(p0 @ E), levels)
    return pf, split


def ica_return_probability(initial, table: CrossingTable, protocol: SweepProtocol,
                           variant: IcaVariant | str = IcaVariant.IMPROVED) -> float:
    """Return probability of the cascaded distribution; nan when the outcome is not separable."""
    _, split = ica_final_split(initial, table, protocol, variant)
    return split.return_probability if split.separable else float("nan")


@dataclass
class VariantComparison:
    distributions: dict[str, np.ndarray]
    l1: dict[str, float]
    exact: np.ndarray | None

    def to_json(self) -> dict:
        return {
            "variants": {k: [float(x) for x in v] for k, v in self.distributions.items()},
            "l1_distance": dict(self.l1),
            "exact": None if self.exact is None else [float(x) for x in self.exact],
        }


def compare_variants(table: CrossingTable, protocol: SweepProtocol, exact=None,
                     variants=tuple(IcaVariant)) -> VariantComparison:
    """Forward-leg cascades from the ground state for each variant, with L1 distance to ``exact``."""
    params = table.params
    p0 = np.zeros(params.dim)
    p0[0] = 1.0
    schedule = build_schedule(table.crossings, protocol)
    if any(IcaVariant(v) is not IcaVariant.IMPROVED for v in variants):
        schedule = with_diabatic_pairs(schedule, params)
    dists, l1 = {}, {}
    ex = None if exact is None else np.asarray(getattr(exact, "probabilities", exact), float)
    for v in variants:
        v = IcaVariant(v)
        d = incoherent_cascade(p0, schedule, protocol.rate, params, v, legs=("forward",))
        dists[v.value] = d
        if ex is not None:
            l1[v.value] = float(np.abs(d - ex).sum())
    return VariantComparison(dists, l1, ex)


def moving_average(values, window: int) -> np.ndarray:
    """Centred running mean over ``window`` consecutive entries (shrinking at the ends)."""
    x = np.asarray(values, dtype=float)
    if window < 1:
        raise ValueError("window must be >= 1")
    h = window // 2
    c = np.concatenate([[0.0], np.cumsum(x)])
    idx = np.arange(x.size)
    lo = np.maximum(idx - h, 0)
    hi = np.minimum(idx + (window - h), x.size)
    return (c[hi] - c[lo]) / (hi - lo)


def schedule_to_csv(schedule: CrossingSchedule, probabilities, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["leg", "order", "lower_level", "delta_c", "gap", "slope", "p_diabatic"])
        P = np.asarray(probabilities)
        n = len(schedule)
        for k, c in enumerate(schedule.forward):
            w.writerow(["forward", k, c.lower_level, repr(c.delta_c), repr(c.gap),
                        repr(c.slope), repr(float(P[k]))])
        for k, c in enumerate(schedule.backward):
            w.writerow(["backward", k, c.lower_level, repr(c.delta_c), repr(c.gap),
                        repr(c.slope), repr(float(P[n - 1 - k]))])


def comparison_to_json(cmp: VariantComparison, path) -> None:
    with open(path, "w") as fh:
        json.dump(cmp.to_json(), fh, indent=2, sort_keys=True)

"""Exact propagation through the triangular sweep and adiabatic-frame analysis.

Time stepping is a fourth-order commutator-free Magnus scheme. For a
Hamiltonian linear in time it is a product of two exponentials of H at the
fractions 1/6 and 5/6 of each step, each applied by a Chebyshev expansion of
the tridiagonal matrix (O(N) per matrix-vector product). Step size is
controlled by step doubling.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import jv

from . import kernels
from .model import (DomainError, ModelParams, SweepProtocol, fock_imbalance, hopping,
                    interaction_diagonal)
from .spectrum import eigen_at

log = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_STEPS = 50_000_000
CHEB_CUTOFF = 1e-15
ROUNDOFF_FLOOR = 1e-13


class PropagationError(RuntimeError):
    """Requested tolerance not reachable within the step budget."""

    def __init__(self, message, worst_interval=None):
        super().__init__(message)
        self.worst_interval = worst_interval


@dataclass
class QuantumState:
    """Fock-basis amplitudes at a given time; a 2-D array holds one state per column."""

    amplitudes: np.ndarray
    time: float
    current_delta: float

    def norms(self) -> np.ndarray:
        a = self.amplitudes
        return np.sqrt(np.sum(np.abs(a) ** 2, axis=0))


@dataclass
class PropagationStats:
    steps: int = 0
    rejected: int = 0
    min_dt: float = np.inf
    min_dt_delta: tuple[float, float] | None = None
    max_norm_drift: float = 0.0


@dataclass
class Trajectory:
    states: list[QuantumState]
    stats: PropagationStats

    @property
    def final(self) -> QuantumState:
        return self.states[-1]

    def __len__(self):
        return len(self.states)

    def __getitem__(self, k):
        return self.states[k]


def chebyshev_weights(tau: float, center: float, radius: float) -> np.ndarray:
    """Weights c_k with exp(-i tau H) = sum_k c_k T_k((H - center)/radius)."""
    x = tau * radius
    kmax = int(x + 12 * max(x, 1.0) ** (1 / 3) + 30)
    k = np.arange(kmax)
    c = jv(k, x) * (-1j) ** k
    c[1:] *= 2
    big = np.nonzero(np.abs(c) > CHEB_CUTOFF)[0]
    c = c[: big[-1] + 1] if big.size else c[:1]
    return np.ascontiguousarray(c * np.exp(-1j * tau * center))


@dataclass
class _Leg:
    diag0: np.ndarray
    pdiag: np.ndarray
    offd: np.ndarray
    center: float
    radius: float
    cache: dict = field(default_factory=dict)

    def weights(self, dt):
        w = self.cache.get(dt)
        if w is None:
            if len(self.cache) > 64:
                self.cache.clear()
            w = self.cache[dt] = chebyshev_weights(dt / 2, self.center, self.radius)
        return w

    def advance(self, psi, d0, slope, dt, nsteps):
        kernels.cf4_steps(psi, self.diag0, self.pdiag, self.offd, float(d0), float(slope),
                          float(dt), int(nsteps), self.center, self.radius, self.weights(dt))


def _make_leg(params: ModelParams, d_a: float, d_b: float) -> _Leg:
    diag0 = interaction_diagonal(params)
    pdiag = fock_imbalance(params.n_particles).astype(float)
    offd = hopping(params)
    r = np.zeros_like(diag0)
    r[:-1] += np.abs(offd)
    r[1:] += np.abs(offd)
    lo = min((diag0 + d * pdiag - r).min() for d in (d_a, d_b))
    hi = max((diag0 + d * pdiag + r).max() for d in (d_a, d_b))
    center = 0.5 * (lo + hi)
    radius = 0.5 * (hi - lo) * (1 + 1e-12) + 1e-12
    return _Leg(diag0, pdiag, np.ascontiguousarray(offd), center, radius)


def _evolve_segment(psi, leg: _Leg, d0: float, slope: float, duration: float,
                    dt: float, err_rate: float, stats: PropagationStats,
                    max_steps: int, chunk: int = 64) -> float:
    """Advance psi in place over ``duration`` starting at detuning d0; returns the next dt."""
    t = 0.0
    while duration - t > 1e-13 * max(duration, 1.0):
        remaining = duration - t
        dt = min(dt, remaining)
        # step-doubling probe: one step of dt against two of dt/2
        one = psi.copy()
        leg.advance(one, d0 + slope * t, slope, dt, 1)
        two = psi.copy()
        leg.advance(two, d0 + slope * t, slope, dt / 2, 2)
        err = float(np.max(np.sqrt(np.sum(np.abs(one - two) ** 2, axis=0))))
        # differences at round-off level carry no information about the step
        rate = 0.0 if err < ROUNDOFF_FLOOR else err / dt
        if rate > err_rate:
            stats.rejected += 1
            dt *= max(0.1, 0.9 * (err_rate / rate) ** 0.25)
            continue
        psi[...] = two
        t += dt
        stats.steps += 2
        if dt < stats.min_dt:
            stats.min_dt = dt
            stats.min_dt_delta = (d0 + slope * (t - dt), d0 + slope * t)
        grow = 2.0 if rate == 0 else min(2.0, 0.9 * (err_rate / rate) ** 0.25)
        # march a chunk at the accepted step, then probe again
        n = min(chunk, int((duration - t) / dt))
        if n > 0:
            leg.advance(psi, d0 + slope * t, slope, dt, n)
            t += n * dt
            stats.steps += n
        if stats.steps > max_steps:
            raise PropagationError(
                f"step budget {max_steps} exhausted; smallest step {stats.min_dt:.3g} "
                f"in delta interval {stats.min_dt_delta}", stats.min_dt_delta)
        if grow > 1.0:
            dt *= grow
    return dt


def propagate(initial: QuantumState, params: ModelParams, protocol: SweepProtocol,
              tolerance: float = DEFAULT_TOLERANCE, snapshots: int = 0,
              forward_only: bool = False, max_steps: int = DEFAULT_MAX_STEPS) -> Trajectory:
    """Integrate the Schroedinger equation from t = -T to +T (or to t = 0).

    ``tolerance`` bounds the accumulated amplitude error over the whole run.
    With ``snapshots > 0`` states are recorded at that many equally spaced
    detunings per leg (endpoints included); otherwise only the initial and
    final states are kept.
    """
    if not np.isclose(initial.time, -protocol.half_time):
        raise DomainError(f"initial state must sit at t=-T={-protocol.half_time}, got {initial.time}")
    amps = np.array(initial.amplitudes, dtype=complex, order="C")
    squeeze = amps.ndim == 1
    psi = amps.reshape(amps.shape[0], -1).copy(order="C")
    if psi.shape[0] != params.dim:
        raise DomainError(f"state has dimension {psi.shape[0]}, expected {params.dim}")
    norm0 = np.sqrt(np.sum(np.abs(psi) ** 2, axis=0))
    if np.any(np.abs(norm0 - 1) > 1e-8):
        raise DomainError("initial state must be normalized")

    T = protocol.half_time
    dI, d0 = protocol.delta_initial, protocol.delta_turn
    rate = protocol.rate
    legs = [(dI, d0, +rate, -T)]
    if not forward_only:
        legs.append((d0, dI, -rate, 0.0))
    total_time = T * len(legs)
    err_rate = tolerance / total_time
    stats = PropagationStats()

    def record(t, d):
        a = psi[:, 0].copy() if squeeze else psi.copy()
        states.append(QuantumState(a, t, d))

    states: list[QuantumState] = []
    record(-T, dI)
    dt = None
    for d_from, d_to, slope, t_start in legs:
        leg = _make_leg(params, d_from, d_to)
        if dt is None:
            dt = min(T / 16, 0.5)
        marks = np.linspace(0.0, T, snapshots) if snapshots > 1 else np.array([0.0, T])
        for a, b in zip(marks[:-1], marks[1:]):
            dt = _evolve_segment(psi, leg, d_from + slope * a, slope, b - a, dt, err_rate,
                                 stats, max_steps)
            if snapshots > 1:
                record(t_start + b, d_from + slope * b)
        if snapshots <= 1:
            record(t_start + T, d_to)
    drift = np.abs(np.sqrt(np.sum(np.abs(psi) ** 2, axis=0)) - norm0)
    stats.max_norm_drift = float(drift.max())
    return Trajectory(states, stats)


def eigenstate(params: ModelParams, protocol: SweepProtocol, level: int) -> QuantumState:
    """Adiabatic eigenstate ``level`` of H(delta_initial) at t = -T."""
    if not 0 <= level < params.dim:
        raise DomainError(f"level {level} outside 0..{params.n_particles}")
    es = eigen_at(params, protocol.delta_initial, want_vectors=True, select=(level, level))
    return QuantumState(es.vectors[:, 0].astype(complex), -protocol.half_time,
                        protocol.delta_initial)


@dataclass
class AdiabaticOccupation:
    probabilities: np.ndarray
    delta: float
    time: float
    energies: np.ndarray


def project_adiabatic(state: QuantumState, params: ModelParams,
                      weights: np.ndarray | None = None) -> AdiabaticOccupation:
    """Occupations |<E_n(delta)|psi>|^2 of the instantaneous eigenstates.

    Columns of a 2-D state are members of a mixture with the given weights
    (equal weights by default).
    """
    es = eigen_at(params, state.current_delta, want_vectors=True)
    a = np.asarray(state.amplitudes)
    a = a.reshape(a.shape[0], -1)
    proj = np.abs(es.vectors.T @ a) ** 2
    if weights is None:
        weights = np.full(a.shape[1], 1.0 / a.shape[1])
    p = proj @ np.asarray(weights, dtype=float)
    return AdiabaticOccupation(p, state.current_delta, state.time, es.values)


@dataclass
class FinalSplit:
    low_peak_mass: float
    high_peak_mass: float
    gap_range: tuple[float, float] | None
    separable: bool
    return_probability: float | None = None
    residual: float = 0.0
    initial_mass: float | None = None
    gap_levels: tuple[int, int] | None = None


def split_final_distribution(occupation: AdiabaticOccupation, initial_energy: float,
                             initial_levels=None, level_threshold: float = 1e-6,
                             min_cluster: float = 0.01,
                             residual_threshold: float = 1e-3) -> FinalSplit:
    """Split a final level distribution into a low- and a high-energy group.

    The two groups are separated by the widest contiguous run of levels each
    below ``level_threshold`` with at least ``min_cluster`` probability on
    either side. The return probability is the mass of the group whose energy
    range contains (or lies nearest to) ``initial_energy``. Without such a run
    the split is separable only if essentially all mass is back on
    ``initial_levels``; otherwise it is reported as not separable and only
    ``initial_mass``, the probability left on ``initial_levels``, is given.
    """
    p = np.asarray(occupation.probabilities, dtype=float)
    E = np.asarray(occupation.energies, dtype=float)
    init_mass = None
    if initial_levels is not None:
        init_mass = float(p[np.atleast_1d(initial_levels)].sum())
    small = p < level_threshold
    best = None
    n = p.size
    i = 0
    while i < n:
        if not small[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and small[j + 1]:
            j += 1
        lo_mass, hi_mass = p[:i].sum(), p[j + 1:].sum()
        if i > 0 and j < n - 1 and lo_mass >= min_cluster and hi_mass >= min_cluster:
            if best is None or (j - i) > (best[1] - best[0]):
                best = (i, j)
        i = j + 1
    if best is None:
        # no two groups: separable only for a fully adiabatic return onto the initial levels
        if initial_levels is None:
            initial_levels = [int(np.argmin(np.abs(E - initial_energy)))]
        kept = float(p[np.atleast_1d(initial_levels)].sum())
        if p.sum() - kept < residual_threshold:
            return FinalSplit(kept, 0.0, None, True, kept, float(p.sum() - kept), kept)
        return FinalSplit(float("nan"), float("nan"), None, False, None, float("nan"), init_mass)
    i, j = best
    low, high = float(p[:i].sum()), float(p[j + 1:].sum())
    residual = float(p[i:j + 1].sum())
    centers = []
    for a, b in ((0, i - 1), (j + 1, n - 1)):
        if E[a] <= initial_energy <= E[b]:
            centers.append(0.0)
        else:
            centers.append(min(abs(E[a] - initial_energy), abs(E[b] - initial_energy)))
    p_ret = low if centers[0] <= centers[1] else high
    return FinalSplit(low, high, (float(E[i]), float(E[j])), residual < residual_threshold,
                      p_ret, residual, init_mass, (i, j))


@dataclass
class Mixture:
    levels: np.ndarray
    weights: np.ndarray
    energies: np.ndarray
    delta: float

    @property
    def mean_energy(self) -> float:
        return float(self.weights @ self.energies)

    def state(self, params: ModelParams, protocol: SweepProtocol) -> QuantumState:
        es = eigen_at(params, self.delta, want_vectors=True)
        return QuantumState(es.vectors[:, self.levels].astype(complex), -protocol.half_time,
                            self.delta)


def microcanonical_mixture(params: ModelParams, delta_initial: float, target_energy: float,
                           k: int) -> Mixture:
    """Equal-weight window of ``k`` consecutive eigenstates centred on ``target_energy``.

    Among all windows of k adjacent levels the one whose mean energy is
    closest to the target is chosen.
    """
    if not 1 <= k <= params.dim:
        raise DomainError(f"k={k} must lie in 1..{params.dim}")
    E = eigen_at(params, delta_initial).values
    means = np.convolve(E, np.ones(k) / k, mode="valid")
    start = int(np.argmin(np.abs(means - target_energy)))
    levels = np.arange(start, start + k)
    return Mixture(levels, np.full(k, 1.0 / k), E[levels], float(delta_initial))


def sweep_final_occupation(mixture: Mixture, params: ModelParams, protocol: SweepProtocol,
                           tolerance: float = DEFAULT_TOLERANCE,
                           forward_only: bool = False) -> tuple[AdiabaticOccupation, Trajectory]:
    traj = propagate(mixture.state(params, protocol), params, protocol, tolerance,
                     forward_only=forward_only)
    occ = project_adiabatic(traj.final, params, mixture.weights)
    return occ, traj


def return_probability_scan(mixture: Mixture, params: ModelParams, protocols,
                            tolerance: float = DEFAULT_TOLERANCE, workers: int = 1) -> list[dict]:
    """Exact return probability for each protocol (typically a list of half times)."""
    protos = [p if isinstance(p, SweepProtocol) else None for p in protocols]
    if any(p is None for p in protos):
        raise DomainError("protocols must be SweepProtocol instances")
    jobs = [(mixture, params, p, tolerance) for p in protos]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_scan_point, jobs))
    else:
        rows = [_scan_point(j) for j in jobs]
    return rows


def _scan_point(job) -> dict:
    mixture, params, protocol, tol = job
    occ, traj = sweep_final_occupation(mixture, params, protocol, tol)
    split = split_final_distribution(occ, mixture.mean_energy, mixture.levels)
    return dict(half_time=protocol.half_time, rate=protocol.rate,
                return_probability=split.return_probability, separable=split.separable,
                initial_mass=split.initial_mass, low_peak_mass=split.low_peak_mass,
                high_peak_mass=split.high_peak_mass, residual=split.residual,
                norm_drift=traj.stats.max_norm_drift, steps=traj.stats.steps)


def site_populations(params: ModelParams, delta: float) -> np.ndarray:
    """Expectation of the site-1 occupation n1 in every eigenstate of H(delta)."""
    es = eigen_at(params, delta, want_vectors=True)
    n1 = np.arange(params.dim, dtype=float)
    return (es.vectors ** 2).T @ n1


def sweep_map(initial: QuantumState, params: ModelParams, protocol: SweepProtocol,
              snapshots: int = 400, tolerance: float = DEFAULT_TOLERANCE) -> list[AdiabaticOccupation]:
    """Adiabatic occupations at equally spaced detunings along both legs."""
    traj = propagate(initial, params, protocol, tolerance, snapshots=snapshots)
    return [project_adiabatic(s, params) for s in traj.states]


def occupations_to_csv(occupations: list[AdiabaticOccupation], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "delta", "level", "energy", "probability"])
        for occ in occupations:
            for n, (e, p) in enumerate(zip(occ.energies, occ.probabilities)):
                w.writerow([repr(float(occ.time)), repr(float(occ.delta)), n,
                            repr(float(e)), repr(float(p))])


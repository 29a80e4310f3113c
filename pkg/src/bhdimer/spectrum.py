"""Adiabatic spectra over a detuning window and avoided-crossing extraction."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal, eigvalsh_tridiagonal

from .model import ModelParams, SweepProtocol, build_hamiltonian, fock_imbalance

log = logging.getLogger(__name__)

EPS = np.finfo(float).eps
FLOOR_FACTOR = 1e3


class SolverError(RuntimeError):
    pass


@dataclass
class Eigensystem:
    values: np.ndarray
    vectors: np.ndarray | None
    gap_floor: float
    # one flag per adjacent gap: True where the gap is below the resolvable floor
    unreliable: np.ndarray

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.values)


def gap_floor(params: ModelParams, delta: float) -> float:
    """Smallest gap resolvable in double precision, ``1e3 * eps * ||H||``."""
    return FLOOR_FACTOR * EPS * build_hamiltonian(params, delta).norm_bound()


def eigen_at(params: ModelParams, delta: float, want_vectors: bool = False,
             select: tuple[int, int] | None = None) -> Eigensystem:
    """Ascending eigenvalues (and optionally eigenvectors as columns) of H(delta).

    ``select=(lo, hi)`` restricts to level indices lo..hi inclusive.
    """
    h = build_hamiltonian(params, delta)
    floor = FLOOR_FACTOR * EPS * h.norm_bound()
    kw = {}
    if select is not None:
        kw = dict(select="i", select_range=select)
    try:
        if h.dim == 1:
            vals, vecs = h.diagonal.copy(), np.ones((1, 1))
        elif want_vectors:
            vals, vecs = eigh_tridiagonal(h.diagonal, h.off_diagonal, **kw)
        else:
            vals, vecs = eigvalsh_tridiagonal(h.diagonal, h.off_diagonal, **kw), None
    except (LinAlgError, ValueError) as exc:
        raise SolverError(
            f"tridiagonal eigensolver failed at delta={delta!r}, N={params.n_particles}: {exc}"
        ) from exc
    if not want_vectors:
        vecs = None
    return Eigensystem(vals, vecs, floor, np.diff(vals) < floor)


def _all_levels(params: ModelParams, delta: float) -> np.ndarray:
    h = build_hamiltonian(params, delta)
    if h.dim == 1:
        return h.diagonal.copy()
    try:
        return eigvalsh_tridiagonal(h.diagonal, h.off_diagonal, lapack_driver="sterf")
    except (LinAlgError, ValueError) as exc:
        raise SolverError(
            f"tridiagonal eigensolver failed at delta={delta!r}, N={params.n_particles}: {exc}"
        ) from exc


def _pair_gap(params: ModelParams, delta: float, n: int) -> float:
    h = build_hamiltonian(params, delta)
    w = eigvalsh_tridiagonal(h.diagonal, h.off_diagonal, select="i", select_range=(n, n + 1))
    return float(w[1] - w[0])


@dataclass
class GapExtremum:
    lower_level: int
    delta: float
    gap: float
    reliable: bool = True
    resolved: bool = True


@dataclass
class AdiabaticSpectrum:
    params: ModelParams
    delta_grid: np.ndarray
    levels: np.ndarray  # (grid, N+1)
    minima: list[GapExtremum] = field(default_factory=list)
    maxima: list[GapExtremum] = field(default_factory=list)
    floor: float = 0.0

    @property
    def gaps(self) -> np.ndarray:
        return np.diff(self.levels, axis=1)

    def minima_of(self, n: int) -> list[GapExtremum]:
        return [m for m in self.minima if m.lower_level == n]

    def maxima_of(self, n: int) -> list[GapExtremum]:
        return [m for m in self.maxima if m.lower_level == n]


def default_grid_count(params: ModelParams, width: float) -> int:
    """Grid size resolving consecutive crossings of one level pair (spacing ~5/N in delta)."""
    return int(max(401, np.ceil(1.2 * params.n_particles * width) + 1))


def _vertex(x, y):
    x0, x1, x2 = x
    y0, y1, y2 = y
    den = (x0 - x1) * (x0 - x2) * (x1 - x2)
    A = (x2 * (y1 - y0) + x1 * (y0 - y2) + x0 * (y2 - y1)) / den
    B = (x2 * x2 * (y0 - y1) + x1 * x1 * (y2 - y0) + x0 * x0 * (y1 - y2)) / den
    if not A > 0:
        return None, A
    return -B / (2 * A), A


def refine_minimum(gap_fn, x, g, cutoff: float, max_evals: int = 40):
    """Locate the minimum of a positive gap function bracketed by three samples.

    Successive parabolic interpolation on the squared gap, which is exactly
    quadratic for an isolated two-level crossing; golden-section fallback when
    the local model is not convex. Converged when the gap evaluated at the
    model vertex agrees with the model's prediction to 1%, or the bracket
    times the fitted slope drops below 1e-3 of the gap. Gaps below ``cutoff``
    stop the search early; the returned gap is then an upper bound.
    Returns (delta, gap, resolved).
    """
    pts = sorted(zip(map(float, x), map(float, g)))
    best = min(pts, key=lambda p: p[1])
    invphi = (np.sqrt(5) - 1) / 2
    for _ in range(max_evals):
        pts.sort()
        i = min(range(len(pts)), key=lambda k: pts[k][1])
        i = min(max(i, 1), len(pts) - 2)
        trip = pts[i - 1:i + 2]
        xs = [p[0] for p in trip]
        ys = [p[1] ** 2 for p in trip]
        lo, hi = xs[0], xs[2]
        gs = [p[1] for p in trip]
        if max(gs) - min(gs) <= 1e-3 * min(gs):
            # flat bottom reached within round-off
            return best[0], best[1], True
        if hi - lo < 1e-15 * max(1.0, abs(xs[1])):
            return best[0], best[1], True
        c, A = _vertex(xs, ys)
        pred = None
        if c is not None and lo < c < hi and min(abs(c - xx) for xx in xs) > 1e-16 * max(1.0, abs(c)):
            pred = ys[1] - A * (xs[1] - c) ** 2
        else:
            if xs[1] - lo > hi - xs[1]:
                c = xs[1] - (1 - invphi) * (xs[1] - lo)
            else:
                c = xs[1] + (1 - invphi) * (hi - xs[1])
        gc = gap_fn(c)
        pts.append((c, gc))
        if gc < best[1]:
            best = (c, gc)
        if best[1] <= cutoff:
            return best[0], best[1], True
        if pred is not None and pred > 0 and abs(np.sqrt(pred) - gc) <= 0.01 * gc:
            return best[0], best[1], True
        if A is not None and A > 0 and (hi - lo) * np.sqrt(A) < 1e-3 * best[1]:
            return best[0], best[1], True
        pts = [p for p in pts if lo <= p[0] <= hi]
    return best[0], best[1], False


def scan_spectrum(params: ModelParams, protocol: SweepProtocol | tuple[float, float],
                  base_grid_count: int | None = None, refine: bool = True,
                  gap_cutoff: float | None = None) -> AdiabaticSpectrum:
    """Eigenvalues on a uniform grid over the sweep window plus refined gap extrema.

    Minima deeper than ``gap_cutoff`` (default ``1e-9 omega``, or the
    resolvable floor if larger) are not refined further: any crossing that
    narrow is traversed diabatically with probability 1 - O(1e-12) at every
    rate of interest.
    """
    if isinstance(protocol, SweepProtocol):
        lo, hi = protocol.delta_initial, protocol.delta_turn
    else:
        lo, hi = protocol
    if base_grid_count is None:
        base_grid_count = default_grid_count(params, hi - lo)
    if base_grid_count < 3:
        raise ValueError("base_grid_count must be >= 3")
    grid = np.linspace(lo, hi, int(base_grid_count))
    levels = np.array([_all_levels(params, d) for d in grid])
    floor = max(gap_floor(params, lo), gap_floor(params, hi))
    spec = AdiabaticSpectrum(params, grid, levels, floor=floor)
    if params.dim < 2:
        return spec
    G = spec.gaps
    cutoff = max(floor, 1e-9 * params.omega if gap_cutoff is None else gap_cutoff)

    is_min = (G[1:-1] < G[:-2]) & (G[1:-1] < G[2:])
    is_max = (G[1:-1] > G[:-2]) & (G[1:-1] > G[2:])
    for k, n in zip(*np.nonzero(is_min)):
        k = k + 1
        x = grid[k - 1:k + 2]
        g = G[k - 1:k + 2, n]
        if refine:
            dc, gc, ok = refine_minimum(lambda d, n=n: _pair_gap(params, d, n), x, g, cutoff)
        else:
            dc, gc, ok = grid[k], G[k, n], True
        spec.minima.append(GapExtremum(int(n), float(dc), float(gc), gc > floor, ok))
    for k, n in zip(*np.nonzero(is_max)):
        k = k + 1
        x = grid[k - 1:k + 2]
        g = G[k - 1:k + 2, n]
        # maxima are smooth; a parabola through the samples is enough
        xv, A = _vertex(list(x), list(-g))
        if xv is None or not x[0] <= xv <= x[2]:
            dm, gm = grid[k], G[k, n]
        else:
            c0 = np.polyfit(x - x[1], g, 2)
            dm, gm = xv, float(np.polyval(c0, xv - x[1]))
        spec.maxima.append(GapExtremum(int(n), float(dm), float(gm)))
    spec.minima.sort(key=lambda m: (m.delta, m.lower_level))
    spec.maxima.sort(key=lambda m: (m.delta, m.lower_level))
    n_bad = sum(not m.resolved for m in spec.minima)
    if n_bad:
        log.warning("%d gap minima unresolved within the refinement budget", n_bad)
    return spec


@dataclass(frozen=True)
class AvoidedCrossing:
    lower_level: int
    delta_c: float
    gap: float
    delta_max: float
    gap_max: float
    slope: float
    reliable: bool = True
    resolved: bool = True

    @property
    def upper_level(self) -> int:
        return self.lower_level + 1


def two_level_slope(params: ModelParams, delta: float, n: int) -> float:
    """Diabatic slope difference of the local two-level problem at a crossing.

    Spread of the eigenvalues of the imbalance operator p projected onto
    levels n, n+1; equals 2|<n|p|n+1>| at the exact gap minimum and is
    invariant under rotations inside the nearly degenerate pair.
    """
    es = eigen_at(params, delta, want_vectors=True, select=(n, n + 1))
    v = es.vectors
    p = fock_imbalance(params.n_particles)
    block = v.T @ (p[:, None] * v)
    return float(np.ptp(np.linalg.eigvalsh(block)))


def detect_crossings(spectrum: AdiabaticSpectrum) -> list[AvoidedCrossing]:
    """One crossing per gap minimum that has a flanking maximum of the same gap.

    The slope is ``gap_max / |delta_max - delta_c|`` from the nearest flanking
    maximum. The lowest pair never has one; it borrows the gap at the nearest
    minimum of the next pair up, and falls back to the local two-level slope
    when that pair has none either (e.g. N = 1).
    """
    params = spectrum.params
    floor = spectrum.floor
    out = []
    max_by_pair: dict[int, np.ndarray] = {}
    for m in spectrum.maxima:
        max_by_pair.setdefault(m.lower_level, []).append((m.delta, m.gap))
    max_by_pair = {k: np.array(sorted(v)) for k, v in max_by_pair.items()}
    pair1_minima = np.array(sorted(m.delta for m in spectrum.minima_of(1)))

    for m in spectrum.minima:
        n = m.lower_level
        gap = max(m.gap, floor)
        dmax = gmax = None
        if n == 0:
            if pair1_minima.size:
                j = np.argmin(np.abs(pair1_minima - m.delta))
                dmax = float(pair1_minima[j])
                if abs(dmax - m.delta) > 1e-12:
                    gmax = _pair_gap(params, dmax, 0)
                else:
                    dmax = None
        else:
            mx = max_by_pair.get(n)
            if mx is None or not len(mx):
                continue
            left = mx[mx[:, 0] < m.delta]
            right = mx[mx[:, 0] > m.delta]
            cands = []
            if len(left):
                cands.append(left[-1])
            if len(right):
                cands.append(right[0])
            if not cands:
                continue
            dmax, gmax = min(cands, key=lambda r: abs(r[0] - m.delta))
        if dmax is None or gmax is None or gmax <= gap:
            slope = two_level_slope(params, m.delta, n)
            if not slope > 0:
                continue
            # record a virtual maximum on the local diabatic line, no lower than the gap
            reach = max(1.0, gap / slope)
            dmax, gmax = m.delta + reach, slope * reach
        else:
            slope = gmax / abs(dmax - m.delta)
        out.append(AvoidedCrossing(n, m.delta, gap, float(dmax), float(gmax), float(slope),
                                   m.gap > floor, m.resolved))
    return out


def min_gap(params: ModelParams, delta_initial: float, delta_turn: float,
            base_grid_count: int | None = None) -> float:
    """Global minimum of adjacent-level separations over the window."""
    spec = scan_spectrum(params, (delta_initial, delta_turn), base_grid_count)
    best = float(spec.gaps.min())
    for m in spec.minima:
        best = min(best, m.gap)
    return best


def _tail_ratio(d, t, E, r_edge, stop):
    """``psi_i / psi_{i-1}`` for i = m down to ``stop`` by downward continued fraction.

    The recursion runs from the mirror point into the well, which is the stable
    direction for a solution that decays towards the centre.
    """
    m = d.size
    r = np.empty(m + 1)
    r[m] = r_edge
    for i in range(m - 1, stop - 1, -1):
        r[i] = -t[i - 1] / (d[i] - E + t[i] * r[i + 1])
    return r


def symmetric_splitting(params: ModelParams, pair: int = 0) -> float:
    """Gap between the ``pair``-th even and odd state of H at zero detuning.

    At delta = 0 the Hamiltonian commutes with the mirror i -> N - i. Each
    parity block is diagonalized on the left half-chain and the gap follows from
    a Wronskian identity on that half-chain,
    ``(E_o - E_e) <phi|psi> = t (psi_{m-1} phi_m - phi_{m-1} psi_m)``.
    Near the centre the amplitudes come from a continued-fraction recursion, so
    the result keeps its relative accuracy far below ``eps * ||H||``.
    """
    N = params.n_particles
    h = build_hamiltonian(params, 0.0)
    D, T = h.diagonal, h.off_diagonal
    m = (N + 1) // 2
    d, t = D[:m], T[:m]                    # left chain plus its coupling to site m
    if m < 2:
        w = np.linalg.eigvalsh(h.dense())
        return float(w[2 * pair + 1] - w[2 * pair])
    # block matrices on sites 0..m-1 (the centre site, if any, folded in by the edge ratio)
    if N % 2:
        de, do = d.copy(), d.copy()
        de[-1] += t[-1]
        do[-1] -= t[-1]
        Ee, ve = eigh_tridiagonal(de, t[:-1], select="i", select_range=(pair, pair))
        Eo, vo = eigh_tridiagonal(do, t[:-1], select="i", select_range=(pair, pair))
        Ee, Eo = float(Ee[0]), float(Eo[0])
        re_, ro_ = 1.0, -1.0
    else:
        c = D[m]
        de = np.append(d, c)
        te = np.append(t[:-1], np.sqrt(2.0) * t[-1])
        Ee, ve = eigh_tridiagonal(de, te, select="i", select_range=(pair, pair))
        Eo, vo = eigh_tridiagonal(d, t[:-1], select="i", select_range=(pair, pair))
        Ee, Eo = float(Ee[0]), float(Eo[0])
        ve = ve[:m]
        re_, ro_ = -2.0 * t[-1] / (c - Ee), 0.0
    psi, phi = ve[:, 0].copy(), vo[:, 0].copy()

    def rebuild(v, E, r_edge):
        big = np.abs(v) >= 1e-4 * np.abs(v).max()
        j = int(np.nonzero(big)[0].max())
        if j >= m - 1:
            return v
        r = _tail_ratio(d, t, E, r_edge, j + 1)
        out = v.copy()
        for i in range(j + 1, m):
            out[i] = out[i - 1] * r[i]
        return out

    psi = rebuild(psi, Ee, re_)
    phi = rebuild(phi, Eo, ro_)
    psi /= np.linalg.norm(psi)
    phi /= np.linalg.norm(phi)
    s = float(psi @ phi)
    num = t[-1] * psi[-1] * phi[-1] * (ro_ - re_)
    return float(num / s)


@dataclass
class DensityOfStates:
    counts: np.ndarray
    edges: np.ndarray
    energies: np.ndarray

    @property
    def peak_bin(self) -> tuple[float, float]:
        k = int(np.argmax(self.counts))
        return float(self.edges[k]), float(self.edges[k + 1])


def density_of_states(params: ModelParams, delta: float, energy_bins=50,
                      per_particle: bool = True) -> DensityOfStates:
    """Histogram of the eigenvalues of H(delta).

    With ``per_particle`` the energies are shifted by the constant ``U N^2/4``
    and divided by ``N omega`` so they sit on the classical energy axis.
    """
    E = _all_levels(params, delta)
    if per_particle:
        E = (E - params.energy_offset) / (params.n_particles * params.omega)
    counts, edges = np.histogram(E, bins=energy_bins)
    return DensityOfStates(counts, edges, E)


def diabatic_gap_sequence(crossings: list[AvoidedCrossing], start_level: int = 0):
    """Gaps met by a state that takes the diabatic branch at every crossing, in sweep order.

    Returns ``(delta_c, gap)`` arrays plus a piecewise-linear interpolant in delta.
    """
    level = start_level
    ds, gs = [], []
    for c in sorted(crossings, key=lambda c: (c.delta_c, c.lower_level)):
        if c.lower_level == level:
            level += 1
        elif c.upper_level == level:
            level -= 1
        else:
            continue
        ds.append(c.delta_c)
        gs.append(c.gap)
    ds, gs = np.array(ds), np.array(gs)

    def interp(x):
        return np.interp(x, ds, gs) if ds.size else np.full_like(np.asarray(x, float), np.nan)

    return ds, gs, interp


def spectrum_to_csv(spectrum: AdiabaticSpectrum, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["delta", "level", "energy"])
        for d, row in zip(spectrum.delta_grid, spectrum.levels):
            for n, e in enumerate(row):
                w.writerow([repr(float(d)), n, repr(float(e))])


def crossings_to_csv(crossings: list[AvoidedCrossing], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lower_level", "delta_c", "gap", "delta_max", "gap_max", "slope",
                    "reliable", "resolved"])
        for c in crossings:
            w.writerow([c.lower_level, repr(c.delta_c), repr(c.gap), repr(c.delta_max),
                        repr(c.gap_max), repr(c.slope), int(c.reliable), int(c.resolved)])

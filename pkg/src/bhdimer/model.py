"""Two-site Bose-Hubbard model: parameters, Fock-basis Hamiltonian, sweep protocol.

Units: hbar = 1 and the tunnelling rate ``omega`` sets the energy scale.
The Fock index ``i`` counts particles on site 1 (``n1 = i``, ``n2 = N - i``).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DomainError(ValueError):
    """Argument outside the domain where an operation is defined."""


@dataclass(frozen=True)
class ModelParams:
    """Particle number, tunnelling and the mean-field interaction ``u = U N / omega``.

    The per-particle interaction ``U`` is derived from ``u`` so scans over N
    at fixed ``u`` stay exact.
    """

    n_particles: int
    interaction_u: float
    omega: float = 1.0

    def __post_init__(self):
        if int(self.n_particles) != self.n_particles or self.n_particles < 1:
            raise DomainError(f"n_particles must be an integer >= 1, got {self.n_particles!r}")
        if not self.omega > 0:
            raise DomainError(f"omega must be positive, got {self.omega!r}")
        object.__setattr__(self, "n_particles", int(self.n_particles))

    @property
    def U(self) -> float:
        return self.interaction_u * self.omega / self.n_particles

    @property
    def dim(self) -> int:
        return self.n_particles + 1

    @property
    def p0(self) -> float:
        return self.n_particles / 2

    @property
    def energy_offset(self) -> float:
        """Constant ``U N^2 / 4`` between quantum eigenvalues and the classical phase-space energy."""
        return self.U * self.n_particles**2 / 4

    @property
    def supercritical(self) -> bool:
        return abs(self.interaction_u) > 1


@dataclass(frozen=True)
class SweepProtocol:
    """Triangular detuning sweep ``delta_initial -> delta_turn -> delta_initial`` over ``[-T, T]``."""

    delta_initial: float
    delta_turn: float
    half_time: float

    def __post_init__(self):
        if not self.delta_turn > self.delta_initial:
            raise DomainError(
                f"delta_turn ({self.delta_turn}) must exceed delta_initial ({self.delta_initial})"
            )
        if not (self.half_time > 0 and np.isfinite(self.half_time)):
            raise DomainError(f"half_time must be positive and finite, got {self.half_time!r}")

    @property
    def rate(self) -> float:
        """Sweep rate |dDelta/dt| on either leg."""
        return (self.delta_turn - self.delta_initial) / self.half_time

    def with_half_time(self, half_time: float) -> "SweepProtocol":
        return SweepProtocol(self.delta_initial, self.delta_turn, half_time)


def delta_of_t(t: float, protocol: SweepProtocol) -> float:
    """Detuning at time ``t`` in ``[-T, T]``."""
    T = protocol.half_time
    if not -T <= t <= T:
        raise DomainError(f"t={t} outside [-{T}, {T}]")
    s = abs(t) / T
    return protocol.delta_initial * s + protocol.delta_turn * (1 - s)


@dataclass(frozen=True)
class TridiagonalHamiltonian:
    """Real symmetric tridiagonal block of fixed particle number."""

    diagonal: np.ndarray
    off_diagonal: np.ndarray
    delta: float = 0.0
    params: ModelParams | None = field(default=None, compare=False)

    @property
    def dim(self) -> int:
        return self.diagonal.size

    def dense(self) -> np.ndarray:
        return (
            np.diag(self.diagonal)
            + np.diag(self.off_diagonal, 1)
            + np.diag(self.off_diagonal, -1)
        )

    def matvec(self, psi: np.ndarray) -> np.ndarray:
        out = self.diagonal[:, None] * psi if psi.ndim == 2 else self.diagonal * psi
        e = self.off_diagonal if psi.ndim == 1 else self.off_diagonal[:, None]
        out[:-1] += e * psi[1:]
        out[1:] += e * psi[:-1]
        return out

    def norm_bound(self) -> float:
        """Gershgorin bound on the spectral norm."""
        r = np.abs(self.diagonal).copy()
        r[:-1] += np.abs(self.off_diagonal)
        r[1:] += np.abs(self.off_diagonal)
        return float(r.max())


def fock_imbalance(n_particles: int) -> np.ndarray:
    """Eigenvalues of p = (n1 - n2)/2 on the Fock basis, i.e. ``i - N/2``."""
    return np.arange(n_particles + 1) - n_particles / 2


def interaction_diagonal(params: ModelParams) -> np.ndarray:
    """Diabatic offsets ``eps_i = U (N^2/2 + i^2 - N i)``."""
    N = params.n_particles
    i = np.arange(N + 1, dtype=float)
    return params.U * (N * N / 2 + i * i - N * i)


def hopping(params: ModelParams) -> np.ndarray:
    """Off-diagonal elements ``-(omega/2) sqrt((i+1)(N-i))``.

    The negative sign follows the operator form of the Hamiltonian; the
    diabatic-basis listing uses the magnitude. Spectra do not depend on it.
    """
    N = params.n_particles
    i = np.arange(N, dtype=float)
    return -0.5 * params.omega * np.sqrt((i + 1) * (N - i))


def build_hamiltonian(params: ModelParams, delta: float) -> TridiagonalHamiltonian:
    diag = interaction_diagonal(params) + delta * fock_imbalance(params.n_particles)
    return TridiagonalHamiltonian(diag, hopping(params), float(delta), params)


def diabatic_slopes(params: ModelParams, rate: float) -> np.ndarray:
    """Time derivatives ``beta_i = (rate/2)(2i - N)`` of the diabatic levels on one sweep leg."""
    return rate * fock_imbalance(params.n_particles)


def mean_field_amplitude_eom(state, delta: float, params: ModelParams) -> np.ndarray:
    """Time derivative of the mode amplitudes ``(alpha1, alpha2)``.

    ``i d(alpha1)/dt = -(omega/2) alpha2 + (U |alpha1|^2 + delta/2) alpha1``
    and the mirror equation with ``-delta/2`` for ``alpha2``.
    Works elementwise, so ``state`` may be a (2, M) array of M trajectories.
    """
    a1, a2 = np.asarray(state, dtype=complex)
    U, om = params.U, params.omega
    d1 = -1j * (-0.5 * om * a2 + (U * np.abs(a1) ** 2 + 0.5 * delta) * a1)
    d2 = -1j * (-0.5 * om * a1 + (U * np.abs(a2) ** 2 - 0.5 * delta) * a2)
    return np.array([d1, d2])

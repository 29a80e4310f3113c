import csv

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from bhdimer.model import DomainError, ModelParams, SweepProtocol, build_hamiltonian, delta_of_t
from bhdimer.propagate import (AdiabaticOccupation, PropagationError, QuantumState, eigenstate,
                               microcanonical_mixture, occupations_to_csv, project_adiabatic,
                               propagate, return_probability_scan, site_populations,
                               split_final_distribution, sweep_map)


def lz_exact(rate):
    return np.exp(-np.pi / (2 * rate))


def _dense_reference(params, protocol, psi0):
    def rhs(t, y):
        H = build_hamiltonian(params, delta_of_t(t, protocol)).dense()
        return -1j * (H @ y)

    T = protocol.half_time
    # split at the turning point, where the detuning has a kink
    y = psi0.astype(complex)
    for a, b in ((-T, 0.0), (0.0, T)):
        sol = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=1e-11, atol=1e-12)
        y = sol.y[:, -1]
    return y


@pytest.mark.parametrize("N, u", [(3, -3.0), (6, -3.0), (10, -1.5)])
def test_dense_oracle(N, u):
    p = ModelParams(N, u)
    pr = SweepProtocol(-2.0, 2.0, 40.0)
    s0 = eigenstate(p, pr, 1)
    got = propagate(s0, p, pr, tolerance=1e-7).final.amplitudes
    ref = _dense_reference(p, pr, s0.amplitudes)
    assert np.abs(got - ref).max() < 1e-4


def test_single_particle_landau_zener():
    p = ModelParams(1, 0.0)
    rate = 1.0
    pr = SweepProtocol(-200.0, 200.0, 400.0 / rate)
    traj = propagate(eigenstate(p, pr, 0), p, pr, tolerance=1e-8, forward_only=True)
    occ = project_adiabatic(traj.final, p)
    assert occ.probabilities[1] == pytest.approx(lz_exact(rate), rel=1e-3)


def test_norm_drift_small():
    p = ModelParams(40, -3.0)
    pr = SweepProtocol(-2.0, 2.0, 500.0)
    traj = propagate(eigenstate(p, pr, 2), p, pr)
    assert traj.stats.max_norm_drift < 1e-8
    assert traj.final.time == pytest.approx(500.0)
    assert traj.final.current_delta == -2.0


def test_mixture_columns_propagate_independently():
    p = ModelParams(8, -3.0)
    pr = SweepProtocol(-2.0, 2.0, 30.0)
    mix = microcanonical_mixture(p, -2.0, -10.0, 3)
    joint = propagate(mix.state(p, pr), p, pr, tolerance=1e-8).final.amplitudes
    for j, lev in enumerate(mix.levels):
        single = propagate(eigenstate(p, pr, int(lev)), p, pr, tolerance=1e-8).final.amplitudes
        assert np.abs(joint[:, j] - single).max() < 1e-6


def test_snapshots():
    p = ModelParams(4, -3.0)
    pr = SweepProtocol(-1.0, 1.0, 10.0)
    occs = sweep_map(eigenstate(p, pr, 0), p, pr, snapshots=5)
    assert len(occs) == 1 + 2 * 4
    deltas = [o.delta for o in occs]
    np.testing.assert_allclose(deltas, [-1, -0.5, 0, 0.5, 1, 0.5, 0, -0.5, -1])
    for o in occs:
        assert o.probabilities.sum() == pytest.approx(1.0, abs=1e-9)


def test_rejects_bad_initial_state():
    p = ModelParams(4, -3.0)
    pr = SweepProtocol(-1.0, 1.0, 10.0)
    with pytest.raises(DomainError):
        propagate(QuantumState(np.ones(5, complex), -10.0, -1.0), p, pr)
    s = eigenstate(p, pr, 0)
    with pytest.raises(DomainError):
        propagate(QuantumState(s.amplitudes, 0.0, -1.0), p, pr)
    with pytest.raises(DomainError):
        eigenstate(p, pr, 5)


def test_step_budget_reports_interval():
    p = ModelParams(10, -3.0)
    pr = SweepProtocol(-2.0, 2.0, 100.0)
    with pytest.raises(PropagationError) as info:
        propagate(eigenstate(p, pr, 0), p, pr, tolerance=1e-12, max_steps=50)
    assert info.value.worst_interval is not None


def _occ(p, E):
    return AdiabaticOccupation(np.asarray(p, float), -2.0, 0.0, np.asarray(E, float))


def test_split_two_groups():
    p = [0.3, 0.1, 1e-9, 1e-8, 0.0, 0.6]
    split = split_final_distribution(_occ(p, np.arange(6.0)), 0.2, [0])
    assert split.separable
    assert split.gap_levels == (2, 4)
    assert split.return_probability == pytest.approx(0.4)
    assert split.high_peak_mass == pytest.approx(0.6)
    assert split.initial_mass == pytest.approx(0.3)


def test_split_prefers_group_containing_initial_energy():
    p = [0.3, 0.1, 0.0, 0.0, 0.35, 0.25]
    split = split_final_distribution(_occ(p, np.arange(6.0)), 4.2, [4])
    assert split.return_probability == pytest.approx(0.6)


def test_split_not_separable_without_gap():
    p = [0.2, 0.3, 0.2, 0.3]
    split = split_final_distribution(_occ(p, np.arange(4.0)), 1.0, [1])
    assert not split.separable
    assert split.initial_mass == pytest.approx(0.3)


def test_split_adiabatic_return():
    p = [0.0, 1.0 - 1e-5, 1e-5, 0.0]
    split = split_final_distribution(_occ(p, np.arange(4.0)), 1.0, [1])
    assert split.separable
    assert split.return_probability == pytest.approx(1.0 - 1e-5)


def test_split_residual_is_gap_mass():
    p = [0.49, 0.0, 5e-7, 0.0, 0.0, 0.0, 0.51 - 5e-7]
    split = split_final_distribution(_occ(p, np.arange(7.0)), 0.0, [0])
    assert split.separable
    assert split.residual == pytest.approx(5e-7)
    assert split.low_peak_mass + split.high_peak_mass + split.residual == pytest.approx(1.0)


def test_microcanonical_mixture_window():
    p = ModelParams(50, -3.0)
    mix = microcanonical_mixture(p, -2.0, -20.0, 5)
    assert mix.levels.size == 5
    assert np.all(np.diff(mix.levels) == 1)
    assert mix.weights.sum() == pytest.approx(1.0)
    with pytest.raises(DomainError):
        microcanonical_mixture(p, -2.0, 0.0, 0)


def test_return_probability_scan_rows():
    p = ModelParams(6, -3.0)
    mix = microcanonical_mixture(p, -2.0, -100.0, 1)
    protos = [SweepProtocol(-2.0, 2.0, T) for T in (20.0, 40.0)]
    rows = return_probability_scan(mix, p, protos)
    assert [r["half_time"] for r in rows] == [20.0, 40.0]
    for r in rows:
        assert r["norm_drift"] < 1e-8
        assert 0.0 <= r["initial_mass"] <= 1.0


def test_site_populations_sum_rule():
    p = ModelParams(10, -3.0)
    n1 = site_populations(p, 0.3)
    # the trace of n1 over all eigenstates equals the trace over Fock states
    assert n1.sum() == pytest.approx(sum(range(11)))


def test_occupations_csv(tmp_path):
    p = ModelParams(2, -3.0)
    pr = SweepProtocol(-1.0, 1.0, 5.0)
    occs = sweep_map(eigenstate(p, pr, 0), p, pr, snapshots=3)
    occupations_to_csv(occs, tmp_path / "o.csv")
    rows = list(csv.reader(open(tmp_path / "o.csv")))
    assert rows[0] == ["time", "delta", "level", "energy", "probability"]
    assert len(rows) == 1 + 5 * 3

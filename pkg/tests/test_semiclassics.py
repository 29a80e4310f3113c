import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bhdimer.model import DomainError, ModelParams, SweepProtocol
from bhdimer.semiclassics import (ChartSingularity, ClassicalState, amplitude_energy,
                                  area_table, area_table_to_csv, classical_energy,
                                  delta_s_for_action, enclosed_action, energy_for_action,
                                  evolve_ensemble, fixed_points, from_amplitudes, hamilton_eom,
                                  kruskal_return_probability, kruskal_to_json, lobe_areas,
                                  plot_coordinates, sample_microcanonical, swallowtail_halfwidth,
                                  to_amplitudes, two_cluster_threshold, upper_lobe_area,
                                  _rhs_real)
from bhdimer.spectrum import eigen_at

P = ModelParams(1000, -3.0)
DC = swallowtail_halfwidth(-3.0)


def test_energy_trivial_points():
    p0 = P.p0
    assert classical_energy(ClassicalState(0.0, 0.0), 0.0, P) == pytest.approx(-p0)
    for s in (1, -1):
        e = classical_energy(ClassicalState(1.3, s * p0), 0.4, P)
        assert e == pytest.approx(P.U * p0 ** 2 + s * 0.4 * p0)
    with pytest.raises(DomainError):
        classical_energy(ClassicalState(0.0, p0 * 1.01), 0.0, P)


@settings(max_examples=50)
@given(st.floats(-np.pi, np.pi), st.floats(-0.99, 0.99), st.floats(-2, 2))
def test_amplitude_chart_round_trip(q, z, delta):
    a1, a2 = to_amplitudes(q, z * P.p0, P)
    assert abs(a1) ** 2 + abs(a2) ** 2 == pytest.approx(1.0)
    q2, p2 = from_amplitudes(a1, a2, P)
    assert p2 == pytest.approx(z * P.p0, abs=1e-9)
    assert np.angle(np.exp(1j * (q2 - q))) == pytest.approx(0.0, abs=1e-9)
    e = classical_energy(ClassicalState(q, z * P.p0), delta, P)
    assert float(amplitude_energy(a1, a2, delta, P)) == pytest.approx(e, rel=1e-10, abs=1e-9)


@settings(max_examples=50)
@given(st.floats(-np.pi, np.pi), st.floats(-0.95, 0.95), st.floats(-2, 2))
def test_eom_matches_finite_differences(q, z, delta):
    p = z * P.p0
    dq, dp = hamilton_eom(ClassicalState(q, p), delta, P)
    h = 1e-4

    def H(qq, pp):
        return classical_energy(ClassicalState(qq, pp), delta, P)

    # fourth-order central differences
    dHdp = (-H(q, p + 2 * h) + 8 * H(q, p + h) - 8 * H(q, p - h) + H(q, p - 2 * h)) / (12 * h)
    dHdq = (-H(q + 2 * h, p) + 8 * H(q + h, p) - 8 * H(q - h, p) + H(q - 2 * h, p)) / (12 * h)
    scale = max(1.0, abs(dHdp), abs(dHdq))
    assert abs(dq - dHdp) < 1e-6 * scale
    assert abs(dp + dHdq) < 1e-6 * scale


def test_eom_pole_raises():
    with pytest.raises(ChartSingularity):
        hamilton_eom(ClassicalState(0.2, P.p0), 0.0, P)


@settings(max_examples=30)
@given(st.floats(-3, 3), st.floats(-0.9, 0.9), st.floats(-2, 2))
def test_amplitude_flow_generates_hamilton_flow(q, z, delta):
    # d(q, p)/dt read off the amplitude equations equals Hamilton's equations
    f = _rhs_real(P, delta)
    a1, a2 = to_amplitudes(q, z * P.p0, P)
    y = np.array([a1.real, a1.imag, a2.real, a2.imag])
    dy = np.array(f(0.0, y))
    h = 1e-7
    qa, pa = from_amplitudes(*(lambda v: (v[0] + 1j * v[1], v[2] + 1j * v[3]))(y + h * dy), P)
    qb, pb = from_amplitudes(*(lambda v: (v[0] + 1j * v[1], v[2] + 1j * v[3]))(y - h * dy), P)
    dq_num = np.angle(np.exp(1j * (qa - qb))) / (2 * h)
    dp_num = (pa - pb) / (2 * h) / P.n_particles
    dq, dp = hamilton_eom(ClassicalState(q, z * P.p0), delta, P)
    # scaled amplitudes run on the time unit of the particle-number-free equations
    assert dq_num == pytest.approx(dq, rel=1e-5, abs=1e-5)
    assert dp_num == pytest.approx(dp / P.n_particles, rel=1e-5, abs=1e-5)


def test_fixed_points_zero_detuning():
    fps = fixed_points(0.0, P)
    kinds = sorted(f.kind for f in fps)
    assert kinds.count("saddle") == 1
    sad = next(f for f in fps if f.kind == "saddle")
    assert sad.state.q == pytest.approx(0.0) and sad.state.p == pytest.approx(0.0, abs=1e-9)
    assert sad.energy == pytest.approx(-P.p0)
    mins = [f for f in fps if f.kind == "minimum"]
    assert len(mins) == 2
    for m in mins:
        assert abs(m.state.p) == pytest.approx(P.p0 * 2 * np.sqrt(2) / 3, rel=1e-9)
        assert m.energy / (P.n_particles * P.omega) == pytest.approx(-5 / 6, rel=1e-9)


@pytest.mark.parametrize("delta, inside", [(0.0, True), (1.0, True), (-1.1, True),
                                           (1.2, False), (-2.0, False)])
def test_fixed_point_count_swallowtail(delta, inside):
    fps = fixed_points(delta, P)
    assert len(fps) == (4 if inside else 2)
    assert sum(not f.stable for f in fps) == (1 if inside else 0)


def test_swallowtail_halfwidth():
    assert DC == pytest.approx((3 ** (2 / 3) - 1) ** 1.5)
    assert swallowtail_halfwidth(-0.5) == 0.0


@pytest.mark.parametrize("delta", [-1.1, -0.7, 0.0, 0.3, 0.9, 1.12])
def test_area_identity_two_routes(delta):
    g = lobe_areas(delta, P, outside_by_q=True)
    assert g.exists
    assert g.total == pytest.approx(4 * np.pi * P.p0, rel=1e-6)
    assert min(g.areas) > 0


def test_lobe_areas_grid_oracle():
    # independent oracle: count cells of a fine (q, z) grid below the saddle energy
    n = 3000
    q = (np.arange(n) + 0.5) / n * 2 * np.pi - np.pi
    z = (np.arange(n) + 0.5) / n * 2 - 1
    Q, Z = np.meshgrid(q, z)
    H = -np.sqrt(1 - Z ** 2) * np.cos(Q) - 1.5 * Z ** 2
    cell = (2 * np.pi / n) * (2 / n) * P.p0
    below = H < -1.0
    Au = below[Z > 0].sum() * cell
    g = lobe_areas(0.0, P)
    assert g.areas[0] == pytest.approx(Au, rel=2e-3)
    assert g.areas[1] == pytest.approx(g.areas[0], rel=1e-9)
    assert g.areas[0] / (4 * np.pi * P.p0) == pytest.approx(0.154, abs=1e-3)


def test_no_separatrix_outside_swallowtail():
    assert not lobe_areas(1.5, P).exists
    with pytest.raises(DomainError):
        upper_lobe_area(1.5, P)


def test_upper_lobe_shrinks():
    xs = np.linspace(-DC + 1e-3, DC - 1e-3, 9)
    A = [upper_lobe_area(x, P) for x in xs]
    assert np.all(np.diff(A) < 0)


def test_delta_s_small_action_limit():
    assert delta_s_for_action(1e-8, P) == pytest.approx(1.1, abs=0.05)
    assert delta_s_for_action(0.0, P) == pytest.approx(DC)
    assert delta_s_for_action(50.0, P, window=(-2.0, -1.5)) is None


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 0.9))
def test_action_energy_round_trip(frac):
    amax = enclosed_action(fixed_points(-2.0, P)[-1].energy, -2.0, P)
    I = frac * amax
    E = energy_for_action(I, -2.0, P)
    assert enclosed_action(E, -2.0, P) == pytest.approx(I, rel=1e-8)


def test_bohr_sommerfeld_with_shifted_radius():
    # quantization holds with the Weyl-shifted radius (N + 1)/2 at equal U
    shifted = ModelParams(1001, -3.0 * 1001 / 1000)
    E = eigen_at(P, -2.0).values - P.energy_offset
    for n in (0, 5, 37, 100):
        assert enclosed_action(E[n], -2.0, shifted) / (2 * np.pi) == pytest.approx(n + 0.5, abs=1e-5)


def test_kruskal_values_and_pattern(tmp_path):
    amax = upper_lobe_area(-DC + 1e-9, P)
    k = kruskal_return_probability(0.1 * amax, P)
    assert 0 < k.probability < 1
    du, dl, do = k.rates
    assert du < 0 < dl and do < 0
    # lower lobe growth is fed by the other two regions
    assert dl == pytest.approx(-(du + do), rel=1e-6)
    kruskal_to_json(k, tmp_path / "k.json")
    # the growth pattern breaks down when the ensemble crosses at negative delta
    with pytest.raises(DomainError):
        kruskal_return_probability(0.5 * amax, P)
    # too large to ever meet the separatrix inside a short window: full return
    assert kruskal_return_probability(0.1 * amax, P, SweepProtocol(-2.0, -1.5, 10.0)).probability == 1.0


def test_sampler_on_contour_and_seeded():
    E = energy_for_action(200.0, -2.0, P)
    a = sample_microcanonical(E, -2.0, P, 64, seed=3)
    b = sample_microcanonical(E, -2.0, P, 64, seed=3)
    c = sample_microcanonical(E, -2.0, P, 64, seed=4)
    np.testing.assert_array_equal(a.q, b.q)
    assert not np.array_equal(a.q, c.q)
    energies = [classical_energy(s, -2.0, P) for s in a.states]
    np.testing.assert_allclose(energies, E, rtol=1e-10)
    assert a.action == pytest.approx(200.0, rel=1e-8)
    assert a.period > 0


def test_frozen_detuning_energy_drift():
    E = energy_for_action(300.0, -0.5, P)
    ens = sample_microcanonical(E, -0.5, P, 16, seed=0)
    T = 200.0
    out = evolve_ensemble(ens, P, SweepProtocol(-0.5, -0.5 + 1e-12, T), dt=0.01)
    drift = np.abs(out.final_energy - E) / abs(E)
    assert np.all(drift / (2 * T) < 1e-6)
    assert out.return_probability == 1.0


def test_ensemble_agrees_with_kruskal():
    amax = upper_lobe_area(-DC + 1e-9, P)
    I = 0.25 * amax
    k = kruskal_return_probability(I, P)
    ens = sample_microcanonical(energy_for_action(I, -2.0, P), -2.0, P, 200, seed=11)
    out = evolve_ensemble(ens, P, SweepProtocol(-2.0, 2.0, 1000.0))
    se = np.sqrt(k.probability * (1 - k.probability) / 200)
    assert out.failure_rate == 0.0
    assert abs(out.return_probability - k.probability) < 2 * se


def test_two_cluster_threshold():
    x = np.r_[np.full(10, -1.0), np.full(5, 3.0)]
    assert two_cluster_threshold(x) == pytest.approx(1.0)
    assert two_cluster_threshold([2.0, 2.0]) == 2.0


def test_plot_coordinates():
    qp, pp = plot_coordinates(ClassicalState(np.pi / 2, 0.0), P)
    assert qp == pytest.approx(np.pi / 2) and pp == pytest.approx(-P.p0)
    qp, pp = plot_coordinates(ClassicalState(0.0, 0.0), P)
    assert (qp, pp) == (0.0, 0.0)


@settings(max_examples=30)
@given(st.floats(-3.0, 3.0), st.floats(-0.9, 0.9))
def test_plot_coordinates_area_preserving(q, z):
    p = z * P.p0
    h = 1e-4

    def f(qq, pp):
        return np.array(plot_coordinates(ClassicalState(qq, pp), P))

    def diff(a, b):
        d = a - b
        d[0] = np.angle(np.exp(1j * d[0]))  # q' is an angle with a cut at +-pi
        return d / (2 * h)

    J = np.column_stack([diff(f(q + h, p), f(q - h, p)), diff(f(q, p + h), f(q, p - h))])
    assert abs(np.linalg.det(J)) == pytest.approx(1.0, rel=1e-5)


def test_area_table_csv(tmp_path):
    rows = area_table(P, [-1.0, 0.0, 1.0, 1.5])
    assert [r["delta"] for r in rows] == [-1.0, 0.0, 1.0]
    assert rows[0]["A_u"] / (4 * np.pi * P.p0) == pytest.approx(0.3439, abs=1e-3)
    area_table_to_csv(rows, tmp_path / "a.csv")
    assert (tmp_path / "a.csv").read_text().startswith("delta,A_u,A_l,A_o")

"""Tests for relay_shaper.link_sim."""

import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose

from relay_shaper.errors import ContractViolation
from relay_shaper.link_sim import (
    THP_APPROXIMATION,
    Constellation,
    Metric,
    Transceiver,
    capacity_bits,
    detect,
    normalized_mse,
    run_ber,
    run_capacity,
    run_mse,
    thp_modulo,
    thp_precode,
    transmit,
)
from relay_shaper.mse_engine import Design
from relay_shaper.network_model import (
    ChannelEnsemble,
    HopSpec,
    Joint,
    NetworkSpec,
    PureShaping,
    draw_network,
    shaping_exponential,
    uniform_template,
)
from relay_shaper.objective_solver import ObjectiveSpec, design_transceiver

THRESHOLDS = [0.4, 0.8, 1.2, 1.6]


def _identity_link(n=2, noise=1e-12):
    eye = np.eye(n)
    net = NetworkSpec((HopSpec.from_channel(eye, noise, 1.0, Joint(1.0)),), n)
    design = Design(F=(eye,), Q=(eye,), P=(eye,), G=eye, C=eye)
    return net, design


def _zero_link(n=2):
    eye, zero = np.eye(n), np.zeros((n, n))
    net = NetworkSpec((HopSpec.from_channel(eye, 1.0, 1.0, Joint(1.0)),), n)
    design = Design(F=(zero,), Q=(eye,), P=(zero,), G=zero, C=eye)
    return net, design


def _send(constellation, net, design, transceiver, symbols, seed):
    rng = np.random.default_rng(seed)
    shape = (net.stream_count, symbols)
    in_phase = rng.integers(0, constellation.levels, size=shape)
    quadrature = rng.integers(0, constellation.levels, size=shape)
    received = transmit(net, design, constellation.modulate(in_phase, quadrature), rng)
    detected = detect(design, received, constellation, transceiver)
    errors = constellation.bit_errors(in_phase, detected[0])
    errors += constellation.bit_errors(quadrature, detected[1])
    return errors, in_phase.size * constellation.bits_per_symbol, detected


# ── constellations ──────────────────────────────────────────

def test_unit_energy():
    for modulation in ("qpsk", "qam16"):
        points = Constellation(modulation).points
        assert_allclose(np.mean(np.abs(points) ** 2), 1.0)


def test_constellation_sizes():
    qpsk, qam = Constellation("qpsk"), Constellation("qam16")
    assert (qpsk.levels, qpsk.bits_per_symbol, qpsk.points.size) == (2, 2, 4)
    assert (qam.levels, qam.bits_per_symbol, qam.points.size) == (4, 4, 16)


def test_gray_neighbours_differ_by_one_bit():
    qam = Constellation("qam16")
    for i in range(qam.levels - 1):
        assert qam.bit_errors(np.array([i]), np.array([i + 1])) == 1


def test_symbol_bit_errors_per_symbol():
    qam = Constellation("qam16")
    sent = (np.array([0, 1, 2]), np.array([0, 0, 3]))
    detected = (np.array([0, 2, 1]), np.array([1, 0, 0]))
    counts = qam.symbol_bit_errors(sent, detected)
    assert counts.tolist() == [1, 1, 2]
    total = qam.bit_errors(sent[0], detected[0]) + qam.bit_errors(sent[1], detected[1])
    assert counts.sum() == total


def test_slicer_inverts_levels():
    qam = Constellation("qam16")
    index = np.arange(qam.levels)
    assert np.array_equal(qam.slice_axis(qam.axis_values(index)), index)
    assert qam.slice_axis(np.array([100.0]))[0] == qam.levels - 1


# ── THP modulo ──────────────────────────────────────────────

def test_modulo_keeps_inner_points():
    base = Constellation("qam16").modulo_base
    x = np.array([0.0, 0.3 - 0.2j, -base / 2])
    assert np.array_equal(thp_modulo(x, base), x)


def test_modulo_wraps_boundary():
    assert thp_modulo(np.array([4.0]), 4.0)[0] == 0.0
    assert_allclose(thp_modulo(np.array([2.5 + 6.5j]), 4.0), [-1.5 - 1.5j])


def test_modulo_idempotent():
    rng = np.random.default_rng(0)
    x = 10 * (rng.standard_normal(100) + 1j * rng.standard_normal(100))
    once = thp_modulo(x, 3.0)
    assert_allclose(thp_modulo(once, 3.0), once, atol=1e-12)
    assert np.all(np.abs(once.real) <= 1.5) and np.all(np.abs(once.imag) <= 1.5)


def test_modulo_base_spans_the_axis():
    """The base is sqrt(M) level spacings, twice sqrt(M) half-spacings."""
    for modulation in ("qpsk", "qam16"):
        c = Constellation(modulation)
        spacing = float(np.diff(c.axis_values(np.arange(2)))[0])
        assert_allclose(spacing, 2.0 * c.delta)
        assert_allclose(c.modulo_base, c.levels * spacing)


def test_modulo_rejects_bad_base():
    with pytest.raises(ContractViolation):
        thp_modulo(np.zeros(2), 0.0)


def test_precoding_adds_lattice_point():
    """C x equals the symbols plus a point of the modulo lattice."""
    rng = np.random.default_rng(1)
    qam = Constellation("qam16")
    base = qam.modulo_base
    C = np.tril(rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3)), -1) + np.eye(3)
    a = qam.modulate(rng.integers(0, 4, (3, 50)), rng.integers(0, 4, (3, 50)))
    x = thp_precode(a, C - np.eye(3), base)
    offset = (C @ x - a) / base
    assert_allclose(offset.real, np.round(offset.real), atol=1e-9)
    assert_allclose(offset.imag, np.round(offset.imag), atol=1e-9)


# ── detection ───────────────────────────────────────────────

def test_noiseless_link_is_error_free():
    net, design = _identity_link()
    for modulation in ("qpsk", "qam16"):
        for transceiver in Transceiver:
            errors, bits, _ = _send(Constellation(modulation), net, design, transceiver, 500, 2)
            assert errors == 0
            assert bits == 2 * 500 * Constellation(modulation).bits_per_symbol


def test_dfe_without_feedback_matches_linear():
    rng = np.random.default_rng(3)
    qam = Constellation("qam16")
    eye = np.eye(3)
    design = Design(F=(eye,), Q=(eye,), P=(eye,), G=eye, C=eye)
    y = rng.standard_normal((3, 40)) + 1j * rng.standard_normal((3, 40))
    linear = detect(design, y, qam, Transceiver.LINEAR)
    dfe = detect(design, y, qam, Transceiver.DFE)
    assert np.array_equal(linear[0], dfe[0]) and np.array_equal(linear[1], dfe[1])


def test_zero_precoder_guesses():
    """Nothing reaches the destination, so half the bits are wrong."""
    net, design = _zero_link()
    errors, bits, _ = _send(Constellation("qpsk"), net, design, Transceiver.LINEAR, 10_000, 4)
    assert abs(errors / bits - 0.5) <= 0.01


def test_zero_precoder_capacity_and_mse():
    net, design = _zero_link()
    assert capacity_bits(net, design.P) == 0.0
    assert_allclose(normalized_mse(net, design.P), 1.0)


def test_single_hop_capacity_is_waterfilling():
    """Unbounded peak cap: the design reaches the water-filling capacity."""
    hop = HopSpec.from_channel(np.diag([2.0, 1.0]), 0.5, 2.0, Joint(1e6))
    net = NetworkSpec((hop,), 2)
    design = design_transceiver(net, ObjectiveSpec("capacity"))
    expected = np.log2(1 + 8 * 1.1875) + np.log2(1 + 2 * 0.8125)
    assert_allclose(capacity_bits(net, design.P), expected, rtol=1e-9)


# ── Monte Carlo runs ────────────────────────────────────────

def _joint_template(hops=2, antennas=2, streams=2, tau=1.4, power=None):
    power = float(antennas) if power is None else power
    return uniform_template(hops, antennas, streams, power, 1.0, Joint(tau))


def test_capacity_run_is_deterministic():
    template = _joint_template()
    a = run_capacity(template, [0.0, 10.0], 4, seed=3)
    b = run_capacity(template, [0.0, 10.0], 4, seed=3)
    assert a == b
    assert a.metric is Metric.CAPACITY
    assert a.snr_db == (0.0, 10.0)


def test_thread_count_does_not_change_results():
    template = _joint_template()
    serial = run_mse(template, [5.0, 15.0], 6, seed=8, threads=1)
    pooled = run_mse(template, [5.0, 15.0], 6, seed=8, threads=3)
    assert serial.values == pooled.values
    assert serial.stderr == pooled.stderr


def test_seed_changes_results():
    template = _joint_template()
    a = run_capacity(template, [10.0], 3, seed=1)
    b = run_capacity(template, [10.0], 3, seed=2)
    assert a.values != b.values


def test_capacity_grows_with_snr():
    report = run_capacity(_joint_template(), [0.0, 20.0], 10, seed=4)
    assert report.values[1] > report.values[0] > 0


def test_mse_vanishes_without_noise():
    template = uniform_template(1, 4, 4, 4.0, 1.0, PureShaping(np.eye(4)))
    report = run_mse(template, [120.0], 3, seed=5)
    assert report.values[0] <= 1e-6


def test_ber_report():
    template = _joint_template()
    report = run_ber(
        template, ObjectiveSpec("a_schur_convex"), "qpsk", [5.0, 15.0], 5, seed=6,
        symbols_per_trial=50,
    )
    assert report.metric is Metric.BER
    assert report.bits == (1000, 1000)
    assert report.approximations == ()
    for ber, err, bits in zip(report.values, report.stderr, report.bits):
        assert 0.0 <= ber <= 0.5
        assert err <= np.sqrt(ber / bits) + 1e-15


def test_thp_flags_approximation(caplog):
    template = _joint_template()
    with caplog.at_level(logging.WARNING, logger="relay_shaper.link_sim"):
        report = run_ber(
            template, ObjectiveSpec("m_schur_convex"), "qpsk", [10.0], 2, seed=7,
            transceiver="thp", symbols_per_trial=20,
        )
    assert report.approximations == (THP_APPROXIMATION,)
    assert report.design_kind == "m_schur_convex/thp"
    assert "sigma_a" in caplog.text


def test_linear_receiver_rejects_feedback_objective():
    with pytest.raises(ContractViolation):
        run_ber(_joint_template(), ObjectiveSpec("m_schur_convex"), "qpsk", [10.0], 2, seed=1)


def test_empty_grid_rejected():
    with pytest.raises(ContractViolation):
        run_capacity(_joint_template(), [], 2, seed=1)


def test_robust_run_uses_estimation_error():
    template = _joint_template()
    exact = run_capacity(template, [20.0], 3, seed=9)
    robust = run_capacity(template, [20.0], 3, seed=9, error_variances=[0.05, 0.05])
    assert robust.values != exact.values


# ── desk-scale replicas ─────────────────────────────────────

@pytest.mark.slow
def test_capacity_decreases_with_correlation():
    grid = [5.0, 15.0, 25.0, 35.0]
    capacity, mse = [], []
    for rho in (0.0, 0.5, 0.9):
        shaping = PureShaping(shaping_exponential(THRESHOLDS, rho))
        template = uniform_template(3, 4, 4, 4.0, 1.0, shaping)
        capacity.append(run_capacity(template, grid, 500, seed=2024).values)
        mse.append(run_mse(template, grid, 500, seed=2024).values)
    for i in range(len(grid)):
        assert capacity[0][i] >= capacity[1][i] >= capacity[2][i]
        assert mse[0][i] <= mse[1][i] <= mse[2][i]


@pytest.mark.slow
def test_peak_cap_irrelevant_at_high_snr():
    values = [
        run_capacity(_joint_template(3, 4, 4, tau), [35.0], 200, seed=2024).values[0]
        for tau in (1.2, 1.4, 1.8)
    ]
    assert (max(values) - min(values)) / max(values) <= 0.02


@pytest.mark.slow
def test_ber_improves_with_looser_peak_cap():
    bers = [
        run_ber(
            _joint_template(3, 4, 4, tau), ObjectiveSpec("a_schur_convex"), "qpsk",
            [15.0, 25.0], 300, seed=2024,
        ).values
        for tau in (1.2, 1.4, 1.8)
    ]
    for i in range(2):
        assert bers[0][i] >= bers[1][i] >= bers[2][i]


@pytest.mark.slow
def test_convex_class_beats_concave_class():
    for tau in (1.2, 1.4, 1.8):
        template = _joint_template(3, 4, 4, tau)
        convex, concave = (
            run_ber(
                template, ObjectiveSpec(kind), "qpsk", [15.0, 20.0, 25.0], 500, seed=2024
            ).values
            for kind in ("a_schur_convex", "a_schur_concave")
        )
        for c, k in zip(convex, concave):
            assert c <= k


@pytest.mark.slow
def test_thp_beats_dfe_beats_linear():
    """16-QAM at tau = 1.4: THP <= DFE <= linear A-Schur-convex at 20 dB and up."""
    template = _joint_template(3, 4, 4, 1.4)
    grid = [20.0, 25.0]
    thp, dfe = (
        run_ber(
            template, ObjectiveSpec("m_schur_convex"), "qam16", grid, 500, seed=2024,
            transceiver=transceiver,
        ).values
        for transceiver in ("thp", "dfe")
    )
    linear = run_ber(
        template, ObjectiveSpec("a_schur_convex"), "qam16", grid, 500, seed=2024
    ).values
    for i in range(len(grid)):
        assert thp[i] <= dfe[i] <= linear[i]


@pytest.mark.slow
def test_symbol_errors_are_mostly_single_bit():
    """Gray labels: at 25 dB nearly every wrong symbol costs one bit."""
    qam = Constellation("qam16")
    template = _joint_template(3, 4, 4, 1.4).with_snr(25.0)
    ensemble = ChannelEnsemble(2024)
    counts = []
    for index in range(300):
        net = draw_network(template, ensemble, index)
        design = design_transceiver(net, ObjectiveSpec("m_schur_convex"))
        rng = np.random.default_rng(index)
        shape = (net.stream_count, 100)
        sent = rng.integers(0, qam.levels, size=shape), rng.integers(0, qam.levels, size=shape)
        x0 = thp_precode(qam.modulate(*sent), design.feedback, qam.modulo_base)
        detected = detect(design, transmit(net, design, x0, rng), qam, Transceiver.THP)
        counts.append(qam.symbol_bit_errors(sent, detected).ravel())
    counts = np.concatenate(counts)
    wrong = counts[counts > 0]
    assert wrong.size >= 50
    assert np.mean(wrong == 1) >= 0.9

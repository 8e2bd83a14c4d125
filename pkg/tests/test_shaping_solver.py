"""Tests for relay_shaper.shaping_solver."""

import inspect
import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose

from relay_shaper.errors import ContractViolation
from relay_shaper.matrix_core import hermitian_sqrt
from relay_shaper.network_model import HopSpec, PureShaping
from relay_shaper.shaping_solver import (
    shaping_dominates_sum_power,
    solve_hop,
    solve_pure_shaping,
)

THRESHOLDS = [0.4, 0.8, 1.2, 1.6]


def _cn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


def _low_rank(rng, n, rank):
    X = _cn(rng, n, rank)
    return X @ X.conj().T


def _contraction(rng, rows, cols):
    """Random matrix with spectral norm at most one."""
    X = _cn(rng, rows, cols)
    return X / max(np.linalg.norm(X, 2), 1.0) * rng.uniform(0.2, 1.0)


# ── solve_pure_shaping ──────────────────────────────────────

def test_diagonal_full_rank():
    """N = rank(R_s): the transmit covariance equals R_s."""
    sol = solve_pure_shaping(np.diag(THRESHOLDS), 4)
    assert sol.F.shape == (4, 4)
    assert_allclose(sol.achieved_covariance, np.diag(THRESHOLDS), atol=1e-12)
    assert sol.active_rank == 4


def test_identity_truncated():
    sol = solve_pure_shaping(np.eye(4), 2)
    assert sol.F.shape == (4, 2)
    values = np.sort(np.linalg.eigvalsh(sol.achieved_covariance))[::-1]
    assert_allclose(values, [1, 1, 0, 0], atol=1e-12)
    R = sol.achieved_covariance
    assert_allclose(R @ R, R, atol=1e-12)


def test_rank_deficient_is_exact():
    rng = np.random.default_rng(0)
    R = _low_rank(rng, 4, 2)
    sol = solve_pure_shaping(R, 2)
    assert np.linalg.norm(sol.achieved_covariance - R) <= 1e-9 * np.linalg.norm(R)
    assert sol.active_rank == 2


def test_saturates_top_eigenvalues():
    """Rank 6 matrix with N = 4: the four largest eigen-directions are filled."""
    rng = np.random.default_rng(1)
    R = _low_rank(rng, 6, 6)
    sol = solve_pure_shaping(R, 4)
    reference_values, reference_vectors = np.linalg.eigh(R)
    reference_values = reference_values[::-1]
    reference_vectors = reference_vectors[:, ::-1]
    gains = np.linalg.norm(sol.F, axis=0) ** 2
    assert_allclose(gains, reference_values[:4], rtol=1e-9)
    for j in range(4):
        direction = sol.F[:, j] / np.linalg.norm(sol.F[:, j])
        assert abs(abs(np.vdot(reference_vectors[:, j], direction)) - 1.0) <= 1e-9


def test_never_exceeds_shaping():
    rng = np.random.default_rng(2)
    for rank in (1, 2, 3, 5):
        R = _low_rank(rng, 5, rank)
        for streams in (1, 2, 4):
            sol = solve_pure_shaping(R, streams)
            gap = R - sol.achieved_covariance
            assert np.linalg.eigvalsh(gap).min() >= -1e-9 * np.linalg.norm(R, 2)


def test_channel_is_not_an_input():
    assert list(inspect.signature(solve_pure_shaping).parameters) == ["shaping", "streams"]


def test_too_many_streams_rejected():
    with pytest.raises(ContractViolation):
        solve_pure_shaping(np.eye(2), 3)


# ── optimality against feasible alternatives ────────────────

def test_dominates_alternatives_through_channel():
    """rank(R_s) <= N: channel-weighted eigenvalues dominate every feasible F'."""
    rng = np.random.default_rng(3)
    for _ in range(20):
        R = _low_rank(rng, 4, 2)
        H = _cn(rng, 4, 4)
        noise = float(rng.uniform(0.2, 2.0))
        F = solve_pure_shaping(R, 2).F
        ours = np.linalg.eigvalsh(F.conj().T @ H.conj().T @ H @ F / noise)[::-1]
        root = hermitian_sqrt(R)
        for _ in range(50):
            alt = root @ _contraction(rng, 4, 2)
            theirs = np.linalg.eigvalsh(alt.conj().T @ H.conj().T @ H @ alt / noise)[::-1]
            assert np.all(ours >= theirs - 1e-9 * max(ours[0], 1.0))


def test_dominates_alternatives_in_covariance():
    """rank(R_s) > N: the transmit covariance eigenvalues dominate."""
    rng = np.random.default_rng(4)
    for _ in range(20):
        R = _low_rank(rng, 4, 4)
        F = solve_pure_shaping(R, 2).F
        ours = np.linalg.eigvalsh(F @ F.conj().T)[::-1]
        root = hermitian_sqrt(R)
        for _ in range(50):
            alt = root @ _contraction(rng, 4, 2)
            theirs = np.linalg.eigvalsh(alt @ alt.conj().T)[::-1]
            assert np.all(ours >= theirs - 1e-9 * ours[0])


# ── sum power gate ──────────────────────────────────────────

def test_sum_power_gate_passes():
    hop = HopSpec(4, 4, 1.0, 4.0, PureShaping(np.diag(THRESHOLDS)))
    assert shaping_dominates_sum_power(hop)


def test_sum_power_gate_warns(caplog):
    hop = HopSpec(4, 4, 1.0, 2.0, PureShaping(np.diag(THRESHOLDS)))
    with caplog.at_level(logging.WARNING, logger="relay_shaper.shaping_solver"):
        assert not shaping_dominates_sum_power(hop, hop_index=2)
    assert "hop 2" in caplog.text
    assert "exceeds power budget" in caplog.text


def test_solve_hop_still_solves_when_gate_fails(caplog):
    hop = HopSpec(4, 4, 1.0, 2.0, PureShaping(np.diag(THRESHOLDS)))
    with caplog.at_level(logging.WARNING):
        sol = solve_hop(hop, 4, hop_index=1)
    assert_allclose(sol.achieved_covariance, np.diag(THRESHOLDS), atol=1e-12)

"""Closed-form transmit matrices for hops under a pure covariance shaping constraint.

The optimal F_k puts the top-N eigenvalues of R_s on the N streams along the
eigenvectors of R_s; the channel never enters. When rank(R_s) <= N this
gives F F^H = R_s exactly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .matrix_core import hermitian_evd
from .network_model import HopSpec, PureShaping

logger = logging.getLogger(__name__)

RANK_RTOL = 1e-9
SUM_POWER_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class ShapingSolution:
    F: np.ndarray
    achieved_covariance: np.ndarray
    active_rank: int


def solve_pure_shaping(shaping: np.ndarray, streams: int) -> ShapingSolution:
    """F = U_Rs[:, :N] diag(sqrt(lam_1..lam_N)), a tx x N matrix.

    The free right unitary is fixed to the identity; downstream rotations
    absorb it.
    """
    if streams < 1:
        raise ContractViolation(f"stream count must be positive, got {streams}")
    evd = hermitian_evd(shaping)
    values = evd.eigenvalues
    if values[-1] < 0:
        raise ContractViolation("shaping matrix R_s must be positive semidefinite")
    if streams > values.size:
        raise ContractViolation(
            f"{streams} streams do not fit a {values.size}x{values.size} shaping matrix"
        )

    top = values[:streams]
    F = evd.eigenvectors[:, :streams] * np.sqrt(top)
    covariance = F @ F.conj().T
    covariance = 0.5 * (covariance + covariance.conj().T)
    rank = int(np.count_nonzero(top > RANK_RTOL * max(values[0], 0.0)))
    return ShapingSolution(F=F, achieved_covariance=covariance, active_rank=rank)


def shaping_dominates_sum_power(hop: HopSpec, hop_index: int | None = None) -> bool:
    """Check tr(R_s) <= P_k, so the hop's sum power constraint is inactive.

    Logs a warning and returns False otherwise; the solution then ignores
    the sum power budget.
    """
    if not isinstance(hop.constraint, PureShaping):
        raise ContractViolation("sum power gate applies to pure shaping hops only")
    total = float(np.real(np.trace(hop.constraint.shaping)))
    if total <= hop.power_budget + SUM_POWER_SLACK:
        return True
    where = f"hop {hop_index}" if hop_index is not None else "hop"
    logger.warning(
        "%s: tr(R_s)=%.6g exceeds power budget %.6g; shaping is not stricter than sum power",
        where,
        total,
        hop.power_budget,
    )
    return False


def solve_hop(hop: HopSpec, streams: int, hop_index: int | None = None) -> ShapingSolution:
    """Solve one pure-shaping hop after running the sum power gate."""
    shaping_dominates_sum_power(hop, hop_index)
    return solve_pure_shaping(hop.constraint.shaping, streams)

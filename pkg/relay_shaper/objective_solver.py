"""Objective classes, optimal rotations and feedback, and full design assembly.

A design is built in three steps:

1. per-hop F_k from the hop constraints (closed form for pure shaping,
   multi-hop cave water-filling for joint constraints);
2. relay rotations Q_k (k >= 2) aligning the singular bases of consecutive
   hops, then the source rotation Q_1 picked by the objective class;
3. lifting to the actual precoders P_k, the LMMSE equalizer and, for the
   multiplicative classes, the feedback matrix C of the DFE/THP receiver.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .cave_waterfill import AllocationKind, MultihopAllocation, assemble_joint_F, multihop_allocate
from .errors import ContractViolation
from .matrix_core import (
    cholesky_lower,
    dft_matrix,
    equal_diagonal_rotation,
    hermitian_evd,
    svd_ordered,
)
from .mse_engine import (
    Design,
    hop_states,
    lift_precoders,
    lmmse_equalizer,
    pad_columns,
    phi_lmmse,
    phi_lmmse_compact,
)
from .network_model import ChannelMatchedShaping, Joint, NetworkSpec, PureShaping
from .shaping_solver import solve_hop

logger = logging.getLogger(__name__)


class ObjectiveKind(str, Enum):
    WEIGHTED_MSE = "weighted_mse"
    CAPACITY = "capacity"
    A_SCHUR_CONVEX = "a_schur_convex"
    A_SCHUR_CONCAVE = "a_schur_concave"
    M_SCHUR_CONVEX = "m_schur_convex"
    M_SCHUR_CONCAVE = "m_schur_concave"


# Canonical member of each Schur class.
SCALAR_FUNCTIONS = {
    ObjectiveKind.A_SCHUR_CONVEX: "max_mse",
    ObjectiveKind.A_SCHUR_CONCAVE: "sum_mse",
    ObjectiveKind.M_SCHUR_CONVEX: "sum_log_cholesky_diagonal",
    ObjectiveKind.M_SCHUR_CONCAVE: "product_cholesky_diagonal",
}

_ALLOCATION = {
    ObjectiveKind.WEIGHTED_MSE: AllocationKind.A_SCHUR,
    ObjectiveKind.CAPACITY: AllocationKind.M_SCHUR,
    ObjectiveKind.A_SCHUR_CONVEX: AllocationKind.A_SCHUR,
    ObjectiveKind.A_SCHUR_CONCAVE: AllocationKind.A_SCHUR,
    ObjectiveKind.M_SCHUR_CONVEX: AllocationKind.M_SCHUR,
    ObjectiveKind.M_SCHUR_CONCAVE: AllocationKind.M_SCHUR,
}


@dataclass(frozen=True, eq=False)
class ObjectiveSpec:
    """Objective class plus its parameters (the weight matrix for weighted MSE)."""

    kind: ObjectiveKind
    weight: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        if self.kind is ObjectiveKind.WEIGHTED_MSE:
            if self.weight is None:
                raise ContractViolation("weighted MSE needs a weight matrix")
            W = np.asarray(self.weight, dtype=complex)
            if W.ndim == 1:
                W = np.diag(W)
            evd = hermitian_evd(W)
            if evd.eigenvalues[-1] < 0:
                raise ContractViolation("weight matrix must be positive semidefinite")
            object.__setattr__(self, "weight", 0.5 * (W + W.conj().T))
        elif self.weight is not None:
            raise ContractViolation(f"{self.kind.value} takes no weight matrix")

    @property
    def scalar_fn(self) -> str | None:
        return SCALAR_FUNCTIONS.get(self.kind)

    @property
    def uses_feedback(self) -> bool:
        """True for the multiplicative classes, realized with DFE or THP."""
        return self.kind in (ObjectiveKind.M_SCHUR_CONVEX, ObjectiveKind.M_SCHUR_CONCAVE)

    @property
    def allocation_kind(self) -> AllocationKind:
        return _ALLOCATION[self.kind]

    @property
    def label(self) -> str:
        return self.kind.value


@dataclass(frozen=True, eq=False)
class RotationChoice:
    U_Omega: np.ndarray
    provenance: str


def _chain_without_source(net: NetworkSpec, F, Qchain) -> np.ndarray:
    """A_K Q_K ... Q_2 A_1, the composed chain before the source rotation."""
    states = hop_states(net, F)
    M = states[0].A
    for state, Qk in zip(states[1:], Qchain):
        M = state.A @ Qk @ M
    return M


def optimal_Qk_chain(net: NetworkSpec, F: Sequence[np.ndarray]) -> list[np.ndarray]:
    """Q_k = V_{A_k} U_{A_{k-1}}^H for k = 2..K."""
    states = hop_states(net, F)
    svds = [svd_ordered(state.A) for state in states]
    return [svds[k].right @ svds[k - 1].left.conj().T for k in range(1, net.K)]


def select_rotation(
    objective: ObjectiveSpec, theta_eigenvalues: np.ndarray, signal_variance: float
) -> RotationChoice:
    """U_Omega for the objective class, given the eigenvalues of the chain Gram matrix."""
    n = theta_eigenvalues.size
    kind = objective.kind
    if kind is ObjectiveKind.WEIGHTED_MSE:
        return RotationChoice(hermitian_evd(objective.weight).eigenvectors, "weight_eigenbasis")
    if kind is ObjectiveKind.A_SCHUR_CONVEX:
        return RotationChoice(dft_matrix(n), "dft")
    if kind is ObjectiveKind.M_SCHUR_CONVEX:
        mse = signal_variance * np.diag(1.0 - theta_eigenvalues)
        return RotationChoice(equal_diagonal_rotation(mse).conj().T, "equal_diagonal")
    # capacity is invariant to U_Omega; the concave classes want it diagonal
    return RotationChoice(np.eye(n, dtype=complex), "identity")


def optimal_Q1(
    net: NetworkSpec,
    F: Sequence[np.ndarray],
    Qchain: Sequence[np.ndarray],
    objective: ObjectiveSpec,
) -> np.ndarray:
    """Q_1 = U_Theta U_Omega^H.

    U_Theta holds the eigenvectors of Theta = M^H M (M the composed chain
    without Q_1) with eigenvalues decreasing, so Phi_LMMSE becomes
    sigma_a^2 U_Omega (I - Lambda_Theta) U_Omega^H.
    """
    if len(Qchain) != net.K - 1:
        raise ContractViolation(f"expected {net.K - 1} relay rotations, got {len(Qchain)}")
    M = _chain_without_source(net, F, Qchain)
    evd = hermitian_evd(M.conj().T @ M)
    theta = np.clip(evd.eigenvalues, 0.0, None)
    choice = select_rotation(objective, theta, net.signal_variance)
    logger.debug("source rotation: %s", choice.provenance)
    return evd.eigenvectors @ choice.U_Omega.conj().T


def optimal_C(phi: np.ndarray) -> np.ndarray:
    """C = diag(L_11..L_NN) L^{-1} with phi = L L^H; then C phi C^H = diag(L_ii^2)."""
    L = cholesky_lower(phi).L
    n = L.shape[0]
    scale = np.real(np.diag(L))
    C = scale[:, None] * la.solve_triangular(L, np.eye(n, dtype=complex), lower=True)
    C = np.tril(C)
    np.fill_diagonal(C, 1.0)
    return C


def mse_matrix(net: NetworkSpec, design: Design) -> np.ndarray:
    """Phi_MSE = C Phi_LMMSE C^H, the error matrix with the equalizer C G_LMMSE."""
    phi = phi_lmmse(net, design.P)
    out = design.C @ phi @ design.C.conj().T
    return 0.5 * (out + out.conj().T)


def evaluate_objective(objective: ObjectiveSpec, design: Design, net: NetworkSpec) -> float:
    kind = objective.kind
    if kind in (ObjectiveKind.M_SCHUR_CONVEX, ObjectiveKind.M_SCHUR_CONCAVE):
        squared = np.real(np.diag(cholesky_lower(phi_lmmse(net, design.P)).L)) ** 2
        if kind is ObjectiveKind.M_SCHUR_CONVEX:
            return float(np.sum(np.log(squared)))
        return float(np.prod(squared))

    phi = mse_matrix(net, design)
    if kind is ObjectiveKind.WEIGHTED_MSE:
        return float(np.real(np.trace(objective.weight @ phi)))
    if kind is ObjectiveKind.CAPACITY:
        sign, logdet = np.linalg.slogdet(phi)
        if sign.real <= 0:
            raise ContractViolation("MSE matrix is singular")
        return float(logdet)
    diagonal = np.real(np.diag(phi))
    if kind is ObjectiveKind.A_SCHUR_CONVEX:
        return float(np.max(diagonal))
    return float(np.sum(diagonal))


@dataclass(frozen=True, eq=False)
class PrecoderSolution:
    """Per-hop F_k (padded to the hop's input width) and, for joint hops, the allocation."""

    F: tuple[np.ndarray, ...]
    allocation: MultihopAllocation | None = None


def _stream_weights(objective: ObjectiveSpec) -> np.ndarray | None:
    if objective.kind is not ObjectiveKind.WEIGHTED_MSE:
        return None
    return np.clip(hermitian_evd(objective.weight).eigenvalues, 0.0, None)


def solve_F(
    net: NetworkSpec,
    objective: ObjectiveSpec,
    tol: float = 1e-8,
    max_iters: int = 200,
) -> PrecoderSolution:
    """Per-hop F_k for a network whose hops all carry the same constraint family."""
    net.require_channels()
    widths = net.input_widths()
    constraints = [hop.constraint for hop in net.hops]
    if any(isinstance(c, ChannelMatchedShaping) for c in constraints):
        raise ContractViolation("channel-matched shaping must be resolved with draw_network first")

    if all(isinstance(c, PureShaping) for c in constraints):
        F = [
            pad_columns(solve_hop(hop, net.stream_count, k).F, width)
            for k, (hop, width) in enumerate(zip(net.hops, widths), start=1)
        ]
        return PrecoderSolution(F=tuple(F))

    if all(isinstance(c, Joint) for c in constraints):
        allocation = multihop_allocate(
            net,
            objective.allocation_kind,
            tol=tol,
            max_iters=max_iters,
            weights=_stream_weights(objective),
        )
        F = [
            pad_columns(assemble_joint_F(hop, solution.powers), width)
            for hop, solution, width in zip(net.hops, allocation.solutions, widths)
        ]
        return PrecoderSolution(F=tuple(F), allocation=allocation)

    raise ContractViolation("pure shaping and joint constraints cannot be mixed across hops")


def assemble_design(
    net: NetworkSpec, objective: ObjectiveSpec, Fsol: Sequence[np.ndarray]
) -> Design:
    """Rotations, lifted precoders, LMMSE equalizer and feedback for fixed F_k."""
    F = [pad_columns(Fk, width) for Fk, width in zip(Fsol, net.input_widths())]
    Qchain = optimal_Qk_chain(net, F)
    Q = [optimal_Q1(net, F, Qchain, objective)] + Qchain
    P = lift_precoders(net, F, Q)
    G = lmmse_equalizer(net, P)
    if objective.uses_feedback:
        C = optimal_C(phi_lmmse_compact(net, F, Q))
        G = C @ G
    else:
        C = np.eye(net.stream_count, dtype=complex)
    return Design(F=tuple(F), Q=tuple(Q), P=tuple(P), G=G, C=C)


def design_transceiver(
    net: NetworkSpec,
    objective: ObjectiveSpec,
    tol: float = 1e-8,
    max_iters: int = 200,
) -> Design:
    """solve_F followed by assemble_design."""
    return assemble_design(net, objective, solve_F(net, objective, tol, max_iters).F)

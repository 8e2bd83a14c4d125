"""MSE matrices of the relay chain, the LMMSE equalizer and the F_k variables.

Shapes, for a chain with N streams and hop k of size rx_k x tx_k:

- P_k (precoder / forwarding matrix): tx_k x w_k with w_1 = N, w_k = rx_{k-1};
- F_k (inner precoder): same shape as P_k, F_k F_k^H is the transmit covariance;
- Q_k (rotation): w_k x w_k unitary;
- G (equalizer): N x rx_K; C (feedback): N x N unit lower triangular.

The noise covariance at every receiver is sigma_k^2 I, so R_n^{-1/2} is a
scalar and the whitened channel shares its singular vectors with H_k.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg as la

from .errors import ContractViolation
from .matrix_core import hermitian_inv_sqrt
from .network_model import NetworkSpec

UNITARY_TOL = 1e-10


def _hermitian(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.conj().T)


def is_unitary(Q: np.ndarray, tol: float = UNITARY_TOL) -> bool:
    n = Q.shape[0]
    return Q.shape == (n, n) and np.linalg.norm(Q.conj().T @ Q - np.eye(n)) <= tol * max(1, n)


@dataclass(frozen=True, eq=False)
class Design:
    """A complete transceiver for one channel realization."""

    F: tuple[np.ndarray, ...]
    Q: tuple[np.ndarray, ...]
    P: tuple[np.ndarray, ...]
    G: np.ndarray | None
    C: np.ndarray

    def __post_init__(self):
        for name in ("F", "Q", "P"):
            mats = tuple(np.asarray(m, dtype=complex) for m in getattr(self, name))
            object.__setattr__(self, name, mats)
        C = np.asarray(self.C, dtype=complex)
        object.__setattr__(self, "C", C)
        if not np.allclose(np.diag(C), 1.0) or np.any(np.triu(C, 1) != 0):
            raise ContractViolation("feedback matrix C must be unit-diagonal lower triangular")
        for k, Q in enumerate(self.Q, start=1):
            if not is_unitary(Q):
                raise ContractViolation(f"rotation Q_{k} is not unitary")

    @property
    def is_linear(self) -> bool:
        return bool(np.all(self.C == np.eye(self.C.shape[0])))

    @property
    def feedback(self) -> np.ndarray:
        """Strictly lower triangular B = C - I used by DFE and THP."""
        return self.C - np.eye(self.C.shape[0])


@dataclass(frozen=True, eq=False)
class HopState:
    """Pi_k = I + H_k F_k F_k^H H_k^H / sigma_k^2 and A_k = Pi_k^{-1/2} H_k F_k / sigma_k."""

    Pi: np.ndarray
    A: np.ndarray


def pad_columns(F: np.ndarray, width: int) -> np.ndarray:
    """Append zero columns so ``F`` has ``width`` columns."""
    F = np.asarray(F, dtype=complex)
    if F.shape[1] > width:
        raise ContractViolation(f"matrix has {F.shape[1]} columns, more than {width}")
    return np.hstack([F, np.zeros((F.shape[0], width - F.shape[1]), dtype=complex)])


def _check_chain(net: NetworkSpec, mats: Sequence[np.ndarray], name: str) -> list[np.ndarray]:
    net.require_channels()
    if len(mats) != net.K:
        raise ContractViolation(f"expected {net.K} {name} matrices, got {len(mats)}")
    out = []
    for k, (hop, width, M) in enumerate(zip(net.hops, net.input_widths(), mats), start=1):
        M = np.asarray(M, dtype=complex)
        if M.shape != (hop.tx, width):
            raise ContractViolation(
                f"{name}_{k} has shape {M.shape}, expected {(hop.tx, width)}"
            )
        out.append(M)
    return out


def _check_rotations(net: NetworkSpec, Q: Sequence[np.ndarray]) -> list[np.ndarray]:
    if len(Q) != net.K:
        raise ContractViolation(f"expected {net.K} rotations, got {len(Q)}")
    out = []
    for k, (width, Qk) in enumerate(zip(net.input_widths(), Q), start=1):
        Qk = np.asarray(Qk, dtype=complex)
        if Qk.shape != (width, width) or not is_unitary(Qk):
            raise ContractViolation(f"Q_{k} must be a {width}x{width} unitary matrix")
        out.append(Qk)
    return out


def rx_covariance_chain(
    net: NetworkSpec, P: Sequence[np.ndarray], source_variance: float | None = None
) -> list[np.ndarray]:
    """R_{x_k} = H_k P_k R_{x_{k-1}} P_k^H H_k^H + sigma_k^2 I, k = 1..K.

    R_{x_0} = source_variance * I, defaulting to sigma_a^2 (sigma_s^2 for THP
    is taken equal to sigma_a^2).
    """
    P = _check_chain(net, P, "P")
    variance = net.signal_variance if source_variance is None else source_variance
    R = variance * np.eye(net.stream_count, dtype=complex)
    chain = []
    for hop, Pk in zip(net.hops, P):
        HP = hop.channel @ Pk
        R = _hermitian(HP @ R @ HP.conj().T + hop.noise_variance * np.eye(hop.rx))
        chain.append(R)
    return chain


def end_to_end(net: NetworkSpec, P: Sequence[np.ndarray]) -> np.ndarray:
    """T = H_K P_K ... H_1 P_1 (rx_K x N)."""
    P = _check_chain(net, P, "P")
    T = np.eye(net.stream_count, dtype=complex)
    for hop, Pk in zip(net.hops, P):
        T = hop.channel @ Pk @ T
    return T


def noise_covariance(net: NetworkSpec, P: Sequence[np.ndarray]) -> np.ndarray:
    """Covariance of the accumulated relay and destination noise at the destination."""
    P = _check_chain(net, P, "P")
    R = np.zeros((net.hops[0].rx, net.hops[0].rx), dtype=complex)
    for k, hop in enumerate(net.hops):
        if k > 0:
            HP = hop.channel @ P[k]
            R = HP @ R @ HP.conj().T
        R = R + hop.noise_variance * np.eye(hop.rx)
    return _hermitian(R)


def mse_unified(
    net: NetworkSpec, P: Sequence[np.ndarray], G: np.ndarray, C: np.ndarray
) -> np.ndarray:
    """G R_{x_K} G^H + s C C^H - s C T^H G^H - s G T C^H with s = sigma_a^2."""
    C = np.asarray(C, dtype=complex)
    if C.shape != (net.stream_count,) * 2:
        raise ContractViolation("C must be N x N")
    if not np.allclose(np.diag(C), 1.0) or np.any(np.triu(C, 1) != 0):
        raise ContractViolation("C must be unit-diagonal lower triangular")
    G = np.asarray(G, dtype=complex)
    s = net.signal_variance
    R = rx_covariance_chain(net, P)[-1]
    T = end_to_end(net, P)
    cross = s * G @ T @ C.conj().T
    phi = G @ R @ G.conj().T + s * C @ C.conj().T - cross - cross.conj().T
    return _hermitian(phi)


def mse_linear(net: NetworkSpec, P: Sequence[np.ndarray], G: np.ndarray) -> np.ndarray:
    """E{(G r - a)(G r - a)^H} for the linear receiver."""
    return mse_unified(net, P, G, np.eye(net.stream_count))


def lmmse_equalizer(net: NetworkSpec, P: Sequence[np.ndarray]) -> np.ndarray:
    """G = sigma_a^2 T^H R_{x_K}^{-1}, computed with a Hermitian solve."""
    R = rx_covariance_chain(net, P)[-1]
    T = end_to_end(net, P)
    X = la.solve(R, T, assume_a="pos")
    return net.signal_variance * X.conj().T


def phi_lmmse(net: NetworkSpec, P: Sequence[np.ndarray]) -> np.ndarray:
    """Phi_LMMSE = sigma_a^2 I - sigma_a^4 T^H R_{x_K}^{-1} T."""
    R = rx_covariance_chain(net, P)[-1]
    T = end_to_end(net, P)
    s = net.signal_variance
    X = la.solve(R, T, assume_a="pos")
    return _hermitian(s * np.eye(net.stream_count) - s * s * T.conj().T @ X)


def hop_states(net: NetworkSpec, F: Sequence[np.ndarray]) -> list[HopState]:
    """Per-hop Pi_k and A_k for inner precoders F."""
    F = _check_chain(net, F, "F")
    states = []
    for hop, Fk in zip(net.hops, F):
        HF = hop.channel @ Fk
        Pi = np.eye(hop.rx) + _hermitian(HF @ HF.conj().T) / hop.noise_variance
        A = hermitian_inv_sqrt(Pi) @ HF / np.sqrt(hop.noise_variance)
        states.append(HopState(Pi=Pi, A=A))
    return states


def phi_lmmse_compact(
    net: NetworkSpec, F: Sequence[np.ndarray], Q: Sequence[np.ndarray]
) -> np.ndarray:
    """sigma_a^2 (I - M^H M) with M = A_K Q_K ... A_2 Q_2 A_1 Q_1."""
    Q = _check_rotations(net, Q)
    M = np.eye(net.stream_count, dtype=complex)
    for state, Qk in zip(hop_states(net, F), Q):
        M = state.A @ Qk @ M
    phi = net.signal_variance * (np.eye(net.stream_count) - M.conj().T @ M)
    return _hermitian(phi)


def lift_precoders(
    net: NetworkSpec, F: Sequence[np.ndarray], Q: Sequence[np.ndarray]
) -> list[np.ndarray]:
    """Invert the F_k change of variables.

    P_1 = F_1 Q_1 / sigma_a and P_k = F_k Q_k Pi_{k-1}^{-1/2} / sigma_{k-1},
    so that P_k R_{x_{k-1}} P_k^H = F_k F_k^H on every hop.
    """
    Q = _check_rotations(net, Q)
    states = hop_states(net, F)
    F = [np.asarray(Fk, dtype=complex) for Fk in F]
    P = [F[0] @ Q[0] / np.sqrt(net.signal_variance)]
    for k in range(1, net.K):
        previous = net.hops[k - 1]
        whitening = hermitian_inv_sqrt(states[k - 1].Pi) / np.sqrt(previous.noise_variance)
        P.append(F[k] @ Q[k] @ whitening)
    return P


def weighting_recursion(
    net: NetworkSpec, F: Sequence[np.ndarray], Q: Sequence[np.ndarray]
) -> np.ndarray:
    """Build Phi_LMMSE hop by hop as a matrix-weighting of the downstream MSE.

    Starting from the last hop, E <- W^H E W + (I - W^H W) with slope
    W = A_k Q_k; the intercept is the per-hop LMMSE error matrix.
    """
    Q = _check_rotations(net, Q)
    slopes = [state.A @ Qk for state, Qk in zip(hop_states(net, F), Q)]
    W = slopes[-1]
    E = np.eye(W.shape[1]) - W.conj().T @ W
    for W in reversed(slopes[:-1]):
        intercept = np.eye(W.shape[1]) - W.conj().T @ W
        E = W.conj().T @ E @ W + intercept
    return _hermitian(net.signal_variance * E)

"""K-hop relay network descriptions, seeded channel draws and shaping matrices.

A network is an ordered chain of hops. Hop k carries the channel H_k
(rx_k x tx_k), the noise variance at its receiver, the transmit power budget
of its transmitter and one constraint descriptor:

- ``PureShaping``: transmit covariance dominated by a fixed matrix R_s;
- ``Joint``: sum power budget plus a per-eigenchannel peak ``tau_max``;
- ``ChannelMatchedShaping``: a pure shaping constraint whose R_s is built
  from the channel once it has been drawn (see ``draw_network``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence, Union

import numpy as np
import scipy.linalg as la

from .errors import ContractViolation, DegenerateChannelError
from .matrix_core import hermitian_evd, hermitian_part, svd_ordered

SHAPING_CONDITION_LIMIT = 1e12


class Weighting(str, Enum):
    """How a channel-matched R_s is pulled back under its diagonal thresholds."""

    MATRIX = "matrix"
    SCALAR = "scalar"


@dataclass(frozen=True, eq=False)
class PureShaping:
    """Covariance shaping constraint F F^H <= R_s."""

    shaping: np.ndarray

    def __post_init__(self):
        R = hermitian_part(self.shaping, "R_s")
        if hermitian_evd(R).eigenvalues[-1] < 0:
            raise ContractViolation("shaping matrix R_s must be positive semidefinite")
        object.__setattr__(self, "shaping", R)


@dataclass(frozen=True)
class Joint:
    """Sum power budget of the hop plus a peak eigen-power ``tau_max``."""

    tau_max: float

    def __post_init__(self):
        if not self.tau_max > 0:
            raise ContractViolation(f"tau_max must be positive, got {self.tau_max}")


@dataclass(frozen=True)
class ChannelMatchedShaping:
    """Deferred R_s sharing its eigenvectors with the hop channel."""

    thresholds: tuple[float, ...]
    eta: float = 0.0
    weighting: Weighting = Weighting.MATRIX

    def __post_init__(self):
        object.__setattr__(self, "thresholds", tuple(float(t) for t in self.thresholds))
        object.__setattr__(self, "weighting", Weighting(self.weighting))
        if any(t <= 0 for t in self.thresholds):
            raise ContractViolation("shaping thresholds must be positive")
        if self.eta < 0:
            raise ContractViolation(f"eta must be nonnegative, got {self.eta}")


Constraint = Union[PureShaping, Joint, ChannelMatchedShaping]


@dataclass(frozen=True, eq=False)
class HopSpec:
    """One hop of the chain. ``channel`` is None in templates."""

    rx: int
    tx: int
    noise_variance: float
    power_budget: float
    constraint: Constraint
    channel: np.ndarray | None = None

    def __post_init__(self):
        if self.rx < 1 or self.tx < 1:
            raise ContractViolation(f"antenna counts must be positive, got {self.rx}x{self.tx}")
        if not self.noise_variance > 0:
            raise ContractViolation(f"noise variance must be positive, got {self.noise_variance}")
        if not self.power_budget > 0:
            raise ContractViolation(f"power budget must be positive, got {self.power_budget}")
        if self.channel is not None:
            H = np.asarray(self.channel, dtype=complex)
            if H.shape != (self.rx, self.tx):
                raise ContractViolation(
                    f"channel shape {H.shape} does not match {self.rx}x{self.tx}"
                )
            object.__setattr__(self, "channel", H)
        if isinstance(self.constraint, PureShaping):
            if self.constraint.shaping.shape != (self.tx, self.tx):
                raise ContractViolation(
                    f"R_s shape {self.constraint.shaping.shape} does not match tx={self.tx}"
                )
        if isinstance(self.constraint, ChannelMatchedShaping):
            if len(self.constraint.thresholds) != self.tx:
                raise ContractViolation("one shaping threshold per transmit antenna is required")

    @classmethod
    def from_channel(
        cls,
        channel: np.ndarray,
        noise_variance: float,
        power_budget: float,
        constraint: Constraint,
    ) -> HopSpec:
        H = np.asarray(channel, dtype=complex)
        return cls(H.shape[0], H.shape[1], noise_variance, power_budget, constraint, H)

    @property
    def snr(self) -> float:
        return self.power_budget / self.noise_variance

    def replace(self, **changes) -> HopSpec:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class NetworkSpec:
    """K-hop chain carrying ``stream_count`` data streams."""

    hops: tuple[HopSpec, ...]
    stream_count: int
    signal_variance: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "hops", tuple(self.hops))
        if not self.hops:
            raise ContractViolation("a network needs at least one hop")
        if self.stream_count < 1:
            raise ContractViolation(f"stream count must be positive, got {self.stream_count}")
        if not self.signal_variance > 0:
            raise ContractViolation("signal variance must be positive")
        for k, hop in enumerate(self.hops, start=1):
            if self.stream_count > min(hop.rx, hop.tx):
                raise ContractViolation(
                    f"hop {k} has {hop.rx}x{hop.tx} antennas, fewer than "
                    f"{self.stream_count} streams"
                )

    @property
    def K(self) -> int:
        return len(self.hops)

    @property
    def has_channels(self) -> bool:
        return all(hop.channel is not None for hop in self.hops)

    def input_widths(self) -> list[int]:
        """Column count of each precoder: N at the source, rx_{k-1} at relays."""
        return [self.stream_count] + [hop.rx for hop in self.hops[:-1]]

    def with_hops(self, hops: Sequence[HopSpec]) -> NetworkSpec:
        return dataclasses.replace(self, hops=tuple(hops))

    def with_snr(self, snr_db: float) -> NetworkSpec:
        """Set every hop's noise so that P_k / sigma_k^2 equals ``snr_db``."""
        scale = 10.0 ** (snr_db / 10.0)
        return self.with_hops(
            hop.replace(noise_variance=hop.power_budget / scale) for hop in self.hops
        )

    def require_channels(self) -> None:
        if not self.has_channels:
            raise ContractViolation("network has no channel realization; use draw_network")


@dataclass(frozen=True)
class ChannelEnsemble:
    """i.i.d. CN(0, 1) channel entries from a seeded stream."""

    seed: int
    variance: float = field(default=1.0)

    def generator(self, trial_index: int) -> np.random.Generator:
        if trial_index < 0:
            raise ContractViolation(f"trial index must be nonnegative, got {trial_index}")
        sequence = np.random.SeedSequence(self.seed, spawn_key=(trial_index,))
        return np.random.default_rng(sequence)

    def draw(self, rng: np.random.Generator, rx: int, tx: int) -> np.ndarray:
        scale = np.sqrt(self.variance / 2.0)
        return scale * (rng.standard_normal((rx, tx)) + 1j * rng.standard_normal((rx, tx)))


def draw_network(
    template: NetworkSpec, ensemble: ChannelEnsemble, trial_index: int
) -> NetworkSpec:
    """Fill every hop of ``template`` with a channel drawn for ``trial_index``.

    Channel-matched shaping descriptors are resolved into ``PureShaping``
    against the freshly drawn channel.
    """
    rng = ensemble.generator(trial_index)
    hops = []
    for hop in template.hops:
        drawn = hop.replace(channel=ensemble.draw(rng, hop.rx, hop.tx))
        if isinstance(hop.constraint, ChannelMatchedShaping):
            spec = hop.constraint
            R = shaping_channel_matched(drawn, spec.thresholds, spec.eta, spec.weighting)
            drawn = drawn.replace(constraint=PureShaping(R))
        hops.append(drawn)
    return template.with_hops(hops)


def robust_substitute(net: NetworkSpec, error_variances: Sequence[float]) -> NetworkSpec:
    """Fold i.i.d. channel-estimation error into the noise.

    With H_k = H_hat_k + dH_k and dH_k entries of variance sigma_e^2, the
    designs stay the same after sigma_n^2 <- sigma_n^2 + P_k * sigma_e^2,
    keeping the estimate as the channel.
    """
    if len(error_variances) != net.K:
        raise ContractViolation("one estimation-error variance per hop is required")
    if any(v < 0 for v in error_variances):
        raise ContractViolation("estimation-error variances must be nonnegative")
    return net.with_hops(
        hop.replace(noise_variance=hop.noise_variance + hop.power_budget * var)
        for hop, var in zip(net.hops, error_variances)
    )


def shaping_exponential(thresholds: Sequence[float], rho: float) -> np.ndarray:
    """R_s = D T D with D = diag(sqrt(p_j)) and T_jl = rho^|j-l|."""
    p = np.asarray(thresholds, dtype=float)
    if p.ndim != 1 or p.size == 0 or np.any(p <= 0):
        raise ContractViolation("thresholds must be a nonempty vector of positive values")
    if not 0.0 <= rho < 1.0:
        raise ContractViolation(f"rho must lie in [0, 1), got {rho}")
    idx = np.arange(p.size)
    toeplitz = rho ** np.abs(idx[:, None] - idx[None, :])
    d = np.sqrt(p)
    R = d[:, None] * toeplitz * d[None, :]
    np.fill_diagonal(R, p)
    return R.astype(complex)


def shaping_channel_matched(
    hop: HopSpec,
    thresholds: Sequence[float],
    eta: float,
    weighting: Weighting | str,
) -> np.ndarray:
    """R_s with the channel's right singular vectors and diagonal <= thresholds.

    Solves |V|^2 lam = thresholds for the eigenvalues, replaces negative
    entries by ``eta`` and pulls the diagonal back under the thresholds by
    matrix (per-antenna, never scaling up) or scalar weighting.

    Raises:
        DegenerateChannelError: if the linear system for lam is singular.
    """
    if hop.channel is None:
        raise ContractViolation("channel-matched shaping needs a drawn channel")
    t = np.asarray(thresholds, dtype=float)
    if t.shape != (hop.tx,) or np.any(t <= 0):
        raise ContractViolation("one positive threshold per transmit antenna is required")
    weighting = Weighting(weighting)

    V = svd_ordered(hop.channel).right
    system = np.abs(V) ** 2
    if np.linalg.cond(system) > SHAPING_CONDITION_LIMIT:
        raise DegenerateChannelError(
            "channel eigenvector magnitudes give a singular shaping system"
        )
    lam = la.solve(system, t)
    lam = np.where(lam < 0, eta, lam)

    R = (V * lam) @ V.conj().T
    diagonal = np.real(np.diag(R))
    positive = diagonal > 0
    if weighting is Weighting.MATRIX:
        beta = np.ones_like(t)
        beta[positive] = np.minimum(1.0, t[positive] / diagonal[positive])
        root = np.sqrt(beta)
        R = root[:, None] * R * root[None, :]
    else:
        beta = float(np.min(t[positive] / diagonal[positive])) if positive.any() else 1.0
        R = beta * R
    return 0.5 * (R + R.conj().T)


def uniform_template(
    hops: int,
    antennas: int,
    streams: int,
    power: float,
    noise_variance: float,
    constraint: Constraint,
    signal_variance: float = 1.0,
) -> NetworkSpec:
    """Channel-free chain where every node has ``antennas`` antennas."""
    hop = HopSpec(antennas, antennas, noise_variance, power, constraint)
    return NetworkSpec((hop,) * hops, streams, signal_variance)

"""Seeded Monte Carlo evaluation of relay transceivers.

Every SNR point redraws its channels: trial ``t`` of SNR point ``s`` uses
trial index ``s * trials + t`` for both the channel stream and the
symbol/noise stream, so a run is a pure function of (seed, settings) no
matter how the trials are spread over worker threads.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import partial
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from .errors import ContractViolation
from .mse_engine import Design, phi_lmmse
from .network_model import ChannelEnsemble, NetworkSpec, draw_network, robust_substitute
from .objective_solver import ObjectiveKind, ObjectiveSpec, design_transceiver

logger = logging.getLogger(__name__)

THP_APPROXIMATION = "thp_sigma_s_equals_sigma_a"
PAYLOAD_STREAM = 1


class Modulation(str, Enum):
    QPSK = "qpsk"
    QAM16 = "qam16"


class Transceiver(str, Enum):
    LINEAR = "linear"
    DFE = "dfe"
    THP = "thp"


class Metric(str, Enum):
    BER = "ber"
    CAPACITY = "capacity"
    SUM_MSE = "sum_mse"


def _gray(i: np.ndarray) -> np.ndarray:
    return i ^ (i >> 1)


class Constellation:
    """Unit-energy square QAM built from two Gray-coded PAM axes.

    Axis levels sit at odd multiples of ``delta``; level index i maps to
    (2i - m + 1) * delta for m = sqrt(M) levels per axis.
    """

    def __init__(self, modulation: Modulation | str):
        self.modulation = Modulation(modulation)
        self.order = {Modulation.QPSK: 4, Modulation.QAM16: 16}[self.modulation]
        self.levels = int(round(np.sqrt(self.order)))
        self.bits_per_symbol = int(np.log2(self.order))
        self.delta = float(np.sqrt(3.0 / (2.0 * (self.order - 1))))
        codes = _gray(np.arange(self.levels))
        diff = codes[:, None] ^ codes[None, :]
        self._bit_errors = np.array(
            [[bin(int(v)).count("1") for v in row] for row in diff], dtype=np.int64
        )

    @property
    def modulo_base(self) -> float:
        """Per-axis THP modulo period 2 sqrt(M) delta.

        ``delta`` is the half-spacing of the axis levels, so the period equals
        sqrt(M) level spacings and the wrapped region covers the constellation.
        """
        return 2.0 * self.levels * self.delta

    @property
    def points(self) -> np.ndarray:
        axis = self.axis_values(np.arange(self.levels))
        return (axis[:, None] + 1j * axis[None, :]).ravel()

    def axis_values(self, index: np.ndarray) -> np.ndarray:
        return (2.0 * np.asarray(index) - self.levels + 1) * self.delta

    def modulate(self, in_phase: np.ndarray, quadrature: np.ndarray) -> np.ndarray:
        return self.axis_values(in_phase) + 1j * self.axis_values(quadrature)

    def slice_axis(self, values: np.ndarray) -> np.ndarray:
        index = np.rint((values / self.delta + self.levels - 1) / 2.0)
        return np.clip(index, 0, self.levels - 1).astype(np.int64)

    def slice(self, symbols: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.slice_axis(symbols.real), self.slice_axis(symbols.imag)

    def bit_errors(self, sent: np.ndarray, detected: np.ndarray) -> int:
        """Bit differences between Gray labels of per-axis level indices."""
        return int(self._bit_errors[sent, detected].sum())

    def symbol_bit_errors(
        self, sent: tuple[np.ndarray, np.ndarray], detected: tuple[np.ndarray, np.ndarray]
    ) -> np.ndarray:
        """Wrong bits per symbol, from (in-phase, quadrature) index pairs."""
        return self._bit_errors[sent[0], detected[0]] + self._bit_errors[sent[1], detected[1]]


def thp_modulo(x: np.ndarray, base: float) -> np.ndarray:
    """Wrap real and imaginary parts into [-base/2, base/2)."""
    if not base > 0:
        raise ContractViolation(f"modulo base must be positive, got {base}")
    x = np.asarray(x)

    def wrap(v):
        return v - base * np.floor((v + base / 2.0) / base)

    if np.iscomplexobj(x):
        return wrap(x.real) + 1j * wrap(x.imag)
    return wrap(x)


def thp_precode(symbols: np.ndarray, feedback: np.ndarray, base: float) -> np.ndarray:
    """x_i = MOD(a_i - sum_{j<i} B_ij x_j), so that C x = a + lattice point."""
    x = np.zeros_like(symbols, dtype=complex)
    for i in range(symbols.shape[0]):
        x[i] = thp_modulo(symbols[i] - feedback[i, :i] @ x[:i], base)
    return x


def transmit(
    net: NetworkSpec, design: Design, x0: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Pass source vectors (columns of ``x0``) through the relay chain with fresh noise."""
    r = np.asarray(x0, dtype=complex)
    for hop, P in zip(net.hops, design.P):
        scale = np.sqrt(hop.noise_variance / 2.0)
        shape = (hop.rx, r.shape[1])
        noise = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
        r = hop.channel @ P @ r + noise
    return r


def detect(
    design: Design,
    received: np.ndarray,
    constellation: Constellation,
    transceiver: Transceiver,
) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis level indices detected from the destination signal."""
    y = design.G @ received
    if transceiver is Transceiver.THP:
        return constellation.slice(thp_modulo(y, constellation.modulo_base))
    if transceiver is Transceiver.LINEAR:
        return constellation.slice(y)

    B = design.feedback
    in_phase = np.zeros(y.shape, dtype=np.int64)
    quadrature = np.zeros(y.shape, dtype=np.int64)
    decided = np.zeros(y.shape, dtype=complex)
    for i in range(y.shape[0]):
        z = y[i] - B[i, :i] @ decided[:i]
        in_phase[i], quadrature[i] = constellation.slice(z)
        decided[i] = constellation.modulate(in_phase[i], quadrature[i])
    return in_phase, quadrature


def capacity_bits(net: NetworkSpec, P: Sequence[np.ndarray]) -> float:
    """-log2 det(Phi_LMMSE / sigma_a^2)."""
    phi = phi_lmmse(net, P) / net.signal_variance
    sign, logdet = np.linalg.slogdet(phi)
    if sign.real <= 0:
        raise ContractViolation("MSE matrix is singular")
    return float(-logdet / np.log(2.0))


def normalized_mse(net: NetworkSpec, P: Sequence[np.ndarray]) -> float:
    """tr(Phi_LMMSE) / (N sigma_a^2)."""
    phi = phi_lmmse(net, P)
    return float(np.real(np.trace(phi)) / (net.stream_count * net.signal_variance))


@dataclass(frozen=True)
class SimReport:
    snr_db: tuple[float, ...]
    metric: Metric
    values: tuple[float, ...]
    stderr: tuple[float, ...]
    trials: int
    seed: int
    design_kind: str
    bits: tuple[int, ...] = ()
    approximations: tuple[str, ...] = ()

    def __post_init__(self):
        if self.trials < 1:
            raise ContractViolation("a report needs at least one trial")
        if len(self.values) != len(self.snr_db) or len(self.stderr) != len(self.snr_db):
            raise ContractViolation("one value and one standard error per SNR point")
        if not all(np.isfinite(v) for v in self.values):
            raise ContractViolation("report values must be finite")

    def rows(self) -> Iterator[tuple]:
        for snr, value, err in zip(self.snr_db, self.values, self.stderr):
            yield snr, self.metric.value, value, err, self.trials, self.design_kind, self.seed


@dataclass(frozen=True)
class _Run:
    """Settings shared by every trial of one run."""

    template: NetworkSpec
    objective: ObjectiveSpec
    trials: int
    seed: int
    error_variances: Optional[tuple[float, ...]] = None
    tol: float = 1e-8
    max_iters: int = 200

    def realize(self, snr_db: float, index: int) -> tuple[NetworkSpec, Design]:
        ensemble = ChannelEnsemble(self.seed)
        net = draw_network(self.template.with_snr(snr_db), ensemble, index)
        design_net = net
        if self.error_variances is not None:
            design_net = robust_substitute(net, self.error_variances)
        design = design_transceiver(design_net, self.objective, self.tol, self.max_iters)
        return net, design


def _payload_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index, PAYLOAD_STREAM)))


def _map_trials(fn: Callable[[int], object], count: int, threads: int) -> list:
    """Run ``fn`` over trial offsets; results come back in trial order."""
    if threads <= 1:
        return [fn(t) for t in range(count)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(count)))


def _check_grid(snr_grid: Sequence[float], trials: int, threads: int) -> tuple[float, ...]:
    grid = tuple(float(s) for s in snr_grid)
    if not grid:
        raise ContractViolation("SNR grid is empty")
    if trials < 1:
        raise ContractViolation(f"trials must be positive, got {trials}")
    if threads < 1:
        raise ContractViolation(f"threads must be positive, got {threads}")
    return grid


def _ber_trial(run: _Run, constellation, transceiver, symbols, snr_db, snr_index, t):
    index = snr_index * run.trials + t
    net, design = run.realize(snr_db, index)
    rng = _payload_rng(run.seed, index)
    shape = (net.stream_count, symbols)
    in_phase = rng.integers(0, constellation.levels, size=shape)
    quadrature = rng.integers(0, constellation.levels, size=shape)
    a = constellation.modulate(in_phase, quadrature)
    x0 = a
    if transceiver is Transceiver.THP:
        x0 = thp_precode(a, design.feedback, constellation.modulo_base)
    received = transmit(net, design, x0 * np.sqrt(net.signal_variance), rng)
    detected_i, detected_q = detect(
        design, received / np.sqrt(net.signal_variance), constellation, transceiver
    )
    errors = constellation.bit_errors(in_phase, detected_i)
    errors += constellation.bit_errors(quadrature, detected_q)
    return errors, in_phase.size * constellation.bits_per_symbol


def run_ber(
    template: NetworkSpec,
    objective: ObjectiveSpec,
    modulation: Modulation | str,
    snr_grid: Sequence[float],
    trials: int,
    seed: int,
    *,
    transceiver: Transceiver | str = Transceiver.LINEAR,
    symbols_per_trial: int = 100,
    threads: int = 1,
    error_variances: Sequence[float] | None = None,
    label: str | None = None,
) -> SimReport:
    """Bit error rate per SNR point, counted over Gray-mapped bits."""
    grid = _check_grid(snr_grid, trials, threads)
    transceiver = Transceiver(transceiver)
    if transceiver is Transceiver.LINEAR and objective.uses_feedback:
        raise ContractViolation(f"{objective.label} needs a DFE or THP receiver")
    if symbols_per_trial < 1:
        raise ContractViolation("symbols per trial must be positive")
    constellation = Constellation(modulation)
    approximations = ()
    if transceiver is Transceiver.THP:
        logger.warning("THP designs assume the precoded signal variance equals sigma_a^2")
        approximations = (THP_APPROXIMATION,)

    run = _Run(template, objective, trials, seed, _tuple_or_none(error_variances))
    values, errs, bits = [], [], []
    for s, snr in enumerate(grid):
        trial = partial(_ber_trial, run, constellation, transceiver, symbols_per_trial, snr, s)
        counts = _map_trials(trial, trials, threads)
        errors = sum(c[0] for c in counts)
        total = sum(c[1] for c in counts)
        ber = errors / total
        values.append(ber)
        errs.append(float(np.sqrt(ber * (1.0 - ber) / total)))
        bits.append(total)
        logger.info("snr %.1f dB: ber %.3e over %d bits", snr, ber, total)

    return SimReport(
        snr_db=grid,
        metric=Metric.BER,
        values=tuple(values),
        stderr=tuple(errs),
        trials=trials,
        seed=seed,
        design_kind=label or f"{objective.label}/{transceiver.value}",
        bits=tuple(bits),
        approximations=approximations,
    )


def _tuple_or_none(values: Sequence[float] | None) -> tuple[float, ...] | None:
    return None if values is None else tuple(float(v) for v in values)


def _scalar_trial(run: _Run, measure, snr_db, snr_index, t) -> float:
    net, design = run.realize(snr_db, snr_index * run.trials + t)
    return measure(net, design.P)


def _average_runs(
    measure: Callable[[NetworkSpec, Sequence[np.ndarray]], float],
    metric: Metric,
    template: NetworkSpec,
    objective: ObjectiveSpec,
    snr_grid: Sequence[float],
    trials: int,
    seed: int,
    threads: int,
    error_variances: Sequence[float] | None,
    label: str | None,
) -> SimReport:
    grid = _check_grid(snr_grid, trials, threads)
    run = _Run(template, objective, trials, seed, _tuple_or_none(error_variances))
    values, errs = [], []
    for s, snr in enumerate(grid):
        trial = partial(_scalar_trial, run, measure, snr, s)
        samples = np.array(_map_trials(trial, trials, threads))
        values.append(float(np.mean(samples)))
        errs.append(float(np.std(samples, ddof=1) / np.sqrt(trials)) if trials > 1 else 0.0)
        logger.info("snr %.1f dB: %s %.6g", snr, metric.value, values[-1])
    return SimReport(
        snr_db=grid,
        metric=metric,
        values=tuple(values),
        stderr=tuple(errs),
        trials=trials,
        seed=seed,
        design_kind=label or objective.label,
    )


def run_capacity(
    template: NetworkSpec,
    snr_grid: Sequence[float],
    trials: int,
    seed: int,
    *,
    objective: ObjectiveSpec | None = None,
    threads: int = 1,
    error_variances: Sequence[float] | None = None,
    label: str | None = None,
) -> SimReport:
    """Mean capacity in bits per channel use."""
    objective = objective or ObjectiveSpec(ObjectiveKind.CAPACITY)
    return _average_runs(
        capacity_bits, Metric.CAPACITY, template, objective, snr_grid, trials, seed,
        threads, error_variances, label,
    )


def run_mse(
    template: NetworkSpec,
    snr_grid: Sequence[float],
    trials: int,
    seed: int,
    *,
    objective: ObjectiveSpec | None = None,
    threads: int = 1,
    error_variances: Sequence[float] | None = None,
    label: str | None = None,
) -> SimReport:
    """Mean normalized sum MSE tr(Phi_LMMSE) / (N sigma_a^2)."""
    objective = objective or ObjectiveSpec(ObjectiveKind.A_SCHUR_CONCAVE)
    return _average_runs(
        normalized_mse, Metric.SUM_MSE, template, objective, snr_grid, trials, seed,
        threads, error_variances, label,
    )

"""Configuration management for relay-shaper experiments."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, RelayShaperError
from .link_sim import Metric, Modulation, Transceiver
from .network_model import (
    ChannelMatchedShaping,
    Constraint,
    HopSpec,
    Joint,
    NetworkSpec,
    PureShaping,
    Weighting,
    shaping_exponential,
)
from .objective_solver import ObjectiveKind, ObjectiveSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


DEFAULT_CONFIG_PATH = Path("relay-shaper.toml")
THREADS_ENV = "RELAY_SHAPER_THREADS"

CONSTRAINT_KINDS = ("exponential", "channel_matched", "explicit", "joint")


def _complex_matrix(value: Any, name: str) -> np.ndarray:
    """A matrix given as nested lists, or as a table of ``re``/``im`` nested lists."""
    try:
        if isinstance(value, dict):
            re = np.asarray(value["re"], dtype=float)
            im = np.asarray(value.get("im", np.zeros_like(re)), dtype=float)
            M = re + 1j * im
        else:
            M = np.asarray(value, dtype=complex)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: cannot read matrix ({exc})") from exc
    if M.ndim != 2:
        raise ConfigError(f"{name}: expected a 2-D matrix, got shape {M.shape}")
    return M


def _float_list(values: Any, name: str) -> list[float]:
    if not isinstance(values, (list, tuple)):
        values = [values]
    try:
        return [float(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: expected numbers, got {values!r}") from exc


@dataclass
class NetworkConfig:
    """Chain shape; every node carries ``antennas`` antennas."""

    hops: int = 3
    antennas: int = 4
    streams: int = 4
    power: float = 4.0
    signal_variance: float = 1.0
    noise_variance: float = 1.0
    error_variance: float = 0.0  # channel-estimation error, folded into the noise
    channels: list[Any] = field(default_factory=list)

    def __post_init__(self):
        if self.hops < 1:
            raise ConfigError(f"network.hops must be positive, got {self.hops}")
        if not 1 <= self.streams <= self.antennas:
            raise ConfigError(
                f"network.streams must lie in [1, antennas={self.antennas}], got {self.streams}"
            )
        for key in ("power", "signal_variance", "noise_variance"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"network.{key} must be positive")
        if self.error_variance < 0:
            raise ConfigError("network.error_variance must be nonnegative")
        if self.channels and len(self.channels) != self.hops:
            raise ConfigError(f"{len(self.channels)} explicit channels for {self.hops} hops")

    def channel_matrices(self) -> list[np.ndarray]:
        return [_complex_matrix(c, f"network.channels[{k}]") for k, c in enumerate(self.channels)]


@dataclass
class ConstraintConfig:
    """Per-hop constraint family and its sweep values."""

    kind: str = "exponential"
    thresholds: list[float] = field(default_factory=lambda: [0.4, 0.8, 1.2, 1.6])
    rho: list[float] = field(default_factory=lambda: [0.0])
    eta: float = 0.0
    weighting: str = "matrix"
    tau: list[float] = field(default_factory=lambda: [1.4])
    shaping: Any = None

    def __post_init__(self):
        if self.kind not in CONSTRAINT_KINDS:
            raise ConfigError(
                f"constraint.kind must be one of {', '.join(CONSTRAINT_KINDS)}, got {self.kind!r}"
            )
        self.thresholds = _float_list(self.thresholds, "constraint.thresholds")
        self.rho = _float_list(self.rho, "constraint.rho")
        self.tau = _float_list(self.tau, "constraint.tau")
        if self.kind == "exponential" and not all(0.0 <= r < 1.0 for r in self.rho):
            raise ConfigError("constraint.rho values must lie in [0, 1)")
        if self.kind == "joint" and (not self.tau or any(t <= 0 for t in self.tau)):
            raise ConfigError("constraint.tau must list positive peak powers")
        if self.kind in ("exponential", "channel_matched") and any(t <= 0 for t in self.thresholds):
            raise ConfigError("constraint.thresholds must be positive")
        if self.kind == "explicit" and self.shaping is None:
            raise ConfigError("constraint.shaping is required for kind = 'explicit'")
        try:
            Weighting(self.weighting)
        except ValueError as exc:
            raise ConfigError("constraint.weighting must be 'matrix' or 'scalar'") from exc

    def sweep(self) -> list[tuple[str, Constraint]]:
        """(label suffix, constraint) for every sweep value."""
        if self.kind == "joint":
            return [(f"tau={t:g}", Joint(t)) for t in self.tau]
        if self.kind == "exponential":
            return [
                (f"rho={r:g}", PureShaping(shaping_exponential(self.thresholds, r)))
                for r in self.rho
            ]
        if self.kind == "channel_matched":
            weighting = Weighting(self.weighting)
            spec = ChannelMatchedShaping(tuple(self.thresholds), self.eta, weighting)
            return [(f"eta={self.eta:g}/{self.weighting}", spec)]
        return [("explicit", PureShaping(_complex_matrix(self.shaping, "constraint.shaping")))]


@dataclass
class ObjectiveConfig:
    """Objective classes and receiver structures to sweep."""

    kinds: list[str] = field(default_factory=lambda: ["capacity"])
    transceivers: list[str] = field(default_factory=lambda: ["linear"])
    weights: list[float] = field(default_factory=list)  # diagonal of W for weighted_mse

    def __post_init__(self):
        try:
            kinds = [ObjectiveKind(k) for k in self.kinds]
            [Transceiver(t) for t in self.transceivers]
        except ValueError as exc:
            raise ConfigError(f"objective: {exc}") from exc
        if not kinds or not self.transceivers:
            raise ConfigError("objective.kinds and objective.transceivers must not be empty")
        if ObjectiveKind.WEIGHTED_MSE in kinds and not self.weights:
            raise ConfigError("objective.weights is required for weighted_mse")

    def specs(self) -> list[ObjectiveSpec]:
        out = []
        for kind in self.kinds:
            kind = ObjectiveKind(kind)
            weight = self.weights if kind is ObjectiveKind.WEIGHTED_MSE else None
            out.append(ObjectiveSpec(kind, None if weight is None else np.asarray(weight)))
        return out


@dataclass
class SimulationConfig:
    """Monte Carlo settings."""

    metric: str = "capacity"
    modulation: str = "qpsk"
    snr_db: list[float] = field(default_factory=lambda: [5.0, 15.0, 25.0, 35.0])
    trials: int = 100
    symbols_per_trial: int = 100
    seed: int = 2024
    threads: int = 1
    output: str = "results.csv"
    tol: float = 1e-8
    max_iters: int = 200

    def __post_init__(self):
        try:
            Metric(self.metric)
            Modulation(self.modulation)
        except ValueError as exc:
            raise ConfigError(f"simulation: {exc}") from exc
        self.snr_db = _float_list(self.snr_db, "simulation.snr_db")
        if not self.snr_db:
            raise ConfigError("simulation.snr_db must list at least one SNR point")
        for key in ("trials", "symbols_per_trial", "threads", "max_iters"):
            if not isinstance(getattr(self, key), int) or getattr(self, key) < 1:
                raise ConfigError(f"simulation.{key} must be a positive integer")
        if not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError("simulation.seed must be a nonnegative integer")
        if not self.tol > 0:
            raise ConfigError("simulation.tol must be positive")


@dataclass(frozen=True, eq=False)
class Scenario:
    """One design to evaluate: a channel-free network template plus objective and receiver."""

    label: str
    template: NetworkSpec
    objective: ObjectiveSpec
    transceiver: Transceiver


@dataclass
class Config:
    """Top-level configuration."""

    network: NetworkConfig = field(default_factory=NetworkConfig)
    constraint: ConstraintConfig = field(default_factory=ConstraintConfig)
    objective: ObjectiveConfig = field(default_factory=ObjectiveConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)

    @classmethod
    def load(cls, path: Path | None = None) -> Config:
        """Load config from TOML file. Falls back to defaults if file doesn't exist."""
        config_path = path or DEFAULT_CONFIG_PATH
        if not config_path.exists():
            return cls()

        with open(config_path, "rb") as f:
            try:
                data = tomllib.load(f)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{config_path}: {exc}") from exc

        config = cls()
        try:
            if "network" in data:
                net = data["network"]
                config.network = NetworkConfig(
                    hops=net.get("hops", 3),
                    antennas=net.get("antennas", 4),
                    streams=net.get("streams", 4),
                    power=net.get("power", 4.0),
                    signal_variance=net.get("signal_variance", 1.0),
                    noise_variance=net.get("noise_variance", 1.0),
                    error_variance=net.get("error_variance", 0.0),
                    channels=net.get("channel", []),
                )

            if "constraint" in data:
                con = data["constraint"]
                config.constraint = ConstraintConfig(
                    kind=con.get("kind", "exponential"),
                    thresholds=con.get("thresholds", [0.4, 0.8, 1.2, 1.6]),
                    rho=con.get("rho", [0.0]),
                    eta=con.get("eta", 0.0),
                    weighting=con.get("weighting", "matrix"),
                    tau=con.get("tau", [1.4]),
                    shaping=con.get("shaping"),
                )

            if "objective" in data:
                obj = data["objective"]
                config.objective = ObjectiveConfig(
                    kinds=obj.get("kinds", ["capacity"]),
                    transceivers=obj.get("transceivers", ["linear"]),
                    weights=obj.get("weights", []),
                )

            if "simulation" in data:
                sim = data["simulation"]
                config.simulation = SimulationConfig(
                    metric=sim.get("metric", "capacity"),
                    modulation=sim.get("modulation", "qpsk"),
                    snr_db=sim.get("snr_db", [5.0, 15.0, 25.0, 35.0]),
                    trials=sim.get("trials", 100),
                    symbols_per_trial=sim.get("symbols_per_trial", 100),
                    seed=sim.get("seed", 2024),
                    threads=sim.get("threads", 1),
                    output=sim.get("output", "results.csv"),
                    tol=sim.get("tol", 1e-8),
                    max_iters=sim.get("max_iters", 200),
                )
        except (TypeError, AttributeError) as exc:
            raise ConfigError(f"{config_path}: malformed section ({exc})") from exc

        return config

    def apply_overrides(
        self,
        seed: int | None = None,
        trials: int | None = None,
        output: str | None = None,
        threads: int | None = None,
    ) -> None:
        """Overlay command-line values; ``RELAY_SHAPER_THREADS`` backs ``threads``."""
        sim = self.simulation
        if seed is not None:
            sim.seed = seed
        if trials is not None:
            sim.trials = trials
        if output is not None:
            sim.output = output
        if threads is None and os.environ.get(THREADS_ENV):
            try:
                threads = int(os.environ[THREADS_ENV])
            except ValueError as exc:
                raise ConfigError(f"{THREADS_ENV} must be an integer") from exc
        if threads is not None:
            sim.threads = threads
        # re-run validation on the overridden values
        self.simulation = SimulationConfig(**vars(sim))

    def template(self, constraint: Constraint) -> NetworkSpec:
        net = self.network
        hop = HopSpec(net.antennas, net.antennas, net.noise_variance, net.power, constraint)
        return NetworkSpec((hop,) * net.hops, net.streams, net.signal_variance)

    def error_variances(self) -> list[float] | None:
        if self.network.error_variance == 0:
            return None
        return [self.network.error_variance] * self.network.hops

    def scenarios(self) -> list[Scenario]:
        """Cross product of constraint sweep, objectives and compatible receivers.

        Linear receivers pair with the additive classes, capacity and weighted
        MSE; the multiplicative classes need DFE or THP.
        """
        weights = self.objective.weights
        if weights and len(weights) != self.network.streams:
            raise ConfigError(
                f"objective.weights has {len(weights)} entries for {self.network.streams} streams"
            )
        out = []
        try:
            for suffix, constraint in self.constraint.sweep():
                template = self.template(constraint)
                for spec in self.objective.specs():
                    for name in self.objective.transceivers:
                        transceiver = Transceiver(name)
                        if spec.uses_feedback == (transceiver is Transceiver.LINEAR):
                            continue
                        label = f"{spec.label}/{transceiver.value}/{suffix}"
                        out.append(Scenario(label, template, spec, transceiver))
        except RelayShaperError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc
        if not out:
            raise ConfigError("no objective/transceiver pair in the config is compatible")
        return out

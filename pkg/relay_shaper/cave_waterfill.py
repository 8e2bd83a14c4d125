"""Power allocation under a joint sum power and per-eigenchannel peak constraint.

Each hop's problem is separable over its N eigenchannels. With x = h^2 f^2 and
y = x / (x + 1) the per-channel cost is

- ``A_SCHUR``: 1 - a y (additively Schur-convex objectives);
- ``M_SCHUR``: log(1 - a y) (multiplicatively Schur-convex objectives and
  capacity);

where ``a`` collects the contribution of the other hops. Both costs are
convex and decreasing in f^2, so the KKT conditions give a water level with
a ceiling at the cap ("cave" water-filling).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import ContractViolation
from .matrix_core import svd_ordered
from .network_model import HopSpec, Joint, NetworkSpec

logger = logging.getLogger(__name__)

LEVEL_FLOOR = 1e-15
LEVEL_XTOL = 1e-14
MAX_BRACKET_EXPANSIONS = 60
TINY = np.finfo(float).tiny


class AllocationKind(str, Enum):
    A_SCHUR = "a_schur"
    M_SCHUR = "m_schur"


@dataclass(frozen=True, eq=False)
class WaterfillProblem:
    """One hop: gains h^2 (nonincreasing), aux gains a in (0, 1], budget and cap."""

    gains: np.ndarray
    aux: np.ndarray
    budget: float
    cap: float
    kind: AllocationKind = AllocationKind.A_SCHUR

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float).ravel()
        aux = np.asarray(self.aux, dtype=float).ravel()
        object.__setattr__(self, "gains", gains)
        object.__setattr__(self, "aux", aux)
        object.__setattr__(self, "kind", AllocationKind(self.kind))
        if gains.size == 0:
            raise ContractViolation("at least one eigenchannel is required")
        if aux.shape != gains.shape:
            raise ContractViolation(
                f"{gains.size} gains but {aux.size} auxiliary gains"
            )
        if np.any(gains <= 0):
            raise ContractViolation("eigenchannel gains must be positive")
        if np.any(np.diff(gains) > 0):
            raise ContractViolation("eigenchannel gains must be sorted nonincreasing")
        if np.any(aux <= 0) or np.any(aux > 1):
            raise ContractViolation("auxiliary gains must lie in (0, 1]")
        if not self.budget > 0:
            raise ContractViolation(f"power budget must be positive, got {self.budget}")
        if not self.cap > 0:
            raise ContractViolation(f"peak power cap must be positive, got {self.cap}")

    @property
    def size(self) -> int:
        return self.gains.size


@dataclass(frozen=True, eq=False)
class WaterfillSolution:
    powers: np.ndarray
    multiplier: float
    capped: np.ndarray
    inactive_sum: bool = False
    passes: int = 0

    @property
    def total(self) -> float:
        return float(np.sum(self.powers))


class KKTResiduals(NamedTuple):
    """Worst violations of the KKT conditions of a solution."""

    stationarity: float
    capped_slack: float
    zeroed_slack: float
    budget_excess: float
    cap_excess: float

    @property
    def worst(self) -> float:
        return max(self)


def marginal_aschur(gain: float, aux: float, power: float) -> float:
    """a h^2 / (h^2 f^2 + 1)^2, the decrease rate of 1 - a y."""
    x = gain * power
    return aux * gain / (x + 1.0) ** 2


def marginal_mschur(gain: float, aux: float, power: float) -> float:
    """a h^2 / ((h^2 f^2 + 1)(1 + (1 - a) h^2 f^2)), the decrease rate of -log(1 - a y)."""
    x = gain * power
    return aux * gain / ((x + 1.0) * (1.0 + (1.0 - aux) * x))


def kkt_power_aschur(gain: float, aux: float, mu: float, cap: float) -> float:
    """Power solving a h^2 / (h^2 f^2 + 1)^2 = mu, clamped to [0, cap]."""
    if aux <= 0:
        return 0.0
    if np.isfinite(cap) and mu < marginal_aschur(gain, aux, cap):
        return float(cap)
    return max(np.sqrt(aux / (mu * gain)) - 1.0 / gain, 0.0)


def kkt_power_mschur(gain: float, aux: float, mu: float, cap: float) -> float:
    """Power solving the M-Schur stationarity condition, clamped to [0, cap].

    With u = 1 + h^2 f^2 the condition is (1 - a) u^2 + a u - a h^2 / mu = 0.
    The positive root is written as 2c / (a + sqrt(a^2 + 4 (1 - a) c)) so
    that a = 1 needs no special case.
    """
    if aux <= 0:
        return 0.0
    if np.isfinite(cap) and mu < marginal_mschur(gain, aux, cap):
        return float(cap)
    c = aux * gain / mu
    u = 2.0 * c / (aux + np.sqrt(aux * aux + 4.0 * (1.0 - aux) * c))
    return max((u - 1.0) / gain, 0.0)


_MARGINALS = {
    AllocationKind.A_SCHUR: marginal_aschur,
    AllocationKind.M_SCHUR: marginal_mschur,
}
_POWERS = {
    AllocationKind.A_SCHUR: kkt_power_aschur,
    AllocationKind.M_SCHUR: kkt_power_mschur,
}


def _powers_at(gains, aux, mu: float, cap: float, kind: AllocationKind) -> np.ndarray:
    power = _POWERS[kind]
    return np.array([power(g, a, mu, cap) for g, a in zip(gains, aux)])


def _water_level(gains, aux, budget: float, kind: AllocationKind) -> float:
    """Multiplier at which the uncapped powers add up to ``budget``."""

    def excess(log_mu: float) -> float:
        return float(np.sum(_powers_at(gains, aux, np.exp(log_mu), np.inf, kind))) - budget

    hi = np.log(float(np.max(aux * gains)))
    lo = np.log(LEVEL_FLOOR)
    for _ in range(MAX_BRACKET_EXPANSIONS):
        if excess(lo) > 0:
            break
        lo -= np.log(1e6)
    else:
        raise ContractViolation("water level bracket could not be established")
    return float(np.exp(brentq(excess, lo, hi, xtol=LEVEL_XTOL)))


def cave_waterfill(problem: WaterfillProblem) -> WaterfillSolution:
    """Water-fill ignoring the cap, clip violators to the cap, repeat on the rest.

    Every pass caps at least one more channel or stops, so at most N passes
    run. If N * cap <= budget every channel sits at the cap, the sum power
    constraint is inactive and the multiplier is zero.
    """
    n, cap = problem.size, problem.cap
    capped = np.zeros(n, dtype=bool)
    if n * cap <= problem.budget:
        return WaterfillSolution(
            powers=np.full(n, float(cap)),
            multiplier=0.0,
            capped=~capped,
            inactive_sum=True,
            passes=0,
        )

    passes = 0
    while True:
        passes += 1
        free = ~capped
        n_capped = np.count_nonzero(capped)
        residual = problem.budget - cap * n_capped if n_capped else problem.budget
        mu = _water_level(problem.gains[free], problem.aux[free], residual, problem.kind)
        trial = _powers_at(problem.gains[free], problem.aux[free], mu, np.inf, problem.kind)
        violators = trial > cap
        if not violators.any():
            break
        capped[np.flatnonzero(free)[violators]] = True
        logger.debug("pass %d: capped %d channel(s) at %.6g", passes, violators.sum(), cap)

    powers = np.full(n, float(cap))
    powers[~capped] = trial
    return WaterfillSolution(powers=powers, multiplier=mu, capped=capped, passes=passes)


def kkt_residuals(problem: WaterfillProblem, solution: WaterfillSolution) -> KKTResiduals:
    """Worst violation of stationarity, complementary slackness and feasibility."""
    marginal = _MARGINALS[problem.kind]
    mu = solution.multiplier
    stationarity = capped_slack = zeroed_slack = 0.0
    for g, a, p, is_capped in zip(problem.gains, problem.aux, solution.powers, solution.capped):
        if is_capped:
            capped_slack = max(capped_slack, mu - marginal(g, a, problem.cap))
        elif p > 0:
            stationarity = max(stationarity, abs(marginal(g, a, p) - mu))
        else:
            zeroed_slack = max(zeroed_slack, marginal(g, a, 0.0) - mu)
    return KKTResiduals(
        stationarity=stationarity,
        capped_slack=max(capped_slack, 0.0),
        zeroed_slack=max(zeroed_slack, 0.0),
        budget_excess=max(solution.total - problem.budget, 0.0),
        cap_excess=max(float(np.max(solution.powers)) - problem.cap, 0.0),
    )


def waterfill_objective(problem: WaterfillProblem, powers: Sequence[float]) -> float:
    """Per-hop cost the allocation minimizes."""
    x = problem.gains * np.asarray(powers, dtype=float)
    y = x / (x + 1.0)
    if problem.kind is AllocationKind.A_SCHUR:
        return float(np.sum(1.0 - problem.aux * y))
    return float(np.sum(np.log1p(-problem.aux * y)))


@dataclass(frozen=True, eq=False)
class MultihopAllocation:
    solutions: tuple[WaterfillSolution, ...]
    gains: tuple[np.ndarray, ...]
    objective_trace: tuple[float, ...]
    converged: bool
    iterations: int

    @property
    def powers(self) -> list[np.ndarray]:
        return [s.powers for s in self.solutions]


def hop_gains(hop: HopSpec, streams: int) -> np.ndarray:
    """Top-N squared singular values of the noise-whitened channel."""
    if hop.channel is None:
        raise ContractViolation("hop has no channel realization")
    s = svd_ordered(hop.channel / np.sqrt(hop.noise_variance), full=False).singulars
    return s[:streams] ** 2


def _chain_objective(
    gains: Sequence[np.ndarray], powers: Sequence[np.ndarray], kind: AllocationKind, weights
) -> float:
    with np.errstate(divide="ignore"):
        log_y = sum(np.log(g * p / (g * p + 1.0)) for g, p in zip(gains, powers))
    theta = np.exp(log_y)
    if kind is AllocationKind.A_SCHUR:
        return float(np.sum(weights * (1.0 - theta)))
    return float(np.sum(np.log1p(-theta)))


def multihop_allocate(
    net: NetworkSpec,
    kind: AllocationKind | str,
    tol: float = 1e-8,
    max_iters: int = 200,
    weights: Sequence[float] | None = None,
) -> MultihopAllocation:
    """Alternate per-hop cave water-filling until the powers stop moving.

    Hop k sees a_{k,i} = prod_{l != k} y_{l,i}; for the A-Schur kind the
    optional ``weights`` (nonincreasing, as the eigenvalues of a weighted-MSE
    matrix) further scale a_{k,i} after normalization by their maximum.
    Each hop update solves its convex subproblem exactly, so the objective
    trace never increases.
    """
    kind = AllocationKind(kind)
    net.require_channels()
    for k, hop in enumerate(net.hops, start=1):
        if not isinstance(hop.constraint, Joint):
            raise ContractViolation(f"hop {k} does not carry a joint power constraint")
    if max_iters < 1:
        raise ContractViolation(f"max_iters must be positive, got {max_iters}")

    N = net.stream_count
    if weights is None:
        scale = np.ones(N)
    elif kind is not AllocationKind.A_SCHUR:
        raise ContractViolation("stream weights apply to the A-Schur allocation only")
    else:
        w = np.asarray(weights, dtype=float)
        if w.shape != (N,) or np.any(w < 0) or not w.max() > 0:
            raise ContractViolation("weights must be N nonnegative values, not all zero")
        scale = w / w.max()

    gains = [hop_gains(hop, N) for hop in net.hops]
    powers = [np.full(N, min(hop.power_budget / N, hop.constraint.tau_max)) for hop in net.hops]
    solutions: list[WaterfillSolution | None] = [None] * net.K
    trace = [_chain_objective(gains, powers, kind, scale)]

    converged = False
    sweep = 0
    for sweep in range(1, max_iters + 1):
        change = 0.0
        for k, hop in enumerate(net.hops):
            aux = scale.copy()
            for l in range(net.K):
                if l != k:
                    x = gains[l] * powers[l]
                    aux = aux * x / (x + 1.0)
            aux = np.clip(aux, TINY, 1.0)
            tau = hop.constraint.tau_max
            problem = WaterfillProblem(gains[k], aux, hop.power_budget, tau, kind)
            solution = cave_waterfill(problem)
            change = max(change, float(np.max(np.abs(solution.powers - powers[k]))))
            powers[k] = solution.powers
            solutions[k] = solution
        trace.append(_chain_objective(gains, powers, kind, scale))
        if change <= tol:
            converged = True
            break

    if not converged:
        logger.warning(
            "multi-hop allocation did not converge in %d sweeps (last objective %.6g)",
            max_iters,
            trace[-1],
        )
    return MultihopAllocation(
        solutions=tuple(solutions),
        gains=tuple(gains),
        objective_trace=tuple(trace),
        converged=converged,
        iterations=sweep,
    )


def assemble_joint_F(hop: HopSpec, powers: Sequence[float]) -> np.ndarray:
    """F = V_H[:, :N] diag(sqrt(powers)), a tx x N matrix."""
    if hop.channel is None:
        raise ContractViolation("hop has no channel realization")
    p = np.asarray(powers, dtype=float)
    if p.ndim != 1 or p.size > hop.tx:
        raise ContractViolation(f"expected at most {hop.tx} powers, got shape {p.shape}")
    if np.any(p < 0):
        raise ContractViolation("powers must be nonnegative")
    if isinstance(hop.constraint, Joint) and np.any(p > hop.constraint.tau_max + 1e-12):
        raise ContractViolation("powers exceed the peak cap tau_max")
    V = svd_ordered(hop.channel).right
    return V[:, : p.size] * np.sqrt(p)

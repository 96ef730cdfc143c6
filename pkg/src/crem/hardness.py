"""Steep vertices, chains of spindles and the exponential hardness bound.

A vertex at a block boundary ``floor(Nk/K)`` is *steep* when its block
increment ``X_v - X_{v[floor(N(k-1)/K)]}`` exceeds
``N sqrt((1+eps) 2 log 2 (A(k/K) - A((k-1)/K)) / K)``.  Every leaf above
``xN`` with ``x > x*`` has a steep ancestor for suitable ``(eps, K)``, and a
single chain of spindles contains a steep vertex only with probability at most
``2K 2**(-eps N / K)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import stats

from . import _kernels as K_
from .covariance import LOG2, CovarianceProfile, thresholds
from .field import BudgetError, FieldOracle, ModeError, NodeId

__all__ = [
    "SteepParams",
    "SpindleChain",
    "block_bounds",
    "block_thresholds",
    "is_steep",
    "spindle_chain",
    "steep_block_sum",
    "steep_threshold_params",
    "SteepMCReport",
    "steep_chain_probability_mc",
    "CoverReport",
    "steep_cover_check",
    "no_steep_value_bound",
    "child_seeds",
    "ThresholdGuardError",
]

MAX_BLOCK_LEVELS = 22


class ThresholdGuardError(ValueError):
    """x at or below x*: steep parameters do not exist."""


@dataclass(frozen=True)
class SteepParams:
    epsilon: float
    K: int

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.K < 1:
            raise ValueError("K must be at least 1")

    @property
    def gamma_max(self) -> float:
        """Supremum of the admissible decay rates gamma, eps log 2 / K."""
        return self.epsilon * LOG2 / self.K

    def bound(self, N: int) -> float:
        """2K 2**(-eps N / K)."""
        return 2 * self.K * 2.0 ** (-self.epsilon * N / self.K)


def block_bounds(N: int, K: int) -> np.ndarray:
    """Depths floor(Nk/K), k = 0..K."""
    if not 1 <= K <= N:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={N}")
    return np.array([N * k // K for k in range(K + 1)])


def block_thresholds(profile: CovarianceProfile, N: int, params: SteepParams) -> np.ndarray:
    """Steepness thresholds for the K block increments (absolute, not divided by N)."""
    K = params.K
    dA = np.diff(profile.cdf(np.arange(K + 1) / K))
    return N * np.sqrt((1 + params.epsilon) * 2 * LOG2 * dA / K)


def steep_block_sum(profile: CovarianceProfile, params: SteepParams) -> float:
    """sum_k sqrt((1+eps) 2 log 2 (A(k/K) - A((k-1)/K)) / K)."""
    return float(block_thresholds(profile, 1, params).sum())


def no_steep_value_bound(profile: CovarianceProfile, N: int, params: SteepParams) -> float:
    """Strict upper bound on X_w for a leaf w with no steep ancestor."""
    return float(block_thresholds(profile, N, params).sum())


def is_steep(oracle, v: NodeId, params: SteepParams) -> bool:
    """Steepness of v, from the values of v and its block-start ancestor.

    ``oracle`` needs ``N``, ``profile`` and ``query``; nothing else is used.
    """
    N = oracle.N
    K = params.K
    if v.depth == 0 or K > N:
        return False
    b = block_bounds(N, K)
    hits = np.nonzero(b[1:] == v.depth)[0]
    if len(hits) == 0:
        return False
    k = int(hits[0]) + 1
    thr = block_thresholds(oracle.profile, N, params)[k - 1]
    return bool(oracle.query(v) - oracle.query(v.ancestor(int(b[k - 1]))) >= thr)


@dataclass(frozen=True)
class SpindleChain:
    """The chain of spindles over a node.

    ``spindles`` lists ``(anchor, bottom)``: the k-th spindle is the subtree of
    ``anchor = v[floor(N(k-1)/K)]`` cut at depth ``bottom = floor(Nk/K)``.
    Consecutive spindles share exactly one node, the next anchor.
    """

    v: NodeId
    K: int
    N: int
    spindles: list = field(default_factory=list)

    @property
    def cardinality(self) -> int:
        n = sum((1 << (bottom - a.depth + 1)) - 1 for a, bottom in self.spindles)
        return n - max(len(self.spindles) - 1, 0)

    def __len__(self) -> int:
        return self.cardinality

    def __contains__(self, w: NodeId) -> bool:
        b = block_bounds(self.N, self.K)
        meet = w.meet_depth(self.v)
        return any(w.depth <= b[k] and b[k - 1] <= meet for k in range(1, self.K + 1))

    def __iter__(self) -> Iterator[NodeId]:
        for i, (anchor, bottom) in enumerate(self.spindles):
            start = 1 if i else 0  # the anchor already came as a leaf of the previous spindle
            for lev in range(start, bottom - anchor.depth + 1):
                for j in range(1 << lev):
                    yield anchor.descendant(lev, j)

    def boundary_nodes(self) -> Iterator[tuple[int, NodeId]]:
        """(k, w) for every node w of spindle k at depth floor(Nk/K)."""
        for k, (anchor, bottom) in enumerate(self.spindles, 1):
            lev = bottom - anchor.depth
            for j in range(1 << lev):
                yield k, anchor.descendant(lev, j)


def spindle_chain(v: NodeId, K: int, N: int) -> SpindleChain:
    """C_v as the union of its nonempty spindles C_{v,k}."""
    if v.depth > N:
        raise ValueError(f"node depth {v.depth} exceeds N={N}")
    b = block_bounds(N, K)
    spindles = [(v.ancestor(int(b[k - 1])), int(b[k])) for k in range(1, K + 1) if v.depth >= b[k - 1]]
    return SpindleChain(v, K, N, spindles)


def steep_threshold_params(profile: CovarianceProfile, x: float, max_K: int = 2**20) -> SteepParams:
    """(eps, K) for which every leaf above xN has a steep ancestor.

    eps is the midpoint choice ``((x + x*) / (2 x*))**2 - 1``; K is doubled
    from 1 until the block sum drops below x.
    """
    x_star = thresholds(profile).x_star
    if not x > x_star:
        raise ThresholdGuardError(f"x={x} must exceed x*={x_star:.6f}")
    eps = ((x + x_star) / (2 * x_star)) ** 2 - 1
    K = 1
    while K <= max_K:
        params = SteepParams(eps, K)
        if steep_block_sum(profile, params) < x:
            return params
        K *= 2
    raise RuntimeError(f"no K <= {max_K} brings the block sum below x={x}")


def child_seeds(seed: int, n: int) -> list[int]:
    """Deterministic 128-bit child seeds fanned out from a master seed."""
    ss = np.random.SeedSequence(seed)
    words = ss.generate_state(2 * n, dtype=np.uint64).reshape(n, 2)
    return [int(lo) | (int(hi) << 64) for lo, hi in words]


@dataclass
class SteepMCReport:
    N: int
    K: int
    epsilon: float
    gamma: float
    bound: float
    empirical_p: float
    ci_low: float
    ci_high: float
    samples: int
    seed: int
    hits: int
    violation: bool

    def as_record(self) -> dict:
        keys = ("N", "K", "epsilon", "gamma", "bound", "empirical_p", "ci_low", "ci_high", "samples", "seed")
        return {k: getattr(self, k) for k in keys}


def _chain_has_steep(oracle: FieldOracle, w: NodeId, b: np.ndarray, thr: np.ndarray) -> bool:
    # only the floor(Nk/K) level of each spindle can hold steep vertices
    for k in range(1, len(b)):
        anchor = w.ancestor(int(b[k - 1]))
        state = oracle._state(anchor)
        _, best = K_.subtree_argmax(state, anchor.depth, int(b[k] - b[k - 1]),
                                    oracle._alpha, oracle._beta, oracle._sqrtw)
        if best - oracle._value(state) >= thr[k - 1]:
            return True
    return False


def steep_chain_probability_mc(
    profile: CovarianceProfile,
    N: int,
    params: SteepParams,
    sample_count: int,
    seed: int,
    gamma: float | None = None,
) -> SteepMCReport:
    """Monte Carlo estimate of P(C_w contains a steep vertex), w the all-zeros leaf.

    Each sample is an independent field with a child seed of ``seed``.  The
    95% interval is Clopper-Pearson.  ``violation`` is set when the interval
    lies entirely above ``2K 2**(-eps N/K)``.
    """
    K = params.K
    if K > N:
        raise ValueError(f"K={K} exceeds N={N}")
    if -(-N // K) > MAX_BLOCK_LEVELS:
        raise BudgetError(f"spindle width 2**{-(-N // K)} exceeds 2**{MAX_BLOCK_LEVELS}")
    if sample_count < 1:
        raise ValueError("sample_count must be positive")
    b = block_bounds(N, K)
    thr = block_thresholds(profile, N, params)
    w = NodeId(N, 0)
    hits = 0
    for s in child_seeds(seed, sample_count):
        oracle = FieldOracle(profile, N, s, cache=False)
        hits += _chain_has_steep(oracle, w, b, thr)
    ci = stats.binomtest(hits, sample_count).proportion_ci(0.95, method="exact")
    bound = params.bound(N)
    gamma = 0.5 * params.gamma_max if gamma is None else gamma
    return SteepMCReport(
        N=N, K=K, epsilon=params.epsilon, gamma=gamma, bound=bound,
        empirical_p=hits / sample_count, ci_low=float(ci.low), ci_high=float(ci.high),
        samples=sample_count, seed=seed, hits=hits, violation=bool(ci.low > bound),
    )


@dataclass
class CoverReport:
    checked: int = 0
    vacuous: int = 0
    counterexamples: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.counterexamples


def steep_cover_check(oracle: FieldOracle, params: SteepParams, x: float,
                      leaf_sample: Sequence[NodeId]) -> CoverReport:
    """Check that every sampled leaf with X >= xN has a steep ancestor."""
    if oracle.mode != "full_tree":
        raise ModeError("the cover check reads ancestor values")
    N = oracle.N
    b = block_bounds(N, params.K)
    thr = block_thresholds(oracle.profile, N, params)
    report = CoverReport()
    for leaf in leaf_sample:
        if leaf.depth != N:
            raise ValueError(f"{leaf} is not a leaf")
        traj = oracle.trajectory(leaf)
        if traj[-1] < x * N:
            report.vacuous += 1
            continue
        report.checked += 1
        if not np.any(np.diff(traj[b]) >= thr):
            report.counterexamples.append(leaf)
    return report

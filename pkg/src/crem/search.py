"""Search algorithms over the field and the hitting-time experiment.

All algorithms read the field only through a :class:`~crem.field.FieldOracle`
and report costs from its ledger.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .covariance import CovarianceProfile, profile_hash
from .field import FIELD_VERSION, BudgetError, FieldOracle, ModeError, NodeId

__all__ = [
    "MAX_BLOCK",
    "SearchResult",
    "AlgorithmSpec",
    "block_greedy",
    "leaf_only_greedy",
    "exhaustive_max",
    "random_leaf_baseline",
    "hitting_time_experiment",
]

MAX_BLOCK = 22
MAX_EXHAUSTIVE = 26


@dataclass
class SearchResult:
    node: NodeId
    value: float
    unique_queries: int
    total_calls: int
    elapsed: float
    algorithm: str
    params: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict, repr=False)

    def recheck(self, oracle: FieldOracle) -> bool:
        """Compare against a fresh oracle with the same field parameters."""
        fresh = FieldOracle(oracle.profile, oracle.N, oracle.seed, cache=False)
        return fresh.peek(self.node) == self.value


class _Run:
    """Ledger and clock snapshot for one algorithm call."""

    def __init__(self, oracle):
        self.oracle = oracle
        self.u0 = oracle.ledger.unique_queries
        self.c0 = oracle.ledger.total_calls
        self.t0 = time.perf_counter()

    def result(self, node, value, algorithm, params, diagnostics=None) -> SearchResult:
        led = self.oracle.ledger
        return SearchResult(node, float(value), led.unique_queries - self.u0, led.total_calls - self.c0,
                            time.perf_counter() - self.t0, algorithm, params, diagnostics or {})


def _check_block(M: int, cap: int):
    if M < 1:
        raise ValueError("M must be at least 1")
    if M > cap:
        raise BudgetError(f"block size M={M} exceeds the cap {cap}")


def _greedy_from(oracle: FieldOracle, v: NodeId, M: int) -> tuple[NodeId, float]:
    x = oracle.peek(v)
    while v.depth < oracle.N:
        v, x = oracle.best_descendant(v, min(M, oracle.N - v.depth))
    return v, x


def block_greedy(oracle: FieldOracle, M: int, cap: int = MAX_BLOCK) -> SearchResult:
    """Greedy search in blocks of M generations.

    From the current node, query all descendants ``M`` generations down (or
    down to depth N) and move to the best one; ties go to the smallest path.
    Uses at most ``1 + 2**M * ceil(N/M)`` queries.
    """
    if oracle.mode != "full_tree":
        raise ModeError("block_greedy needs full_tree access")
    _check_block(M, cap)
    run = _Run(oracle)
    root = NodeId.root()
    oracle.query(root)
    node, value = _greedy_from(oracle, root, M)
    return run.result(node, value, "block_greedy", {"M": M})


def _proxy_step(oracle: FieldOracle, v: NodeId, L: int, ell: int, instrument: bool, want_new: bool = False):
    """Proxy scores of the 2**L descendants of v L levels down.

    Each candidate is scored by the mean of the all-zeros leaf extensions of
    its 2**ell descendants ell levels further down.
    """
    ell = min(ell, oracle.N - v.depth - L)
    out = oracle.query_zero_extensions(v, L + ell, mid=L if instrument else -1, want_new=want_new)
    z = out[0] if isinstance(out, tuple) else out
    proxies = z.reshape(1 << L, 1 << ell).mean(axis=1)
    true = out[1] if instrument else None
    new = out[-1] if want_new else None
    return proxies, z, true, new


def leaf_only_greedy(oracle: FieldOracle, M: int, ell: int, instrument: bool = False,
                     cap: int = MAX_BLOCK) -> SearchResult:
    """Block greedy that only sees leaves.

    Internal candidates are scored by averaging 2**ell leaf values below them.
    In the last block the candidates are leaves and are queried directly; the
    best of them is returned.

    With ``instrument`` the proxy errors (proxy minus true value) are collected
    per block in ``diagnostics["proxy_errors"]``; the true values are read
    without charging the ledger.
    """
    if oracle.mode != "leaf_only":
        raise ModeError("leaf_only_greedy expects a leaf_only oracle")
    if ell < 0:
        raise ValueError("ell must be non-negative")
    _check_block(M, cap)
    if M + ell > cap:
        raise BudgetError(f"M + ell = {M + ell} exceeds the cap {cap}")
    run = _Run(oracle)
    N = oracle.N
    v = NodeId.root()
    errors = []
    best_seen = -np.inf
    while True:
        L = min(M, N - v.depth)
        if v.depth + L == N:
            x = oracle.query_descendants(v, L)
            pos = int(np.argmax(x))
            node, value = v.descendant(L, pos), float(x[pos])
            break
        proxies, z, true, _ = _proxy_step(oracle, v, L, ell, instrument)
        best_seen = max(best_seen, float(z.max()))
        if instrument:
            errors.append(proxies - true)
        v = v.descendant(L, int(np.argmax(proxies)))
    diag = {"best_leaf_seen": max(best_seen, value)}
    if instrument:
        diag["proxy_errors"] = errors
    return run.result(node, value, "leaf_only_greedy", {"M": M, "ell": ell}, diag)


def exhaustive_max(oracle: FieldOracle) -> SearchResult:
    """True maximum over all 2**N leaves (N <= 26)."""
    if oracle.N > MAX_EXHAUSTIVE:
        raise BudgetError(f"exhaustive search needs N <= {MAX_EXHAUSTIVE}, got {oracle.N}")
    run = _Run(oracle)
    node, value = oracle.best_descendant(NodeId.root(), oracle.N)
    return run.result(node, value, "exhaustive_max", {})


def random_leaf_baseline(oracle: FieldOracle, budget: int, seed: int, chunk: int = 65536) -> SearchResult:
    """Best of ``budget`` uniformly random leaves."""
    if budget < 1:
        raise ValueError("budget must be at least 1")
    run = _Run(oracle)
    rng = np.random.default_rng(seed)
    N = oracle.N
    best, best_bits = -np.inf, None
    left = budget
    while left:
        n = min(chunk, left)
        bits = rng.integers(0, 2, (n, N), dtype=np.uint8)
        x = oracle.query_paths(NodeId.root(), bits)
        i = int(np.argmax(x))
        if x[i] > best:
            best, best_bits = float(x[i]), bits[i]
        left -= n
    node = NodeId.from_path(best_bits.tolist())
    return run.result(node, best, "random_leaf_baseline", {"budget": budget, "seed": seed})


# -- hitting times -------------------------------------------------------------


@dataclass(frozen=True)
class AlgorithmSpec:
    """Algorithm for the hitting-time experiment.

    name : {"block_greedy", "leaf_only_greedy", "random_leaf_baseline"}
    """

    name: str
    M: int | None = None
    ell: int | None = None

    def __post_init__(self):
        if self.name not in ("block_greedy", "leaf_only_greedy", "random_leaf_baseline"):
            raise ValueError(f"unknown algorithm {self.name!r}")
        if self.name != "random_leaf_baseline" and self.M is None:
            raise ValueError(f"{self.name} needs M")
        if self.name == "leaf_only_greedy" and self.ell is None:
            raise ValueError("leaf_only_greedy needs ell")

    @property
    def mode(self) -> str:
        return "full_tree" if self.name == "block_greedy" else "leaf_only"


class _Stop(Exception):
    pass


class _Watch:
    """Turns leaf batches into a hitting time measured in unique queries."""

    def __init__(self, oracle: FieldOracle, threshold: float, budget: int):
        self.ledger = oracle.ledger
        self.threshold = threshold
        self.budget = budget
        self.tau = None
        self.best = -np.inf

    def see(self, values: np.ndarray, new: np.ndarray):
        after = self.ledger.unique_queries
        order = np.cumsum(new)
        before = after - int(order[-1]) if len(order) else after
        within = before + order <= self.budget
        if within.any():
            self.best = max(self.best, float(values[within].max()))
        hit = np.nonzero((values >= self.threshold) & within)[0]
        if len(hit):
            self.tau = before + int(order[hit[0]])
            raise _Stop
        self.check()

    def check(self):
        if self.ledger.unique_queries >= self.budget:
            raise _Stop


def _hit_block_greedy(oracle: FieldOracle, M: int, watch: _Watch):
    N = oracle.N
    root = NodeId.root()
    oracle.query(root)
    watch.check()
    r = 0
    ranked = None
    while True:
        v = root if ranked is None else ranked[r % len(ranked)]
        while N - v.depth > M:
            v, _ = oracle.best_descendant(v, M)
            watch.check()
        x, new = oracle.query_descendants_new(v, N - v.depth)
        watch.see(x, new)
        if ranked is None:
            if N <= M:
                return r
            # restart r resumes greedy from the r-th best first-block node
            x1 = oracle.query_descendants(root, M)
            ranked = [root.descendant(M, int(i)) for i in np.argsort(-x1, kind="stable")]
        r += 1
        if r >= len(ranked):
            return r


def _hit_leaf_only(oracle: FieldOracle, M: int, ell: int, watch: _Watch):
    N = oracle.N
    root = NodeId.root()
    r = 0
    ranked = None
    while True:
        v = root if ranked is None else ranked[r]
        while True:
            L = min(M, N - v.depth)
            if v.depth + L == N:
                x, new = oracle.query_descendants_new(v, L)
                watch.see(x, new)
                break
            proxies, z, _, new = _proxy_step(oracle, v, L, ell, False, want_new=True)
            watch.see(z, new)
            if ranked is None and v.depth == 0:
                order = np.argsort(-proxies, kind="stable")
                first = [root.descendant(L, int(i)) for i in order]
            v = v.descendant(L, int(np.argmax(proxies)))
        if ranked is None:
            if N <= M:
                return r
            ranked = first
        r += 1
        if r >= len(ranked):
            return r


def _hit_random(oracle: FieldOracle, seed: int, watch: _Watch, chunk: int = 65536):
    rng = np.random.default_rng([seed, 0x5EED])
    root = NodeId.root()
    # with fewer than ``budget`` distinct leaves the budget can never run out
    while oracle.ledger.unique_queries < 2**oracle.N:
        n = max(1, min(chunk, watch.budget - oracle.ledger.unique_queries))
        bits = rng.integers(0, 2, (n, oracle.N), dtype=np.uint8)
        x, new = oracle.query_paths(root, bits, want_new=True)
        watch.see(x, new)


def hitting_time_experiment(
    profile: CovarianceProfile,
    N: int,
    x: float,
    algorithm: AlgorithmSpec,
    query_budget: int,
    seeds: Sequence[int],
    profile_id: str | None = None,
) -> list[dict]:
    """Queries needed to find a leaf with value >= xN, one record per seed.

    Greedy algorithms are restarted until the budget runs out: restart r
    follows the r-th best first-block candidate instead of the best one, then
    continues greedily, so each restart explores mostly fresh subtrees.
    ``tau`` counts unique queries up to and including the first hit; it is
    ``None`` when the budget is exhausted first.
    """
    if query_budget < 1:
        raise ValueError("query_budget must be positive")
    pid = profile_id or profile.name or profile_hash(profile)
    phash = profile_hash(profile)
    records = []
    for seed in seeds:
        t0 = time.perf_counter()
        oracle = FieldOracle(profile, N, seed, mode=algorithm.mode)
        watch = _Watch(oracle, x * N, query_budget)
        try:
            if algorithm.name == "block_greedy":
                _hit_block_greedy(oracle, algorithm.M, watch)
            elif algorithm.name == "leaf_only_greedy":
                _hit_leaf_only(oracle, algorithm.M, algorithm.ell, watch)
            else:
                _hit_random(oracle, seed, watch)
        except _Stop:
            pass
        records.append({
            "algorithm": algorithm.name,
            "profile_id": pid,
            "profile_hash": phash,
            "N": N,
            "M": algorithm.M,
            "ell": algorithm.ell,
            "seed": seed,
            "x": x,
            "budget": query_budget,
            "hit": watch.tau is not None,
            "tau": watch.tau,
            "best_value": watch.best if np.isfinite(watch.best) else None,
            "unique_queries": oracle.ledger.unique_queries,
            "elapsed_ms": 1000 * (time.perf_counter() - t0),
            "field_version": FIELD_VERSION,
        })
    return records

import math

import numpy as np
import pytest

from crem.covariance import SQRT_2LOG2
from crem.field import BudgetError, FieldOracle, ModeError, NodeId
from crem.search import (
    AlgorithmSpec,
    block_greedy,
    exhaustive_max,
    hitting_time_experiment,
    leaf_only_greedy,
    random_leaf_baseline,
)


def straight_line_greedy(oracle, M):
    """Greedy by explicit loops over NodeId and uncharged reads."""
    v = NodeId.root()
    while v.depth < oracle.N:
        L = min(M, oracle.N - v.depth)
        best, arg = -math.inf, None
        for j in range(1 << L):
            x = oracle.peek(v.descendant(L, j))
            if x > best:
                best, arg = x, v.descendant(L, j)
        v = arg
    return v, best


@pytest.mark.parametrize("N", [1, 5, 8, 12])
def test_block_greedy_full_block_is_exhaustive(brw, N):
    for seed in range(3):
        g = block_greedy(FieldOracle(brw, N, seed), N)
        e = exhaustive_max(FieldOracle(brw, N, seed))
        assert (g.node, g.value) == (e.node, e.value)


@pytest.mark.parametrize("M", [1, 3, 4, 5])
def test_block_greedy_matches_straight_line(brw, square, M):
    for prof in (brw, square):
        for seed in range(4):
            o = FieldOracle(prof, 16, seed)
            r = block_greedy(o, M)
            node, value = straight_line_greedy(FieldOracle(prof, 16, seed), M)
            assert r.node == node
            assert r.value == value
            assert r.recheck(o)


@pytest.mark.parametrize("N,M", [(16, 4), (17, 4), (20, 6), (9, 9)])
def test_block_greedy_query_count(brw, N, M):
    r = block_greedy(FieldOracle(brw, N, 1), M)
    blocks = [min(M, N - d) for d in range(0, N, M)]
    assert r.unique_queries == 1 + sum(1 << L for L in blocks)
    assert r.unique_queries <= 1 + (1 << M) * -(-N // M)


def test_block_greedy_guards(brw):
    with pytest.raises(BudgetError):
        block_greedy(FieldOracle(brw, 30, 0), 23)
    with pytest.raises(ValueError):
        block_greedy(FieldOracle(brw, 30, 0), 0)
    with pytest.raises(ModeError):
        block_greedy(FieldOracle(brw, 8, 0, mode="leaf_only"), 4)


def test_block_greedy_reproducible(square):
    a = block_greedy(FieldOracle(square, 300, 42), 6)
    b = block_greedy(FieldOracle(square, 300, 42), 6)
    assert (a.node, a.value, a.unique_queries) == (b.node, b.value, b.unique_queries)


def test_leaf_only_full_block_is_block_greedy(brw):
    for seed in range(5):
        a = leaf_only_greedy(FieldOracle(brw, 8, seed, mode="leaf_only"), 8, 0)
        b = block_greedy(FieldOracle(brw, 8, seed), 8)
        assert (a.node, a.value) == (b.node, b.value)


def test_leaf_only_touches_leaves_only(square):
    o = FieldOracle(square, 24, 3, mode="leaf_only", history=True)
    r = leaf_only_greedy(o, 4, 3)
    assert r.node.depth == 24
    assert {v.depth for v, _ in o.ledger.history} == {24}
    assert r.unique_queries <= r.total_calls == len(o.ledger.history)
    assert r.diagnostics["best_leaf_seen"] >= r.value


def test_leaf_only_proxies_by_hand(brw):
    N, M, ell = 12, 3, 2
    o = FieldOracle(brw, N, 7, mode="leaf_only")
    r = leaf_only_greedy(o, M, ell, instrument=True)
    ref = FieldOracle(brw, N, 7)
    root = NodeId.root()
    cands = [root.descendant(M, j) for j in range(1 << M)]
    proxy = [np.mean([ref.peek(c.descendant(ell, i).zero_extension(N)) for i in range(1 << ell)]) for c in cands]
    err = np.array(proxy) - [ref.peek(c) for c in cands]
    np.testing.assert_allclose(r.diagnostics["proxy_errors"][0], err, rtol=0, atol=1e-10)
    assert len(r.diagnostics["proxy_errors"]) == N // M - 1


def test_leaf_only_ell_clipped_near_bottom(brw):
    # the remaining depth after the second block is smaller than ell
    r = leaf_only_greedy(FieldOracle(brw, 10, 0, mode="leaf_only"), 4, 5, instrument=True)
    assert [len(e) for e in r.diagnostics["proxy_errors"]] == [16, 16]


def test_leaf_only_guards(brw):
    with pytest.raises(ModeError):
        leaf_only_greedy(FieldOracle(brw, 8, 0), 4, 2)
    with pytest.raises(BudgetError):
        leaf_only_greedy(FieldOracle(brw, 40, 0, mode="leaf_only"), 12, 11)
    with pytest.raises(ValueError):
        leaf_only_greedy(FieldOracle(brw, 40, 0, mode="leaf_only"), 4, -1)


def test_exhaustive_small_and_guard(brw):
    o = FieldOracle(brw, 1, 11)
    r = exhaustive_max(o)
    assert r.value == max(o.peek(NodeId(1, 0)), o.peek(NodeId(1, 1)))
    with pytest.raises(BudgetError):
        exhaustive_max(FieldOracle(brw, 27, 0))


@pytest.mark.slow
def test_exhaustive_n20_scale(brw):
    ratios = [exhaustive_max(FieldOracle(brw, 20, s, cache=False)).value / 20 for s in range(50)]
    assert 0.80 * SQRT_2LOG2 <= np.mean(ratios) <= SQRT_2LOG2


def test_random_baseline(brw):
    o = FieldOracle(brw, 100, 0)
    one = random_leaf_baseline(o, 1, seed=5)
    assert one.unique_queries == 1 and one.node.depth == 100
    assert one.recheck(o)
    a = random_leaf_baseline(FieldOracle(brw, 100, 0), 500, seed=5, chunk=64)
    b = random_leaf_baseline(FieldOracle(brw, 100, 0), 500, seed=5)
    assert (a.node, a.value) == (b.node, b.value)
    with pytest.raises(ValueError):
        random_leaf_baseline(o, 0, seed=1)


def test_random_baseline_scale(brw):
    # the best of n nearly independent N(0, N) leaves is about sqrt(2 log n / N) * N
    vals = [random_leaf_baseline(FieldOracle(brw, 100, s), 10_000, seed=s).value / 100 for s in range(5)]
    assert 0.33 < np.mean(vals) < math.sqrt(2 * math.log(1e4) / 100) + 0.02


def test_algorithm_spec():
    assert AlgorithmSpec("block_greedy", M=3).mode == "full_tree"
    assert AlgorithmSpec("leaf_only_greedy", M=3, ell=1).mode == "leaf_only"
    with pytest.raises(ValueError):
        AlgorithmSpec("block_greedy")
    with pytest.raises(ValueError):
        AlgorithmSpec("leaf_only_greedy", M=3)
    with pytest.raises(ValueError):
        AlgorithmSpec("annealing", M=3)


def test_hitting_zero_threshold_block_greedy(brw):
    N, M = 20, 5
    recs = hitting_time_experiment(brw, N, 0.0, AlgorithmSpec("block_greedy", M=M), 10**5, range(10))
    for rec in recs:
        assert rec["hit"]
        o = FieldOracle(brw, N, rec["seed"])
        r = block_greedy(o, M)
        anchor = r.node.ancestor(N - M)
        last = [o.peek(anchor.descendant(M, j)) for j in range(1 << M)]
        first = next(j for j, x in enumerate(last) if x >= 0)
        assert rec["tau"] == 1 + (1 << M) * (N // M - 1) + first + 1


def test_hitting_random_counts_unique(brw):
    # N = 6 makes repeated leaves common; tau must count each leaf once
    N, x = 6, 0.9
    recs = hitting_time_experiment(brw, N, x, AlgorithmSpec("random_leaf_baseline"), 10**4, range(20))
    for rec in recs:
        o = FieldOracle(brw, N, rec["seed"])
        rng = np.random.default_rng([rec["seed"], 0x5EED])
        bits = rng.integers(0, 2, (10**4, N), dtype=np.uint8)
        seen, tau = set(), None
        for row in bits:
            v = NodeId.from_path(row.tolist())
            seen.add(v)
            if o.peek(v) >= x * N:
                tau = len(seen)
                break
        assert rec["tau"] == tau
    assert {r["hit"] for r in recs} == {True, False}


def test_hitting_budget_exhaustion(brw):
    recs = hitting_time_experiment(brw, 30, 5.0, AlgorithmSpec("block_greedy", M=4), 2000, [0, 1])
    for rec in recs:
        assert not rec["hit"] and rec["tau"] is None
        assert rec["best_value"] is not None and rec["best_value"] < 150
    recs = hitting_time_experiment(brw, 30, 5.0, AlgorithmSpec("leaf_only_greedy", M=4, ell=2), 2000, [0])
    assert not recs[0]["hit"]


def test_hitting_restarts_keep_searching(square):
    # a threshold the first greedy descent misses but a later restart reaches
    N, M = 24, 4
    plain = block_greedy(FieldOracle(square, N, 0), M).value / N
    recs = hitting_time_experiment(square, N, plain + 0.02, AlgorithmSpec("block_greedy", M=M), 10**6, [0])
    assert recs[0]["hit"]
    assert recs[0]["tau"] > 1 + (1 << M) * (N // M)
    assert recs[0]["best_value"] >= plain * N


def test_hitting_records_deterministic(square):
    spec = AlgorithmSpec("leaf_only_greedy", M=4, ell=2)
    a = hitting_time_experiment(square, 32, 0.5, spec, 10**5, [3, 4], profile_id="sq")
    b = hitting_time_experiment(square, 32, 0.5, spec, 10**5, [3, 4], profile_id="sq")
    strip = lambda recs: [{k: v for k, v in r.items() if k != "elapsed_ms"} for r in recs]
    assert strip(a) == strip(b)
    assert a[0]["profile_id"] == "sq" and len(a[0]["profile_hash"]) > 8
    with pytest.raises(ValueError):
        hitting_time_experiment(square, 32, 0.5, spec, 0, [1])

import math

import numpy as np
import pytest

from crem import thresholds
from crem.covariance import LOG2, SQRT_2LOG2, sample_profile
from crem.field import BudgetError, FieldOracle, NodeId
from crem.hardness import (
    SteepParams,
    ThresholdGuardError,
    block_bounds,
    block_thresholds,
    child_seeds,
    is_steep,
    no_steep_value_bound,
    spindle_chain,
    steep_block_sum,
    steep_chain_probability_mc,
    steep_cover_check,
    steep_threshold_params,
)
from crem.search import exhaustive_max
from oracles import all_nodes, bounds_table, spindle_counts


class OverrideOracle:
    """Test-only oracle: adds fixed shifts to chosen edges of a real field."""

    def __init__(self, base: FieldOracle, shifts: dict):
        self.base = base
        self.N = base.N
        self.profile = base.profile
        self.shifts = shifts
        self.calls = []

    def query(self, v: NodeId) -> float:
        self.calls.append(v)
        extra = sum(d for u, d in self.shifts.items() if u.is_ancestor_of(v))
        return self.base.query(v) + extra


def test_block_bounds():
    np.testing.assert_array_equal(block_bounds(10, 3), [0, 3, 6, 10])
    with pytest.raises(ValueError):
        block_bounds(3, 4)


def test_steep_params_bound_arithmetic():
    assert SteepParams(0.5, 10).bound(100) == pytest.approx(0.625)
    assert SteepParams(1.0, 4).bound(40) == pytest.approx(8 * 2**-10)
    assert SteepParams(1.0, 4).gamma_max == pytest.approx(LOG2 / 4)
    with pytest.raises(ValueError):
        SteepParams(0.0, 3)


def test_is_steep_off_boundary_false(brw):
    o = FieldOracle(brw, 12, 0)
    p = SteepParams(1e-9, 3)
    for path in ("1", "101", "10110", "1011011"):
        assert not is_steep(o, NodeId.from_path(path), p)


def test_is_steep_one_level_blocks(brw):
    # K = N: the block increment is a single edge; threshold N sqrt(2 * 2 log 2 / K^2) = sqrt(4 log 2)
    N = K = 8
    thr = math.sqrt(4 * LOG2)
    assert block_thresholds(brw, N, SteepParams(1.0, K)) == pytest.approx(np.full(K, thr))
    o = FieldOracle(brw, N, 5)
    rng = np.random.default_rng(5)
    seen = set()
    for _ in range(400):
        v = NodeId.from_path(rng.integers(0, 2, rng.integers(1, N + 1)).tolist())
        expect = o.edge_increment(v) >= thr
        seen.add(expect)
        assert is_steep(o, v, SteepParams(1.0, K)) == expect
    assert seen == {True, False}


def test_is_steep_forced_and_local(brw):
    base = FieldOracle(brw, 12, 2)
    p = SteepParams(1.0, 3)
    v = NodeId.from_path("11010010")  # depth 8 closes block 2 (depths 4..8)
    assert not is_steep(base, v, p)
    big = OverrideOracle(base, {v.ancestor(6): 100.0})
    assert is_steep(big, v, p)
    # shifting edges inside the block without moving its endpoints changes nothing
    inner = OverrideOracle(base, {v.ancestor(5): 50.0, v.ancestor(6): -50.0})
    assert is_steep(inner, v, p) == is_steep(base, v, p)
    assert set(inner.calls) == {v, v.ancestor(4)}


def test_spindle_chain_collapses(brw):
    leaf = NodeId(6, 0b101101)
    c = spindle_chain(leaf, 1, 6)
    assert c.cardinality == 2**7 - 1
    assert len(set(c)) == 2**7 - 1
    root_chain = spindle_chain(NodeId.root(), 3, 9)
    assert len(root_chain.spindles) == 1
    assert set(root_chain) == {NodeId(d, b) for d in range(4) for b in range(1 << d)}


@pytest.mark.parametrize("N", range(1, 11))
def test_spindle_cardinality_brute_force(N):
    depth, bits = all_nodes(N)
    Ks = list(range(1, min(4, N) + 1))
    brute = spindle_counts(depth, bits, bounds_table(N, Ks))
    for r, K in enumerate(Ks):
        got = [spindle_chain(NodeId(int(d), int(b)), K, N).cardinality for d, b in zip(depth, bits)]
        np.testing.assert_array_equal(got, brute[r])


def test_spindle_iteration_and_membership():
    N, K = 12, 3
    v = NodeId(12, 0b101100111010)
    c = spindle_chain(v, K, N)
    members = list(c)
    assert len(members) == len(set(members)) == c.cardinality
    depth, bits = all_nodes(N)
    brute = {NodeId(int(d), int(b)) for d, b in zip(depth, bits) if NodeId(int(d), int(b)) in c}
    assert brute == set(members)


def test_spindle_nesting():
    N, K = 9, 3
    rng = np.random.default_rng(0)
    for _ in range(20):
        w = NodeId.from_path(rng.integers(0, 2, N).tolist())
        full = set(spindle_chain(w, K, N))
        for m in range(N + 1):
            assert set(spindle_chain(w.ancestor(m), K, N)) <= full


def test_steep_threshold_params_brw(brw):
    p = steep_threshold_params(brw, 1.3)
    x_star = thresholds(brw).x_star
    assert p.K == 1
    assert p.epsilon == pytest.approx(((1.3 + x_star) / (2 * x_star)) ** 2 - 1)
    for K in (1, 2, 4, 8):
        q = SteepParams(p.epsilon, K)
        assert steep_block_sum(brw, q) == pytest.approx(math.sqrt(1 + p.epsilon) * SQRT_2LOG2)


def test_steep_threshold_params_square(square):
    p = steep_threshold_params(square, 1.15)
    assert steep_block_sum(square, p) < 1.15
    assert p.K > 1
    assert steep_block_sum(square, SteepParams(p.epsilon, p.K // 2)) >= 1.15


def test_steep_threshold_params_guard(brw):
    with pytest.raises(ThresholdGuardError):
        steep_threshold_params(brw, thresholds(brw).x_star / 2)


def test_chain_scan_matches_explicit_reveal(brw):
    # the Monte Carlo scan against spindle reveal + per-node steepness
    N, p = 12, SteepParams(0.05, 3)
    from crem.hardness import _chain_has_steep

    b = block_bounds(N, p.K)
    thr = block_thresholds(brw, N, p)
    w = NodeId(N, 0)
    outcomes = set()
    for s in child_seeds(4, 60):
        fast = _chain_has_steep(FieldOracle(brw, N, s), w, b, thr)
        o = FieldOracle(brw, N, s)
        chain = spindle_chain(w, p.K, N)
        o.reveal_spindle_chain(w, p.K)
        slow = any(is_steep(o, v, p) for _, v in chain.boundary_nodes())
        assert fast == slow
        outcomes.add(fast)
    assert outcomes == {True, False}


def test_mc_small_consistent_with_bound(brw):
    p = SteepParams(1.0, 4)
    r = steep_chain_probability_mc(brw, 20, p, 2000, seed=3)
    assert r.bound == pytest.approx(8 * 2**-5)
    assert r.ci_low <= r.empirical_p <= r.ci_high
    assert not r.violation
    assert r.empirical_p <= r.bound
    rec = r.as_record()
    assert set(rec) == {"N", "K", "epsilon", "gamma", "bound", "empirical_p", "ci_low", "ci_high", "samples", "seed"}
    assert 0 < rec["gamma"] < p.gamma_max


def test_mc_unreachable_threshold(brw):
    r = steep_chain_probability_mc(brw, 16, SteepParams(50.0, 4), 300, seed=1)
    assert r.hits == 0 and r.empirical_p == 0.0


def test_mc_guards(brw):
    with pytest.raises(BudgetError):
        steep_chain_probability_mc(brw, 46, SteepParams(1.0, 2), 10, seed=0)
    with pytest.raises(ValueError):
        steep_chain_probability_mc(brw, 4, SteepParams(1.0, 5), 10, seed=0)


def test_mc_replay(brw):
    a = steep_chain_probability_mc(brw, 12, SteepParams(0.3, 3), 200, seed=9)
    b = steep_chain_probability_mc(brw, 12, SteepParams(0.3, 3), 200, seed=9)
    assert a == b


def test_cover_check_at_exhaustive_maxima():
    # strongly convex A keeps x* low enough for exhaustive maxima at N = 18 to clear it
    prof = sample_profile(lambda t: t**6, grid_size=64)
    x_star = thresholds(prof).x_star
    applicable = 0
    for seed in range(6):
        o = FieldOracle(prof, 18, seed)
        best = exhaustive_max(o)
        x = 0.95 * best.value / 18
        if x <= x_star:
            continue
        applicable += 1
        params = steep_threshold_params(prof, x)
        leaves = o.query_descendants(NodeId.root(), 18)
        above = [NodeId(18, int(i)) for i in np.nonzero(leaves >= x * 18)[0]]
        report = steep_cover_check(o, params, x, above)
        assert report.checked == len(above) > 0
        assert report.passed
    assert applicable > 0


def test_cover_check_vacuous_below(brw):
    o = FieldOracle(brw, 10, 0)
    low = int(np.argmin(o.query_descendants(NodeId.root(), 10)))
    r = steep_cover_check(o, SteepParams(0.5, 2), 1.2, [NodeId(10, low)])
    assert r.vacuous == 1 and r.checked == 0 and r.passed


def test_no_steep_contrapositive(square):
    # block increments just under every threshold sum to less than xN
    x = 1.15
    p = steep_threshold_params(square, x)
    for N in (40, 200, 1000):
        thr = block_thresholds(square, N, p)
        synthetic = thr * (1 - 1e-9)
        assert synthetic.sum() < no_steep_value_bound(square, N, p) < x * N


def test_child_seeds_deterministic():
    assert child_seeds(5, 4) == child_seeds(5, 4)
    assert child_seeds(5, 4) != child_seeds(6, 4)
    assert len(set(child_seeds(1, 1000))) == 1000

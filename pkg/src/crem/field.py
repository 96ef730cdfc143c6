"""Seeded, lazily evaluated CREM field on the binary tree, with query accounting.

The field is a pure function of ``(seed, profile, N)``: every node value is
derived from counter-based hashes of the node's bit path, so values do not
depend on the order in which nodes are visited and nothing about the tree is
stored beyond an optional cache.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field as dc_field
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .covariance import CovarianceProfile

FIELD_VERSION = "spine-bridge-1"

_MASK64 = (1 << 64) - 1

__all__ = [
    "FIELD_VERSION",
    "FieldError",
    "ModeError",
    "BudgetError",
    "NodeId",
    "QueryLedger",
    "FieldOracle",
    "edge_increment",
    "query",
    "trajectory",
    "reveal_spindle_chain",
]


class FieldError(Exception):
    pass


class ModeError(FieldError):
    """A query not allowed by the oracle's access mode."""


class BudgetError(FieldError):
    """A request exceeding a configured size or query budget."""


@dataclass(frozen=True, order=True)
class NodeId:
    """Vertex of the binary tree: ``depth`` and path bits, v_1 most significant."""

    depth: int
    bits: int = 0

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be non-negative")
        if self.bits < 0 or self.bits >> self.depth:
            raise ValueError(f"bits {self.bits:b} do not fit depth {self.depth}")

    @classmethod
    def root(cls) -> "NodeId":
        return cls(0, 0)

    @classmethod
    def from_path(cls, path: str | Sequence[int]) -> "NodeId":
        if isinstance(path, str):
            path = [int(c) for c in path]
        bits = 0
        for b in path:
            if b not in (0, 1):
                raise ValueError("path entries must be 0 or 1")
            bits = (bits << 1) | b
        return cls(len(path), bits)

    @property
    def path(self) -> str:
        return format(self.bits, f"0{self.depth}b") if self.depth else ""

    def bit_array(self, start: int = 0) -> np.ndarray:
        """Bits v_{start+1} .. v_depth as a uint8 array."""
        n = self.depth - start
        if n <= 0:
            return np.zeros(0, np.uint8)
        low = self.bits & ((1 << n) - 1)
        raw = np.frombuffer(low.to_bytes((n + 7) // 8, "big"), np.uint8)
        return np.unpackbits(raw)[-n:]

    def child(self, bit: int) -> "NodeId":
        return NodeId(self.depth + 1, (self.bits << 1) | bit)

    def parent(self) -> "NodeId":
        if self.depth == 0:
            raise ValueError("the root has no parent")
        return NodeId(self.depth - 1, self.bits >> 1)

    def ancestor(self, m: int) -> "NodeId":
        """Generation-m ancestor v[m] (v itself when m = depth)."""
        if not 0 <= m <= self.depth:
            raise ValueError(f"no ancestor at depth {m} for a depth-{self.depth} node")
        return NodeId(m, self.bits >> (self.depth - m))

    def descendant(self, levels: int, index: int) -> "NodeId":
        """The index-th (lexicographic) descendant ``levels`` generations down."""
        return NodeId(self.depth + levels, (self.bits << levels) | index)

    def zero_extension(self, depth: int) -> "NodeId":
        return NodeId(depth, self.bits << (depth - self.depth))

    def is_ancestor_of(self, other: "NodeId", strict: bool = False) -> bool:
        if other.depth < self.depth or (strict and other.depth == self.depth):
            return False
        return other.bits >> (other.depth - self.depth) == self.bits

    def meet_depth(self, other: "NodeId") -> int:
        """|v ^ w|, the depth of the most recent common ancestor."""
        m = min(self.depth, other.depth)
        diff = (self.bits >> (self.depth - m)) ^ (other.bits >> (other.depth - m))
        return m - diff.bit_length()

    def __str__(self) -> str:
        return self.path or "<root>"


@dataclass
class QueryLedger:
    """Counts queries.  ``unique_queries`` is the figure of merit of the query model."""

    unique_queries: int = 0
    total_calls: int = 0
    history: list | None = None
    exact: bool = True
    _seen: set = dc_field(default_factory=set, repr=False)

    def charge(self, fingerprints: Iterable[int]) -> list[bool]:
        """Record calls; return which of them touched a node for the first time."""
        fps = list(fingerprints)
        self.total_calls += len(fps)
        if not self.exact:
            self.unique_queries += len(fps)
            return [True] * len(fps)
        seen = self._seen
        new = []
        for f in fps:
            if f in seen:
                new.append(False)
            else:
                seen.add(f)
                new.append(True)
        self.unique_queries += sum(new)
        return new

    def charge_count(self, fingerprints: np.ndarray) -> int:
        """Like :meth:`charge` but only returns the number of new nodes."""
        before = self.unique_queries
        self.total_calls += len(fingerprints)
        if self.exact:
            self._seen.update(fingerprints.tolist())
            self.unique_queries = len(self._seen)
        else:
            self.unique_queries += len(fingerprints)
        return self.unique_queries - before

    def record(self, nodes, values) -> None:
        if self.history is not None:
            self.history.extend(zip(nodes, map(float, values)))

    def first_hit(self, N: int, threshold: float) -> int | None:
        """1-based history index of the first depth-N node with value >= threshold."""
        if self.history is None:
            raise FieldError("history recording is disabled")
        for i, (node, value) in enumerate(self.history, 1):
            if node.depth == N and value >= threshold:
                return i
        return None

    def write_history(self, path) -> None:
        """One ``depth path_bits value`` triple per line."""
        if self.history is None:
            raise FieldError("history recording is disabled")
        with open(path, "w") as fh:
            for node, value in self.history:
                fh.write(f"{node.depth} {node.path or '-'} {value!r}\n")


def _check_version():
    pinned = os.environ.get("CREM_FIELD_VERSION")
    if pinned and pinned != FIELD_VERSION:
        raise FieldError(f"CREM_FIELD_VERSION={pinned!r} is not available (this build: {FIELD_VERSION})")


def field_coefficients(profile: CovarianceProfile, N: int):
    """Per-depth bridge coefficients, indexed by child depth 1..N."""
    A = profile.cdf(np.arange(N + 1) / N)
    var = np.zeros(N + 1)
    var[1:] = N * (A[1:] - A[:-1])
    W = np.zeros(N + 2)
    W[1:N + 1] = N * (1.0 - A[:-1])  # variance of the spine remainder from depth d on
    W_after = np.zeros(N + 1)
    W_after[1:] = N * (1.0 - A[1:])
    alpha = np.zeros(N + 1)
    beta = np.zeros(N + 1)
    pos = W[: N + 1] > 0
    alpha[pos] = var[pos] / W[: N + 1][pos]
    beta[pos] = np.sqrt(np.maximum(var[pos] * W_after[pos] / W[: N + 1][pos], 0.0))
    sqrtw = np.sqrt(np.maximum(W[: N + 1], 0.0))
    return var, alpha, beta, sqrtw


class FieldOracle:
    """The only access path to the field X.

    Parameters
    ----------
    profile : CovarianceProfile
    N : int
        Tree depth.
    seed : int
        Any non-negative integer below 2**128.
    mode : {"full_tree", "leaf_only"}
        In ``leaf_only`` mode only depth-N nodes may be queried.
    cache : bool
        Keep node states of individually queried nodes (timing only).
    history : bool
        Record every call as ``(NodeId, value)``.
    track_unique : bool
        Deduplicate queries exactly.  When off, ``unique_queries`` counts every
        call (an upper bound), which keeps memory flat in very long runs.
    reveal_budget : int
        Largest chain-of-spindles reveal, in nodes.
    """

    def __init__(
        self,
        profile: CovarianceProfile,
        N: int,
        seed: int,
        mode: str = "full_tree",
        cache: bool = True,
        history: bool = False,
        track_unique: bool = True,
        reveal_budget: int = 2**20,
    ):
        _check_version()
        if N < 1:
            raise ValueError("N must be at least 1")
        if mode not in ("full_tree", "leaf_only"):
            raise ValueError(f"unknown mode {mode!r}")
        if seed < 0 or seed >> 128:
            raise ValueError("seed must be in [0, 2**128)")
        self.profile = profile
        self.N = int(N)
        self.seed = int(seed)
        self.mode = mode
        self.reveal_budget = reveal_budget
        self.ledger = QueryLedger(history=[] if history else None, exact=track_unique)
        self._use_cache = cache
        self._cache: dict[NodeId, tuple] = {}
        self.variances, self._alpha, self._beta, self._sqrtw = field_coefficients(profile, self.N)
        k1, k2, sk, xb, tot, rem = K.root_state(
            np.uint64(seed & _MASK64), np.uint64(seed >> 64), float(self._sqrtw[1])
        )
        # keys must stay uint64: numba would type plain ints as int64
        self._root = (np.uint64(k1), np.uint64(k2), np.uint64(sk), xb, tot, rem)

    version = FIELD_VERSION

    def __repr__(self):
        return f"FieldOracle(N={self.N}, seed={self.seed}, mode={self.mode!r}, profile={self.profile!r})"

    # -- internal state access (never charged) --------------------------------

    def _check_node(self, v: NodeId):
        if v.depth > self.N:
            raise ValueError(f"depth {v.depth} exceeds N={self.N}")

    def _walk(self, start: tuple, depth0: int, bits: np.ndarray):
        n = len(bits)
        x = np.empty(n)
        inc = np.empty(n)
        fp = np.empty(n, np.uint64)
        keys = np.empty(3, np.uint64)
        xb, tot, rem = K.walk(start, depth0, bits, self._alpha, self._beta, self._sqrtw, x, inc, fp, keys)
        state = (keys[0], keys[1], keys[2], xb, tot, rem) if n else start
        return state, x, inc, fp

    def _state(self, v: NodeId) -> tuple:
        self._check_node(v)
        if v.depth == 0:
            return self._root
        hit = self._cache.get(v)
        if hit is not None:
            return hit
        start, m = self._root, 0
        if self._cache:
            for d in range(v.depth - 1, 0, -1):
                s = self._cache.get(v.ancestor(d))
                if s is not None:
                    start, m = s, d
                    break
        state = self._walk(start, m, v.bit_array(m))[0]
        if self._use_cache:
            self._cache[v] = state
        return state

    @staticmethod
    def _value(state: tuple) -> float:
        return state[3] + (state[4] - state[5])

    def _fingerprint(self, state: tuple, depth: int) -> int:
        return int(K.fingerprint(state[2], depth))

    def peek(self, v: NodeId) -> float:
        """Value of X_v without charging the ledger (diagnostics and tests)."""
        return self._value(self._state(v))

    def edge_variance(self, depth: int) -> float:
        """Variance N (A(d/N) - A((d-1)/N)) of the increment into depth ``depth``."""
        return float(self.variances[depth])

    # -- queries ---------------------------------------------------------------

    def query(self, v: NodeId) -> float:
        """X_v.  Charges one call; unique on first visit."""
        self._check_node(v)
        if self.mode == "leaf_only" and v.depth != self.N:
            raise ModeError(f"leaf_only oracle cannot query depth {v.depth} < N={self.N}")
        state = self._state(v)
        value = self._value(state)
        self.ledger.charge([self._fingerprint(state, v.depth)])
        self.ledger.record([v], [value])
        return value

    def edge_increment(self, child: NodeId) -> float:
        """Displacement on the edge into ``child`` (not charged)."""
        if child.depth < 1:
            raise ValueError("the root has no incoming edge")
        self._check_node(child)
        parent = self._state(child.parent())
        _, _, inc, _ = self._walk(parent, child.depth - 1, child.bit_array(child.depth - 1))
        return float(inc[0])

    def trajectory(self, v: NodeId) -> np.ndarray:
        """(X_{v[0]}, ..., X_{v[|v|]}), charged as one batch of ancestor queries."""
        self._check_node(v)
        if self.mode != "full_tree":
            raise ModeError("trajectories need full_tree access")
        state, x, _, fp = self._walk(self._root, 0, v.bit_array())
        out = np.r_[0.0, x]
        fps = [self._fingerprint(self._root, 0)] + fp.tolist()
        self.ledger.charge(fps)
        if self.ledger.history is not None:
            self.ledger.record([v.ancestor(m) for m in range(v.depth + 1)], out)
        if self._use_cache and v.depth:
            self._cache[v] = state
        return out

    def _expand(self, v: NodeId, levels: int, mid: int = -1, want_x: bool = True):
        if levels < 0 or v.depth + levels > self.N:
            raise ValueError(f"cannot expand {levels} levels below depth {v.depth} (N={self.N})")
        n = 1 << levels
        x = np.empty(n)
        z = np.empty(n)
        fp = np.empty(n, np.uint64)
        zfp = np.empty(n, np.uint64)
        out_mid = np.empty(1 << mid if mid >= 0 else 0)
        K.expand(self._state(v), v.depth, levels, mid, self.N, self._alpha, self._beta, self._sqrtw,
                 x, z, fp, zfp, out_mid, want_x)
        return x, z, fp, zfp, out_mid

    def _charge_batch(self, fp: np.ndarray, nodes) -> None:
        if self.ledger.history is None:
            self.ledger.charge_count(fp)
        else:
            self.ledger.charge(fp.tolist())

    def query_descendants(self, v: NodeId, levels: int) -> np.ndarray:
        """Values of all 2**levels descendants of v at depth |v| + levels, lexicographic order."""
        if self.mode == "leaf_only" and v.depth + levels != self.N:
            raise ModeError("leaf_only oracle can only return depth-N descendants")
        x, _, fp, _, _ = self._expand(v, levels)
        self._charge_batch(fp, None)
        if self.ledger.history is not None:
            self.ledger.record((v.descendant(levels, i) for i in range(len(x))), x)
        return x

    def query_descendants_new(self, v: NodeId, levels: int):
        """As :meth:`query_descendants`, also returning a mask of first-time nodes."""
        if self.mode == "leaf_only" and v.depth + levels != self.N:
            raise ModeError("leaf_only oracle can only return depth-N descendants")
        x, _, fp, _, _ = self._expand(v, levels)
        new = np.array(self.ledger.charge(fp.tolist()), dtype=bool)
        if self.ledger.history is not None:
            self.ledger.record((v.descendant(levels, i) for i in range(len(x))), x)
        return x, new

    def query_zero_extensions(self, v: NodeId, levels: int, mid: int = -1, want_new: bool = False):
        """Values of the leaves ``v w 0...0`` for every w in {0,1}**levels.

        With ``mid >= 0`` also returns the true values at relative level ``mid``
        (not charged, for instrumentation).  With ``want_new`` also returns the
        first-visit mask.
        """
        _, z, _, zfp, out_mid = self._expand(v, levels, mid, want_x=mid == levels)
        if want_new:
            new = np.array(self.ledger.charge(zfp.tolist()), dtype=bool)
        else:
            self._charge_batch(zfp, None)
        if self.ledger.history is not None:
            self.ledger.record(
                (v.descendant(levels, i).zero_extension(self.N) for i in range(len(z))), z
            )
        extra = []
        if mid >= 0:
            extra.append(out_mid)
        if want_new:
            extra.append(new)
        return (z, *extra) if extra else z

    def query_paths(self, v: NodeId, bits2d: np.ndarray, want_new: bool = False):
        """Values at the end of each row of ``bits2d`` followed from v."""
        bits2d = np.ascontiguousarray(bits2d, dtype=np.uint8)
        L = bits2d.shape[1]
        if v.depth + L > self.N:
            raise ValueError("paths run below depth N")
        if self.mode == "leaf_only" and v.depth + L != self.N:
            raise ModeError("leaf_only oracle can only query depth-N nodes")
        x = np.empty(len(bits2d))
        fp = np.empty(len(bits2d), np.uint64)
        K.walk_many(self._state(v), v.depth, bits2d, self._alpha, self._beta, self._sqrtw, x, fp)
        if want_new:
            new = np.array(self.ledger.charge(fp.tolist()), dtype=bool)
        else:
            self._charge_batch(fp, None)
        if self.ledger.history is not None:
            nodes = [v.descendant(L, int("".join(map(str, row)) or "0", 2)) for row in bits2d]
            self.ledger.record(nodes, x)
        return (x, new) if want_new else x

    def best_descendant(self, v: NodeId, levels: int) -> tuple[NodeId, float]:
        """Argmax over the 2**levels descendants; ties go to the smallest path.

        Up to 2**20 descendants are charged node by node.  Larger subtrees are
        scanned without materialising them and charged as 2**levels fresh
        nodes, without deduplication against earlier queries.
        """
        if self.mode == "leaf_only" and v.depth + levels != self.N:
            raise ModeError("leaf_only oracle can only return depth-N descendants")
        if v.depth + levels > self.N:
            raise ValueError("descendants below depth N")
        if levels <= 20:
            x = self.query_descendants(v, levels)
            pos = int(np.argmax(x))
            val = float(x[pos])
        else:
            if self.ledger.history is not None:
                raise BudgetError("history recording is limited to subtrees of 2**20 nodes")
            pos, val = K.subtree_argmax(self._state(v), v.depth, levels, self._alpha, self._beta, self._sqrtw)
            n = 1 << levels
            self.ledger.total_calls += n
            self.ledger.unique_queries += n
        w = v.descendant(levels, int(pos))
        if self._use_cache and levels:
            # greedy searches continue from the winner, so keep its state
            self._cache[w] = self._walk(self._state(v), v.depth, w.bit_array(v.depth))[0]
        return w, float(val)

    def reveal_spindle_chain(self, v: NodeId, K_blocks: int) -> dict[NodeId, float]:
        """Values on the chain of spindles over v, charged per unique node."""
        from .hardness import spindle_chain

        if self.mode != "full_tree":
            raise ModeError("spindle reveals need full_tree access")
        chain = spindle_chain(v, K_blocks, self.N)
        if chain.cardinality > self.reveal_budget:
            raise BudgetError(
                f"chain of spindles has {chain.cardinality} nodes, budget is {self.reveal_budget}"
            )
        out: dict[NodeId, float] = {}
        for anchor, bottom in chain.spindles:
            for lev in range(bottom - anchor.depth + 1):
                x, _, fp, _, _ = self._expand(anchor, lev)
                nodes = [anchor.descendant(lev, i) for i in range(len(x))]
                self.ledger.charge(fp.tolist())
                self.ledger.record(nodes, x)
                out.update(zip(nodes, x.tolist()))
        return out


def query(oracle: FieldOracle, v: NodeId) -> float:
    return oracle.query(v)


def edge_increment(oracle: FieldOracle, child: NodeId) -> float:
    return oracle.edge_increment(child)


def trajectory(oracle: FieldOracle, v: NodeId) -> np.ndarray:
    return oracle.trajectory(v)


def reveal_spindle_chain(oracle: FieldOracle, v: NodeId, K_blocks: int) -> dict[NodeId, float]:
    return oracle.reveal_spindle_chain(v, K_blocks)

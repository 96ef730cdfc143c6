"""Compiled inner loops for the lazily generated field.

Every node carries a state ``(k1, k2, sk, xb, tot, rem)``:

* ``k1, k2``: two independent 64-bit hash chains of the node's bit path (the
  128-bit stream key).
* ``sk``: ``k1`` of the node's spine root.  A spine is a maximal chain
  ``s, s0, s00, ...`` started by a 1-child (or the root); it owns the edge into
  ``s`` and every edge along its all-zeros continuation down to depth N.
* ``xb``: field value where the spine branched off (parent of the spine root).
* ``tot``: sum of all increments on the spine.
* ``rem``: sum of the spine's increments strictly below this node.

The field value is ``xb + (tot - rem)``.  A spine total is drawn first and its
increments are peeled off one edge at a time by Gaussian bridge splitting, so
the increments are independent with the prescribed variances, and the value of
the all-zeros leaf below any node is available in O(1) as ``xb + tot``.
"""

import ctypes

import numpy as np
from numba import njit
from numba.extending import get_cython_function_address

_ndtri = ctypes.CFUNCTYPE(ctypes.c_double, ctypes.c_double)(
    get_cython_function_address("scipy.special.cython_special", "ndtri")
)

_U = np.uint64
_M1 = _U(0xBF58476D1CE4E5B9)
_M2 = _U(0x94D049BB133111EB)
_M3 = _U(0xFF51AFD7ED558CCD)
_M4 = _U(0xC4CEB9FE1A85EC53)
_G1 = _U(0x9E3779B97F4A7C15)
_G2 = _U(0xD1B54A32D192ED03)
_G3 = _U(0x8CB92BA72F3D8DD7)
_SEED_A = _U(0x243F6A8885A308D3)
_SEED_B = _U(0x13198A2E03707344)
_TAG_EDGE = _U(0xA4093822299F31D0)
_TAG_TOTAL = _U(0x082EFA98EC4E6C89)
_S11 = _U(11)
_S27 = _U(27)
_S30 = _U(30)
_S31 = _U(31)
_S33 = _U(33)
_INV53 = 1.0 / 9007199254740992.0


@njit(inline="always")
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(inline="always")
def _mix2(z):
    z = (z ^ (z >> _S33)) * _M3
    z = (z ^ (z >> _S33)) * _M4
    return z ^ (z >> _S33)


@njit(inline="always")
def _normal(k1, k2, tag):
    u = _mix(k1 ^ _mix2(k2 ^ tag))
    return _ndtri((np.float64(u >> _S11) + 0.5) * _INV53)


@njit(inline="always")
def _fingerprint(sk, depth):
    return _mix2(sk ^ (_U(depth) * _G3))


@njit
def root_state(seed_lo, seed_hi, sqrtw1):
    k1 = _mix(_mix(seed_lo ^ _SEED_A) ^ seed_hi)
    k2 = _mix2(_mix2(seed_hi + _SEED_B) ^ seed_lo)
    tot = sqrtw1 * _normal(k1, k2, _TAG_TOTAL) if sqrtw1 != 0.0 else 0.0
    return k1, k2, k1, 0.0, tot, tot


@njit(inline="always")
def _child(k1, k2, sk, xb, tot, rem, bit, d, alpha, beta, sqrtw):
    bc = _U(bit + 1)
    c1 = _mix(k1 + bc * _G1)
    c2 = _mix2(k2 + bc * _G2)
    if bit == 1:
        xb = xb + (tot - rem)
        sk = c1
        if sqrtw[d] != 0.0:
            tot = sqrtw[d] * _normal(c1, c2, _TAG_TOTAL)
        else:
            tot = 0.0
        rem = tot
    if beta[d] != 0.0:
        inc = rem * alpha[d] + beta[d] * _normal(c1, c2, _TAG_EDGE)
    else:
        inc = rem * alpha[d]
    return c1, c2, sk, xb, tot, rem - inc, inc


@njit
def walk(state, depth0, bits, alpha, beta, sqrtw, out_x, out_inc, out_fp, out_state):
    """Follow ``bits`` from a node; record value, increment and fingerprint per step."""
    k1, k2, sk, xb, tot, rem = state
    k1, k2, sk = _U(k1), _U(k2), _U(sk)
    for i in range(bits.shape[0]):
        d = depth0 + i + 1
        k1, k2, sk, xb, tot, rem, inc = _child(k1, k2, sk, xb, tot, rem, bits[i], d, alpha, beta, sqrtw)
        out_x[i] = xb + (tot - rem)
        out_inc[i] = inc
        out_fp[i] = _fingerprint(sk, d)
    out_state[0] = k1
    out_state[1] = k2
    out_state[2] = sk
    return xb, tot, rem


@njit
def walk_many(state, depth0, bits2d, alpha, beta, sqrtw, out_x, out_fp):
    """Endpoint value and fingerprint for each row of ``bits2d`` (paths from one node)."""
    n, L = bits2d.shape
    for r in range(n):
        k1, k2, sk, xb, tot, rem = state
        k1, k2, sk = _U(k1), _U(k2), _U(sk)
        for i in range(L):
            k1, k2, sk, xb, tot, rem, inc = _child(
                k1, k2, sk, xb, tot, rem, bits2d[r, i], depth0 + i + 1, alpha, beta, sqrtw
            )
        out_x[r] = xb + (tot - rem)
        out_fp[r] = _fingerprint(sk, depth0 + L)


@njit(inline="always")
def _zero_leaf(k1, k2, sk, xb, tot, rem, bit, d, sqrtw):
    # value and spine key of the all-zeros leaf below a child, skipping its own increment
    if bit == 1:
        c1 = _mix(k1 + _U(2) * _G1)
        c2 = _mix2(k2 + _U(2) * _G2)
        xb = xb + (tot - rem)
        sk = c1
        tot = sqrtw[d] * _normal(c1, c2, _TAG_TOTAL) if sqrtw[d] != 0.0 else 0.0
    return xb + tot, sk


@njit
def expand(state, depth0, levels, mid, N, alpha, beta, sqrtw, out_x, out_z, out_fp, out_zfp, out_mid, want_x=True):
    """Depth-first expansion of all 2**levels descendants ``levels`` below a node.

    Fills, in lexicographic order of the descendants: their values ``out_x``,
    the values of their all-zeros leaf extensions ``out_z``, and fingerprints
    of both.  ``out_mid`` receives the values at relative level ``mid``.
    With ``want_x`` false only ``out_z`` and ``out_zfp`` are filled, which
    saves the bottom-level increments.
    """
    L = levels
    s_k1 = np.empty(L + 1, np.uint64)
    s_k2 = np.empty(L + 1, np.uint64)
    s_sk = np.empty(L + 1, np.uint64)
    s_xb = np.empty(L + 1)
    s_tot = np.empty(L + 1)
    s_rem = np.empty(L + 1)
    nxt = np.zeros(L + 1, np.int64)
    s_k1[0], s_k2[0], s_sk[0], s_xb[0], s_tot[0], s_rem[0] = state
    if mid == 0:
        out_mid[0] = s_xb[0] + (s_tot[0] - s_rem[0])
    pos = 0
    pos_mid = 0
    lev = 0
    while lev >= 0:
        if lev == L:
            out_x[pos] = s_xb[lev] + (s_tot[lev] - s_rem[lev])
            out_z[pos] = s_xb[lev] + s_tot[lev]
            out_fp[pos] = _fingerprint(s_sk[lev], depth0 + L)
            out_zfp[pos] = _fingerprint(s_sk[lev], N)
            pos += 1
            lev -= 1
            continue
        b = nxt[lev]
        if b == 2:
            nxt[lev] = 0
            lev -= 1
            continue
        nxt[lev] = b + 1
        if not want_x and lev + 1 == L:
            z, sk = _zero_leaf(s_k1[lev], s_k2[lev], s_sk[lev], s_xb[lev], s_tot[lev], s_rem[lev],
                               b, depth0 + L, sqrtw)
            out_z[pos] = z
            out_zfp[pos] = _fingerprint(sk, N)
            pos += 1
            continue
        k1, k2, sk, xb, tot, rem, inc = _child(
            s_k1[lev], s_k2[lev], s_sk[lev], s_xb[lev], s_tot[lev], s_rem[lev],
            b, depth0 + lev + 1, alpha, beta, sqrtw,
        )
        lev += 1
        s_k1[lev], s_k2[lev], s_sk[lev], s_xb[lev], s_tot[lev], s_rem[lev] = k1, k2, sk, xb, tot, rem
        if lev == mid:
            out_mid[pos_mid] = xb + (tot - rem)
            pos_mid += 1


@njit
def subtree_argmax(state, depth0, levels, alpha, beta, sqrtw):
    """Index (lexicographic, first on ties) and value of the best descendant ``levels`` below."""
    L = levels
    s_k1 = np.empty(L + 1, np.uint64)
    s_k2 = np.empty(L + 1, np.uint64)
    s_sk = np.empty(L + 1, np.uint64)
    s_xb = np.empty(L + 1)
    s_tot = np.empty(L + 1)
    s_rem = np.empty(L + 1)
    nxt = np.zeros(L + 1, np.int64)
    s_k1[0], s_k2[0], s_sk[0], s_xb[0], s_tot[0], s_rem[0] = state
    best = -np.inf
    best_pos = -1
    pos = 0
    lev = 0
    while lev >= 0:
        if lev == L:
            x = s_xb[lev] + (s_tot[lev] - s_rem[lev])
            if x > best:
                best = x
                best_pos = pos
            pos += 1
            lev -= 1
            continue
        b = nxt[lev]
        if b == 2:
            nxt[lev] = 0
            lev -= 1
            continue
        nxt[lev] = b + 1
        k1, k2, sk, xb, tot, rem, inc = _child(
            s_k1[lev], s_k2[lev], s_sk[lev], s_xb[lev], s_tot[lev], s_rem[lev],
            b, depth0 + lev + 1, alpha, beta, sqrtw,
        )
        lev += 1
        s_k1[lev], s_k2[lev], s_sk[lev], s_xb[lev], s_tot[lev], s_rem[lev] = k1, k2, sk, xb, tot, rem
    return best_pos, best


@njit
def fingerprint(sk, depth):
    return _fingerprint(sk, depth)

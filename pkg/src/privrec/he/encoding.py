"""Coefficient encodings for packed inner products.

Common layout (one query against many items): the query sits in the low k
coefficients; item block b occupies [b*k, (b+1)*k) with reversed
coordinates, so coefficient b*k + k - 1 of the product is <q, v_b>. The
top block stays empty to dodge negacyclic wraparound.

Folded layout (a different query per item, used when distances run over
additively shared candidates): query slot i sits at stride k, item slot i
at stride B*k reversed; slot i's product lands alone at i*k*(B+1) + k - 1
because i + c*B = b*(B+1) has no other solutions with 0 <= i, c < B. B is
the largest batch with no wraparound at all.
"""

from __future__ import annotations

import math

import numpy as np

from .bfv import HeError, HeParams


def common_block_size(params: HeParams, k: int) -> int:
    b = params.d // k - 1
    if b < 1:
        raise HeError(f"k={k} too large for d={params.d} in the common layout")
    return b


def folded_block_size(d: int, k: int) -> int:
    if k > d:
        raise HeError(f"k={k} exceeds ring degree {d}")
    b = max(1, math.isqrt(d // k))
    while b > 1 and (b * b - 1) * k + 2 * (k - 1) >= d:
        b -= 1
    return b


def encode_query(params: HeParams, q_vec: np.ndarray) -> np.ndarray:
    """Common layout: Q(x) = sum q_j x^j, coefficients mod t."""
    q = np.asarray(q_vec, dtype=np.int64)
    if len(q) > params.d:
        raise HeError("query longer than ring degree")
    out = np.zeros(params.d, dtype=np.int64)
    out[:len(q)] = q % params.t
    return out


def encode_items(params: HeParams, vectors: np.ndarray, scale: int = 1) -> list[np.ndarray]:
    """Common layout: block-packed, reversed coordinates, scaled by `scale`."""
    v = np.asarray(vectors, dtype=np.int64)
    n, k = v.shape
    bsz = common_block_size(params, k)
    polys = []
    for blk in range(0, n, bsz):
        chunk = v[blk:blk + bsz]
        poly = np.zeros(params.d, dtype=np.int64)
        for slot, vec in enumerate(chunk):
            poly[slot * k:(slot + 1) * k] = (scale * vec[::-1]) % params.t
        polys.append(poly)
    return polys


def common_extraction(params: HeParams, k: int, count: int) -> np.ndarray:
    return np.arange(count, dtype=np.int64) * k + (k - 1)


def encode_folded_queries(params: HeParams, a_mat: np.ndarray) -> list[np.ndarray]:
    """Folded layout: one polynomial per block of B per-candidate queries."""
    a = np.asarray(a_mat, dtype=np.int64)
    n, k = a.shape
    bsz = folded_block_size(params.d, k)
    polys = []
    for blk in range(0, n, bsz):
        chunk = a[blk:blk + bsz] % params.t
        poly = np.zeros(params.d, dtype=np.int64)
        for slot, vec in enumerate(chunk):
            poly[slot * k:(slot + 1) * k] = vec
        polys.append(poly)
    return polys


def encode_folded_items(params: HeParams, b_mat: np.ndarray, scale: int = 1) -> list[np.ndarray]:
    b = np.asarray(b_mat, dtype=np.int64)
    n, k = b.shape
    bsz = folded_block_size(params.d, k)
    stride = bsz * k
    polys = []
    for blk in range(0, n, bsz):
        chunk = b[blk:blk + bsz]
        poly = np.zeros(params.d, dtype=np.int64)
        for slot, vec in enumerate(chunk):
            base = slot * stride
            poly[base:base + k] = (scale * vec[::-1]) % params.t
        polys.append(poly)
    return polys


def folded_extraction(params: HeParams, k: int, count: int) -> np.ndarray:
    bsz = folded_block_size(params.d, k)
    slot = np.arange(count, dtype=np.int64) % bsz
    return slot * k * (bsz + 1) + (k - 1)


def encode_folded_sums(params: HeParams, values: np.ndarray, k: int) -> list[np.ndarray]:
    """Per-candidate scalars at the folded extraction coefficients."""
    vals = np.asarray(values, dtype=np.int64) % params.t
    bsz = folded_block_size(params.d, k)
    polys = []
    for blk in range(0, len(vals), bsz):
        chunk = vals[blk:blk + bsz]
        poly = np.zeros(params.d, dtype=np.int64)
        for slot, v in enumerate(chunk):
            poly[slot * k * (bsz + 1) + (k - 1)] = v
        polys.append(poly)
    return polys


def encode_common_sums(params: HeParams, values: np.ndarray, k: int) -> list[np.ndarray]:
    vals = np.asarray(values, dtype=np.int64) % params.t
    bsz = common_block_size(params, k)
    polys = []
    for blk in range(0, len(vals), bsz):
        chunk = vals[blk:blk + bsz]
        poly = np.zeros(params.d, dtype=np.int64)
        for slot, v in enumerate(chunk):
            poly[slot * k + (k - 1)] = v
        polys.append(poly)
    return polys

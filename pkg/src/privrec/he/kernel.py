"""SIMD squared-distance kernel over encrypted queries.

For candidates with per-candidate query operands a_i (folded layout) and
plaintext-side operands b_i, each block needs exactly one plaintext
multiply: d_i = sum(a_i^2) - 2<a_i, b_i> + sum(b_i^2), assembled from the
client's Enc(A) and Enc(sum a^2) plus the cloud's item polynomial (scaled
by -2) and square-sum polynomial. The cloud masks every coefficient with
fresh uniform randomness and keeps the mask values at the extraction
coefficients as its additive distance shares; one public sanity candidate
rides along unmasked so the client can detect noise corruption.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..rng import Rng
from . import bfv, encoding
from .bfv import CipherText, HeParams, NoiseOverflow


@dataclass
class ClientBatch:
    enc_q: list[CipherText]
    enc_sq: list[CipherText]
    n: int                       # candidates incl. the sanity row
    k: int


def client_encrypt_batch(params: HeParams, pk, a_mat: np.ndarray,
                         rng: Rng) -> ClientBatch:
    """a_mat: (n, k) query operands, sanity row already appended."""
    a = np.asarray(a_mat, dtype=np.int64) % params.t
    sq = (a * a % params.t).sum(axis=1) % params.t
    qs = [bfv.encrypt(pk, bfv._ctx(params).forward(
        bfv._ctx(params).to_limbs(poly).astype(np.uint64)), rng.child("q", i))
        for i, poly in enumerate(encoding.encode_folded_queries(params, a))]
    sqs = [bfv.encrypt(pk, bfv._ctx(params).forward(
        bfv._ctx(params).to_limbs(poly).astype(np.uint64)), rng.child("s", i))
        for i, poly in enumerate(encoding.encode_folded_sums(params, sq, a.shape[1]))]
    return ClientBatch(qs, sqs, a.shape[0], a.shape[1])


def cloud_distance_batch(params: HeParams, enc_q: list[CipherText],
                         enc_sq: list[CipherText], b_mat: np.ndarray,
                         rng: Rng, sanity_last: bool = True):
    """Returns (masked result cts, cloud distance shares incl. sanity)."""
    ctx = bfv._ctx(params)
    b = np.asarray(b_mat, dtype=np.int64) % params.t
    n, k = b.shape
    bsz = encoding.folded_block_size(params.d, k)
    item_polys = encoding.encode_folded_items(params, b, scale=-2)
    sqb = (b * b % params.t).sum(axis=1) % params.t
    sum_polys = encoding.encode_folded_sums(params, sqb, k)
    extract = encoding.folded_extraction(params, k, n)

    results = []
    shares = np.zeros(n, dtype=np.uint16)
    for blk, (qct, sct) in enumerate(zip(enc_q, enc_sq)):
        lo, hi = blk * bsz, min((blk + 1) * bsz, n)
        vp = ctx.forward(ctx.to_limbs(item_polys[blk]).astype(np.uint64))
        sp = ctx.forward(ctx.to_limbs(sum_polys[blk]).astype(np.uint64))
        res = bfv.add(params, bfv.mul_plain(params, qct, vp), sct)
        res = bfv.add_plain(params, res, sp)
        mask = rng.child("mask", blk).u16(params.d).astype(np.int64)
        if sanity_last and hi == n:
            mask[extract[n - 1]] = 0    # sanity coefficient left open
        mp = ctx.forward(ctx.to_limbs(mask).astype(np.uint64))
        res = bfv.add_plain(params, res, mp)
        shares[lo:hi] = mask[extract[lo:hi]].astype(np.uint16)
        results.append(res)
    return results, shares


def client_decrypt_shares(params: HeParams, sk, results: list[CipherText],
                          n: int, k: int, sanity_expected: int | None) -> np.ndarray:
    """Extraction coefficients of the decrypted blocks, truncated to the
    candidate count; aborts on a corrupted sanity value."""
    bsz = encoding.folded_block_size(params.d, k)
    extract = encoding.folded_extraction(params, k, n)
    out = np.zeros(n, dtype=np.uint16)
    for blk, ct in enumerate(results):
        lo, hi = blk * bsz, min((blk + 1) * bsz, n)
        plain = bfv.decrypt(sk, ct)
        out[lo:hi] = plain[extract[lo:hi]]
    if sanity_expected is not None and out[n - 1] != sanity_expected % params.t:
        raise NoiseOverflow(f"sanity distance {out[n - 1]} != {sanity_expected}")
    return out


# -- spec-shaped common-layout kernel (one query, many items) ---------------

def common_distance_kernel(params: HeParams, enc_q: CipherText, enc_sq: CipherText,
                           item_vectors: np.ndarray, rng: Rng):
    """Single-query form: enc_sq replicates sum(q^2) at every extraction
    coefficient; items ride the common layout."""
    ctx = bfv._ctx(params)
    v = np.asarray(item_vectors, dtype=np.int64) % params.t
    n, k = v.shape
    bsz = encoding.common_block_size(params, k)
    item_polys = encoding.encode_items(params, v, scale=-2)
    sqb = (v * v % params.t).sum(axis=1) % params.t
    sum_polys = encoding.encode_common_sums(params, sqb, k)
    extract = encoding.common_extraction(params, k, bsz)

    results, shares = [], []
    for blk, vp_coeffs in enumerate(item_polys):
        lo, hi = blk * bsz, min((blk + 1) * bsz, n)
        vp = ctx.forward(ctx.to_limbs(vp_coeffs).astype(np.uint64))
        sp = ctx.forward(ctx.to_limbs(sum_polys[blk]).astype(np.uint64))
        res = bfv.add(params, bfv.mul_plain(params, enc_q, vp), enc_sq)
        res = bfv.add_plain(params, res, sp)
        mask = rng.child("cmask", blk).u16(params.d).astype(np.int64)
        mp = ctx.forward(ctx.to_limbs(mask).astype(np.uint64))
        res = bfv.add_plain(params, res, mp)
        shares.append(mask[extract[:hi - lo]].astype(np.uint16))
        results.append(res)
    return results, np.concatenate(shares) if shares else np.zeros(0, np.uint16)


def encrypt_common_query(params: HeParams, pk, q_vec: np.ndarray, rng: Rng):
    ctx = bfv._ctx(params)
    q = np.asarray(q_vec, dtype=np.int64)
    k = len(q)
    qpoly = encoding.encode_query(params, q)
    sq = int((q * q).sum() % params.t)
    bsz = encoding.common_block_size(params, k)
    sqpoly = np.zeros(params.d, dtype=np.int64)
    sqpoly[encoding.common_extraction(params, k, bsz)] = sq
    enc_q = bfv.encrypt(pk, ctx.forward(ctx.to_limbs(qpoly).astype(np.uint64)),
                        rng.child("cq"))
    enc_sq = bfv.encrypt(pk, ctx.forward(ctx.to_limbs(sqpoly).astype(np.uint64)),
                         rng.child("csq"))
    return enc_q, enc_sq

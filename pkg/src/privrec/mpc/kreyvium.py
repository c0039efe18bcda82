"""Kreyvium stream cipher: bitsliced software engine and circuit builder.

Kreyvium extends Trivium to 128-bit key/IV: the 288-bit inner state is
clocked as in Trivium while two 128-bit registers rotate through the key
and IV bits, feeding one key bit into t3 and one IV bit into the first
feedback each round. 1152 warm-up rounds run before the first output bit.

The software engine is bitsliced across *instances*: masking a prepared
set needs many short keystreams (one per data block, distinct IVs), and
evaluating them in lockstep turns the per-round work into a handful of
numpy ops on packed uint64 words regardless of instance count.

Bit conventions (shared with the circuit and all masking code):
  * key/IV bit 1 = MSB of byte 0; keystream bit 1 = MSB of output byte 0;
  * 16-bit lanes are consumed from the keystream in little-endian pairs.
"""

from __future__ import annotations

import logging

import numpy as np

from .circuit import Builder

log = logging.getLogger(__name__)

WARMUP = 1152


def _bit_columns(blobs: np.ndarray) -> np.ndarray:
    """(num, 16) uint8 -> (128, nwords) uint64; column i packs bit i+1
    (MSB-first) of every instance, instance j in word j//64 bit j%64."""
    num = blobs.shape[0]
    bits = np.unpackbits(blobs, axis=1)              # (num, 128), MSB-first
    nwords = (num + 63) // 64
    pad = nwords * 64 - num
    if pad:
        bits = np.vstack([bits, np.zeros((pad, 128), np.uint8)])
    cols = np.zeros((128, nwords), dtype=np.uint64)
    weights = (np.uint64(1) << np.arange(64, dtype=np.uint64))
    for w in range(nwords):
        chunk = bits[w * 64:(w + 1) * 64].astype(np.uint64)  # (64, 128)
        cols[:, w] = (chunk * weights[:, None]).sum(axis=0)
    return cols


def _emit_bytes(zrows: np.ndarray, num: int, n_bits: int) -> np.ndarray:
    """(n_bits, nwords) uint64 -> (num, ceil(n_bits/8)) uint8, MSB-first."""
    rows8 = zrows.view(np.uint8).reshape(zrows.shape[0], -1)
    bits = np.unpackbits(rows8, axis=1, bitorder="little")[:, :num]  # (n_bits, num)
    return np.packbits(bits.T, axis=1)               # MSB-first per instance


def keystream_batch(keys: np.ndarray, ivs: np.ndarray, n_bits: int) -> np.ndarray:
    """Keystreams for several (key, iv) pairs at once.

    keys/ivs: (num, 16) uint8. Returns (num, ceil(n_bits/8)) uint8.
    """
    keys = np.atleast_2d(np.asarray(keys, dtype=np.uint8))
    ivs = np.atleast_2d(np.asarray(ivs, dtype=np.uint8))
    if keys.shape != ivs.shape or keys.shape[1] != 16:
        raise ValueError("keys/ivs must be (num, 16) byte arrays")
    num = keys.shape[0]
    kc = _bit_columns(keys)   # (128, W)
    vc = _bit_columns(ivs)
    W = kc.shape[1]
    ones = np.full(W, ~np.uint64(0), dtype=np.uint64)
    zeros = np.zeros(W, dtype=np.uint64)

    # registers as circular buffers; head walks backwards each round
    a = [kc[i].copy() for i in range(93)]                       # s1..s93
    b = [vc[i].copy() for i in range(84)]                       # s94..s177
    c = ([vc[84 + i].copy() for i in range(44)] +
         [ones.copy() for _ in range(66)] + [zeros.copy()])     # s178..s288
    ha = hb = hc = 0
    la, lb, lc = 93, 84, 111

    zrows = np.empty((n_bits, W), dtype=np.uint64)
    for rnd in range(WARMUP + n_bits):
        kbit = kc[127 - (rnd % 128)]
        vbit = vc[127 - (rnd % 128)]
        s66 = a[(ha + 65) % la]; s93 = a[(ha + 92) % la]
        s162 = b[(hb + 68) % lb]; s177 = b[(hb + 83) % lb]
        s243 = c[(hc + 65) % lc]; s288 = c[(hc + 110) % lc]
        t1 = s66 ^ s93
        t2 = s162 ^ s177
        t3 = s243 ^ s288 ^ kbit
        if rnd >= WARMUP:
            zrows[rnd - WARMUP] = t1 ^ t2 ^ t3
        t1 = t1 ^ (a[(ha + 90) % la] & a[(ha + 91) % la]) ^ b[(hb + 77) % lb] ^ vbit
        t2 = t2 ^ (b[(hb + 81) % lb] & b[(hb + 82) % lb]) ^ c[(hc + 86) % lc]
        t3 = t3 ^ (c[(hc + 108) % lc] & c[(hc + 109) % lc]) ^ a[(ha + 68) % la]
        ha = (ha - 1) % la; a[ha] = t3
        hb = (hb - 1) % lb; b[hb] = t1
        hc = (hc - 1) % lc; c[hc] = t2
    return _emit_bytes(zrows, num, n_bits)


def keystream(key: bytes, iv: bytes, n_bits: int) -> bytes:
    """Single-instance keystream as bytes (MSB-first bit packing)."""
    out = keystream_batch(np.frombuffer(bytes(key), np.uint8)[None, :],
                          np.frombuffer(bytes(iv), np.uint8)[None, :], n_bits)
    return out[0].tobytes()


def stream_u16(key: bytes, iv: bytes, n_lanes: int) -> np.ndarray:
    """n_lanes little-endian 16-bit lanes drawn from the keystream."""
    raw = keystream(key, iv, n_lanes * 16)
    return np.frombuffer(raw, dtype="<u2", count=n_lanes).copy()


def stream_u16_batch(keys: np.ndarray, ivs: np.ndarray, lanes_per: int) -> np.ndarray:
    raw = keystream_batch(keys, ivs, lanes_per * 16)
    return np.frombuffer(raw.tobytes(), dtype="<u2").reshape(keys.shape[0], lanes_per)


# -- circuit construction -------------------------------------------------

def keystream_wires(bld: Builder, key_cols: np.ndarray, iv_cols: np.ndarray,
                    n_bits: int) -> np.ndarray:
    """Emit Kreyvium gates into `bld`.

    key_cols/iv_cols: (128, width) int32 wire ids — bit i+1 (MSB-first) of
    each parallel instance. Returns (n_bits, width) keystream wire ids.
    The register rotation consumes key/IV wires directly, so the rotating
    registers cost no gates; the AND count is 3 per round.
    """
    key_cols = np.asarray(key_cols, np.int32)
    iv_cols = np.asarray(iv_cols, np.int32)
    width = key_cols.shape[1]
    zeros = np.full(width, bld.zero, np.int32)
    ones = np.full(width, bld.one, np.int32)

    a = [key_cols[i] for i in range(93)]
    b = [iv_cols[i] for i in range(84)]
    c = [iv_cols[84 + i] for i in range(44)] + [ones] * 66 + [zeros]
    ha = hb = hc = 0
    la, lb, lc = 93, 84, 111

    out = []
    for rnd in range(WARMUP + n_bits):
        kbit = key_cols[127 - (rnd % 128)]
        vbit = iv_cols[127 - (rnd % 128)]
        # t1/t2/t3 in one fused block (t3 takes the key bit as a third arm)
        ts = bld.xorn([
            np.stack([a[(ha + 65) % la], b[(hb + 68) % lb], c[(hc + 65) % lc]]),
            np.stack([a[(ha + 92) % la], b[(hb + 83) % lb], c[(hc + 110) % lc]]),
            np.stack([zeros, zeros, kbit]),
        ])
        t1, t2, t3 = ts[0], ts[1], ts[2]
        if rnd >= WARMUP:
            out.append(bld.xorn([t1, t2, t3]))
        ands = bld.and_(
            np.stack([a[(ha + 90) % la], b[(hb + 81) % lb], c[(hc + 108) % lc]]),
            np.stack([a[(ha + 91) % la], b[(hb + 82) % lb], c[(hc + 109) % lc]]))
        fs = bld.xorn([
            ts, ands,
            np.stack([b[(hb + 77) % lb], c[(hc + 86) % lc], a[(ha + 68) % la]]),
            np.stack([vbit, zeros, zeros]),
        ])
        ha = (ha - 1) % la; a[ha] = fs[2]
        hb = (hb - 1) % lb; b[hb] = fs[0]
        hc = (hc - 1) % lc; c[hc] = fs[1]
    return np.stack(out, axis=0)


def build_keystream_circuit(n_bits: int):
    """Standalone circuit: cloud supplies key and IV, client learns the
    keystream. Used for the engine-vs-circuit consistency checks."""
    bld = Builder()
    key = bld.inputs("cloud", 128).reshape(128, 1)
    iv = bld.inputs("cloud", 128).reshape(128, 1)
    z = keystream_wires(bld, key, iv, n_bits)
    bld.output("keystream", z.ravel(), "client")
    circ = bld.build()
    log.debug("kreyvium circuit: %d bits, %d AND, %d XOR", n_bits, circ.n_and, circ.n_xor)
    return circ


def bytes_to_msb_bits(data: bytes) -> np.ndarray:
    return np.unpackbits(np.frombuffer(bytes(data), np.uint8))


def msb_bits_to_bytes(bits: np.ndarray) -> bytes:
    return np.packbits(np.asarray(bits, np.uint8)).tobytes()

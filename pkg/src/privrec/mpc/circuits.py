"""Circuit library for the private query pipeline.

All selection circuits reconstruct 16-bit distances from additive shares
(client minus cloud), then run minimum-extraction tournaments on composite
keys [idx | dist | dead] so ties resolve exactly like the plaintext
oracle: smaller distance first, then smaller item index. Payload indices
ride through the muxes, so the final winner wires decode directly to item
indices.

Share convention everywhere: value = (client_share - cloud_share) mod 2^16.
Circuits that emit shares give the client (v - r) and the cloud keeps -r.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import kreyvium
from .circuit import Builder, equal, less_than, sub_words

DIST_BITS = 16


def iv_for(purpose: str, generation: int, index: int) -> bytes:
    blob = purpose.encode() + generation.to_bytes(8, "little") + index.to_bytes(8, "little")
    return hashlib.blake2b(blob, digest_size=16).digest()


def _key_cols_from_wires(wires: np.ndarray, width: int) -> np.ndarray:
    return np.repeat(np.asarray(wires, np.int32)[:, None], width, axis=1)


def stream_lanes_wires(bld: Builder, key_wires: np.ndarray, iv_cols: np.ndarray,
                       lanes_per_block: int) -> np.ndarray:
    """Kreyvium keystream as (num_blocks*lanes_per_block, 16) wire lanes,
    one parallel cipher instance per IV column; key wires are shared."""
    width = iv_cols.shape[1]
    key_cols = _key_cols_from_wires(key_wires, width)
    zbits = kreyvium.keystream_wires(bld, key_cols, iv_cols, lanes_per_block * 16)
    # bit r of block b: keystream bit index r (MSB-first within bytes);
    # lane l of block b = little-endian bytes 2l, 2l+1
    lanes = np.empty((width * lanes_per_block, 16), dtype=np.int32)
    for l in range(lanes_per_block):
        for bit in range(16):
            byte, inbyte = (2 * l + (0 if bit < 8 else 1)), bit % 8
            src = zbits[byte * 8 + (7 - inbyte)]      # (width,)
            lanes[l::lanes_per_block, bit] = src
    return lanes


def lanes_to_u16_bits(vals: np.ndarray) -> np.ndarray:
    v = np.asarray(vals, dtype=np.uint16)
    return ((v[:, None] >> np.arange(16)) & 1).astype(np.uint8)


def bits_to_u16(bits: np.ndarray) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint32).reshape(-1, 16)
    return (b << np.arange(16, dtype=np.uint32)).sum(axis=1).astype(np.uint16)


# -- unmask-to-shares ------------------------------------------------------

def unmask_to_shares_circuit(num_lanes: int, block_lanes: int,
                             zero_stream: bool = False):
    """Client holds the masked client key and masked lanes; the cloud holds
    its primary key, the (public) IVs and fresh masks r. The circuit
    recovers the client key, regenerates the masking stream, unmasks
    v = masked - stream and gives the client (v - r) per lane.

    Client inputs: [masked_key(128) | lane bits (num_lanes*16)].
    Cloud inputs: [k_p(128) | iv_key(128) | block IVs (blocks*128) | r bits].
    `zero_stream` is a test hook that skips the cipher so the output is
    masked - r."""
    if num_lanes % block_lanes:
        raise ValueError("num_lanes must be a multiple of block_lanes")
    blocks = num_lanes // block_lanes
    bld = Builder()
    masked_key = bld.inputs("client", 128)
    masked_lane_bits = bld.inputs("client", num_lanes * 16).reshape(num_lanes, 16)
    primary_key = bld.inputs("cloud", 128)
    iv_key_w = bld.inputs("cloud", 128)
    block_iv_w = bld.inputs("cloud", blocks * 128).reshape(blocks, 128)
    r_bits = bld.inputs("cloud", num_lanes * 16).reshape(num_lanes, 16)

    if zero_stream:
        stream = np.zeros((num_lanes, 16), dtype=np.int32)  # wire 0 = const 0
        unmasked = sub_words(bld, masked_lane_bits, stream)
    else:
        key_cols = _key_cols_from_wires(primary_key, 1)
        kmask = kreyvium.keystream_wires(bld, key_cols, iv_key_w[:, None], 128)[:, 0]
        client_key = bld.xor(masked_key, kmask)
        stream = stream_lanes_wires(bld, client_key, block_iv_w.T, block_lanes)
        unmasked = sub_words(bld, masked_lane_bits, stream)
    shares = sub_words(bld, unmasked, r_bits)
    bld.output("client_shares", shares.ravel(), "client")
    return bld.build()


def reshare_circuit(num_lanes: int):
    """Client holds plain lane values v, cloud holds masks r; the client
    learns (v - r) so downstream stages see standard shares."""
    bld = Builder()
    v_bits = bld.inputs("client", num_lanes * 16).reshape(num_lanes, 16)
    r_bits = bld.inputs("cloud", num_lanes * 16).reshape(num_lanes, 16)
    shares = sub_words(bld, v_bits, r_bits)
    bld.output("client_shares", shares.ravel(), "client")
    return bld.build()


# -- top-k selection -------------------------------------------------------

@dataclass
class TopkSpec:
    n: int
    k_out: int
    idx_bits: int
    idx_mode: str = "client"     # client-input payload | "const" baked indices
    out_mode: str = "reshare"    # "reshare" | "disclose_idx" | "disclose_full" | "shared_in_disclose"
    const_idx: np.ndarray | None = None


def _tournament_min(bld: Builder, keys: np.ndarray) -> np.ndarray:
    """keys: (n, w) wire arrays, LSB-first -> winner key wires (w,)."""
    cur = keys
    while cur.shape[0] > 1:
        m = cur.shape[0] // 2
        left, right = cur[0:2 * m:2], cur[1:2 * m:2]
        take_right = less_than(bld, right, left)       # strict: ties keep left
        winners = bld.mux(take_right, right, left)
        if cur.shape[0] % 2:
            winners = np.concatenate([winners, cur[-1:]], axis=0)
        cur = winners
    return cur[0]


def topk_circuit(spec: TopkSpec):
    """k_out sequential minimum extractions over shared distances.

    Inputs: client distance shares, cloud distance shares; the index
    payload is either a client input or baked constants. Prior winners are
    excluded by an index-equality kill flag that rides as the key MSB.
    """
    n, k_out, idx_bits = spec.n, spec.k_out, spec.idx_bits
    if not (1 <= k_out <= max(n, 1)):
        raise ValueError("k_out outside [1, n]")
    bld = Builder()
    c_bits = bld.inputs("client", n * 16).reshape(n, 16)
    if spec.idx_mode == "client":
        idx_bits_w = bld.inputs("client", n * idx_bits).reshape(n, idx_bits)
    elif spec.idx_mode == "shares":
        idx_client = bld.inputs("client", n * idx_bits).reshape(n, idx_bits)
    s_bits = bld.inputs("cloud", n * 16).reshape(n, 16)
    if spec.idx_mode == "shares":
        idx_cloud = bld.inputs("cloud", n * idx_bits).reshape(n, idx_bits)
        idx_bits_w = bld.xor(idx_client, idx_cloud)
    elif spec.idx_mode == "const":
        consts = np.asarray(spec.const_idx, dtype=np.uint64)
        bits = ((consts[:, None] >> np.arange(idx_bits, dtype=np.uint64)) & 1).astype(np.uint8)
        idx_bits_w = bld.const_secret(bits.ravel()).reshape(n, idx_bits)
    if spec.out_mode == "reshare":
        r_dist = bld.inputs("cloud", k_out * 16).reshape(k_out, 16)
        r_idx = bld.inputs("cloud", k_out * idx_bits).reshape(k_out, idx_bits)

    dist = sub_words(bld, c_bits, s_bits)
    dead = np.full((n, 1), bld.zero, dtype=np.int32)
    # key layout LSB-first: [idx | dist | dead]
    keys = np.concatenate([idx_bits_w, dist, dead], axis=1)

    win_dist, win_idx = [], []
    for round_i in range(k_out):
        w = _tournament_min(bld, keys)
        w_idx = w[:idx_bits]
        w_dist = w[idx_bits:idx_bits + 16]
        win_idx.append(w_idx)
        win_dist.append(w_dist)
        if round_i + 1 < k_out:
            # kill every candidate whose payload matches the winner
            hit = equal(bld, keys[:, :idx_bits],
                        np.repeat(w_idx[None, :], n, axis=0))
            keys[:, -1:] = bld.or_(keys[:, -1:], hit[:, None])

    if spec.out_mode == "disclose_idx":
        bld.output("winner_idx", np.stack(win_idx).ravel(), "client")
    elif spec.out_mode == "disclose_full":
        bld.output("winner_idx", np.stack(win_idx).ravel(), "client")
        bld.output("winner_dist", np.stack(win_dist).ravel(), "client")
    elif spec.out_mode in ("reshare",):
        d_shares = sub_words(bld, np.stack(win_dist), r_dist)
        i_shares = bld.xor(np.stack(win_idx), r_idx)
        bld.output("winner_dist_share", d_shares.ravel(), "client")
        bld.output("winner_idx_share", i_shares.ravel(), "client")
    else:  # shared_in_disclose: merge stage, winners to client
        bld.output("winner_idx", np.stack(win_idx).ravel(), "client")
    return bld.build()


# -- PIR keystream ---------------------------------------------------------

def _mux_tree(bld: Builder, sel_bits: np.ndarray, leaves: np.ndarray) -> np.ndarray:
    """leaves: (T, w) wires; sel LSB-first -> (w,) selected leaf."""
    t = leaves.shape[0]
    depth = max(1, (t - 1).bit_length()) if t > 1 else 0
    cur = leaves
    for b in range(depth):
        if cur.shape[0] % 2:
            cur = np.concatenate([cur, cur[-1:]], axis=0)
        cur = bld.mux(sel_bits[b], cur[1::2], cur[0::2])
    return cur[0] if cur.ndim > 1 else cur


def pir_keystream_circuit(num_clusters: int, stream_bits: int, batch: int = 1):
    """The client privately selects one of the cloud's per-cluster subkeys
    through a mux tree; the keystream under that subkey is disclosed to the
    client only, who locally unmasks its held copy of that cluster.
    `batch` evaluates several independent retrievals in lockstep.

    Client inputs: batch * jbits selector bits. Cloud inputs:
    [data IV (128) | batch * num_clusters * 128 subkey bits]."""
    if num_clusters < 1:
        raise ValueError("num_clusters must be >= 1")
    jbits = max(1, (num_clusters - 1).bit_length())
    bld = Builder()
    sels = [bld.inputs("client", jbits) for _ in range(batch)]
    iv_w = bld.inputs("cloud", 128)
    subkeys = [bld.inputs("cloud", num_clusters * 128).reshape(num_clusters, 128)
               for _ in range(batch)]
    key_cols = np.empty((128, batch), dtype=np.int32)
    for i in range(batch):
        key_cols[:, i] = _mux_tree(bld, sels[i], subkeys[i])
    iv_cols = np.repeat(iv_w[:, None], batch, axis=1)
    z = kreyvium.keystream_wires(bld, key_cols, iv_cols, stream_bits)  # (bits, batch)
    for i in range(batch):
        bld.output(f"keystream{i}", z[:, i], "client")
    return bld.build()

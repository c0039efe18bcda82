"""Query-plan helpers: circuit construction (cached by shape) and input
packing shared by both endpoints of a session.

Both parties build circuits independently from the layout; the shapes are
pure functions of layout numbers, so a layout-hash match in HELLO implies
identical circuits. LIB_VERSION pins the circuit library itself.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

import numpy as np

from ..mpc import circuits as C
from ..mpc.circuit import Circuit
from .layout import META_PAD, QueryLayout

LIB_VERSION = b"privrec-circuits-1"


@lru_cache(maxsize=64)
def unmask_circuit(num_lanes: int, block_lanes: int) -> Circuit:
    return C.unmask_to_shares_circuit(num_lanes, block_lanes)


@lru_cache(maxsize=64)
def reshare_circuit(num_lanes: int) -> Circuit:
    return C.reshare_circuit(num_lanes)


@lru_cache(maxsize=64)
def topk_items_circuit(n: int, k_out: int, idx_bits: int, mode: str) -> Circuit:
    spec = C.TopkSpec(n, k_out, idx_bits, idx_mode="client", out_mode=mode)
    return C.topk_circuit(spec)


def stage_out_mode(layout: QueryLayout) -> str:
    """Disclosure of the stash/member stages: re-shared by default, plain
    (distance + index) under --paper-disclosure, plain indices when there
    is no cluster stage to merge with."""
    if layout.num_clusters == 0:
        return "disclose_idx"
    return "disclose_full" if layout.paper_disclosure else "reshare"


@lru_cache(maxsize=64)
def topk_centroid_circuit(t: int, k_cl: int) -> Circuit:
    cbits = max(2, (t - 1).bit_length() if t > 1 else 1)
    spec = C.TopkSpec(t, k_cl, cbits, idx_mode="const",
                      out_mode="disclose_idx",
                      const_idx=tuple(range(t)))
    return C.topk_circuit(spec)


@lru_cache(maxsize=64)
def merge_circuit(n: int, k_out: int, idx_bits: int) -> Circuit:
    spec = C.TopkSpec(n, k_out, idx_bits, idx_mode="shares",
                      out_mode="shared_in_disclose")
    return C.topk_circuit(spec)


@lru_cache(maxsize=64)
def pir_circuit(t: int, stream_bits: int, batch: int) -> Circuit:
    return C.pir_keystream_circuit(t, stream_bits, batch)


def centroid_bits(t: int) -> int:
    return max(2, (t - 1).bit_length() if t > 1 else 1)


def lib_hash(layout: QueryLayout) -> bytes:
    """Digest over the session's circuit shapes, exchanged in HELLO."""
    h = hashlib.blake2b(LIB_VERSION, digest_size=16)
    mode = stage_out_mode(layout)
    for first, nblocks in layout.segments():
        circ = unmask_circuit(nblocks * layout.block_lanes, layout.block_lanes)
        h.update(circ.shape_hash())
    h.update(topk_items_circuit(layout.stash_size, layout.k_out, layout.idx_bits,
                                mode).shape_hash())
    if layout.num_clusters:
        h.update(topk_centroid_circuit(layout.num_clusters, layout.pir_batch).shape_hash())
        h.update(pir_circuit(layout.num_clusters, layout.cluster_stream_lanes * 16,
                             layout.pir_batch).shape_hash())
        h.update(reshare_circuit(layout.member_count * layout.k).shape_hash())
        h.update(topk_items_circuit(layout.member_count, layout.k_out,
                                    layout.idx_bits, mode).shape_hash())
        if mode == "reshare":
            h.update(merge_circuit(2 * layout.k_out, layout.k_out,
                                   layout.idx_bits).shape_hash())
    return h.digest()


# -- bit packing -------------------------------------------------------------

def u16_bits(vals: np.ndarray) -> np.ndarray:
    return C.lanes_to_u16_bits(np.asarray(vals, np.uint16)).ravel()


def bits_u16(bits: np.ndarray) -> np.ndarray:
    return C.bits_to_u16(bits)


def uint_bits(vals: np.ndarray, width: int) -> np.ndarray:
    v = np.asarray(vals, dtype=np.uint64)
    return (((v[:, None] >> np.arange(width, dtype=np.uint64)) & 1)
            .astype(np.uint8).ravel())


def bits_uint(bits: np.ndarray, width: int) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint64).reshape(-1, width)
    return (b << np.arange(width, dtype=np.uint64)).sum(axis=1)


def ids_to_payload(ids16: np.ndarray, layout: QueryLayout) -> np.ndarray:
    """u16 metadata ids -> tournament index payload (pads -> all-ones)."""
    out = np.asarray(ids16, dtype=np.uint64).copy()
    out[out == META_PAD] = layout.pad_idx
    return out

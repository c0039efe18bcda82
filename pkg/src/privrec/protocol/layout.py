"""Frozen per-generation layout shared by client and cloud.

Everything that determines message sizes, circuit shapes and packing lives
here: both parties compare layout hashes during HELLO, and every circuit in
a session is built from these numbers alone, which is what makes per-phase
transcript byte counts a function of the layout and nothing else.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from ..preprocess import PAD_ITEM, PreparedSets, pad_coordinate

META_PAD = 0xFFFF


@dataclass(frozen=True)
class QueryLayout:
    generation: int
    k: int
    quantized_max: int
    num_items: int
    stash_size: int
    num_clusters: int
    capacity: int
    k_cl: int = 4
    k_out: int = 10
    block_lanes: int = 128
    seg_blocks: int = 96
    he_d: int = 4096
    he_limbs: int = 4
    he_limb_below: int = 159_000_000
    paper_disclosure: bool = False

    # -- shape arithmetic ------------------------------------------------

    @property
    def idx_bits(self) -> int:
        return max(2, self.num_items.bit_length())

    @property
    def pad_idx(self) -> int:
        return (1 << self.idx_bits) - 1

    @property
    def data_lanes(self) -> int:
        return (self.stash_size + self.num_clusters) * self.k

    @property
    def num_blocks(self) -> int:
        return (self.data_lanes + self.block_lanes - 1) // self.block_lanes

    @property
    def total_lanes(self) -> int:
        return self.num_blocks * self.block_lanes

    def segments(self) -> list[tuple[int, int]]:
        """(first_block, n_blocks) per unmask GC segment."""
        out = []
        b = 0
        while b < self.num_blocks:
            n = min(self.seg_blocks, self.num_blocks - b)
            out.append((b, n))
            b += n
        return out

    @property
    def pir_batch(self) -> int:
        return min(self.k_cl, self.num_clusters)

    @property
    def cluster_stream_lanes(self) -> int:
        return self.capacity * self.k + self.capacity  # data lanes + id lanes

    @property
    def member_count(self) -> int:
        return self.pir_batch * self.capacity

    @property
    def pad_coord(self) -> int:
        return pad_coordinate(self.k, self.quantized_max)

    @property
    def folded_b(self) -> int:
        b = max(1, math.isqrt(self.he_d // max(self.k, 1)))
        while b > 1 and (b * b - 1) * self.k + 2 * (self.k - 1) >= self.he_d:
            b -= 1
        return b

    def he_blocks(self, candidates: int) -> int:
        return (candidates + self.folded_b - 1) // self.folded_b

    @property
    def sanity_query(self) -> np.ndarray:
        return np.full(self.k, 3, dtype=np.uint16)

    @property
    def sanity_distance(self) -> int:
        return 9 * self.k  # vs the all-zero sanity item

    # -- serialization -----------------------------------------------------

    def to_bytes(self) -> bytes:
        return json.dumps(asdict(self), sort_keys=True).encode()

    @staticmethod
    def from_bytes(blob: bytes) -> "QueryLayout":
        return QueryLayout(**json.loads(blob.decode()))

    def layout_hash(self) -> bytes:
        return hashlib.blake2b(self.to_bytes(), digest_size=16).digest()


def layout_for(ps: PreparedSets, k_cl: int = 4, k_out: int = 10,
               num_items: int | None = None, **overrides) -> QueryLayout:
    return QueryLayout(generation=ps.rm_generation, k=ps.k,
                       quantized_max=ps.quantized_max,
                       num_items=num_items if num_items is not None else 1 << 16,
                       stash_size=ps.stash_size,
                       num_clusters=ps.num_clusters,
                       capacity=ps.cluster_capacity,
                       k_cl=k_cl, k_out=k_out, **overrides)


# -- plaintext lane packing (owner side) -----------------------------------

def flat_lanes(ps: PreparedSets, layout: QueryLayout) -> np.ndarray:
    """Stash lanes then centroid lanes, zero-padded to whole blocks."""
    lanes = np.zeros(layout.total_lanes, dtype=np.uint16)
    s = ps.stash_coords.astype(np.uint16).ravel()
    lanes[:len(s)] = s
    c = ps.centroids.astype(np.uint16).ravel()
    lanes[len(s):len(s) + len(c)] = c
    return lanes


def stash_meta_ids(ps: PreparedSets) -> np.ndarray:
    ids = ps.stash_items.astype(np.uint32)
    out = np.full(len(ids), META_PAD, dtype=np.uint16)
    real = ids != PAD_ITEM
    out[real] = ids[real].astype(np.uint16)
    return out


def cluster_meta_ids(ps: PreparedSets, c: int) -> np.ndarray:
    ids = ps.cluster_items[c].astype(np.uint32)
    out = np.full(len(ids), META_PAD, dtype=np.uint16)
    real = ids != PAD_ITEM
    out[real] = ids[real].astype(np.uint16)
    return out


# -- masked bundle (owner -> client) ----------------------------------------

@dataclass
class MaskedBundle:
    layout: QueryLayout
    masked_lanes: np.ndarray      # (total_lanes,) u16: v + stream
    masked_meta: np.ndarray       # (stash_size,) u16: ids ^ stream
    meta_stream: np.ndarray       # (stash_size,) u16, disclosed to the client
    masked_clusters: np.ndarray   # (T, cluster_stream_lanes) u16
    masked_key: bytes             # k_c ^ Kreyvium(k_p, iv_setup)

    def to_bytes(self) -> bytes:
        lb = self.layout.to_bytes()
        head = struct.pack("<I", len(lb)) + lb
        parts = [head,
                 self.masked_lanes.astype("<u2").tobytes(),
                 self.masked_meta.astype("<u2").tobytes(),
                 self.meta_stream.astype("<u2").tobytes(),
                 self.masked_clusters.astype("<u2").tobytes(),
                 self.masked_key]
        return b"".join(parts)

    @staticmethod
    def from_bytes(blob: bytes) -> "MaskedBundle":
        (lblen,) = struct.unpack_from("<I", blob, 0)
        layout = QueryLayout.from_bytes(blob[4:4 + lblen])
        off = 4 + lblen
        def take(n):
            nonlocal off
            arr = np.frombuffer(blob, "<u2", n, off).copy()
            off += 2 * n
            return arr
        lanes = take(layout.total_lanes)
        meta = take(layout.stash_size)
        stream = take(layout.stash_size)
        clusters = take(layout.num_clusters * layout.cluster_stream_lanes)
        clusters = clusters.reshape(layout.num_clusters, layout.cluster_stream_lanes)
        key = blob[off:off + 16]
        return MaskedBundle(layout, lanes, meta, stream, clusters, key)

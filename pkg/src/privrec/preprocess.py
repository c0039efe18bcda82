"""Partition an RM's item vectors into a stash plus fixed-capacity
K-Means clusters, ready for masking and SIMD packing.

Every item vector is the k selected neighbor ratings of one RM item.
Undersized clusters dissolve into the linearly-scanned stash; oversized
ones split by recursive 2-means until they fit the uniform capacity.
Clusters and the stash are padded with sentinel vectors chosen so they
always lose a distance comparison without overflowing a 16-bit lane, and
the serialized byte length depends on the layout alone.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

from .modeler import RecommendationModel
from .rng import Rng, derive, root_seed

PRSS_MAGIC = b"PRSS"
PRSS_VERSION = 1
PAD_ITEM = 0xFFFFFFFF

DEFAULT_CAPACITY = 64


def default_cluster_count(n_points: int) -> int:
    return max(1, math.isqrt(n_points) + (0 if math.isqrt(n_points) ** 2 == n_points else 1))


def default_min_size(capacity: int) -> int:
    return (capacity + 3) // 4


def pad_coordinate(k: int, quantized_max: int, require_dominant: bool = False) -> int:
    """Sentinel lane value with k*pad^2 < 2^16 so distances never wrap.

    Padding slots must always lose a comparison, which needs
    pad > 2*quantized_max; that is only enforced when padding is actually
    in play (wide vectors without pad slots just need the overflow bound)."""
    pad = math.isqrt((2 ** 16 - 1) // k)
    if require_dominant and pad <= 2 * quantized_max:
        raise ValueError(f"no overflow-safe dominant pad for k={k}, "
                         f"max={quantized_max}")
    return pad


@dataclass
class PreparedSets:
    k: int
    quantized_max: int
    stash_items: np.ndarray        # (S,) uint32, PAD_ITEM for padding
    stash_coords: np.ndarray       # (S, k) uint16
    centroids: np.ndarray          # (T, k) uint16, rounded to the rating grid
    cluster_items: np.ndarray      # (T, C) uint32
    cluster_coords: np.ndarray     # (T, C, k) uint16
    rm_generation: int = 0

    @property
    def stash_size(self) -> int:
        return len(self.stash_items)

    @property
    def num_clusters(self) -> int:
        return len(self.centroids)

    @property
    def cluster_capacity(self) -> int:
        return self.cluster_items.shape[1] if self.num_clusters else 0

    @property
    def layout_tuple(self):
        return (self.k, self.cluster_capacity, self.num_clusters, self.stash_size)

    def real_items(self) -> np.ndarray:
        parts = [self.stash_items[self.stash_items != PAD_ITEM]]
        if self.num_clusters:
            ci = self.cluster_items.ravel()
            parts.append(ci[ci != PAD_ITEM])
        return np.sort(np.concatenate(parts))


def item_vectors(rm: RecommendationModel) -> tuple[np.ndarray, np.ndarray]:
    """RM items and their k-dimensional coordinate vectors (the selected
    neighbor ratings, pads already filled by the modeler)."""
    return rm.item_indices.astype(np.uint32), rm.neighbor_ratings.astype(np.uint16)


def kmeans(points: np.ndarray, t: int, iters: int = 25,
           seed: int | bytes = 0) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with k-means++ seeding on the squared-Euclidean
    objective. Deterministic for a fixed seed; an emptied cluster is
    repaired by stealing the farthest point from the largest cluster."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    if n == 0:
        raise ValueError("kmeans needs at least one point")
    if t < 1 or t > n:
        raise ValueError(f"cluster count {t} outside [1, {n}]")
    gen = Rng(root_seed(seed)).child("kmeans", n, t).generator

    centroids = np.empty((t, pts.shape[1]), dtype=np.float64)
    centroids[0] = pts[gen.integers(n)]
    d2 = ((pts - centroids[0]) ** 2).sum(axis=1)
    for c in range(1, t):
        total = d2.sum()
        if total <= 0:
            centroids[c] = pts[gen.integers(n)]
        else:
            centroids[c] = pts[gen.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((pts - centroids[c]) ** 2).sum(axis=1))

    assign = np.full(n, -1, dtype=np.int64)
    for _ in range(iters):
        dist = ((pts[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = dist.argmin(axis=1)
        sizes = np.bincount(new_assign, minlength=t)
        for c in np.flatnonzero(sizes == 0):
            big = sizes.argmax()
            members = np.flatnonzero(new_assign == big)
            far = members[dist[members, big].argmax()]
            new_assign[far] = c
            sizes = np.bincount(new_assign, minlength=t)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(t):
            sel = assign == c
            if sel.any():
                centroids[c] = pts[sel].mean(axis=0)
    return assign, centroids


def kmeans_objective(points: np.ndarray, assign: np.ndarray,
                     centroids: np.ndarray) -> float:
    pts = np.asarray(points, dtype=np.float64)
    return float(((pts - centroids[assign]) ** 2).sum())


def _split_to_capacity(idx: np.ndarray, coords: np.ndarray, capacity: int,
                       seed: bytes, depth: int = 0) -> list[np.ndarray]:
    """Recursive 2-means split; falls back to index-order halving when the
    points cannot be separated (e.g. identical vectors)."""
    if len(idx) <= capacity:
        return [idx]
    sub = coords[idx].astype(np.float64)
    assign, _ = kmeans(sub, 2, seed=derive(seed, "split", depth, len(idx)))
    left, right = idx[assign == 0], idx[assign == 1]
    if len(left) == 0 or len(right) == 0:
        half = len(idx) // 2
        left, right = idx[:half], idx[half:]
    return (_split_to_capacity(left, coords, capacity, seed, depth + 1)
            + _split_to_capacity(right, coords, capacity, seed, depth + 1))


def partition_stash(items: np.ndarray, coords: np.ndarray,
                    assignments: np.ndarray, quantized_max: int,
                    min_size: int, max_size: int,
                    stash_pad_multiple: int = 1,
                    min_stash: int = 1,
                    seed: int | bytes = 0,
                    rm_generation: int = 0) -> PreparedSets:
    """Build PreparedSets from a K-Means assignment.

    Clusters below min_size dissolve into the stash; above max_size they
    split recursively. Survivors are padded to a uniform capacity, stash
    to a multiple of the HE block size. Cluster order and member order
    are deterministic (ascending smallest item, ascending item)."""
    if min_size > max_size:
        raise ValueError("min_size > max_size")
    items = np.asarray(items, dtype=np.uint32)
    coords = np.asarray(coords, dtype=np.uint16)
    k = coords.shape[1]
    seed_b = root_seed(seed)

    stash_idx: list[np.ndarray] = []
    groups: list[np.ndarray] = []
    for c in range(int(assignments.max()) + 1 if len(assignments) else 0):
        members = np.flatnonzero(assignments == c)
        if len(members) == 0:
            continue
        if len(members) < min_size:
            stash_idx.append(members)
            continue
        for part in _split_to_capacity(members, coords, max_size, seed_b):
            if len(part) < min_size:
                stash_idx.append(part)
            else:
                groups.append(part)

    # deterministic ordering: members by item, clusters by first item
    groups = [g[np.argsort(items[g], kind="stable")] for g in groups]
    groups.sort(key=lambda g: int(items[g[0]]))

    s_real = sum(len(s) for s in stash_idx)
    s_size = max(s_real, min_stash, 1)
    if stash_pad_multiple > 1:
        s_size = ((s_size + stash_pad_multiple - 1) // stash_pad_multiple) * stash_pad_multiple
    pads_used = (s_size > s_real) or any(len(g) < max_size for g in groups)
    pad = pad_coordinate(k, quantized_max, require_dominant=pads_used)
    t = len(groups)
    cap = max_size
    cl_items = np.full((t, cap), PAD_ITEM, dtype=np.uint32)
    cl_coords = np.full((t, cap, k), pad, dtype=np.uint16)
    centroids = np.zeros((t, k), dtype=np.uint16)
    for ci, g in enumerate(groups):
        cl_items[ci, :len(g)] = items[g]
        cl_coords[ci, :len(g)] = coords[g]
        mean = coords[g].astype(np.float64).mean(axis=0)
        centroids[ci] = np.clip(np.rint(mean), 0, quantized_max).astype(np.uint16)

    if stash_idx:
        st = np.concatenate(stash_idx)
        st = st[np.argsort(items[st], kind="stable")]
    else:
        st = np.empty(0, dtype=np.int64)
    stash_items = np.full(s_size, PAD_ITEM, dtype=np.uint32)
    stash_coords = np.full((s_size, k), pad, dtype=np.uint16)
    stash_items[:s_real] = items[st]
    stash_coords[:s_real] = coords[st]

    return PreparedSets(k, quantized_max, stash_items, stash_coords,
                        centroids, cl_items, cl_coords, rm_generation)


def prepare_rm(rm: RecommendationModel, quantized_max: int,
               cluster_count: int | None = None,
               capacity: int = DEFAULT_CAPACITY,
               min_size: int | None = None,
               stash_pad_multiple: int = 1,
               min_stash: int = 1,
               seed: int | bytes = 0,
               all_stash: bool = False) -> PreparedSets:
    items, coords = item_vectors(rm)
    if all_stash or len(items) <= capacity:
        assignments = np.zeros(len(items), dtype=np.int64)
        return partition_stash(items, coords, assignments, quantized_max,
                               min_size=len(items) + 1 if len(items) else 1,
                               max_size=max(len(items), 1),
                               stash_pad_multiple=stash_pad_multiple,
                               min_stash=min_stash,
                               seed=seed, rm_generation=rm.generation)
    t = cluster_count if cluster_count is not None else default_cluster_count(len(items))
    t = min(t, len(items))
    if min_size is None:
        min_size = default_min_size(capacity)
    assignments, _ = kmeans(coords.astype(np.float64), t, seed=seed)
    return partition_stash(items, coords, assignments, quantized_max,
                           min_size, capacity, stash_pad_multiple, min_stash,
                           seed=seed, rm_generation=rm.generation)


def full_row_sets(ds, levels: int = 5, min_stash: int = 1) -> PreparedSets:
    """Baseline candidate set without a recommendation model: every user's
    full rating row on the compact domain (unrated = the median level),
    all in the stash. Distances over m lanes stay under 2^16 because the
    domain diameter is small."""
    qmax = levels - 1
    if ds.scale.quantized_max == 2 * qmax:
        vals = ((ds.ratings.astype(np.int64) + 1) // 2).astype(np.uint16)
    elif ds.scale.quantized_max == qmax:
        vals = ds.ratings.astype(np.uint16)
    else:
        raise ValueError(f"cannot remap quantized_max={ds.scale.quantized_max} "
                         f"onto {levels} levels")
    m = ds.num_items
    rows = np.full((ds.num_users, m), qmax // 2, dtype=np.uint16)
    rows[ds.users, ds.items] = vals
    users = np.arange(ds.num_users, dtype=np.uint32)
    s_size = max(ds.num_users, min_stash)
    stash_items = np.full(s_size, PAD_ITEM, dtype=np.uint32)
    stash_items[:ds.num_users] = users
    pad = pad_coordinate(m, qmax, require_dominant=s_size > ds.num_users)
    stash_coords = np.full((s_size, m), pad, dtype=np.uint16)
    stash_coords[:ds.num_users] = rows
    return PreparedSets(m, qmax, stash_items, stash_coords,
                        np.zeros((0, m), np.uint16),
                        np.zeros((0, 0), np.uint32),
                        np.zeros((0, 0, m), np.uint16), 0)


# -- PRSS serialization ----------------------------------------------------

_HEADER = "<4sHHIIIIH"  # magic, version, k, capacity, num_clusters, stash, generation, qmax


def serialize_sets(ps: PreparedSets) -> bytes:
    head = struct.pack(_HEADER, PRSS_MAGIC, PRSS_VERSION, ps.k,
                       ps.cluster_capacity, ps.num_clusters, ps.stash_size,
                       ps.rm_generation, ps.quantized_max)
    out = bytearray(head)
    out += ps.centroids.astype("<u2").tobytes()
    for c in range(ps.num_clusters):
        out += ps.cluster_items[c].astype("<u4").tobytes()
        out += ps.cluster_coords[c].astype("<u2").tobytes()
    out += ps.stash_items.astype("<u4").tobytes()
    out += ps.stash_coords.astype("<u2").tobytes()
    return bytes(out)


def serialized_length(k: int, capacity: int, num_clusters: int, stash: int) -> int:
    head = struct.calcsize(_HEADER)
    return (head + num_clusters * k * 2
            + num_clusters * capacity * (4 + 2 * k)
            + stash * (4 + 2 * k))


def deserialize_sets(data: bytes) -> PreparedSets:
    magic, version, k, cap, t, s, gen, qmax = struct.unpack_from(_HEADER, data, 0)
    if magic != PRSS_MAGIC:
        raise ValueError("not a PRSS blob")
    if version != PRSS_VERSION:
        raise ValueError(f"unsupported PRSS version {version}")
    off = struct.calcsize(_HEADER)
    centroids = np.frombuffer(data, "<u2", t * k, off).reshape(t, k).copy()
    off += t * k * 2
    cl_items = np.empty((t, cap), np.uint32)
    cl_coords = np.empty((t, cap, k), np.uint16)
    for c in range(t):
        cl_items[c] = np.frombuffer(data, "<u4", cap, off); off += cap * 4
        cl_coords[c] = np.frombuffer(data, "<u2", cap * k, off).reshape(cap, k)
        off += cap * k * 2
    st_items = np.frombuffer(data, "<u4", s, off).copy(); off += s * 4
    st_coords = np.frombuffer(data, "<u2", s * k, off).reshape(s, k).copy()
    off += s * k * 2
    if off != len(data):
        raise ValueError("trailing bytes in PRSS blob")
    return PreparedSets(k, qmax, st_items, st_coords, centroids,
                        cl_items, cl_coords, gen)

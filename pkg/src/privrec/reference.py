"""Plaintext mirrors of the private query pipeline.

`exact_topk` is the exact-KNN oracle over a whole RM; `plain_selection`
replays the stash/cluster/PIR selection with the same orderings and
tie-breaks as the garbled circuits (composite key: distance then item
index, earlier slot on full ties). The private pipeline is measured
against `exact_topk`; `plain_selection` predicts it exactly and is used
for tuning and as a cross-check oracle in tests.
"""

from __future__ import annotations

import numpy as np

from .preprocess import PAD_ITEM, PreparedSets


def sq_distances(coords: np.ndarray, query: np.ndarray) -> np.ndarray:
    c = np.asarray(coords, dtype=np.int64)
    q = np.asarray(query, dtype=np.int64)
    return ((c - q) ** 2).sum(axis=-1)


def idx_payload(items: np.ndarray, idx_bits: int) -> np.ndarray:
    """Item index as carried inside the circuits: pads collapse onto the
    all-ones payload."""
    pad_idx = (1 << idx_bits) - 1
    out = np.asarray(items, dtype=np.int64).copy()
    out[out == PAD_ITEM] = pad_idx
    return out


def topk_by_key(dists: np.ndarray, payload: np.ndarray, k_out: int) -> np.ndarray:
    """Positions of the k_out smallest (distance, payload) keys; stable in
    slot order on full ties, matching the tournament circuits."""
    order = np.lexsort((np.arange(len(dists)), payload, dists))
    return order[:k_out]


def exact_topk(items: np.ndarray, coords: np.ndarray, query: np.ndarray,
               k_out: int, idx_bits: int) -> np.ndarray:
    """Exact KNN over all RM items -> item indices (pads filtered)."""
    d = sq_distances(coords, query)
    pay = idx_payload(items, idx_bits)
    pos = topk_by_key(d, pay, k_out)
    win = np.asarray(items)[pos]
    return win[win != PAD_ITEM]


def plain_selection(ps: PreparedSets, query: np.ndarray, k_cl: int,
                    k_out: int, idx_bits: int) -> dict:
    """Mirror of the private pipeline's selection on plaintext data."""
    q = np.asarray(query, dtype=np.int64)
    stash_d = sq_distances(ps.stash_coords, q)
    stash_pay = idx_payload(ps.stash_items, idx_bits)
    stash_pos = topk_by_key(stash_d, stash_pay, min(k_out, ps.stash_size))
    stash_win = [(int(stash_d[p]), int(stash_pay[p])) for p in stash_pos]

    clusters = []
    member_win: list[tuple[int, int]] = []
    if ps.num_clusters and k_cl > 0:
        cd = sq_distances(ps.centroids, q)
        cpos = topk_by_key(cd, np.arange(ps.num_clusters), min(k_cl, ps.num_clusters))
        clusters = [int(c) for c in cpos]
        mi = ps.cluster_items[cpos].reshape(-1)
        mc = ps.cluster_coords[cpos].reshape(-1, ps.k)
        md = sq_distances(mc, q)
        mpay = idx_payload(mi, idx_bits)
        mwin = topk_by_key(md, mpay, min(k_out, len(md)))
        member_win = [(int(md[p]), int(mpay[p])) for p in mwin]

    merged = stash_win + member_win
    md_arr = np.array([m[0] for m in merged], dtype=np.int64)
    mp_arr = np.array([m[1] for m in merged], dtype=np.int64)
    pos = topk_by_key(md_arr, mp_arr, min(k_out, len(merged)))
    pad_idx = (1 << idx_bits) - 1
    final = [int(mp_arr[p]) for p in pos if mp_arr[p] != pad_idx]
    return {"items": np.array(final, dtype=np.int64),
            "clusters": clusters,
            "stash_winners": stash_win,
            "member_winners": member_win}


def overlap_at_k(private_items: np.ndarray, oracle_items: np.ndarray,
                 k_out: int) -> float:
    return len(np.intersect1d(private_items, oracle_items)) / k_out

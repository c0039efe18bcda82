"""ReuseKNN recommendation-model construction on the data-owner side.

For a target user, every item they have not rated gets the ratings of the
top-k raters of that item, ranked by a weighted blend of rating similarity
(cosine over co-rated values) and reusability (how much of the target's
rated history a neighbor covers). Vulnerable neighbors can cap or opt out
of appearing in models; items with fewer than k eligible raters are padded
so every entry is exactly k wide for fixed-shape packing downstream.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix

from .ingest import IngestError, RatingDataset

PRSM_MAGIC = b"PRSM"
PRSM_VERSION = 1


@dataclass
class VulnerabilityPolicy:
    """user index -> max RM entries that user may appear in (0 = abstain);
    users not listed are uncapped."""

    caps: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for u, cap in self.caps.items():
            if cap < 0:
                raise ValueError(f"negative contribution cap for user {u}")

    def cap_array(self, num_users: int) -> np.ndarray:
        arr = np.full(num_users, np.iinfo(np.int64).max, dtype=np.int64)
        for u, cap in self.caps.items():
            arr[u] = cap
        return arr

    @property
    def unrestricted(self) -> bool:
        return not self.caps


@dataclass
class RecommendationModel:
    target_user: int
    k: int
    item_indices: np.ndarray       # (entries,) int32 ascending
    neighbor_ids: np.ndarray       # (entries, k) int32; num_users = pad
    neighbor_ratings: np.ndarray   # (entries, k) uint16
    w: float
    generation: int = 0

    @property
    def num_entries(self) -> int:
        return len(self.item_indices)

    def rating_cells(self) -> int:
        return self.num_entries * self.k


def _dense_rows(ds: RatingDataset):
    vals = ds.scale.dequantize(ds.ratings)
    rv = csr_matrix((vals, (ds.users, ds.items)), shape=(ds.num_users, ds.num_items))
    pattern = csr_matrix((np.ones(ds.nnz), (ds.users, ds.items)),
                         shape=(ds.num_users, ds.num_items))
    return rv, pattern


def cosine_similarity(ds: RatingDataset, u: int, v: int) -> float:
    """Cosine over the co-rated item subvectors of u and v, on raw
    de-quantized values; 0.0 when nothing is co-rated."""
    if u == v:
        raise ValueError("u and v must differ")
    iu, ru = ds.user_ratings(u)
    iv, rv = ds.user_ratings(v)
    common, ia, ib = np.intersect1d(iu, iv, return_indices=True)
    if len(common) == 0:
        return 0.0
    a = ds.scale.dequantize(ru[ia])
    b = ds.scale.dequantize(rv[ib])
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def gain_score(ds: RatingDataset, target: int, n: int) -> float:
    """Coverage fraction |I_target ∩ I_n| / |I_target|; 0 when the target
    has no ratings."""
    if target == n:
        raise ValueError("target and neighbor must differ")
    it = ds.user_items(target)
    if len(it) == 0:
        return 0.0
    return len(np.intersect1d(it, ds.user_items(n))) / len(it)


def score_matrix(ds: RatingDataset, w: float) -> np.ndarray:
    """All-pairs combined scores: row t holds w*sim(t,.) + (1-w)*gain(t,.)
    with the diagonal forced to -inf. Three sparse matmuls cover every
    pairwise co-rated sum."""
    if not (0.0 <= w <= 1.0):
        raise ValueError("weight w must lie in [0, 1]")
    rv, pattern = _dense_rows(ds)
    rv2 = rv.copy(); rv2.data = rv2.data ** 2
    dots = (rv @ rv.T).toarray()
    sq_t = (rv2 @ pattern.T).toarray()     # sum of row-user^2 over co-rated
    overlap = (pattern @ pattern.T).toarray()
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = dots / np.sqrt(sq_t * sq_t.T)
        counts = pattern.getnnz(axis=1).astype(np.float64)
        gain = overlap / counts[:, None]
    sim = np.nan_to_num(sim, nan=0.0, posinf=0.0, neginf=0.0)
    gain = np.nan_to_num(gain, nan=0.0, posinf=0.0, neginf=0.0)
    score = w * sim + (1.0 - w) * gain
    np.fill_diagonal(score, -np.inf)
    return score


def combined_scores(ds: RatingDataset, target: int, w: float) -> np.ndarray:
    """w*similarity + (1-w)*gain for every user (target itself = -inf)."""
    if not (0.0 <= w <= 1.0):
        raise ValueError("weight w must lie in [0, 1]")
    rv, pattern = _dense_rows(ds)
    row_v = rv[target]
    row_p = pattern[target]
    dots = (row_v @ rv.T).toarray().ravel()
    rv2 = rv.copy(); rv2.data = rv2.data ** 2
    sq_t = (rv2[target] @ pattern.T).toarray().ravel()   # sum of target^2 over co-rated
    sq_n = (row_p @ rv2.T).toarray().ravel()             # sum of neighbor^2 over co-rated
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = dots / np.sqrt(sq_t * sq_n)
    sim = np.nan_to_num(sim, nan=0.0, posinf=0.0, neginf=0.0)
    overlap = (row_p @ pattern.T).toarray().ravel()
    c_t = row_p.nnz
    gain = overlap / c_t if c_t else np.zeros(ds.num_users)
    score = w * sim + (1.0 - w) * gain
    score[target] = -np.inf
    return score


def pad_rating(ds: RatingDataset) -> int:
    return ds.scale.quantized_max // 2


def _ranked_raters(ds: RatingDataset, scores: np.ndarray):
    """All (item, rater) pairs ordered by item asc, score desc, rater asc."""
    order = np.lexsort((ds.users, -scores[ds.users], ds.items))
    return ds.items[order], ds.users[order], ds.ratings[order]


def build_rm(ds: RatingDataset, target: int, k: int, w: float = 0.5,
             policy: VulnerabilityPolicy | None = None,
             generation: int = 0, scores: np.ndarray | None = None) -> RecommendationModel:
    """One RecommendationModel for `target`; entry count is exactly
    m - c_target, each entry exactly k wide."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not (0 <= target < ds.num_users):
        raise IngestError(f"unknown target user {target}")
    if ds.num_users < 2:
        raise ValueError("need at least one user besides the target")
    policy = policy or VulnerabilityPolicy()
    if scores is None:
        scores = combined_scores(ds, target, w)

    unrated = np.setdiff1d(np.arange(ds.num_items, dtype=np.int32),
                           ds.user_items(target), assume_unique=False)
    items_s, raters_s, ratings_s = _ranked_raters(ds, scores)
    starts = np.searchsorted(items_s, unrated, side="left")
    ends = np.searchsorted(items_s, unrated, side="right")

    n = len(unrated)
    pad_id = ds.num_users
    neigh = np.full((n, k), pad_id, dtype=np.int32)
    nrat = np.full((n, k), pad_rating(ds), dtype=np.uint16)

    if policy.unrestricted:
        for j in range(k):
            idx = starts + j
            ok = idx < ends
            neigh[ok, j] = raters_s[idx[ok]]
            nrat[ok, j] = ratings_s[idx[ok]]
    else:
        remaining = policy.cap_array(ds.num_users)
        for row, (s, e) in enumerate(zip(starts, ends)):
            taken = 0
            for pos in range(s, e):
                if taken == k:
                    break
                rater = raters_s[pos]
                if remaining[rater] <= 0:
                    continue
                remaining[rater] -= 1
                neigh[row, taken] = rater
                nrat[row, taken] = ratings_s[pos]
                taken += 1

    return RecommendationModel(target, k, unrated.astype(np.int32),
                               neigh, nrat, w, generation)


def build_all_rms(ds: RatingDataset, k: int, w: float = 0.5,
                  policy: VulnerabilityPolicy | None = None) -> list[RecommendationModel]:
    scores = score_matrix(ds, w)
    return [build_rm(ds, u, k, w, policy, scores=scores[u])
            for u in range(ds.num_users)]


@dataclass
class ExposureReport:
    exposure: np.ndarray            # distinct exposed ratings per user
    baseline_exposure: np.ndarray
    reduction: float                # 1 - mean(exposure)/mean(baseline)


def _count_exposed(rms, ds: RatingDataset) -> np.ndarray:
    pad_id = ds.num_users
    pairs = []
    for rm in rms:
        items = np.repeat(rm.item_indices.astype(np.int64), rm.k)
        neigh = rm.neighbor_ids.astype(np.int64).ravel()
        ok = neigh != pad_id
        pairs.append(neigh[ok] * ds.num_items + items[ok])
    if not pairs:
        return np.zeros(ds.num_users, np.int64)
    uniq = np.unique(np.concatenate(pairs))
    return np.bincount(uniq // ds.num_items, minlength=ds.num_users)


def exposure_report(rms: list[RecommendationModel], ds: RatingDataset,
                    baseline_k: int) -> ExposureReport:
    """Distinct exposed (user, item) ratings vs a plain similarity-only
    top-k baseline (w = 1, no caps)."""
    for rm in rms:
        if rm.generation != rms[0].generation:
            raise ValueError("mixed RM generations in exposure report")
    exposure = _count_exposed(rms, ds)
    baseline = build_all_rms(ds, baseline_k, w=1.0)
    base = _count_exposed(baseline, ds)
    mb = base.mean() if base.size else 0.0
    reduction = 1.0 - (exposure.mean() / mb) if mb > 0 else 0.0
    return ExposureReport(exposure, base, reduction)


def apply_feedback(ds: RatingDataset, rm: RecommendationModel, target: int,
                   item: int, rating_q: int,
                   policy: VulnerabilityPolicy | None = None):
    """Insert/overwrite the rating, rebuild the target's RM, bump its
    generation. Other users' RMs are untouched by construction."""
    if rm.target_user != target:
        raise ValueError("feedback target does not own this RM")
    if not (0 <= item < ds.num_items):
        raise IngestError(f"unknown item index {item}")
    new_ds = ds.with_rating(target, item, rating_q)
    new_rm = build_rm(new_ds, target, rm.k, rm.w, policy,
                      generation=rm.generation + 1)
    return new_ds, new_rm


# -- PRSM on-disk format --------------------------------------------------

def dump_rm(rm: RecommendationModel) -> bytes:
    head = PRSM_MAGIC + struct.pack("<HIHI", PRSM_VERSION, rm.target_user,
                                    rm.k, rm.num_entries)
    body = bytearray()
    for row in range(rm.num_entries):
        body += struct.pack("<I", int(rm.item_indices[row]))
        for j in range(rm.k):
            body += struct.pack("<IH", int(rm.neighbor_ids[row, j]),
                                int(rm.neighbor_ratings[row, j]))
    return head + bytes(body)


def load_rm(data: bytes, w: float = 0.5) -> RecommendationModel:
    if data[:4] != PRSM_MAGIC:
        raise ValueError("not a PRSM blob")
    version, target, k, count = struct.unpack_from("<HIHI", data, 4)
    if version != PRSM_VERSION:
        raise ValueError(f"unsupported PRSM version {version}")
    off = 4 + struct.calcsize("<HIHI")
    items = np.empty(count, np.int32)
    neigh = np.empty((count, k), np.int32)
    nrat = np.empty((count, k), np.uint16)
    for row in range(count):
        items[row] = struct.unpack_from("<I", data, off)[0]; off += 4
        for j in range(k):
            n, r = struct.unpack_from("<IH", data, off); off += 6
            neigh[row, j] = n; nrat[row, j] = r
    if off != len(data):
        raise ValueError("trailing bytes in PRSM blob")
    return RecommendationModel(target, k, items, neigh, nrat, w)

"""Rating dataset loading, quantization, statistics and perturbation.

Datasets are delimiter-separated text with columns user, item, rating and
an optional (ignored) timestamp. Ratings are quantized onto the declared
scale grid as unsigned integers; a whole file is rejected on the first
malformed line, off-grid rating or duplicate (user, item) pair so that
ingestion is deterministic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.sparse import csr_matrix

from .rng import Rng, root_seed


class IngestError(ValueError):
    pass


@dataclass(frozen=True)
class RatingScale:
    lo: float
    hi: float
    step: float

    def __post_init__(self):
        if self.step <= 0 or self.hi <= self.lo:
            raise IngestError(f"bad scale ({self.lo}, {self.hi}, {self.step})")
        span = (self.hi - self.lo) / self.step
        if abs(span - round(span)) > 1e-9:
            raise IngestError("scale span is not a multiple of step")

    @property
    def quantized_max(self) -> int:
        return round((self.hi - self.lo) / self.step)

    def quantize(self, r: float) -> int:
        q = (r - self.lo) / self.step
        qi = round(q)
        if abs(q - qi) > 1e-9 or qi < 0 or qi > self.quantized_max:
            raise IngestError(f"rating {r} off the grid ({self.lo}:{self.hi}:{self.step})")
        return qi

    def dequantize(self, q) -> np.ndarray:
        return self.lo + np.asarray(q, dtype=np.float64) * self.step

    @staticmethod
    def parse(text: str) -> "RatingScale":
        parts = text.split(":")
        if len(parts) != 3:
            raise IngestError(f"scale must be min:max:step, got {text!r}")
        return RatingScale(float(parts[0]), float(parts[1]), float(parts[2]))


MOVIELENS_SCALE = RatingScale(1.0, 5.0, 0.5)
FIVE_LEVEL_SCALE = RatingScale(0.0, 4.0, 1.0)


@dataclass
class RatingDataset:
    """Sparse user x item matrix of quantized ratings.

    Rows are kept sorted by (user, item); dense indices are assigned in
    first-appearance order and recorded in the id maps.
    """

    scale: RatingScale
    user_ids: list[str]
    item_ids: list[str]
    users: np.ndarray          # int32, parallel arrays sorted by (user, item)
    items: np.ndarray          # int32
    ratings: np.ndarray        # uint16 quantized

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)

    @property
    def nnz(self) -> int:
        return len(self.ratings)

    @cached_property
    def user_index(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.user_ids)}

    @cached_property
    def item_index(self) -> dict[str, int]:
        return {m: i for i, m in enumerate(self.item_ids)}

    @cached_property
    def csr(self) -> csr_matrix:
        """Quantized ratings; stored values are rating+1 so that a true
        rating of 0 survives sparse storage."""
        return csr_matrix((self.ratings.astype(np.int32) + 1,
                           (self.users, self.items)),
                          shape=(self.num_users, self.num_items))

    def user_items(self, u: int) -> np.ndarray:
        row = self.csr[u]
        return row.indices

    def user_ratings(self, u: int) -> tuple[np.ndarray, np.ndarray]:
        row = self.csr[u]
        return row.indices, (row.data - 1).astype(np.uint16)

    def with_rating(self, u: int, i: int, q: int) -> "RatingDataset":
        """New dataset with (u, i) inserted or overwritten."""
        if not (0 <= u < self.num_users and 0 <= i < self.num_items):
            raise IngestError("unknown user or item index")
        if not (0 <= q <= self.scale.quantized_max):
            raise IngestError(f"rating {q} outside quantized range")
        mask = (self.users == u) & (self.items == i)
        if mask.any():
            ratings = self.ratings.copy()
            ratings[mask] = q
            return replace(self, users=self.users, items=self.items, ratings=ratings)
        users = np.append(self.users, np.int32(u))
        items = np.append(self.items, np.int32(i))
        ratings = np.append(self.ratings, np.uint16(q))
        order = np.lexsort((items, users))
        return replace(self, users=users[order], items=items[order],
                       ratings=ratings[order])

    def canonical(self) -> "RatingDataset":
        """Renumber users/items by sorted external id; two loads of the
        same records in any line order canonicalize identically."""
        uorder = sorted(range(self.num_users), key=lambda i: self.user_ids[i])
        iorder = sorted(range(self.num_items), key=lambda i: self.item_ids[i])
        umap = np.empty(self.num_users, np.int32)
        umap[uorder] = np.arange(self.num_users, dtype=np.int32)
        imap = np.empty(self.num_items, np.int32)
        imap[iorder] = np.arange(self.num_items, dtype=np.int32)
        users, items = umap[self.users], imap[self.items]
        order = np.lexsort((items, users))
        return RatingDataset(self.scale,
                             [self.user_ids[i] for i in uorder],
                             [self.item_ids[i] for i in iorder],
                             users[order], items[order], self.ratings[order])

    def equals(self, other: "RatingDataset") -> bool:
        return (self.scale == other.scale
                and self.user_ids == other.user_ids
                and self.item_ids == other.item_ids
                and np.array_equal(self.users, other.users)
                and np.array_equal(self.items, other.items)
                and np.array_equal(self.ratings, other.ratings))


def from_records(records, scale: RatingScale) -> RatingDataset:
    """records: iterable of (user_id, item_id, quantized_rating)."""
    user_ids: list[str] = []
    item_ids: list[str] = []
    uidx: dict[str, int] = {}
    iidx: dict[str, int] = {}
    us, its, rs = [], [], []
    seen = set()
    for user, item, q in records:
        user, item = str(user), str(item)
        if user not in uidx:
            uidx[user] = len(user_ids)
            user_ids.append(user)
        if item not in iidx:
            iidx[item] = len(item_ids)
            item_ids.append(item)
        key = (uidx[user], iidx[item])
        if key in seen:
            raise IngestError(f"duplicate rating for user {user!r} item {item!r}")
        seen.add(key)
        us.append(key[0]); its.append(key[1]); rs.append(q)
    users = np.asarray(us, np.int32)
    items = np.asarray(its, np.int32)
    ratings = np.asarray(rs, np.uint16)
    order = np.lexsort((items, users))
    return RatingDataset(scale, user_ids, item_ids,
                         users[order], items[order], ratings[order])


def load_ratings(path, delimiter: str = "\t",
                 scale: RatingScale = MOVIELENS_SCALE) -> RatingDataset:
    """Parse a ratings file; any bad line rejects the whole file."""
    def parse_lines():
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n").rstrip("\r")
                if not line:
                    continue
                parts = line.split(delimiter)
                if len(parts) not in (3, 4):
                    raise IngestError(f"{path}:{lineno}: expected 3 or 4 fields, "
                                      f"got {len(parts)}")
                user, item, rating = parts[0], parts[1], parts[2]
                try:
                    r = float(rating)
                except ValueError:
                    raise IngestError(f"{path}:{lineno}: bad rating {rating!r}") from None
                try:
                    q = scale.quantize(r)
                except IngestError as e:
                    raise IngestError(f"{path}:{lineno}: {e}") from None
                yield user, item, q

    try:
        return from_records(parse_lines(), scale)
    except IngestError:
        raise


@dataclass(frozen=True)
class PerturbationPolicy:
    """Zero-centered Laplace perturbation over a small ordered rating
    domain; the unrated value sits at the median so similarity code can
    use it as the neutral sentinel (it is never stored in the dataset)."""

    b: float = 0.7
    domain_lo: int = 0
    domain_hi: int = 4
    mu: float = 0.0

    def __post_init__(self):
        if self.b <= 0:
            raise IngestError("Laplace scale b must be > 0")
        if self.mu != 0.0:
            raise IngestError("location is fixed at 0")
        if self.domain_hi <= self.domain_lo:
            raise IngestError("empty perturbation domain")

    @property
    def unrated(self) -> int:
        return (self.domain_lo + self.domain_hi) // 2


def to_perturbation_domain(ds: RatingDataset, policy: PerturbationPolicy) -> RatingDataset:
    """Remap a dataset onto the 5-level domain.

    Half-step scales quantize to 0..2*(levels-1); integer half-up halving
    (q+1)//2 lands them on 0..levels-1. Datasets already on the domain
    pass through unchanged.
    """
    levels = policy.domain_hi - policy.domain_lo
    if ds.scale.quantized_max == levels:
        return ds
    if ds.scale.quantized_max == 2 * levels:
        ratings = ((ds.ratings.astype(np.int32) + 1) // 2).astype(np.uint16)
        return replace(ds, scale=RatingScale(policy.domain_lo, policy.domain_hi, 1.0),
                       ratings=ratings)
    raise IngestError(f"cannot remap quantized_max={ds.scale.quantized_max} "
                      f"onto a {levels + 1}-level domain")


def perturb_ratings(ds: RatingDataset, policy: PerturbationPolicy,
                    seed: int | bytes) -> RatingDataset:
    """Add rounded, clamped Laplace noise to every present rating.

    Unrated cells stay absent. Deterministic for a fixed seed.
    """
    if ds.scale.quantized_max != policy.domain_hi - policy.domain_lo:
        raise IngestError("dataset is not on the perturbation domain; "
                          "remap with to_perturbation_domain first")
    rng = Rng(root_seed(seed)).child("perturb")
    noise = rng.laplace(policy.b, ds.nnz)
    vals = np.rint(ds.ratings.astype(np.float64) + noise)
    vals = np.clip(vals, policy.domain_lo, policy.domain_hi).astype(np.uint16)
    return replace(ds, ratings=vals)


@dataclass
class DatasetStats:
    num_users: int
    num_items: int
    num_ratings: int
    density: float
    per_user_counts: np.ndarray


def dataset_stats(ds: RatingDataset) -> DatasetStats:
    counts = np.bincount(ds.users, minlength=ds.num_users).astype(np.int64) \
        if ds.num_users else np.zeros(0, np.int64)
    cells = ds.num_users * ds.num_items
    return DatasetStats(ds.num_users, ds.num_items, ds.nnz,
                        ds.nnz / cells if cells else 0.0, counts)

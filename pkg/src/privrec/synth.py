"""Synthetic rating data shaped like the public MovieLens-100K file.

CI runs need a 943x1682 dataset with 100k ratings and realistic skew
without downloading anything: long-tail item popularity, lognormal user
activity and high-leaning ratings on the 1..5 half-star grid. Output is
deterministic for a fixed seed, either as a RatingDataset or as a
delimiter-separated file for the ingest path.
"""

from __future__ import annotations

import numpy as np

from .ingest import RatingDataset, RatingScale, from_records
from .rng import Rng, root_seed

TWIN_SCALE = RatingScale(1.0, 5.0, 0.5)


def synth_dataset(num_users: int = 943, num_items: int = 1682,
                  num_ratings: int = 100_000, seed: int | bytes = 1,
                  scale: RatingScale = TWIN_SCALE,
                  quality_mean: float = 0.62, quality_sd: float = 0.22,
                  bias_sd: float = 0.05, noise_sd: float = 0.07) -> RatingDataset:
    """The default arguments generate the canonical twin used by the
    benchmarks and acceptance suite."""
    rng = Rng(root_seed(seed)).child("synth", num_users, num_items, num_ratings)
    gen = rng.generator

    # item popularity: zipf-ish tail, shuffled so item index carries no signal
    pop = 1.0 / np.power(np.arange(1, num_items + 1), 0.75)
    gen.shuffle(pop)
    pop /= pop.sum()

    # user activity: lognormal with a floor, scaled to hit num_ratings
    act = gen.lognormal(0.0, 1.0, size=num_users)
    act = act / act.sum() * num_ratings
    counts = np.maximum(act.astype(np.int64), 20)
    counts = np.minimum(counts, num_items)
    # nudge totals toward num_ratings
    while counts.sum() < num_ratings:
        u = gen.integers(0, num_users)
        if counts[u] < num_items:
            counts[u] += 1
    while counts.sum() > num_ratings:
        u = gen.integers(0, num_users)
        if counts[u] > 20:
            counts[u] -= 1

    qmax = scale.quantized_max
    # latent item quality dominates (ratings of one item correlate, as in
    # real rating data); users add a small bias plus idiosyncratic noise
    quality = np.clip(gen.normal(quality_mean * qmax, quality_sd * qmax,
                                 size=num_items), 0, qmax)
    bias = gen.normal(0.0, bias_sd * qmax, size=num_users)

    records = []
    for u in range(num_users):
        picked = gen.choice(num_items, size=counts[u], replace=False, p=pop)
        vals = quality[picked] + bias[u] + gen.normal(0.0, noise_sd * qmax,
                                                      size=counts[u])
        qs = np.clip(np.rint(vals), 0, qmax).astype(int)
        for i, q in zip(picked, qs):
            records.append((f"u{u + 1}", f"i{i + 1}", int(q)))
    return from_records(records, scale)


def write_ratings_file(ds: RatingDataset, path, delimiter: str = "\t") -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i, q in zip(ds.users, ds.items, ds.ratings):
            r = ds.scale.dequantize(int(q))
            text = f"{float(r):g}"
            fh.write(f"{ds.user_ids[u]}{delimiter}{ds.item_ids[i]}{delimiter}{text}\n")

"""Temporal subsampling of player histories into (features, label) pairs.

Each sample truncates a player's series at a cutoff day t drawn from their
login days and labels it with the item set of their next purchase day after
t. Drawing several cutoffs per player enlarges the training set without
storing every possible sample.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .data_model import ItemCatalog, PlayerTimeSeries, next_purchase_after
from .features import FeatureConfig, FeatureVector, vectorize


@dataclass(frozen=True)
class SamplerConfig:
    max_samples_per_player: int = 4
    seed: int = 0
    cutoff_pool: str = "login_days"

    def __post_init__(self):
        if self.max_samples_per_player < 1:
            raise ValueError("max_samples_per_player must be >= 1")
        if self.cutoff_pool != "login_days":
            raise ValueError(f"unknown cutoff pool: {self.cutoff_pool!r}")


@dataclass(frozen=True)
class TrainingSample:
    player_id: str
    cutoff: int
    features: FeatureVector
    label: np.ndarray  # (M,) binary

    def __post_init__(self):
        if self.label.sum() < 1:
            raise ValueError("training label must mark at least one item")


def player_rng(seed: int, player_id: str, *extra: int) -> np.random.Generator:
    """Deterministic per-player RNG stream, independent of iteration order."""
    digest = hashlib.blake2b(player_id.encode(), digest_size=8).digest()
    return np.random.default_rng(
        np.random.SeedSequence([seed, int.from_bytes(digest, "big"), *extra])
    )


def eligible_cutoffs(series: PlayerTimeSeries) -> np.ndarray:
    """Login days t for which a purchase exists strictly after t."""
    pdays = series.purchase_days()
    if len(pdays) == 0:
        return np.zeros(0, dtype=np.int64)
    last_purchase = pdays[-1]
    days = series.days
    return days[days < last_purchase]


def draw_samples(
    series: PlayerTimeSeries,
    config: SamplerConfig,
    fconfig: FeatureConfig,
    rng: np.random.Generator,
    catalog: ItemCatalog | None = None,
    feature_cache: dict | None = None,
) -> list[TrainingSample]:
    """Draw up to ``max_samples_per_player`` samples with distinct cutoffs.

    Cutoffs are drawn uniformly without replacement from the eligible pool.
    ``feature_cache`` maps (player_id, cutoff) -> FeatureVector and may be
    shared across draws; features depend only on the truncated history.
    """
    pool = eligible_cutoffs(series)
    if len(pool) == 0:
        return []
    n = min(config.max_samples_per_player, len(pool))
    cutoffs = rng.choice(pool, size=n, replace=False)
    m = len(catalog.items) if catalog is not None else None
    samples = []
    for t in sorted(int(c) for c in cutoffs):
        key = (series.player_id, t)
        if feature_cache is not None and key in feature_cache:
            features = feature_cache[key]
        else:
            features = vectorize(series, t, fconfig, catalog)
            if feature_cache is not None:
                feature_cache[key] = features
        day, items = next_purchase_after(series, t)
        label = np.zeros(m if m is not None else max(items) + 1, dtype=np.float64)
        label[list(items)] = 1.0
        samples.append(
            TrainingSample(player_id=series.player_id, cutoff=t, features=features, label=label)
        )
    return samples


def draw_sample_matrix(
    players: list[PlayerTimeSeries],
    config: SamplerConfig,
    fconfig: FeatureConfig,
    catalog: ItemCatalog,
    base_seed: int,
    feature_cache: dict | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Stack samples for a batch of players into (X, Y) matrices.

    Per-player RNG streams derived from (base_seed, player_id) make the
    result independent of iteration order and thread count.
    """
    xs, ys = [], []
    for series in players:
        rng = player_rng(base_seed, series.player_id)
        for sample in draw_samples(series, config, fconfig, rng, catalog, feature_cache):
            xs.append(sample.features.values)
            ys.append(sample.label)
    if not xs:
        return np.zeros((0, fconfig.length)), np.zeros((0, catalog.size))
    return np.array(xs), np.array(ys)

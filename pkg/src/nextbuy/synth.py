"""Seeded synthetic telemetry with planted archetype -> item structure.

Each player belongs to one archetype that fixes their activity level, login
and purchase rates, and item preference. A purchase ignores the archetype
preference with probability ``noise`` and picks uniformly instead, which
gives a closed-form ceiling on achievable top-1 next-purchase accuracy:

    bayes_top1 = sum_a w_a * max_i [ (1 - noise) * pref_a[i] + noise / M ]

The generator exports that bound alongside the ground-truth assignments so
acceptance runs can score models against it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data_model import DailyRecord, ItemCatalog, PlayerTimeSeries
from .sampling import player_rng

ACTIVITY_CHANNELS = ("playtime", "level")


@dataclass(frozen=True)
class Archetype:
    name: str
    playtime_mean: float  # minutes per login day
    level_rate: float  # level gain per day
    login_prob: float
    purchase_prob: float  # per login day
    item_preferences: tuple[float, ...]  # distribution over the catalog

    def __post_init__(self):
        prefs = np.asarray(self.item_preferences)
        if prefs.min() < 0 or abs(prefs.sum() - 1.0) > 1e-9:
            raise ValueError(f"archetype {self.name!r}: preferences must be a distribution")
        if not (0 < self.login_prob <= 1 and 0 < self.purchase_prob <= 1):
            raise ValueError(f"archetype {self.name!r}: rates must be in (0, 1]")


@dataclass(frozen=True)
class SynthConfig:
    n_players: int = 2000
    n_items: int = 8
    archetypes: tuple[Archetype, ...] | None = None  # None -> default set
    noise: float = 0.0
    mean_lifetime: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.n_players < 1 or self.n_items < 1:
            raise ValueError("need at least one player and one item")
        if not 0.0 <= self.noise <= 1.0:
            raise ValueError("noise must be in [0, 1]")
        if self.mean_lifetime < 2:
            raise ValueError("mean_lifetime must be >= 2")


def default_catalog(n_items: int) -> ItemCatalog:
    return ItemCatalog(tuple(f"gacha_{i}" for i in range(n_items)))


def default_archetypes(n_items: int, n_archetypes: int | None = None) -> tuple[Archetype, ...]:
    """One archetype per item with a point-mass preference.

    Activity levels scale with the archetype index so the planted signal is
    also visible through the activity channels, not only purchase history.
    """
    if n_archetypes is None:
        n_archetypes = n_items
    archetypes = []
    for a in range(n_archetypes):
        prefs = np.zeros(n_items)
        prefs[a % n_items] = 1.0
        archetypes.append(
            Archetype(
                name=f"archetype_{a}",
                playtime_mean=20.0 + 15.0 * a,
                level_rate=1.0 + 0.5 * a,
                login_prob=0.85,
                purchase_prob=0.25,
                item_preferences=tuple(prefs),
            )
        )
    return tuple(archetypes)


def item_mixture(archetype: Archetype, noise: float, n_items: int) -> np.ndarray:
    prefs = np.asarray(archetype.item_preferences)
    return (1.0 - noise) * prefs + noise / n_items


def bayes_top1_accuracy(config: SynthConfig) -> float:
    """Best achievable top-1 next-purchase accuracy given perfect archetype
    knowledge; archetypes are assigned uniformly."""
    archetypes = config.archetypes or default_archetypes(config.n_items)
    best = [item_mixture(a, config.noise, config.n_items).max() for a in archetypes]
    return float(np.mean(best))


def popularity_top1_accuracy(config: SynthConfig) -> float:
    """Accuracy of always recommending the globally most purchased item."""
    archetypes = config.archetypes or default_archetypes(config.n_items)
    mixtures = np.array([item_mixture(a, config.noise, config.n_items) for a in archetypes])
    weights = np.ones(len(archetypes)) / len(archetypes)
    global_freq = weights @ mixtures
    return float(mixtures[:, int(np.argmax(global_freq))] @ weights)


def _generate_player(
    pid: str, archetype: Archetype, config: SynthConfig, rng: np.random.Generator
) -> PlayerTimeSeries:
    n_items = config.n_items
    lifetime = max(3, int(rng.poisson(config.mean_lifetime)))
    prices = 1.0 + np.arange(n_items)  # fixed per-item prices
    mixture = item_mixture(archetype, config.noise, n_items)
    records = []
    level = 0.0
    for day in range(lifetime):
        logged_in = day == 0 or rng.random() < archetype.login_prob
        level += archetype.level_rate * rng.uniform(0.5, 1.5)
        if not logged_in:
            continue
        playtime = max(1.0, rng.normal(archetype.playtime_mean, 5.0))
        purchases = np.zeros(n_items, dtype=np.int64)
        sales = np.zeros(n_items)
        if rng.random() < archetype.purchase_prob:
            item = int(rng.choice(n_items, p=mixture))
            purchases[item] = 1
            sales[item] = prices[item]
        records.append(
            DailyRecord(
                day=day,
                activity={"playtime": round(playtime, 3), "level": round(level, 3)},
                purchases=purchases,
                sales=sales,
            )
        )
    return PlayerTimeSeries(pid, tuple(records))


def generate(config: SynthConfig) -> tuple[list[PlayerTimeSeries], dict]:
    """Generate players plus ground truth (assignments and accuracy bounds).

    Per-player RNG streams derived from (seed, player_id) make generation
    order-independent and parallel-safe.
    """
    archetypes = config.archetypes or default_archetypes(config.n_items)
    assign_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 100]))
    assignments = assign_rng.integers(0, len(archetypes), size=config.n_players)
    players = []
    truth_assign = {}
    for i in range(config.n_players):
        pid = f"player_{i:06d}"
        a = int(assignments[i])
        players.append(_generate_player(pid, archetypes[a], config, player_rng(config.seed, pid)))
        truth_assign[pid] = a
    ground_truth = {
        "schema_version": 1,
        "assignments": truth_assign,
        "archetypes": [
            {
                "name": a.name,
                "playtime_mean": a.playtime_mean,
                "level_rate": a.level_rate,
                "login_prob": a.login_prob,
                "purchase_prob": a.purchase_prob,
                "item_preferences": list(a.item_preferences),
            }
            for a in archetypes
        ],
        "noise": config.noise,
        "bayes_top1_accuracy": bayes_top1_accuracy(config),
        "popularity_top1_accuracy": popularity_top1_accuracy(config),
    }
    return players, ground_truth


def save_ground_truth(ground_truth: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(ground_truth, sort_keys=True))

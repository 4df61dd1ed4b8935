"""Top-k accuracy evaluation of next-purchase predictions.

Predictions are made from each player's history up to a cutoff day and
scored against their purchases in the following window, under three hit
measures crossed with top-1/2/3 prediction sets:

- on_next_purchase_day: predicted item bought on the next purchase day.
- next_purchase: predicted item among the very next purchase. At daily
  granularity simultaneous purchases cannot be ordered, so the "very next
  purchase" is the full item set of the next purchase day.
- within_window: predicted item bought anywhere in the window.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .data_model import PlayerTimeSeries
from .ert import ModelError
from .features import FeatureConfig, vectorize

MEASURES = ("on_next_purchase_day", "next_purchase", "within_window")


@dataclass(frozen=True)
class EvalConfig:
    cutoff: int
    window: int = 50
    top_ks: tuple[int, ...] = (1, 2, 3)
    # players with no purchase in the window: "exclude" drops them from all
    # measures (reported in excluded count); "miss" scores them as misses
    # for within_window only
    no_purchase_policy: str = "exclude"

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if not self.top_ks or any(k < 1 for k in self.top_ks):
            raise ValueError("top_ks must be positive")
        if self.no_purchase_policy not in ("exclude", "miss"):
            raise ValueError(f"unknown policy {self.no_purchase_policy!r}")


def top_k(probabilities: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest probabilities, ties broken by lower index."""
    m = len(probabilities)
    if not 1 <= k <= m:
        raise ValueError(f"k={k} out of range for {m} items")
    order = np.lexsort((np.arange(m), -np.asarray(probabilities, dtype=np.float64)))
    return [int(i) for i in order[:k]]


@dataclass
class PlayerScore:
    excluded: bool
    # hits[measure][k] -> bool; empty when excluded
    hits: dict[str, dict[int, bool]] = field(default_factory=dict)


def score_player(
    series: PlayerTimeSeries, prediction: np.ndarray, config: EvalConfig
) -> PlayerScore:
    """Hit booleans per measure × k for one player, or an exclusion."""
    t, w = config.cutoff, config.window
    in_window = [
        r for r in series.records if t < r.day <= t + w and r.purchases.sum() > 0
    ]
    if not in_window:
        if config.no_purchase_policy == "exclude":
            return PlayerScore(excluded=True)
        s_day: set[int] = set()
        s_win: set[int] = set()
    else:
        s_day = set(in_window[0].purchased_items())
        s_win = set()
        for r in in_window:
            s_win.update(r.purchased_items())
    s_next = s_day  # daily granularity: next purchase == next purchase day's set
    hits: dict[str, dict[int, bool]] = {m: {} for m in MEASURES}
    for k in config.top_ks:
        chosen = set(top_k(prediction, k))
        hits["on_next_purchase_day"][k] = bool(chosen & s_day)
        hits["next_purchase"][k] = bool(chosen & s_next)
        hits["within_window"][k] = bool(chosen & s_win)
    if not in_window:
        # "miss" policy scores within_window only
        hits["on_next_purchase_day"] = {}
        hits["next_purchase"] = {}
    return PlayerScore(excluded=False, hits=hits)


@dataclass
class EvaluationReport:
    accuracy: dict[str, dict[int, float]]
    evaluated: dict[str, int]
    excluded: int
    total: int
    top_ks: tuple[int, ...]

    def check_monotonicity(self) -> None:
        """Raise if the structural orderings are violated."""
        for measure in MEASURES:
            row = [self.accuracy[measure][k] for k in self.top_ks]
            if any(b < a for a, b in zip(row, row[1:])):
                raise AssertionError(f"accuracy not monotone in k for {measure}")
        for k in self.top_ks:
            a_next = self.accuracy["next_purchase"][k]
            a_day = self.accuracy["on_next_purchase_day"][k]
            a_win = self.accuracy["within_window"][k]
            if not (a_next <= a_day + 1e-12 and a_day <= a_win + 1e-12):
                raise AssertionError(f"measure ordering violated at k={k}")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "accuracy": {
                m: {str(k): self.accuracy[m][k] for k in self.top_ks} for m in MEASURES
            },
            "evaluated": self.evaluated,
            "excluded": self.excluded,
            "total": self.total,
            "top_ks": list(self.top_ks),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def to_text(self) -> str:
        headers = {1: "predictedMax", 2: "withinTop2", 3: "withinTop3"}
        cols = [headers.get(k, f"withinTop{k}") for k in self.top_ks]
        width = max(len(m) for m in MEASURES) + 2
        lines = ["".join([" " * width] + [f"{c:>14}" for c in cols])]
        for m in MEASURES:
            cells = [f"{self.accuracy[m][k] * 100:13.1f}%" for k in self.top_ks]
            lines.append(f"{m:<{width}}" + "".join(cells))
        lines.append(
            f"evaluated: {min(self.evaluated.values())}-{max(self.evaluated.values())} "
            f"players (per measure), excluded: {self.excluded}, total: {self.total}"
        )
        return "\n".join(lines)


def evaluate(
    model,
    players: list[PlayerTimeSeries],
    config: EvalConfig,
    fconfig: FeatureConfig,
    catalog=None,
    predictions: dict[str, np.ndarray] | None = None,
) -> EvaluationReport:
    """Score one prediction per player made at the global cutoff.

    ``model`` needs a ``predict(FeatureVector) -> (M,) array`` method; a
    precomputed ``predictions`` map (player_id -> probabilities) overrides
    it, which lets tests plug in oracle or baseline predictors.
    """
    hit_counts = {m: {k: 0 for k in config.top_ks} for m in MEASURES}
    eval_counts = {m: 0 for m in MEASURES}
    excluded = 0
    for series in players:
        if series.first_day > config.cutoff:
            excluded += 1  # no history at the cutoff; cannot predict
            continue
        if predictions is not None:
            prediction = predictions[series.player_id]
        else:
            prediction = model.predict(vectorize(series, config.cutoff, fconfig, catalog))
        score = score_player(series, prediction, config)
        if score.excluded:
            excluded += 1
            continue
        for measure in MEASURES:
            if not score.hits[measure]:
                continue
            eval_counts[measure] += 1
            for k in config.top_ks:
                hit_counts[measure][k] += int(score.hits[measure][k])
    if max(eval_counts.values(), default=0) == 0:
        raise ModelError("no players could be evaluated at this cutoff")
    accuracy = {
        m: {
            k: (hit_counts[m][k] / eval_counts[m]) if eval_counts[m] else 0.0
            for k in config.top_ks
        }
        for m in MEASURES
    }
    return EvaluationReport(
        accuracy=accuracy,
        evaluated=eval_counts,
        excluded=excluded,
        total=len(players),
        top_ks=config.top_ks,
    )

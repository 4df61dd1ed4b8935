"""Convert a player's time series into a fixed-length static feature vector.

For every temporal channel we compute five moments of the raw series
(mean, variance, skewness, excess kurtosis, maximum), the same five moments
of its per-day derivative, and the difference between the mean over the last
and first ``edge_window`` login days: 11 values per channel. A handful of
scalar lifetime descriptors are appended.

Population moments are used throughout (sample moments degenerate for
players with one or two records). Skewness and kurtosis are defined as 0
for constant or length<2 series so vectors never contain NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .data_model import ItemCatalog, PlayerTimeSeries, TelemetryError, truncate

PURCHASE_PREFIX = "purchases:"
SALES_PREFIX = "sales:"

MOMENT_NAMES = ("mean", "var", "skew", "kurt", "max")
VAR_FLOOR = 1e-140
SCALAR_NAMES = (
    "lifetime_days",
    "login_days",
    "purchase_days",
    "days_since_last_purchase",
    "cutoff_day",
)


@dataclass(frozen=True)
class FeatureConfig:
    """Fixed channel ordering and layout knobs for one run."""

    channels: tuple[str, ...]
    edge_window: int = 7
    include_scalars: bool = True

    def __post_init__(self):
        if not self.channels:
            raise ValueError("at least one channel required")
        if len(set(self.channels)) != len(self.channels):
            raise ValueError("duplicate channel names")
        if self.edge_window < 1:
            raise ValueError("edge_window must be >= 1")

    @property
    def length(self) -> int:
        n = 11 * len(self.channels)
        if self.include_scalars:
            n += len(SCALAR_NAMES)
        return n

    def layout(self) -> tuple[str, ...]:
        # memoized: every FeatureVector built from this config shares one tuple
        return _layout(self)


@lru_cache(maxsize=None)
def _layout(config: "FeatureConfig") -> tuple[str, ...]:
    names = []
    for ch in config.channels:
        names.extend(f"{ch}.{m}" for m in MOMENT_NAMES)
        names.extend(f"{ch}.d1.{m}" for m in MOMENT_NAMES)
        names.append(f"{ch}.edge_delta")
    if config.include_scalars:
        names.extend(SCALAR_NAMES)
    return tuple(names)


def default_feature_config(
    catalog: ItemCatalog,
    activity_channels: tuple[str, ...] = (),
    edge_window: int = 7,
) -> FeatureConfig:
    """Activity channels followed by per-item purchase counts and sales."""
    channels = (
        tuple(activity_channels)
        + tuple(f"{PURCHASE_PREFIX}{item}" for item in catalog.items)
        + tuple(f"{SALES_PREFIX}{item}" for item in catalog.items)
    )
    return FeatureConfig(channels=channels, edge_window=edge_window)


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple[str, ...]

    def __post_init__(self):
        if len(self.values) != len(self.layout):
            raise ValueError("values/layout length mismatch")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("feature vector contains non-finite entries")


def derive(values: np.ndarray, days: np.ndarray) -> np.ndarray:
    """Per-day rate of change across (possibly gapped) login days."""
    values = np.asarray(values, dtype=np.float64)
    days = np.asarray(days, dtype=np.float64)
    if len(values) < 2:
        return np.zeros(0)
    return np.diff(values) / np.diff(days)


def summarize(values: np.ndarray) -> tuple[float, float, float, float, float]:
    """(mean, variance, skewness, excess kurtosis, maximum), population form."""
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if n == 0:
        return (0.0, 0.0, 0.0, 0.0, 0.0)
    mean = float(values.mean())
    maximum = float(values.max())
    # max == min detects constant series exactly, independent of summation order
    if n < 2 or maximum == float(values.min()):
        return (mean, 0.0, 0.0, 0.0, maximum)
    centered = values - mean
    var = float(np.mean(centered**2))
    # below this spread sigma**4 loses precision or underflows; by convention
    # such series count as constant for the shape statistics
    if var < VAR_FLOOR:
        return (mean, var, 0.0, 0.0, maximum)
    sigma = var**0.5
    skew = float(np.mean(centered**3)) / sigma**3
    kurt = float(np.mean(centered**4)) / sigma**4 - 3.0
    return (mean, var, skew, kurt, maximum)


def channel_values(
    series: PlayerTimeSeries, channel: str, catalog: ItemCatalog | None = None
) -> np.ndarray:
    """The channel's value on each login day (missing activity keys -> 0)."""
    if channel.startswith(PURCHASE_PREFIX) or channel.startswith(SALES_PREFIX):
        if catalog is None:
            raise ValueError("catalog required for purchase/sales channels")
        if channel.startswith(PURCHASE_PREFIX):
            idx = catalog.index_of(channel[len(PURCHASE_PREFIX):])
            return np.array([r.purchases[idx] for r in series.records], dtype=np.float64)
        idx = catalog.index_of(channel[len(SALES_PREFIX):])
        return np.array([r.sales[idx] for r in series.records], dtype=np.float64)
    return np.array(
        [r.activity.get(channel, 0.0) for r in series.records], dtype=np.float64
    )


def first_last_distance(
    series: PlayerTimeSeries, channel: str, k: int, catalog: ItemCatalog | None = None
) -> float:
    """Mean over the last min(k, n) login days minus mean over the first."""
    if k < 1:
        raise ValueError("edge window must be >= 1")
    v = channel_values(series, channel, catalog)
    k = min(k, len(v))
    return float(v[-k:].mean() - v[:k].mean())


def _series_matrix(
    series: PlayerTimeSeries, config: FeatureConfig, catalog: ItemCatalog | None
) -> np.ndarray:
    """(n_records, n_channels) matrix, cached on the immutable series."""
    key = ("matrix", config.channels)
    if key not in series._cache:
        cols = [channel_values(series, ch, catalog) for ch in config.channels]
        series._cache[key] = np.column_stack(cols)
    return series._cache[key]


def _moments_columns(V: np.ndarray) -> np.ndarray:
    """Population moments per column; (5, n_channels). Empty input -> zeros."""
    c = V.shape[1]
    if V.shape[0] == 0:
        return np.zeros((5, c))
    mean = V.mean(axis=0)
    maximum = V.max(axis=0)
    out = np.zeros((5, c))
    out[0] = mean
    out[4] = maximum
    if V.shape[0] >= 2:
        centered = V - mean
        var = np.mean(centered**2, axis=0)
        nonconst = (maximum != V.min(axis=0)) & (var >= VAR_FLOOR)
        out[1] = np.where(maximum != V.min(axis=0), var, 0.0)
        sigma = np.sqrt(np.where(nonconst, var, 1.0))
        out[2] = np.where(nonconst, np.mean(centered**3, axis=0) / sigma**3, 0.0)
        out[3] = np.where(nonconst, np.mean(centered**4, axis=0) / sigma**4 - 3.0, 0.0)
    return out


def vectorize(
    series: PlayerTimeSeries,
    t: int,
    config: FeatureConfig,
    catalog: ItemCatalog | None = None,
) -> FeatureVector:
    """Featurize the player's history up to and including day t."""
    if t < series.first_day:
        raise TelemetryError(
            f"player {series.player_id!r}: cutoff {t} precedes first record"
        )
    V = _series_matrix(series, config, catalog)
    days = series.days
    n = int(np.searchsorted(days, t, side="right"))
    Vt = V[:n]
    days_t = days[:n]

    raw = _moments_columns(Vt)  # (5, C)
    if n >= 2:
        gaps = np.diff(days_t).astype(np.float64)
        deriv = np.diff(Vt, axis=0) / gaps[:, None]
    else:
        deriv = np.zeros((0, V.shape[1]))
    drv = _moments_columns(deriv)
    k = min(config.edge_window, n)
    edge = Vt[-k:].mean(axis=0) - Vt[:k].mean(axis=0)

    per_channel = np.vstack([raw, drv, edge[None, :]])  # (11, C)
    values = per_channel.T.reshape(-1)

    if config.include_scalars:
        pdays = series.purchase_days()
        pdays_t = pdays[pdays <= t]
        lifetime = float(t - series.first_day)
        if len(pdays_t):
            since_last = float(t - pdays_t[-1])
        else:
            since_last = lifetime + 1.0  # sentinel: no purchase yet
        scalars = np.array([lifetime, float(n), float(len(pdays_t)), since_last, float(t)])
        values = np.concatenate([values, scalars])

    return FeatureVector(values=values, layout=config.layout())

"""Core telemetry types: item catalog, daily records, per-player time series.

All types are immutable after construction and safe to share across threads.
Days are player-relative integer indices (day 0 = the player's first record).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


class TelemetryError(ValueError):
    """Raised on malformed or inconsistent telemetry input."""


@dataclass(frozen=True)
class ItemCatalog:
    """Ordered list of purchasable item identifiers.

    The position of an item in ``items`` is the coordinate used by every
    label and probability vector in the pipeline.
    """

    items: tuple[str, ...]

    def __post_init__(self):
        if not self.items:
            raise TelemetryError("catalog must contain at least one item")
        if len(set(self.items)) != len(self.items):
            raise TelemetryError("catalog items must be unique")

    @property
    def size(self) -> int:
        return len(self.items)

    def index_of(self, item_id: str) -> int:
        try:
            return self.items.index(item_id)
        except ValueError:
            raise TelemetryError(f"unknown item id: {item_id!r}") from None

    @classmethod
    def load(cls, path: str | Path) -> "ItemCatalog":
        lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
        return cls(tuple(ln for ln in lines if ln))

    def save(self, path: str | Path) -> None:
        Path(path).write_text("".join(f"{item}\n" for item in self.items))


@dataclass(frozen=True)
class DailyRecord:
    """One player-day: activity channel values plus per-item purchases/sales."""

    day: int
    activity: dict[str, float]
    purchases: np.ndarray  # (M,) int, units bought per item
    sales: np.ndarray  # (M,) float, currency spent per item

    def __post_init__(self):
        if self.day < 0:
            raise TelemetryError(f"negative day index: {self.day}")
        if np.any(self.purchases < 0) or np.any(self.sales < 0):
            raise TelemetryError(f"negative purchase/sales count on day {self.day}")
        for name, value in self.activity.items():
            if not np.isfinite(value):
                raise TelemetryError(f"non-finite activity {name!r} on day {self.day}")

    def purchased_items(self) -> tuple[int, ...]:
        return tuple(int(i) for i in np.flatnonzero(self.purchases > 0))


@dataclass(frozen=True, eq=False)
class PlayerTimeSeries:
    """One player's records, sorted strictly ascending by day.

    Days with no record are gaps (the player did not log in), never
    zero-filled.
    """

    player_id: str
    records: tuple[DailyRecord, ...]
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.records:
            raise TelemetryError(f"player {self.player_id!r} has no records")
        days = [r.day for r in self.records]
        if any(b <= a for a, b in zip(days, days[1:])):
            raise TelemetryError(
                f"player {self.player_id!r}: records not strictly ascending by day"
            )

    @property
    def days(self) -> np.ndarray:
        if "days" not in self._cache:
            self._cache["days"] = np.array([r.day for r in self.records], dtype=np.int64)
        return self._cache["days"]

    @property
    def first_day(self) -> int:
        return self.records[0].day

    @property
    def last_day(self) -> int:
        return self.records[-1].day

    def purchase_days(self) -> np.ndarray:
        """Sorted days on which the player bought at least one item."""
        if "purchase_days" not in self._cache:
            self._cache["purchase_days"] = np.array(
                [r.day for r in self.records if r.purchases.sum() > 0], dtype=np.int64
            )
        return self._cache["purchase_days"]

    def __eq__(self, other):
        if not isinstance(other, PlayerTimeSeries):
            return NotImplemented
        if self.player_id != other.player_id or len(self.records) != len(other.records):
            return False
        for a, b in zip(self.records, other.records):
            if (
                a.day != b.day
                or a.activity != b.activity
                or not np.array_equal(a.purchases, b.purchases)
                or not np.array_equal(a.sales, b.sales)
            ):
                return False
        return True


def truncate(series: PlayerTimeSeries, t: int) -> PlayerTimeSeries:
    """Restrict a series to records with day <= t."""
    if t < series.first_day:
        raise TelemetryError(
            f"player {series.player_id!r}: cutoff {t} precedes first record "
            f"day {series.first_day}"
        )
    if t >= series.last_day:
        return series
    kept = tuple(r for r in series.records if r.day <= t)
    return PlayerTimeSeries(series.player_id, kept)


def next_purchase_after(
    series: PlayerTimeSeries, t: int
) -> tuple[int, frozenset[int]] | None:
    """Earliest purchase day strictly after t and the items bought that day."""
    for record in series.records:
        if record.day > t and record.purchases.sum() > 0:
            return record.day, frozenset(record.purchased_items())
    return None


def _record_from_row(row: dict, catalog: ItemCatalog, lineno: int) -> tuple[str, DailyRecord]:
    try:
        player_id = row["player_id"]
        day = row["day"]
    except KeyError as exc:
        raise TelemetryError(f"line {lineno}: missing field {exc}") from None
    if not isinstance(player_id, str) or not isinstance(day, int):
        raise TelemetryError(f"line {lineno}: player_id must be str and day an int")
    purchases = np.zeros(catalog.size, dtype=np.int64)
    sales = np.zeros(catalog.size, dtype=np.float64)
    for item_id, count in row.get("purchases", {}).items():
        if item_id not in catalog.items:
            raise TelemetryError(f"line {lineno}: unknown item id {item_id!r}")
        purchases[catalog.index_of(item_id)] = count
    for item_id, amount in row.get("sales", {}).items():
        if item_id not in catalog.items:
            raise TelemetryError(f"line {lineno}: unknown item id {item_id!r}")
        sales[catalog.index_of(item_id)] = amount
    activity = {str(k): float(v) for k, v in row.get("activity", {}).items()}
    try:
        record = DailyRecord(day=day, activity=activity, purchases=purchases, sales=sales)
    except TelemetryError as exc:
        raise TelemetryError(f"line {lineno}: {exc}") from None
    return player_id, record


def ingest_logs(path: str | Path, catalog: ItemCatalog) -> list[PlayerTimeSeries]:
    """Read JSONL telemetry (one object per player-day) into sorted series.

    Rows may appear in any order; the output is one series per distinct
    player, records sorted ascending by day, players ordered by first
    appearance in the file.
    """
    per_player: dict[str, dict[int, DailyRecord]] = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise TelemetryError(f"line {lineno}: invalid JSON ({exc.msg})") from None
            player_id, record = _record_from_row(row, catalog, lineno)
            days = per_player.setdefault(player_id, {})
            if record.day in days:
                raise TelemetryError(
                    f"line {lineno}: duplicate day {record.day} for player {player_id!r}"
                )
            days[record.day] = record
    return [
        PlayerTimeSeries(pid, tuple(days[d] for d in sorted(days)))
        for pid, days in per_player.items()
    ]


def write_logs(
    series_list: list[PlayerTimeSeries], path: str | Path, catalog: ItemCatalog
) -> None:
    """Serialize series to the JSONL schema read by :func:`ingest_logs`."""
    with open(path, "w") as fh:
        for series in series_list:
            for record in series.records:
                row = {
                    "player_id": series.player_id,
                    "day": int(record.day),
                    "activity": {k: float(v) for k, v in record.activity.items()},
                    "purchases": {
                        catalog.items[i]: int(record.purchases[i])
                        for i in np.flatnonzero(record.purchases > 0)
                    },
                    "sales": {
                        catalog.items[i]: float(record.sales[i])
                        for i in np.flatnonzero(record.sales > 0)
                    },
                }
                fh.write(json.dumps(row, sort_keys=True) + "\n")

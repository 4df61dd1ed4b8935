import numpy as np
import pytest

from nextbuy.data_model import DailyRecord, ItemCatalog, PlayerTimeSeries


@pytest.fixture
def catalog():
    return ItemCatalog(tuple(f"gacha_{i}" for i in range(4)))


def make_record(day, activity=None, buys=(), m=4):
    purchases = np.zeros(m, dtype=np.int64)
    sales = np.zeros(m)
    for item in buys:
        purchases[item] += 1
        sales[item] += 1.0 + item
    return DailyRecord(
        day=day, activity=dict(activity or {}), purchases=purchases, sales=sales
    )


def make_series(pid, specs, m=4):
    """specs: list of (day, activity dict, bought item indices)."""
    return PlayerTimeSeries(
        pid, tuple(make_record(day, act, buys, m) for day, act, buys in specs)
    )


def random_series(rng, pid="p", m=4, max_days=40):
    """Random but valid series for oracle cross-checks."""
    n_days = int(rng.integers(1, max_days))
    days = np.sort(rng.choice(np.arange(max_days + 10), size=n_days, replace=False))
    specs = []
    for day in days:
        act = {
            "playtime": float(np.round(rng.uniform(0, 100), 3)),
            "level": float(np.round(rng.uniform(0, 50), 3)),
        }
        buys = tuple(
            int(i) for i in np.flatnonzero(rng.random(m) < 0.2)
        )
        specs.append((int(day), act, buys))
    return make_series(pid, specs, m)

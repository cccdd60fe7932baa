import random

import pytest

from rtdap.model import Resolution


def dedupe_last(records):
    """Last record wins per (tag, exact ms) — mirrors raw-table semantics."""
    seen = {}
    for rec in records:
        seen[(rec[0], rec[1])] = rec
    return list(seen.values())


def brute_force_cells(records, res: Resolution):
    """Independent fold oracle: records are (tag_id, time_ms, value) in
    arrival order; returns {(tag_id, bucket): [min, max, close, close_ts,
    count]}."""
    width = res.value
    cells = {}
    for tag, t, v in records:
        bucket = t - t % width
        key = (tag, bucket)
        cell = cells.get(key)
        if cell is None:
            cells[key] = [v, v, v, t, 1]
        else:
            cell[0] = min(cell[0], v)
            cell[1] = max(cell[1], v)
            if t >= cell[3]:
                cell[2] = v
                cell[3] = t
            cell[4] += 1
    return cells


def random_tag(rng: random.Random) -> str:
    zone = "".join(rng.choice("ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789-") for _ in range(rng.randint(1, 12)))
    depth = rng.randint(1, 4)
    segs = [
        "".join(rng.choice("ABCDEF0123456789.") for _ in range(rng.randint(1, 10)))
        for _ in range(depth)
    ]
    return f"{zone}::{'/'.join(segs)}"


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)

"""Builds the cached-reply fixture for the Qwen2.5-7B temperature grid.

Every dev item has five human ratings and five replies per temperature. The
replies are chosen so that the mean Wasserstein distance at each temperature
equals the target grid values exactly: with five ratings on both sides an
item's distance is an integer over 5, so a subset-sum search over items finds
a reply set hitting ``1000 * W1`` exactly.

Run ``python3 tests/grid_fixture.py`` to regenerate ``data/grid_qwen7b.jsonl``.
"""

import itertools
import json
import random
from pathlib import Path

import numpy as np

FIXTURE = Path(__file__).parent / "data" / "grid_qwen7b.jsonl"
TARGETS = {0.0: 1.144, 0.25: 1.117, 0.5: 1.094, 0.75: 1.078, 1.0: 1.084, 1.25: 1.090}
N_ITEMS = 200
N_REPLIES = 5
DIMENSION = "suddenness"

MULTISETS = [c for c in itertools.combinations_with_replacement(range(1, 6), N_REPLIES)]


def units(a, b):
    """5 * W1 between two 5-rating multisets (sorted-sample coupling)."""
    return int(sum(abs(x - y) for x, y in zip(sorted(a), sorted(b))))


def choose(options, target, rnd):
    """Pick one option per item so the chosen units sum to ``target``."""
    n = len(options)
    top = sum(max(o) for o in options)
    reach = np.zeros((n + 1, top + 1), dtype=bool)
    reach[n, 0] = True
    for i in range(n - 1, -1, -1):
        for v in set(options[i]):
            reach[i, v:] |= reach[i + 1, : top + 1 - v]
    if not reach[0, target]:
        raise ValueError(f"target {target} unreachable")
    picks, left = [], target
    for i in range(n):
        vals = sorted({v for v in options[i] if v <= left and reach[i + 1, left - v]})
        # stay near the average so no single item carries the target
        mean = left / (n - i)
        vals.sort(key=lambda v: (abs(v - mean), rnd.random()))
        v = vals[0] if rnd.random() < 0.7 else rnd.choice(vals)
        picks.append(v)
        left -= v
    return picks


def build(seed=0):
    rnd = random.Random(seed)
    truths = [tuple(sorted(rnd.choices(range(1, 6), weights=[1, 2, 3, 2, 1], k=N_REPLIES))) for _ in range(N_ITEMS)]
    rows = []
    for t, w in TARGETS.items():
        target = round(w * N_ITEMS * N_REPLIES)
        if t == 0:
            # greedy decoding: one reply repeated
            cands = [[(c,) * N_REPLIES for c in range(1, 6)] for _ in truths]
        else:
            cands = [MULTISETS for _ in truths]
        by_units = [{} for _ in truths]
        for i, truth in enumerate(truths):
            for m in cands[i]:
                by_units[i].setdefault(units(truth, m), []).append(m)
        picks = choose([list(b) for b in by_units], target, rnd)
        for i, (truth, u) in enumerate(zip(truths, picks)):
            replies = list(rnd.choice(by_units[i][u]))
            rnd.shuffle(replies)
            rows.append({
                "situation_id": f"dev{i:03d}",
                "dimension": DIMENSION,
                "situation": f"Dev situation number {i}.",
                "truth": list(truth),
                "temperature": t,
                "replies": [f"Rating: {r}" for r in replies],
            })
    return rows


def write(path=FIXTURE):
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for row in build():
            fh.write(json.dumps(row) + "\n")


if __name__ == "__main__":
    write()

import json
import random
import sys
from pathlib import Path

import pytest
import yaml

sys.path.insert(0, str(Path(__file__).parent))

DIMS = ("suddenness", "pleasantness", "attention")
GOLDEN = Path(__file__).parent / "golden"


def write_toy(path: Path, n: int, offset: int, seed: int, dims=DIMS, annotators=5) -> Path:
    rnd = random.Random(seed)
    with path.open("w", encoding="utf-8") as fh:
        for i in range(n):
            sid = f"s{offset + i:03d}"
            anns, profiles = [], {}
            for a in range(annotators):
                aid = f"{sid}-a{a}"
                for d in dims:
                    anns.append({"annotator_id": aid, "dimension": d, "rating": rnd.randint(1, 5)})
                profiles[aid] = {
                    "age": 20 + a, "gender": rnd.choice(["Female", "Male"]),
                    "ethnicity": rnd.choice(["African", "Asian", "European"]), "education": "College",
                    "open": rnd.randint(1, 7), "conventional": rnd.randint(1, 7),
                    "calm": rnd.randint(1, 7), "anxious": rnd.randint(1, 7),
                }
            row = {"situation_id": sid, "text": f"Something happened to me, case {i}.",
                   "source_dataset": "EnVent", "annotations": anns, "profiles": profiles}
            fh.write(json.dumps(row) + "\n")
    return path


@pytest.fixture
def toy_data(tmp_path):
    return {
        "test": write_toy(tmp_path / "test.jsonl", 5, 0, 1),
        "train": write_toy(tmp_path / "train.jsonl", 6, 100, 2),
        "dev": write_toy(tmp_path / "dev.jsonl", 4, 200, 3),
    }


@pytest.fixture
def make_config(tmp_path, toy_data):
    def make(**sections):
        cfg = {
            "seed": 0,
            "workers": 2,
            "out": "out",
            "cache_dir": "cache",
            "dataset": {"test": "test.jsonl", "train": "train.jsonl", "dev": "dev.jsonl"},
            "model": {"name": "stub", "endpoint": "stub"},
            "sampling": {"n_samples": 10, "temperature": 0.75},
        }
        for key, value in sections.items():
            if isinstance(value, dict) and isinstance(cfg.get(key), dict):
                cfg[key] = {**cfg[key], **value}
            else:
                cfg[key] = value
        path = tmp_path / "exp.yaml"
        path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
        return path

    return make


# -- acceptance summary -----------------------------------------------------

_CRITERIA: dict[int, list[tuple[str, str, list[str]]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (rep.when == "call" or (rep.when == "setup" and not rep.passed)):
        return
    status = "PASS" if rep.passed else "NOT RUN" if rep.skipped else "FAIL"
    notes = [v for k, v in item.user_properties if k == "note"]
    if rep.skipped and isinstance(rep.longrepr, tuple):
        notes.append(rep.longrepr[2].removeprefix("Skipped: "))
    _CRITERIA.setdefault(marker.args[0], []).append((status, item.name, notes))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        runs = _CRITERIA[n]
        statuses = {s for s, _, _ in runs}
        overall = "FAIL" if "FAIL" in statuses else "PASS" if "PASS" in statuses else "NOT RUN"
        parts = [f"{name} {status}" + (f" ({'; '.join(notes)})" if notes else "") for status, name, notes in runs]
        terminalreporter.write_line(f"criterion {n:2d}: {overall} | " + " | ".join(parts))

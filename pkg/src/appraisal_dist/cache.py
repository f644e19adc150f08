"""Append-only, content-addressed cache of raw model replies.

One JSONL record per reply, sharded by the first two hex digits of the
fingerprint. Reads are served from an in-memory index; appends go through a
lock so concurrent workers never interleave partial lines.
"""

from __future__ import annotations

import hashlib
import json
import threading
from datetime import datetime, timezone
from pathlib import Path


def fingerprint(model: str, system: str, user: str, temperature: float, sample_index: int) -> str:
    payload = json.dumps([model, system, user, float(temperature), int(sample_index)], ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


class ResponseCache:
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._index: dict[str, str] = {}
        self._lock = threading.Lock()
        self._load()

    def _load(self) -> None:
        for shard in sorted(self.directory.glob("*.jsonl")):
            with shard.open(encoding="utf-8") as fh:
                for line in fh:
                    try:
                        rec = json.loads(line)
                    except json.JSONDecodeError:
                        # a torn final line from an interrupted run; the reply is refetched
                        continue
                    self._index.setdefault(rec["fingerprint"], rec["text"])

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, fp: str) -> bool:
        return fp in self._index

    def get(self, fp: str) -> str | None:
        return self._index.get(fp)

    def put(self, fp: str, text: str, **meta) -> None:
        with self._lock:
            if fp in self._index:
                return
            rec = {"fingerprint": fp, "timestamp": datetime.now(timezone.utc).isoformat(), **meta, "text": text}
            with (self.directory / f"{fp[:2]}.jsonl").open("a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
            self._index[fp] = text


class NullCache:
    """Cache stand-in that stores nothing."""

    def __len__(self) -> int:
        return 0

    def __contains__(self, fp: str) -> bool:
        return False

    def get(self, fp: str) -> str | None:
        return None

    def put(self, fp: str, text: str, **meta) -> None:
        return None

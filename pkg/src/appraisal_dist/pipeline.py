"""Stage orchestration: each stage reads the previous stage's files from the
output directory and writes its own, recording hashes in ``manifest.json``."""

from __future__ import annotations

import hashlib
import json
import logging
import threading
import time
import zlib
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from . import analysis
from ._version import __version__
from .cache import ResponseCache
from .calibration import (
    CONFIDENCE_FORMAT,
    RANKING_FORMAT,
    avg_conf,
    pair_rank_fit,
    parse_conf_sample,
    parse_ranking,
)
from .config import ExperimentConfig
from .dataset import (
    AppraisalRecord,
    DatasetLayout,
    RatingMultiset,
    build_rating_multisets,
    iter_jsonl,
    read_dataset,
    read_multisets,
    write_jsonl,
    write_multisets,
    write_records,
)
from .dimensions import BUILTIN_MAP, DimensionMap
from .distributions import modality_census, smoothed_target
from .endpoints import BoltzmannStubEndpoint, ChatEndpoint, ChatRequest, OpenAIChatEndpoint
from .errors import DataError, IncompleteProfileError, MissingArtifactError, StageError
from .metrics import (
    EvalReport,
    ItemScore,
    PredictionSet,
    evaluate,
    majority_baseline,
    random_baseline,
    summarize,
)
from .persona import RATING_FORMAT, PersonaProfile, Variant, build_prompt, load_statements
from .sampler import DevItem, Sampler, SamplerSettings, grid_search_temperature, predict_items

logger = logging.getLogger(__name__)

STAGES = ("ingest", "grid-temp", "sample", "calibrate", "eval", "analyze")
SPLITS = ("test", "train", "dev")
MANIFEST = "manifest.json"


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class _LazyEndpoint:
    """Builds the real endpoint on first use, so fully cached runs need no credentials."""

    def __init__(self, factory: Callable[[], ChatEndpoint]):
        self._factory = factory
        self._endpoint: ChatEndpoint | None = None
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> str:
        with self._lock:
            if self._endpoint is None:
                self._endpoint = self._factory()
        return self._endpoint.complete(request)


class Manifest:
    def __init__(self, path: Path, cfg: ExperimentConfig):
        self.path = path
        self.config_hash = cfg.config_hash()
        self.seed = cfg.seed
        self.stages: dict[str, dict[str, Any]] = {}
        if path.exists():
            try:
                old = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError:
                old = {}
            if old.get("config_hash") == self.config_hash:
                self.stages = old.get("stages", {})
            elif old:
                logger.info("config changed since the last run; previous stage records discarded")

    def record(self, stage: str, entry: dict[str, Any]) -> None:
        self.stages[stage] = {"config_hash": self.config_hash, **entry}
        self.write()

    def status(self, stage: str) -> str | None:
        return self.stages.get(stage, {}).get("status")

    def to_dict(self) -> dict[str, Any]:
        ordered = {s: self.stages[s] for s in STAGES if s in self.stages}
        return {
            "toolkit_version": __version__,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "complete": bool(ordered) and all(e["status"] in ("complete", "skipped") for e in ordered.values()),
            "stages": ordered,
        }

    def write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


class _StageContext:
    """Collects the files a stage writes, so failures can list partial outputs."""

    def __init__(self, out: Path):
        self.out = out
        self.outputs: dict[str, str] = {}
        self.notes: dict[str, Any] = {}

    def _register(self, path: Path) -> None:
        self.outputs[path.relative_to(self.out).as_posix()] = sha256_file(path)

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")
        self._register(path)
        return path

    def write_json(self, name: str, data: Any) -> Path:
        return self.write_text(name, json.dumps(data, indent=2, ensure_ascii=False) + "\n")

    def write_rows(self, name: str, rows: Iterable[dict]) -> Path:
        path = self.out / name
        write_jsonl(path, rows)
        self._register(path)
        return path

    def wrote(self, name: str) -> None:
        self._register(self.out / name)


class Pipeline:
    def __init__(
        self,
        cfg: ExperimentConfig,
        *,
        endpoint: ChatEndpoint | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self.out = cfg.out_dir
        self.manifest = Manifest(self.out / MANIFEST, cfg)
        self._endpoint = endpoint
        self._sleep = sleep
        self._sampler: Sampler | None = None

    # -- shared helpers -----------------------------------------------------

    def rng(self, purpose: str) -> np.random.Generator:
        """Generator for one purpose, derived from the single configured seed."""
        seq = np.random.SeedSequence(self.cfg.seed, spawn_key=(zlib.crc32(purpose.encode()),))
        return np.random.default_rng(seq)

    @property
    def sampler(self) -> Sampler:
        if self._sampler is None:
            m = self.cfg.model
            endpoint = self._endpoint
            if endpoint is None:
                if m.endpoint == "stub":
                    endpoint = BoltzmannStubEndpoint()
                else:
                    endpoint = _LazyEndpoint(
                        lambda: OpenAIChatEndpoint.from_env(m.base_url_env, m.api_key_env, timeout=m.timeout)
                    )
            settings = SamplerSettings(
                max_tokens=m.max_tokens,
                stop=tuple(m.stop) if m.stop else None,
                attempts=m.attempts,
                backoff=m.backoff,
                max_failure_rate=self.cfg.sampling.max_failure_rate,
                workers=self.cfg.workers,
            )
            self._sampler = Sampler(endpoint, ResponseCache(self.cfg.cache_path), settings, sleep=self._sleep)
        return self._sampler

    def _require(self, stage: str, name: str) -> Path:
        path = self.out / name
        if not path.exists():
            raise MissingArtifactError(stage, path)
        return path

    def _records(self, stage: str, split: str) -> list[AppraisalRecord]:
        path = self._require(stage, f"{split}_records.jsonl")
        return read_dataset(path, DatasetLayout(kind="jsonl")).records

    def _multisets(self, stage: str, split: str) -> list[RatingMultiset]:
        return read_multisets(self._require(stage, f"{split}_multisets.jsonl"))

    def _splits(self) -> list[str]:
        return [s for s in SPLITS if getattr(self.cfg.dataset, s)]

    def _personas(self, rec: AppraisalRecord, pool: Sequence[PersonaProfile]) -> list[PersonaProfile | None]:
        s = self.cfg.sampling
        if s.profiles == "situation":
            chosen = [rec.profiles[a] for a in sorted(rec.profiles)][: s.n_personas]
        else:
            k = min(s.n_personas, len(pool))
            # seeded per situation so the draw does not depend on item order
            seq = np.random.SeedSequence(self.cfg.seed, spawn_key=(zlib.crc32(b"pool"), zlib.crc32(rec.situation_id.encode())))
            idx = np.random.default_rng(seq).choice(len(pool), size=k, replace=False) if k else []
            chosen = [pool[i] for i in sorted(idx)]
        if not chosen:
            if not s.profile_fallback:
                raise IncompleteProfileError(
                    f"situation {rec.situation_id!r} has no annotator profiles for variant {s.variant!r}"
                )
            return [None]
        return chosen

    def _items(self, records: Sequence[AppraisalRecord], multisets: Sequence[RatingMultiset], n: int, rating_format: str) -> list[DevItem]:
        s = self.cfg.sampling
        variant = Variant(s.variant)
        statements = load_statements(self.cfg.path(self.cfg.dataset.statements))
        by_sid = {r.situation_id: r for r in records}
        pool = [r.profiles[a] for r in records for a in sorted(r.profiles)]
        persona_cache: dict[str, list[PersonaProfile | None]] = {}
        items = []
        for m in multisets:
            rec = by_sid[m.situation_id]
            if m.dimension not in statements:
                raise DataError(f"no statement text for dimension {m.dimension!r}")
            if variant is Variant.VANILLA:
                personas: list[PersonaProfile | None] = [None]
            else:
                if m.situation_id not in persona_cache:
                    persona_cache[m.situation_id] = self._personas(rec, pool)
                personas = persona_cache[m.situation_id]
            k = len(personas)
            counts = [n // k + (i < n % k) for i in range(k)]
            prompts = tuple(
                (
                    build_prompt(
                        rec.text,
                        statements[m.dimension],
                        p,
                        variant if p is not None else Variant.VANILLA,
                        rating_format=rating_format,
                        fallback=s.profile_fallback,
                    ),
                    c,
                )
                for p, c in zip(personas, counts)
                if c > 0
            )
            items.append(DevItem(m.situation_id, m.dimension, prompts, m))
        return items

    def _fingerprints(self, ctx: _StageContext, stage: str, fps: Iterable[str]) -> None:
        fps = sorted(set(fps))
        path = ctx.write_text(f"fingerprints/{stage}.txt", "".join(fp + "\n" for fp in fps))
        ctx.notes["fingerprints"] = {"count": len(fps), "sha256": sha256_file(path)}

    def temperature(self, stage: str) -> float:
        t = self.cfg.sampling.temperature
        if t != "grid":
            return float(t)
        grid = json.loads(self._require(stage, "grid.json").read_text(encoding="utf-8"))
        return float(grid["best_temperature"])

    # -- stages -------------------------------------------------------------

    def stage_ingest(self, ctx: _StageContext) -> None:
        ds = self.cfg.dataset
        dm = DimensionMap.from_json(self.cfg.path(ds.dimension_map)) if ds.dimension_map else BUILTIN_MAP
        layout = DatasetLayout.coerce(ds.layout)
        summary = {}
        for split in self._splits():
            result = read_dataset(self.cfg.path(getattr(ds, split)), layout, dimension_map=dm)
            multisets = build_rating_multisets(result.records)
            write_records(self.out / f"{split}_records.jsonl", result.records)
            ctx.wrote(f"{split}_records.jsonl")
            write_multisets(self.out / f"{split}_multisets.jsonl", multisets)
            ctx.wrote(f"{split}_multisets.jsonl")
            ctx.write_rows(f"{split}_rejects.jsonl", result.rejects)
            summary[split] = {
                "records": len(result.records),
                "multisets": len(multisets),
                "rejects": len(result.rejects),
                "dropped_dimensions": dict(sorted(result.dropped.items())),
            }
        sm = self.cfg.smoothing
        if sm.kind != "none" and ds.train:
            rng = self.rng("smoothing")
            rows = []
            for rec in read_dataset(self.out / "train_records.jsonl", DatasetLayout(kind="jsonl")).records:
                for a in rec.annotations:
                    target = smoothed_target(a.rating, sm.kind, sm.sigma, sm.w, rng)
                    rows.append({
                        "situation_id": rec.situation_id,
                        "annotator_id": a.annotator_id,
                        "dimension": a.dimension,
                        "rating": a.rating,
                        "pmf": target.to_list(),
                    })
            ctx.write_rows("train_targets.jsonl", rows)
        ctx.write_json("ingest_summary.json", summary)

    def stage_grid_temp(self, ctx: _StageContext) -> None:
        records = self._records("grid-temp", "dev")
        items = self._items(records, self._multisets("grid-temp", "dev"), self.cfg.sampling.n_samples, RATING_FORMAT)
        result = grid_search_temperature(
            items, self.sampler, self.cfg.sampling.grid, model_name=self.cfg.model.name, workers=self.cfg.workers
        )
        ctx.write_text("grid.csv", result.to_csv())
        ctx.write_json("grid.json", {
            "best_temperature": result.best_temperature,
            "rows": [dict(zip(("temperature", "wasserstein", "mu_mae", "var_mae"), r)) for r in result.rows()],
        })
        fps = (fp for t in result.reports for it in items for r in it.requests(t, self.cfg.model.name) for fp in r.fingerprints())
        self._fingerprints(ctx, "grid-temp", fps)

    def stage_sample(self, ctx: _StageContext) -> None:
        pr = self.cfg.predictions
        multisets = self._multisets("sample", "test")
        keys = [(m.situation_id, m.dimension) for m in multisets]
        if pr.source == "file":
            preds = PredictionSet.read(self.cfg.path(pr.file), provenance="prediction_file")
        elif pr.source == "baseline" and pr.baseline == "random":
            preds = random_baseline(keys, self.cfg.sampling.n_samples, seed=self.cfg.seed)
        elif pr.source == "baseline":
            model = majority_baseline(self._multisets("sample", "train"))
            ctx.write_json("majority.json", model.modes)
            preds = model.predict(keys)
        else:
            t = self.temperature("sample")
            items = self._items(self._records("sample", "test"), multisets, self.cfg.sampling.n_samples, RATING_FORMAT)
            preds, batches = predict_items(self.sampler, items, t, self.cfg.model.name)
            ctx.write_rows("samples.jsonl", (
                {
                    "situation_id": it.situation_id,
                    "dimension": it.dimension,
                    "temperature": t,
                    "batch": b.fingerprint,
                    "replies": b.raw_replies,
                    "failures": len(b.failures),
                }
                for it, b in zip(items, batches)
            ))
            self._fingerprints(ctx, "sample", (fp for b in batches for fp in b.sample_fingerprints))
            ctx.notes["temperature"] = t
        preds.write(self.out / "predictions.jsonl")
        ctx.wrote("predictions.jsonl")

    def stage_calibrate(self, ctx: _StageContext) -> str:
        c = self.cfg.calibration
        if c.method == "none":
            return "skipped"
        t = self.temperature("calibrate")
        records = self._records("calibrate", "test")
        multisets = self._multisets("calibrate", "test")
        if c.method == "avg_conf":
            items = self._items(records, multisets, self.cfg.sampling.n_samples, CONFIDENCE_FORMAT)
            parser, fit = parse_conf_sample, avg_conf
        else:
            items = self._items(records, multisets, c.n_rankings, RANKING_FORMAT)
            parser = parse_ranking

            def fit(rankings):
                return pair_rank_fit(rankings, c.steps, c.learning_rate, c.tol)

        batches = self.sampler.collect_items([it.requests(t, self.cfg.model.name) for it in items], parser=parser)
        entries = {(it.situation_id, it.dimension): fit(b.parsed) for it, b in zip(items, batches)}
        PredictionSet(entries, "llm_samples", f"{self.cfg.model.name}:{c.method}").write(self.out / "calibrated.jsonl")
        ctx.wrote("calibrated.jsonl")
        self._fingerprints(ctx, "calibrate", (fp for b in batches for fp in b.sample_fingerprints))
        return "complete"

    def stage_eval(self, ctx: _StageContext) -> None:
        name = "calibrated.jsonl" if self.cfg.calibration.method != "none" else "predictions.jsonl"
        preds = PredictionSet.read(self._require("eval", name))
        truth = self._multisets("eval", "test")
        ev = self.cfg.evaluation
        report = evaluate(preds, truth, weighting=ev.weighting, variance=ev.variance, workers=self.cfg.workers)
        ctx.write_text("report.json", report.to_json())
        ctx.write_text("report.txt", report.to_table())
        ctx.write_rows("items.jsonl", (
            {"situation_id": s.situation_id, "dimension": s.dimension, "wasserstein": s.wasserstein,
             "mu_mae": s.mu_mae, "var_mae": s.var_mae}
            for s in report.items
        ))

    def stage_analyze(self, ctx: _StageContext) -> None:
        a = self.cfg.analysis
        records = [r for split in self._splits() for r in self._records("analyze", split)]
        census = modality_census(build_rating_multisets(records), a.modality_rule)
        ctx.write_json("modality.json", {"rule": a.modality_rule, "counts": census})
        for group in a.group_by:
            table = analysis.group_variance(records, group, missing=a.group_missing)
            ctx.write_text(f"group_variance_{group}.csv", table.to_csv())
            ctx.write_text(f"group_variance_{group}.long.csv", table.to_long_csv())
            ctx.write_text(f"group_variance_{group}.json", table.to_json())
        items_path = self.out / "items.jsonl"
        if not items_path.exists():
            logger.info("no evaluation report yet; skipping rankings, correlations and significance")
            ctx.notes["skipped"] = ["rankings", "correlation", "significance"]
            return
        report = _report_from_items(items_path, self.cfg.evaluation.weighting)
        k = min(a.rank_k, len(report.per_dimension))
        top, bottom = analysis.rank_dimensions(report, k)
        ctx.write_json("rankings.json", {"k": k, "top": top, "bottom": bottom})
        corr = {}
        for metric in ("var_mae", "mu_mae"):
            try:
                corr[f"{metric}_vs_wasserstein"] = analysis.metric_correlation(report, metric, "wasserstein")
            except ValueError as exc:
                logger.warning("correlation %s undefined: %s", metric, exc)
                corr[f"{metric}_vs_wasserstein"] = None
        ctx.write_json("correlation.json", corr)
        if a.compare:
            others = {}
            for label, run_dir in a.compare.items():
                path = self.cfg.path(run_dir) / "items.jsonl"
                if not path.exists():
                    raise MissingArtifactError("analyze", path)
                others[label] = _report_from_items(path, self.cfg.evaluation.weighting)
            table = analysis.significance_table(report, others, unit=a.significance_unit)
            ctx.write_text("significance.csv", table.to_csv())
            ctx.write_text("significance.json", table.to_json())

    # -- driver -------------------------------------------------------------

    def run_stage(self, stage: str) -> None:
        if stage not in STAGES:
            raise ValueError(f"unknown stage {stage!r}")
        handler = getattr(self, "stage_" + stage.replace("-", "_"))
        ctx = _StageContext(self.out)
        self.out.mkdir(parents=True, exist_ok=True)
        logger.info("stage %s", stage)
        try:
            status = handler(ctx) or "complete"
        except Exception as exc:
            self.manifest.record(stage, {
                "status": "failed",
                "error": f"{type(exc).__name__}: {exc}",
                "outputs": dict(sorted(ctx.outputs.items())),
            })
            raise StageError(stage, exc) from exc
        self.manifest.record(stage, {"status": status, "outputs": dict(sorted(ctx.outputs.items())), **ctx.notes})

    def stages_for_run(self) -> list[str]:
        stages = ["ingest"]
        if self.cfg.predictions.source == "llm" and self.cfg.sampling.temperature == "grid":
            stages.append("grid-temp")
        return stages + ["sample", "calibrate", "eval", "analyze"]

    def run(self, stages: Sequence[str] | None = None) -> Manifest:
        for stage in stages or self.stages_for_run():
            self.run_stage(stage)
        return self.manifest


def _report_from_items(path: Path, weighting: str) -> EvalReport:
    items = [ItemScore(**row) for row in iter_jsonl(path)]
    return summarize(items, weighting)

import json
import logging
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from appraisal_dist.dataset import (
    Annotation,
    AppraisalRecord,
    DatasetLayout,
    RatingMultiset,
    build_rating_multisets,
    parse_records,
    read_dataset,
    read_multisets,
    rescale_rating,
    write_multisets,
    write_records,
)
from appraisal_dist.dimensions import (
    ABBREVIATIONS,
    DIMENSIONS,
    BUILTIN_MAP,
    DimensionMap,
    SourceDataset,
    abbrev,
    from_abbrev,
    map_dimension,
)
from appraisal_dist.errors import DataError, LayoutError, NoValidRecordsError, UnmappedDimensionError
from appraisal_dist.persona import PersonaProfile


def jsonl(path, rows):
    path.write_text("".join(json.dumps(r) + "\n" for r in rows), encoding="utf-8")
    return path


# -- dimensions -----------------------------------------------------------------


def test_canonical_set():
    assert len(DIMENSIONS) == 21
    assert DIMENSIONS[0] == "suddenness" and DIMENSIONS[-1] == "effort"
    assert len(set(ABBREVIATIONS.values())) == 21
    assert abbrev("attention") == "AT"
    assert from_abbrev("UPL") == "unpleasantness"


@pytest.mark.parametrize(
    "source, name, expected",
    [
        ("FGE", "expectedness", "predict_event"),
        ("CovidET", "goal conduciveness", "goal_support"),
        ("EnVent", "suddenness", "suddenness"),
        ("CovidET", "Problem-Focused  Coping", "accept_consequence"),
        ("EnVent", "chance_responsblt", "chance_responsibility"),
    ],
)
def test_map_dimension(source, name, expected):
    assert map_dimension(source, name) == expected


def test_unmapped_dimension_names_source():
    with pytest.raises(UnmappedDimensionError, match="no canonical equivalent") as exc:
        map_dimension("FGE", "novelty")
    assert exc.value.name == "novelty" and exc.value.source == "FGE"


def test_envent_names_map_to_themselves():
    for d in DIMENSIONS:
        assert map_dimension(SourceDataset.ENVENT, d) == d


def test_builtin_map_targets_are_canonical():
    assert BUILTIN_MAP.targets() <= set(DIMENSIONS)


def test_dimension_map_is_a_function():
    m = DimensionMap({"FGE": {"x": "attention"}})
    m.update("FGE", {"x": "attention"})
    with pytest.raises(ValueError):
        m.update("FGE", {"X": "effort"})


def test_user_dimension_map_overrides(tmp_path):
    path = tmp_path / "map.json"
    path.write_text(json.dumps({"FGE": {"novelty": "suddenness", "expectedness": "familiarity"}}))
    m = DimensionMap.from_json(path)
    assert m.lookup("FGE", "novelty") == "suddenness"
    assert m.lookup("FGE", "expectedness") == "familiarity"
    assert m.lookup("CovidET", "effort") == "effort"


# -- rescaling ------------------------------------------------------------------


def test_rescale_by_enumeration():
    # half-up rounding oracle computed with floor(x + 0.5)
    for r in range(1, 11):
        expected = min(5, max(1, math.floor(r / 2 + 0.5)))
        assert rescale_rating(r) == expected
    assert rescale_rating(10) == 5 and rescale_rating(7) == 4 and rescale_rating(1) == 1
    values = [rescale_rating(r) for r in range(1, 11)]
    assert values == sorted(values) and set(values) == {1, 2, 3, 4, 5}


@pytest.mark.parametrize("bad", [0, 11, -3])
def test_rescale_range(bad):
    with pytest.raises(ValueError):
        rescale_rating(bad)


# -- parsing --------------------------------------------------------------------


def test_jsonl_one_situation(tmp_path):
    p = jsonl(tmp_path / "d.jsonl", [
        {"situation_id": "s1", "text": "t", "annotations": [
            {"annotator_id": "a", "dimension": "suddenness", "rating": 2},
            {"annotator_id": "a", "dimension": "effort", "rating": 3},
        ]},
        {"situation_id": "s1", "annotations": [{"annotator_id": "b", "dimension": "suddenness", "rating": 5}]},
        {"situation_id": "s1", "annotations": [{"annotator_id": "b", "dimension": "effort", "rating": 1}]},
    ])
    recs = parse_records(p)
    assert len(recs) == 1 and len(recs[0].annotations) == 4
    assert set(recs[0].annotators) == {"a", "b"}


def test_out_of_range_row_rejected(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text(
        "situation_id,annotator_id,dimension,rating,text\n"
        "s1,a,suddenness,3,hello\n"
        "s1,b,suddenness,6,hello\n"
        "s2,a,attention,1,bye\n",
        encoding="utf-8",
    )
    result = read_dataset(p, "long")
    assert [r.situation_id for r in result.records] == ["s1", "s2"]
    assert len(result.rejects) == 1
    rej = result.rejects[0]
    assert rej["row"] == 3 and "6" in rej["raw"] and "outside" in rej["reason"]
    out = tmp_path / "rejects.jsonl"
    parse_records(p, "long", rejects_path=out)
    assert json.loads(out.read_text().splitlines()[0])["row"] == 3


def test_duplicate_and_missing_fields_rejected(tmp_path):
    p = jsonl(tmp_path / "d.jsonl", [
        {"situation_id": "s1", "text": "t", "annotations": [
            {"annotator_id": "a", "dimension": "suddenness", "rating": 2},
            {"annotator_id": "a", "dimension": "suddenness", "rating": 4},
            {"dimension": "suddenness", "rating": 4},
            {"annotator_id": "b", "rating": 4},
        ]},
    ])
    result = read_dataset(p)
    assert len(result.records[0].annotations) == 1
    reasons = [r["reason"] for r in result.rejects]
    assert any("duplicate" in r for r in reasons)
    assert any("annotator" in r for r in reasons) and any("dimension" in r for r in reasons)


def test_invalid_json_line_rejected(tmp_path):
    p = tmp_path / "d.jsonl"
    p.write_text('{"situation_id": "s1", "annotations": [{"annotator_id": "a", "dimension": "effort", "rating": 1}]}\n{oops\n')
    result = read_dataset(p)
    assert len(result.records) == 1 and "invalid JSON" in result.rejects[0]["reason"]


def test_unmapped_dimensions_dropped_with_warning(tmp_path, caplog):
    p = tmp_path / "fge.csv"
    p.write_text(
        "situation_id,annotator_id,expectedness,novelty\n"
        "s1,a,10,4\n"
        "s1,b,3,4\n",
        encoding="utf-8",
    )
    layout = DatasetLayout(kind="wide", scale=10, source_dataset="FGE")
    with caplog.at_level(logging.WARNING):
        result = read_dataset(p, layout)
    assert result.dropped == {"novelty": 2}
    assert "novelty" in caplog.text
    anns = result.records[0].annotations
    assert [(a.dimension, a.rating) for a in anns] == [("predict_event", 5), ("predict_event", 2)]


def test_wide_tsv_with_profiles(tmp_path):
    p = tmp_path / "envent.tsv"
    p.write_text(
        "situation_id\ttext\tannotator_id\tage\tgender\tethnicity\teducation\topen\tconventional\tsuddenness\tpredict_conseq\n"
        "s1\tI won\tw1\t28\tFemale\tAfrican\tCollege\t6\t3\t2\t4\n",
        encoding="utf-8",
    )
    rec = read_dataset(p, "wide").records[0]
    assert {a.dimension for a in rec.annotations} == {"suddenness", "predict_consequence"}
    prof = rec.profiles["w1"]
    assert prof.age == 28 and prof.ethnicity == "African" and prof.tipi == {"open": 6.0, "conventional": 3.0}


def test_parse_errors(tmp_path):
    with pytest.raises(DataError):
        read_dataset(tmp_path / "missing.jsonl")
    with pytest.raises(LayoutError):
        DatasetLayout(kind="xml")
    p = jsonl(tmp_path / "bad.jsonl", [{"situation_id": "s", "annotations": [{"annotator_id": "a", "dimension": "effort", "rating": 9}]}])
    with pytest.raises(NoValidRecordsError):
        read_dataset(p)
    p = tmp_path / "long.csv"
    p.write_text("situation_id,rating\ns,3\n")
    with pytest.raises(LayoutError):
        read_dataset(p, "long")


def test_record_invariants():
    with pytest.raises(ValueError):
        AppraisalRecord("s", "t", ())
    with pytest.raises(ValueError):
        AppraisalRecord("s", "t", (Annotation("a", "effort", 1), Annotation("a", "effort", 2)))


# -- multisets ------------------------------------------------------------------


def _record(sid, ratings_by_dim, source=SourceDataset.ENVENT):
    anns = tuple(
        Annotation(f"a{i}", dim, r) for dim, ratings in ratings_by_dim.items() for i, r in enumerate(ratings)
    )
    return AppraisalRecord(sid, "text", anns, source)


def test_multisets_grouping():
    recs = [_record("s1", {"suddenness": [2, 5, 5, 4, 1]}), _record("s2", {"suddenness": [3]})]
    ms = build_rating_multisets(recs)
    assert ms[0] == RatingMultiset("s1", "suddenness", (1, 2, 4, 5, 5))
    assert ms[1] == RatingMultiset("s2", "suddenness", (3,))
    assert build_rating_multisets([]) == []


def test_multisets_canonical_order():
    rec = _record("s1", {"effort": [1], "suddenness": [2], "attention": [3]})
    assert [m.dimension for m in build_rating_multisets([rec])] == ["suddenness", "attention", "effort"]


record_st = st.lists(
    st.dictionaries(st.sampled_from(DIMENSIONS[:6]), st.lists(st.integers(1, 5), min_size=1, max_size=6), min_size=1),
    min_size=1,
    max_size=8,
)


@given(record_st)
def test_multisets_preserve_annotation_count(dicts):
    recs = [_record(f"s{i}", d) for i, d in enumerate(dicts)]
    ms = build_rating_multisets(recs)
    assert sum(len(m.ratings) for m in ms) == sum(len(r.annotations) for r in recs)


@given(record_st)
def test_record_round_trip(dicts):
    import tempfile
    from pathlib import Path

    recs = [_record(f"s{i}", d) for i, d in enumerate(dicts)]
    recs[0] = AppraisalRecord(
        recs[0].situation_id, "I lost “my” keys", recs[0].annotations, SourceDataset.FGE,
        {"a0": PersonaProfile(28, "Female", "African", "College", {"open": 6, "conventional": 3}, {"country": "KE"})},
    )
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "r.jsonl"
        write_records(path, recs)
        back = read_dataset(path).records
        assert back == recs
        ms = build_rating_multisets(recs)
        write_multisets(Path(d) / "m.jsonl", ms)
        assert read_multisets(Path(d) / "m.jsonl") == ms

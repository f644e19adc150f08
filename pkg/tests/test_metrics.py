import json
import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from appraisal_dist.dataset import RatingMultiset
from appraisal_dist.distributions import RatingDistribution, empirical_distribution
from appraisal_dist.errors import DataError, InsufficientRepeatsError, MissingPredictionError
from appraisal_dist.metrics import (
    EvalReport,
    PredictionSet,
    evaluate,
    format_results_table,
    majority_baseline,
    random_baseline,
    score_item,
)
from oracles import frac_mean_var


def synthetic_truth(n_items, dims=("suddenness", "pleasantness", "effort"), seed=0, size=5):
    rnd = random.Random(seed)
    return [
        RatingMultiset(f"s{i}", d, tuple(sorted(rnd.randint(1, 5) for _ in range(size))))
        for i in range(n_items)
        for d in dims
    ]


def test_single_item_by_hand():
    truth = [RatingMultiset("s", "suddenness", (1, 5))]
    report = evaluate({("s", "suddenness"): RatingDistribution.point_mass(3)}, truth)
    assert report.aggregate.as_tuple() == (2.0, 0.0, 8.0)


def test_self_comparison_is_exactly_zero():
    truth = synthetic_truth(40)
    preds = PredictionSet({(m.situation_id, m.dimension): empirical_distribution(m) for m in truth})
    report = evaluate(preds, truth)
    assert report.aggregate.as_tuple() == (0.0, 0.0, 0.0)
    assert all(s.as_tuple() == (0.0, 0.0, 0.0) for s in report.per_dimension.values())


def test_population_variance_mode():
    truth = [RatingMultiset("s", "d", (1, 5))]
    pred = RatingDistribution.from_samples([1, 5])
    assert score_item(pred, truth[0]).var_mae == 0
    # population variance of {1, 5} is 4 against a sample variance of 8
    assert score_item(pred, truth[0], variance="population").var_mae == 4


def test_aggregate_is_unweighted_dimension_mean():
    truth = [
        RatingMultiset("a", "suddenness", (1, 1)),
        RatingMultiset("b", "suddenness", (1, 1)),
        RatingMultiset("a", "effort", (1, 1)),
    ]
    preds = {
        ("a", "suddenness"): RatingDistribution.point_mass(2),
        ("b", "suddenness"): RatingDistribution.point_mass(2),
        ("a", "effort"): RatingDistribution.point_mass(5),
    }
    r = evaluate(preds, truth)
    assert r.per_dimension["suddenness"].wasserstein == 1
    assert r.per_dimension["effort"].wasserstein == 4
    assert r.aggregate.wasserstein == 2.5
    assert evaluate(preds, truth, weighting="item").aggregate.wasserstein == 2.0


def test_missing_prediction_and_extra_predictions():
    truth = synthetic_truth(2)
    preds = {(m.situation_id, m.dimension): empirical_distribution(m) for m in truth}
    preds[("zzz", "effort")] = RatingDistribution.uniform()
    evaluate(preds, truth)
    del preds[("s0", "effort")]
    with pytest.raises(MissingPredictionError, match="s0"):
        evaluate(preds, truth)


def test_single_rating_items_skip_variance():
    truth = [RatingMultiset("a", "effort", (3,)), RatingMultiset("b", "effort", (3, 4))]
    preds = {("a", "effort"): RatingDistribution.point_mass(3), ("b", "effort"): RatingDistribution.point_mass(3)}
    r = evaluate(preds, truth)
    assert r.n_var_skipped == 1 and r.per_dimension["effort"].var_mae == 0.5
    with pytest.raises(InsufficientRepeatsError):
        evaluate({("a", "effort"): RatingDistribution.point_mass(3)}, truth[:1])


def test_evaluate_order_and_worker_invariance():
    truth = synthetic_truth(30, seed=4)
    rng = np.random.default_rng(1)
    preds = {(m.situation_id, m.dimension): RatingDistribution(rng.dirichlet(np.ones(5))) for m in truth}
    base = evaluate(preds, truth).to_json()
    shuffled = list(truth)
    random.Random(2).shuffle(shuffled)
    assert evaluate(preds, shuffled).to_json() == base
    assert evaluate(preds, truth, workers=8).to_json() == base


@settings(max_examples=100)
@given(
    st.lists(st.integers(1, 5), min_size=2, max_size=10),
    st.lists(st.floats(0, 1, allow_nan=False), min_size=5, max_size=5).filter(lambda v: sum(v) > 1e-3),
)
def test_metric_bounds(ratings, weights):
    pmf = np.asarray(weights) / np.sum(weights)
    s = score_item(RatingDistribution(pmf), RatingMultiset("s", "d", tuple(ratings)))
    assert 0 <= s.wasserstein <= 4 + 1e-12
    assert 0 <= s.mu_mae <= 4 + 1e-12
    assert 0 <= s.var_mae <= 8 + 1e-12


def test_report_serialization_round_trip():
    truth = synthetic_truth(5)
    preds = random_baseline([(m.situation_id, m.dimension) for m in truth], 30, seed=1)
    report = evaluate(preds, truth)
    back = EvalReport.from_dict(json.loads(report.to_json()))
    assert back.to_json() == report.to_json()
    table = report.to_table()
    assert "Wasserstein" in table and "σ²-MAE" in table and table.strip().splitlines()[-1].startswith("Average")
    assert "Random" in format_results_table({"Random": report})
    assert report.metric_vector("wasserstein") == [report.per_dimension[d].wasserstein for d in report.per_dimension]


def test_prediction_file_round_trip(tmp_path):
    preds = PredictionSet(
        {("s1", "effort"): RatingDistribution([0.1, 0.2, 0.3, 0.2, 0.2]),
         ("s1", "suddenness"): RatingDistribution.from_samples([1, 1, 2])},
        "prediction_file",
    )
    path = tmp_path / "p.jsonl"
    preds.write(path)
    rows = [json.loads(line) for line in path.read_text().splitlines()]
    assert rows[0]["samples"] == [1, 1, 2] and rows[1]["pmf"] == [0.1, 0.2, 0.3, 0.2, 0.2]
    back = PredictionSet.read(path)
    assert back.keys() == preds.keys() and back[("s1", "suddenness")].n_samples == 3


def test_prediction_file_errors(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"situation_id": "s", "dimension": "effort", "pmf": [0.5, 0.5]}\n')
    with pytest.raises(DataError, match="bad.jsonl:1"):
        PredictionSet.read(bad)
    dup = tmp_path / "dup.jsonl"
    dup.write_text('{"situation_id": "s", "dimension": "effort", "samples": [1]}\n' * 2)
    with pytest.raises(DataError, match="duplicate"):
        PredictionSet.read(dup)
    with pytest.raises(ValueError):
        PredictionSet({}, "oracle")


# -- baselines ------------------------------------------------------------------


def test_random_baseline_deterministic():
    keys = [(f"s{i}", "effort") for i in range(10)]
    a, b = random_baseline(keys, 30, seed=7), random_baseline(keys, 30, seed=7)
    assert all(a[k] == b[k] for k in keys)
    assert all(a[k].n_samples == 30 for k in keys)
    c = random_baseline(list(reversed(keys)), 30, seed=7)
    assert all(a[k] == c[k] for k in keys)
    with pytest.raises(ValueError):
        random_baseline(keys, 0)


def test_random_baseline_large_sample_is_uniform():
    d = random_baseline([("s", "effort")], 1_000_000, seed=0)[("s", "effort")]
    np.testing.assert_allclose(d.pmf, 0.2, atol=0.005)


def test_majority_baseline():
    train = [RatingMultiset("a", "effort", (3, 3, 3)), RatingMultiset("a", "suddenness", (1, 1, 5, 5))]
    model = majority_baseline(train)
    assert model.modes == {"suddenness": 1, "effort": 3}
    preds = model.predict([("x", "effort"), ("x", "suddenness")])
    assert preds[("x", "effort")] == RatingDistribution.point_mass(3)
    assert preds.provenance == "baseline"
    with pytest.raises(DataError):
        model.predict([("x", "attention")])
    with pytest.raises(DataError):
        majority_baseline([])


@given(st.lists(st.lists(st.integers(1, 5), min_size=2, max_size=7), min_size=1, max_size=15))
def test_majority_variance_error_equals_mean_human_variance(groups):
    truth = [RatingMultiset(f"s{i}", "effort", tuple(g)) for i, g in enumerate(groups)]
    preds = majority_baseline(truth).predict([(m.situation_id, m.dimension) for m in truth])
    report = evaluate(preds, truth)
    expected = sum((frac_mean_var(g)[1] for g in groups), Fraction(0)) / len(groups)
    assert math.isclose(report.aggregate.var_mae, float(expected), rel_tol=0, abs_tol=1e-12)

import numpy as np
import pytest

from oracles import dense_grid_best_f1
from pehop.decision import (
    Metrics,
    ProbabilitySeries,
    VotingParams,
    candidate_deltas,
    compute_metrics,
    evaluate_studies,
    f1_score,
    format_ratio,
    read_predictions_csv,
    tune_thresholds,
    validate_report,
    vote,
    write_predictions_csv,
)
from pehop.errors import DegenerateValidationSet, LengthMismatch


def random_val_set(rng, n=20, quantize=True):
    out = []
    labels = rng.random(n) < 0.5
    labels[0], labels[1] = True, False
    for i, y in enumerate(labels):
        rho = rng.beta(2, 5, size=int(rng.integers(3, 25)))
        if y:
            k = int(rng.integers(0, len(rho) + 1))
            rho[:k] = rng.beta(5, 2, size=k)
        if quantize:
            rho = np.round(rho, 2)
        out.append((ProbabilitySeries(f"s{i}", rho), bool(y)))
    return out


def test_vote_examples():
    assert vote(ProbabilitySeries("a", [0.2, 0.9, 0.95]), VotingParams(0.5, 2))
    assert not vote(ProbabilitySeries("a", [0.9]), VotingParams(0.9, 1))


def test_vote_counting_oracle(rng):
    for _ in range(10_000):
        rho = rng.random(int(rng.integers(1, 30)))
        params = VotingParams(float(rng.uniform(0.01, 0.99)), int(rng.integers(1, 10)))
        count = sum(1 for r in rho if r > params.delta)
        assert vote(rho, params) == (count >= params.mu)


def test_vote_monotone(rng):
    for _ in range(10_000):
        rho = rng.random(int(rng.integers(1, 15)))
        p = VotingParams(float(rng.uniform(0.05, 0.95)), int(rng.integers(1, 6)))
        if not vote(rho, p):
            continue
        raised = rho.copy()
        i = int(rng.integers(len(rho)))
        raised[i] = rng.uniform(rho[i], 1.0)
        assert vote(raised, p)
        assert vote(rho, VotingParams(float(rng.uniform(0.001, p.delta)), p.mu))
        assert vote(rho, VotingParams(p.delta, int(rng.integers(1, p.mu + 1))))


def test_params_validation():
    for bad in ((0.0, 1), (1.0, 1), (0.5, 0), (0.5, 1.5)):
        with pytest.raises(ValueError):
            VotingParams(*bad)


def test_series_validation():
    with pytest.raises(ValueError):
        ProbabilitySeries("x", [])
    with pytest.raises(ValueError):
        ProbabilitySeries("x", [0.5, 1.2])


def test_metrics_symmetric():
    m = compute_metrics([True] * 9 + [True] + [False] + [False] * 9,
                        [True] * 9 + [False] + [True] + [False] * 9)
    assert (m.tp, m.fp, m.fn, m.tn) == (9, 1, 1, 9)
    for v in (m.sensitivity, m.specificity, m.ppv, m.npv, m.f1):
        assert v == pytest.approx(0.9)


def test_metrics_undefined_are_none():
    m = Metrics(tp=0, fp=0, fn=0, tn=4)
    assert m.sensitivity is None and m.ppv is None and m.f1 is None
    assert m.specificity == 1.0
    assert format_ratio(m.ppv) == "n/a"


def test_f1_is_harmonic_mean(rng):
    for _ in range(500):
        tp, fp, fn, tn = rng.integers(0, 20, size=4)
        m = Metrics(int(tp), int(fp), int(fn), int(tn))
        if m.ppv is None or m.sensitivity is None:
            continue
        if m.ppv + m.sensitivity == 0:
            assert m.f1 == 0.0
        else:
            assert m.f1 == pytest.approx(2 * m.ppv * m.sensitivity / (m.ppv + m.sensitivity))
            assert m.f1 == pytest.approx(2 * tp / (2 * tp + fp + fn))


def test_hop2_table_value():
    assert f1_score(0.891, 0.929) == pytest.approx(0.910, abs=0.0005)


def test_length_mismatch():
    with pytest.raises(LengthMismatch):
        compute_metrics([True], [True, False])


def test_tune_separable():
    val = [(ProbabilitySeries(f"p{i}", [0.9] * 5), True) for i in range(3)]
    val += [(ProbabilitySeries(f"n{i}", [0.1] * 5), False) for i in range(3)]
    params, f1 = tune_thresholds(val)
    assert f1 == 1.0
    assert 0.1 <= params.delta < 0.9


def test_tune_two_studies(rng):
    for _ in range(50):
        pos = rng.random(6)
        neg = rng.random(5) * pos.max()
        if np.isclose(neg.max(), pos.max()):
            continue
        params, f1 = tune_thresholds([(pos, True), (neg, False)])
        assert f1 == 1.0
        assert neg.max() <= params.delta < pos.max()


def test_tune_tie_break_prefers_large_delta_then_mu():
    val = [(ProbabilitySeries("p", [0.8, 0.8]), True), (ProbabilitySeries("n", [0.2, 0.2]), False)]
    params, f1 = tune_thresholds(val)
    assert f1 == 1.0
    assert params.delta == pytest.approx(0.5)  # midpoint is the largest candidate below 0.8
    assert params.mu == 2


def test_tune_degenerate():
    with pytest.raises(DegenerateValidationSet):
        tune_thresholds([(ProbabilitySeries("a", [0.5]), True)])
    with pytest.raises(DegenerateValidationSet):
        tune_thresholds([([0.5], False), ([0.7], False)])


def test_tune_matches_dense_grid(rng):
    for _ in range(20):
        val = random_val_set(rng)
        params, f1 = tune_thresholds(val)
        rhos = [s.rho for s, _ in val]
        labels = [y for _, y in val]
        # same confusion counts; the two F1 formulas differ only in rounding
        assert f1 == pytest.approx(dense_grid_best_f1(rhos, labels), abs=1e-12)
        achieved = compute_metrics([vote(r, params) for r in rhos], labels).f1
        assert achieved == f1


def test_candidate_sufficiency_unquantized(rng):
    for _ in range(10):
        val = random_val_set(rng, quantize=False)
        _, f1 = tune_thresholds(val)
        assert f1 >= dense_grid_best_f1([s.rho for s, _ in val], [y for _, y in val]) - 1e-12


def test_candidates_cover_midpoints():
    c = candidate_deltas(np.array([0.2, 0.6, 0.6, 1.0]))
    assert list(c) == pytest.approx([0.1, 0.2, 0.4, 0.6, 0.8])


def test_evaluate_all_excluded():
    rep = evaluate_studies({"a": None, "b": None}, {"a": True, "b": False}, VotingParams(0.5, 1))
    assert rep["metrics"] == {} and rep["exclusion_rate"] == 1.0
    assert rep["excluded"] == ["a", "b"]
    validate_report(rep)


def test_evaluate_composition(rng):
    params = VotingParams(0.5, 2)
    outputs, labels = {}, {}
    for i in range(12):
        sid = f"s{i:02d}"
        labels[sid] = bool(rng.random() < 0.5)
        outputs[sid] = None if i % 5 == 0 else ProbabilitySeries(sid, rng.random(8))
    rep = evaluate_studies(outputs, labels, params)
    kept = sorted(k for k, v in outputs.items() if v is not None)
    m = compute_metrics([vote(outputs[k], params) for k in kept], [labels[k] for k in kept])
    assert rep["metrics"] == m.to_dict()
    assert rep["exclusion_rate"] == pytest.approx(3 / 12)
    validate_report(rep)


def test_report_schema_rejects_bad():
    import jsonschema

    rep = evaluate_studies({"a": ProbabilitySeries("a", [0.9])}, {"a": True}, VotingParams(0.5, 1))
    rep["params"]["mu"] = 0
    with pytest.raises(jsonschema.ValidationError):
        validate_report(rep)


def test_csv_roundtrip(tmp_path, rng):
    series = [ProbabilitySeries(f"s{i}", rng.random(int(rng.integers(1, 6)))) for i in range(4)]
    write_predictions_csv(tmp_path / "p.csv", series)
    back = read_predictions_csv(tmp_path / "p.csv")
    assert [s.study_id for s in back] == [s.study_id for s in series]
    for a, b in zip(series, back):
        assert np.array_equal(a.rho, b.rho)
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "study_id,slice_index,probability"

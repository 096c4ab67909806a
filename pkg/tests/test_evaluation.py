import jsonschema
import numpy as np
import pytest
import torch

from curriculum3d.errors import StageError
from curriculum3d.evaluation import (
    REPORT_SCHEMA, EvalReport, aggregate, cam_raw, class_activation_map, make_folds, score_fold,
    split_breasts_by_fold,
)
from curriculum3d.model import adapt_for_stage2, build_model


def test_folds_paper_sizes():
    ids = [f"P{i:03d}" for i in range(408)]
    folds = make_folds(ids, k=5, seed=0)
    assert sorted(len(f.test_patients) for f in folds) == [81, 81, 82, 82, 82]
    for f in folds:
        assert len(f.val_patients) == 65
        assert len(f.train_patients) in (261, 262)


def test_folds_partition():
    ids = [f"P{i}" for i in range(37)]
    folds = make_folds(ids, k=5, seed=3)
    tests = [set(f.test_patients) for f in folds]
    assert set().union(*tests) == set(ids)
    assert sum(len(t) for t in tests) == len(ids)
    for f in folds:
        tr, va, te = set(f.train_patients), set(f.val_patients), set(f.test_patients)
        assert not (tr & va) and not (tr & te) and not (va & te)
        assert tr | va | te == set(ids)


def test_folds_ten_patients():
    folds = make_folds([str(i) for i in range(10)], k=5)
    assert [len(f.test_patients) for f in folds] == [2] * 5


def test_folds_deterministic_and_errors():
    ids = [str(i) for i in range(20)]
    assert make_folds(ids, seed=4) == make_folds(ids, seed=4)
    assert make_folds(ids, seed=4) != make_folds(ids, seed=5)
    with pytest.raises(ValueError):
        make_folds(ids[:3], k=5)
    with pytest.raises(ValueError):
        make_folds(ids, k=1)


def test_breast_pairs_share_subset(small_breasts):
    folds = make_folds([b.patient_id for b in small_breasts], k=4, seed=0)
    for f in folds:
        parts = split_breasts_by_fold(small_breasts, f)
        for part in parts:
            pids = [b.patient_id for b in part]
            for pid in set(pids):
                assert pids.count(pid) == 2


def test_aggregate_example():
    folds = [{"fold": i, "auroc": a, "accuracy": 0.8, "flagged": False}
             for i, a in enumerate([0.88, 0.90, 0.89, 0.89, 0.89])]
    agg = aggregate(folds)
    assert agg["auroc_mean"] == pytest.approx(0.89, abs=1e-12)
    assert agg["auroc_std"] == pytest.approx(0.0063, abs=5e-5)


def test_aggregate_skips_flagged():
    folds = [{"fold": 0, "auroc": 0.9, "accuracy": 0.8, "flagged": False},
             {"fold": 1, "auroc": None, "accuracy": 1.0, "flagged": True}]
    agg = aggregate(folds)
    assert agg["auroc_mean"] == 0.9 and agg["n_folds_auroc"] == 1
    assert agg["accuracy_mean"] == pytest.approx(0.9)


@pytest.fixture
def adapted_micro(micro_config):
    from dataclasses import replace
    return adapt_for_stage2(build_model(replace(micro_config, in_channels=6)))


def test_score_fold_order_invariant(adapted_micro, small_breasts):
    a = score_fold(adapted_micro, small_breasts, 0)
    b = score_fold(adapted_micro, list(reversed(small_breasts)), 0)
    assert a == b
    assert len(a["predictions"]) == len(small_breasts)


def test_single_class_fold_flagged(adapted_micro, small_breasts):
    neg = [b for b in small_breasts if not b.label]
    with pytest.warns(UserWarning):
        entry = score_fold(adapted_micro, neg, 0)
    assert entry["flagged"] and entry["auroc"] is None


def test_report_structure_and_schema(adapted_micro, small_breasts):
    report = EvalReport(parameter_count=123, k=3)
    report.add_method("curriculum", [score_fold(adapted_micro, small_breasts, i) for i in (2, 0, 1)])
    d = report.to_dict()
    jsonschema.validate(d, REPORT_SCHEMA)
    assert [f["fold"] for f in d["methods"]["curriculum"]["folds"]] == [0, 1, 2]
    assert "curriculum" in report.table()
    assert len(report.roc_rows("curriculum")) > 0


def test_cam_contract(adapted_micro, small_breasts):
    b = small_breasts[0]
    heat = class_activation_map(adapted_micro, b, 1)
    assert heat.shape == b.volume.shape[1:]
    assert heat.min() >= 0 and heat.max() <= 1


def test_cam_requires_adapted(micro_config, small_breasts):
    from dataclasses import replace
    m = build_model(replace(micro_config, in_channels=6))
    with pytest.raises(StageError):
        class_activation_map(m, small_breasts[0], 1)


def test_cam_linearity(adapted_micro, small_breasts):
    b = small_breasts[1]
    with torch.no_grad():
        feats = adapted_micro.features(torch.as_tensor(b.volume[None]))[0].double().numpy()
        w = adapted_micro.fc.weight.double().numpy()
        bias = adapted_micro.fc.bias.double().numpy()
        logits = adapted_micro(torch.as_tensor(b.volume[None]))[0].double().numpy()
    for c in range(2):
        manual = np.zeros(feats.shape[1:])
        for ch in range(feats.shape[0]):
            manual += w[c, ch] * feats[ch]
        raw = cam_raw(adapted_micro, b.volume, c)
        np.testing.assert_allclose(raw, manual, rtol=1e-5, atol=1e-6)
        # the head is linear in the pooled features: mean of the map + bias = logit
        assert raw.mean() + bias[c] == pytest.approx(logits[c], abs=1e-5)


def test_cam_zero_map_stays_zero(adapted_micro, small_breasts):
    with torch.no_grad():
        adapted_micro.fc.weight.zero_()
    heat = class_activation_map(adapted_micro, small_breasts[0], 1)
    assert np.all(heat == 0)

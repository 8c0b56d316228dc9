import copy
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densepose_kit.core import SkeletonSpec
from densepose_kit.errors import LengthError, ParseError, SchemaError, UnknownImageId
from densepose_kit.evaluation import (
    METRIC_NAMES,
    EvalResult,
    evaluate,
    load_gt,
    load_results,
    parse_gt,
    parse_results,
    table_header,
)
from conftest import make_eval_fixture
from oracles import KAPPAS, _oks_or_zero, reference_evaluate

SPEC = SkeletonSpec.coco()

# Reference-evaluator output on make_eval_fixture(0), frozen.
FIXTURE_METRICS = {
    "AP": 0.3405752457311964,
    "AP50": 0.6083864987253192,
    "AP75": 0.2858515116104386,
    "APM": 0.38158903031688285,
    "APL": 0.2957627191290559,
    "AR": 0.6517241379310346,
}


def _run(gt_dict, results):
    return evaluate(parse_gt(gt_dict), parse_results(results), SPEC).to_dict()


def _one(kps, vis=2, area=5000.0, img=1, ann_id=1, iscrowd=0):
    flat = [v for (x, y) in kps for v in (float(x), float(y), vis)]
    return {"id": ann_id, "image_id": img, "category_id": 1, "keypoints": flat, "area": area,
            "iscrowd": iscrowd}


def _det(kps, score, img=1):
    return {"image_id": img, "category_id": 1, "keypoints": [v for (x, y) in kps for v in (x, y, 1.0)],
            "score": score}


def _pose(seed=0, cx=200, cy=200, size=80):
    rng = np.random.default_rng(seed)
    return [(float(x), float(y)) for x, y in zip(rng.normal(cx, size / 4, 17), rng.normal(cy, size / 2.5, 17))]


def _gt(anns, n_images=1):
    return {"images": [{"id": i, "width": 640, "height": 480} for i in range(1, n_images + 1)],
            "annotations": anns, "categories": [{"id": 1, "name": "person"}]}


# -- loading ------------------------------------------------------------------

def test_minimal_file(tmp_path):
    p = tmp_path / "gt.json"
    p.write_text(json.dumps(_gt([_one(_pose())])))
    ds = load_gt(p)
    assert (len(ds.images), len(ds.annotations)) == (1, 1)


def test_length_error():
    ann = _one(_pose())
    ann["keypoints"] = ann["keypoints"][:50]
    with pytest.raises(LengthError):
        parse_gt(_gt([ann]))
    with pytest.raises(LengthError):
        parse_results([{"image_id": 1, "keypoints": [0.0] * 50, "score": 0.5}])


def test_schema_and_parse_errors(tmp_path):
    with pytest.raises(SchemaError):
        parse_gt({"images": []})
    ann = _one(_pose())
    del ann["image_id"]
    with pytest.raises(SchemaError):
        parse_gt(_gt([ann]))
    with pytest.raises(SchemaError):
        parse_gt(_gt([_one(_pose()), _one(_pose())]))  # duplicate ids
    with pytest.raises(SchemaError):
        parse_results({"not": "a list"})
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ParseError):
        load_gt(bad)
    with pytest.raises(ParseError):
        load_results(tmp_path / "missing.json")


def test_unknown_fields_ignored():
    d = _gt([dict(_one(_pose()), extra="x")])
    d["info"] = {"year": 2020}
    assert len(parse_gt(d).annotations) == 1


def test_fixture_roundtrip(tmp_path, eval_fixture):
    gt, res = eval_fixture
    ds = parse_gt(gt)
    p = tmp_path / "gt.json"
    p.write_text(json.dumps(ds.to_dict()))
    again = load_gt(p)
    assert again.to_dict() == ds.to_dict()
    for a, b in zip(ds.annotations, again.annotations):
        assert np.array_equal(a.keypoints, b.keypoints) and a.area == b.area and a.iscrowd == b.iscrowd
    r = tmp_path / "res.json"
    r.write_text(json.dumps(parse_results(res).to_list()))
    assert load_results(r).to_list() == parse_results(res).to_list()


def test_unknown_image_id():
    with pytest.raises(UnknownImageId):
        _run(_gt([_one(_pose())]), [_det(_pose(), 0.5, img=9)])


# -- metrics ------------------------------------------------------------------

def test_perfect_single_match():
    kps = _pose()
    m = _run(_gt([_one(kps)]), [_det(kps, 0.9)])
    assert m["AP"] == m["AP50"] == m["AP75"] == m["AR"] == 1.0


def test_no_detections():
    m = _run(_gt([_one(_pose())]), [])
    assert m["AP"] == 0.0 and m["AR"] == 0.0


def test_empty_bucket_is_sentinel():
    # Area 5000 is medium; the large bucket has no ground truth.
    m = _run(_gt([_one(_pose())]), [_det(_pose(), 0.9)])
    assert m["APL"] == -1.0
    assert EvalResult(*[-1.0] * 6).table_row("x").count("n/a") == 6
    assert table_header().split() == list(METRIC_NAMES)


def test_fixture_matches_frozen_reference(eval_fixture):
    gt, res = eval_fixture
    got = _run(gt, res)
    live = reference_evaluate(gt, res)
    for name in METRIC_NAMES:
        assert live[name] == pytest.approx(FIXTURE_METRICS[name], abs=1e-12)
        assert abs(got[name] - FIXTURE_METRICS[name]) <= 1e-6


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_other_fixtures_match_reference(seed):
    gt, res = make_eval_fixture(seed, n_images=12)
    got, ref = _run(gt, res), reference_evaluate(gt, res)
    for name in METRIC_NAMES:
        assert abs(got[name] - ref[name]) <= 1e-6


def test_fixture_matches_pycocotools(eval_fixture):
    pytest.importorskip("pycocotools")
    import contextlib
    import io

    from pycocotools.coco import COCO
    from pycocotools.cocoeval import COCOeval

    gt, res = copy.deepcopy(eval_fixture)
    for ann in gt["annotations"]:
        if "area" not in ann:
            kp = np.array(ann["keypoints"]).reshape(-1, 3)
            lab = kp[kp[:, 2] > 0, :2]
            ann["area"] = float(np.prod(lab.max(0) - lab.min(0)) * 0.53)
    with contextlib.redirect_stdout(io.StringIO()):
        coco = COCO()
        coco.dataset = gt
        coco.createIndex()
        dt = coco.loadRes(res)
        E = COCOeval(coco, dt, "keypoints")
        E.params.maxDets = [100]
        E.evaluate()
        E.accumulate()
    prec, rec = E.eval["precision"], E.eval["recall"]

    def mean(a):
        a = a[a > -1]
        return float(a.mean()) if a.size else -1.0

    # Area ranges in pycocotools keypoint params: all, medium, large.
    ref = {
        "AP": mean(prec[:, :, 0, 0, 0]),
        "AP50": mean(prec[0, :, 0, 0, 0]),
        "AP75": mean(prec[5, :, 0, 0, 0]),
        "APM": mean(prec[:, :, 0, 1, 0]),
        "APL": mean(prec[:, :, 0, 2, 0]),
        "AR": mean(rec[:, 0, 0, 0]),
    }
    got = _run(*eval_fixture)
    for name in METRIC_NAMES:
        assert abs(got[name] - ref[name]) <= 1e-6


# -- properties ---------------------------------------------------------------

def test_duplicates_single_tp():
    kps = _pose()
    one = _run(_gt([_one(kps)]), [_det(kps, 0.9)])
    dup = _run(_gt([_one(kps)]), [_det(kps, 0.9), _det(kps, 0.8)])
    # The second copy is a false positive after a full-recall hit, so AP stays 1 and recall cannot exceed 1.
    assert dup["AP"] == one["AP"] == 1.0
    assert dup["AR"] == 1.0
    two_gt = _run(_gt([_one(kps), _one(_pose(5, 400, 300), ann_id=2)]), [_det(kps, 0.9), _det(kps, 0.8)])
    assert two_gt["AR"] == 0.5


def test_tie_break_by_input_order():
    kps = _pose()
    good, bad = _det(kps, 0.5), _det(_pose(9, 500, 100), 0.5)
    first = _run(_gt([_one(kps)]), [good, bad])
    second = _run(_gt([_one(kps)]), [bad, good])
    assert first["AP"] == 1.0
    assert second["AP"] < 1.0


def test_distinct_score_order_invariance(eval_fixture):
    gt, res = eval_fixture
    rng = np.random.default_rng(0)
    shuffled = [res[i] for i in rng.permutation(len(res))]
    assert _run(gt, shuffled) == _run(gt, res)


def test_crowd_is_ignore_region():
    kps = _pose()
    m = _run(_gt([_one(kps, iscrowd=1)]), [_det(kps, 0.9)])
    assert m["AP"] == -1.0  # nothing countable
    base = _run(_gt([_one(_pose(3, 450, 300), ann_id=2)]), [_det(_pose(3, 450, 300), 0.9)])
    with_crowd = _run(_gt([_one(_pose(3, 450, 300), ann_id=2), _one(kps, iscrowd=1)]),
                      [_det(_pose(3, 450, 300), 0.9), _det(kps, 0.95)])
    assert with_crowd == base


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1))
def test_lowest_score_false_positive_never_helps(seed):
    gt, res = make_eval_fixture(seed % 1000, n_images=5)
    base = _run(gt, res)
    low = min((r["score"] for r in res), default=1.0)
    fp = _det(_pose(seed % 97, 320, 240, 60), max(low / 2, 0.0))
    fp["keypoints"] = [v + 1000.0 if i % 3 < 2 else v for i, v in enumerate(fp["keypoints"])]
    worse = _run(gt, res + [fp])
    assert worse["AP"] <= base["AP"] + 1e-12


@settings(max_examples=25)
@given(st.integers(0, 2 ** 32 - 1))
def test_removing_matched_detection_never_helps(seed):
    gt, res = make_eval_fixture(seed % 1000, n_images=5)
    base_ref = reference_evaluate(gt, res)
    # An exact copy of a countable GT that no other detection can claim is a TP
    # at every threshold and leaves every other match untouched.
    for ann in gt["annotations"]:
        if ann["iscrowd"] or not any(v > 0 for v in ann["keypoints"][2::3]):
            continue
        rivals = [r for r in res if r["image_id"] == ann["image_id"]]
        if all(_oks_or_zero(r, ann, KAPPAS) < 0.5 for r in rivals):
            break
    else:
        return
    kp = np.array(ann["keypoints"], float).reshape(-1, 3)
    hit = {"image_id": ann["image_id"], "category_id": 1,
           "keypoints": [float(v) for v in np.column_stack([kp[:, :2], np.ones(len(kp))]).ravel()],
           "score": 1.0}
    with_hit = _run(gt, res + [hit])
    assert abs(_run(gt, res)["AP"] - base_ref["AP"]) <= 1e-6
    assert _run(gt, res)["AP"] <= with_hit["AP"] + 1e-12


def test_displacing_match_can_lower_ap():
    # Greedy matching: a new top-scoring hit steals a GT from an existing TP,
    # which then becomes a false positive. Both evaluators agree AP drops.
    gt, res = make_eval_fixture(367, n_images=5)
    ann = next(a for a in gt["annotations"] if not a["iscrowd"])
    kp = np.array(ann["keypoints"], float).reshape(-1, 3)
    hit = {"image_id": ann["image_id"], "category_id": 1,
           "keypoints": [float(v) for v in np.column_stack([kp[:, :2], np.ones(len(kp))]).ravel()],
           "score": 1.0}
    before, after = _run(gt, res)["AP"], _run(gt, res + [hit])["AP"]
    assert after < before
    assert abs(after - reference_evaluate(gt, res + [hit])["AP"]) <= 1e-6


def test_ar_monotone_in_cap(eval_fixture):
    gt, res = eval_fixture
    g, r = parse_gt(gt), parse_results(res)
    ars = [evaluate(g, r, SPEC, max_dets=c).ar for c in (1, 2, 3, 5, 10, 100)]
    assert all(a <= b + 1e-12 for a, b in zip(ars, ars[1:]))
    assert ars[0] < ars[-1]

"""Command-line entry point: every pipeline stage as a subcommand over JSON/CSV fixtures.

Exit codes: 0 success, 1 usage error, 2 bad input or configuration,
3 internal invariant violation.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .assign import assign_scene
from .config import RunConfig, load_config
from .core import Detection, GroundTruthInstance, Pose, decode_refined
from .errors import InputError, SchemaError
from .evaluation import METRIC_NAMES, _read_json, evaluate, table_header
from .fixtures import (
    fixture_gt,
    fixture_results,
    gt_instances,
    hypothesis_confidence,
    parse_hypotheses,
    simulation_fixture,
)
from .losses import (
    bce_score_loss,
    focal_loss,
    gaussian_heatmap_targets,
    heatmap_loss,
    l1_regression_loss,
    total_loss,
)
from .oks import compute_oks, instance_scale
from .postprocess import NMS_MODES, SCORE_MODES, pose_nms
from .sim.experiments import (
    SCORE_STREAM,
    run_refine_sweep,
    run_scoring_experiment,
    run_strategy_ablation,
)
from .sim.predict import simulate_dense
from .sim.scene import generate_scene

EXIT_OK, EXIT_USAGE, EXIT_INPUT, EXIT_INTERNAL = 0, 1, 2, 3
LOSS_NAMES = ("cls", "heatmap", "reg_initial", "reg_refined", "psm")
EXPERIMENTS = ("table1", "refine-sweep", "scoring")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="JSON config file (falls back to $DENSEPOSE_KIT_CONFIG)")
    p.add_argument("--seed", type=int, help="master seed for every stochastic path")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes")
    p.add_argument("--out", help="write the output here instead of standard output")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="densepose-kit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    common = [_common()]

    p = sub.add_parser("oks", parents=common, help="OKS between predicted and ground-truth poses")
    p.add_argument("--gt", required=True, help="pose object or list of pose objects")
    p.add_argument("--dt", required=True, help="pose object or list of pose objects")

    p = sub.add_parser("assign", parents=common, help="per-location assignment for a simulation fixture")
    p.add_argument("--fixture", required=True)
    p.add_argument("--all", action="store_true", help="also list background locations")

    p = sub.add_parser("nms", parents=common, help="score fusion and pose NMS")
    p.add_argument("--dt", required=True, help="simulation fixture or list of hypotheses")
    p.add_argument("--oks-thr", type=float)
    p.add_argument("--mode", choices=NMS_MODES)
    p.add_argument("--score-mode", choices=SCORE_MODES)

    p = sub.add_parser("eval", parents=common, help="COCO keypoint AP/AR")
    p.add_argument("--gt", required=True, help="COCO annotations (or a simulation fixture)")
    p.add_argument("--dt", required=True, help="COCO results list (or an nms report)")

    p = sub.add_parser("losses", parents=common, help="the five loss terms and their weighted total")
    p.add_argument("--fixture", help="simulation fixture; simulated from --seed when omitted")

    p = sub.add_parser("simulate", parents=common, help="emit synthetic scenes and dense predictions")
    p.add_argument("--scenes", type=int, help="number of scenes")

    p = sub.add_parser("ablate", parents=common, help="seeded ablation table as CSV")
    p.add_argument("--experiment", choices=EXPERIMENTS, default="table1")
    p.add_argument("--trials", type=int)
    return parser


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        cfg = cfg.replace(seed=args.seed)
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    nms_changes = {}
    if getattr(args, "oks_thr", None) is not None:
        nms_changes["oks_threshold"] = args.oks_thr
    if getattr(args, "mode", None) is not None:
        nms_changes["mode"] = args.mode
    if nms_changes:
        cfg = cfg.replace(nms=replace(cfg.nms, **nms_changes))
    if getattr(args, "score_mode", None) is not None:
        cfg = cfg.replace(strategy=replace(cfg.strategy, score_mode=args.score_mode))
    if getattr(args, "scenes", None) is not None:
        cfg = cfg.replace(simulate=replace(cfg.simulate, n_scenes=args.scenes))
    if getattr(args, "trials", None) is not None:
        cfg = cfg.replace(ablation=replace(cfg.ablation, n_trials=args.trials))
    return cfg


# -- input helpers -----------------------------------------------------------

def _pose_records(data, where: str) -> tuple[list[dict], bool]:
    single = isinstance(data, dict)
    records = [data] if single else data
    if not isinstance(records, list) or not records:
        raise SchemaError(f"{where}: expected a pose object or a non-empty list of them")
    return records, single


def _instance(rec, k: int, where: str) -> GroundTruthInstance:
    if not isinstance(rec, dict) or "keypoints" not in rec:
        raise SchemaError(f"{where}: missing required field 'keypoints'")
    flat = rec["keypoints"]
    if not isinstance(flat, list) or len(flat) not in (2 * k, 3 * k):
        raise SchemaError(f"{where}: keypoints must hold {2 * k} (x, y) or {3 * k} (x, y, v) numbers")
    try:
        arr = np.asarray(flat, dtype=float).reshape(k, -1)
        pose = Pose(arr[:, :2], arr[:, 2].astype(int) if arr.shape[1] == 3 else None)
        area = rec.get("area")
        return GroundTruthInstance(pose, None if area is None else float(area))
    except InputError:
        raise
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"{where}: {exc}") from None


# -- commands ----------------------------------------------------------------

def cmd_oks(args, cfg: RunConfig):
    k = cfg.skeleton.k
    gts, gt_single = _pose_records(_read_json(args.gt), "gt")
    dts, dt_single = _pose_records(_read_json(args.dt), "dt")
    gt_inst = [_instance(r, k, f"gt[{i}]") for i, r in enumerate(gts)]
    dt_inst = [_instance(r, k, f"dt[{i}]") for i, r in enumerate(dts)]
    matrix = [[compute_oks(d.pose, g.pose, instance_scale(g, cfg.assigner.use_area), cfg.skeleton)
               for g in gt_inst] for d in dt_inst]
    oks = matrix[0][0] if gt_single and dt_single else matrix
    return {"oks": oks, "config": cfg.to_dict()}


def _fixture_scenes(data, cfg: RunConfig):
    k = cfg.skeleton.k
    gt = fixture_gt(data, k)
    hyps = parse_hypotheses(data, k) if isinstance(data, dict) and "hypotheses" in data else []
    insts = gt_instances(gt)
    by_image: dict[int, list] = {img.id: [] for img in gt.images}
    for fh in hyps:
        if fh.image_id not in by_image:
            raise SchemaError(f"hypothesis refers to unknown image id {fh.image_id}")
        by_image[fh.image_id].append(fh)
    return gt, insts, by_image, bool(hyps)


def _scene_assignment(img, insts, fhs, has_hyps: bool, cfg: RunConfig):
    hyp_map = {fh.hypothesis.location: fh.hypothesis for fh in fhs} if has_hyps else None
    try:
        return assign_scene(insts, img.width, img.height, cfg.assigner, cfg.skeleton, hyp_map)
    except KeyError as exc:
        raise SchemaError(f"image {img.id}: fixture has no hypothesis for assigned location {exc}") from None


def cmd_assign(args, cfg: RunConfig) -> str:
    """JSON lines: a header with the config and per-image counts, then one line per location."""
    gt, insts, by_image, has_hyps = _fixture_scenes(_read_json(args.fixture), cfg)
    summary, lines = [], []
    for img in gt.images:
        sa = _scene_assignment(img, insts[img.id], by_image[img.id], has_hyps, cfg)
        summary.append({"image_id": img.id,
                        "n_initial_positives": len(sa.positives("initial")),
                        "n_refine_positives": len(sa.positives("refine"))})
        for a in sa.assignments:
            if args.all or a.instance_id is not None:
                lines.append(json.dumps(dict(image_id=img.id, **a.to_dict())))
    header = json.dumps({"config": cfg.to_dict(), "images": summary})
    return "\n".join([header] + lines) + "\n"


def _detections(fhs, score_mode: str, min_confidence: float) -> list[Detection]:
    dets = []
    for n, fh in enumerate(fhs):
        conf = hypothesis_confidence(fh, score_mode)
        if conf >= min_confidence:
            dets.append(Detection(decode_refined(fh.hypothesis), conf, fh.hypothesis.location.level, n))
    return dets


def cmd_nms(args, cfg: RunConfig):
    fhs = parse_hypotheses(_read_json(args.dt), cfg.skeleton.k)
    by_image: dict[int, list] = {}
    for fh in fhs:
        by_image.setdefault(fh.image_id, []).append(fh)
    results, n_in = [], 0
    for img_id in sorted(by_image):
        dets = _detections(by_image[img_id], cfg.strategy.score_mode, cfg.pipeline.min_confidence)
        n_in += len(dets)
        for d in pose_nms(dets, cfg.nms, cfg.skeleton):
            kps = np.concatenate([d.pose.keypoints, np.ones((d.pose.k, 1))], axis=1)
            results.append({"image_id": img_id, "category_id": 1,
                            "keypoints": [float(x) for x in kps.ravel()], "score": d.confidence})
    return {"n_candidates": n_in, "n_kept": len(results), "results": results, "config": cfg.to_dict()}


def cmd_eval(args, cfg: RunConfig):
    k = cfg.skeleton.k
    gt = fixture_gt(_read_json(args.gt), k)
    res = fixture_results(_read_json(args.dt), k)
    result = evaluate(gt, res, cfg.skeleton, max_dets=cfg.nms.max_detections)
    table = table_header() + "\n" + result.table_row("result")
    print(table, file=sys.stderr)
    return {"metrics": result.to_dict(), "table": table, "config": cfg.to_dict()}


def _predicted_heatmap(dets: Sequence[Detection], w: int, h: int, k: int) -> np.ndarray:
    """Surrogate heatmap head: each surviving pose rendered as Gaussians scaled by its confidence."""
    out = gaussian_heatmap_targets([], w, h, k)
    for d in dets:
        g = gaussian_heatmap_targets([GroundTruthInstance(d.pose)], w, h, k) * d.confidence
        np.maximum(out, g, out=out)
    return out


def fixture_losses(data, cfg: RunConfig) -> dict[str, float]:
    """Loss terms over a simulation fixture.

    Locations absent from the fixture count as background predicted with
    probability 0; the pose-score term covers the listed hypotheses only.
    """
    k = cfg.skeleton.k
    gt, insts, by_image, has_hyps = _fixture_scenes(data, cfg)
    if not has_hyps:
        raise SchemaError("losses needs a fixture with hypotheses")
    cls_p, cls_t, hm_p, hm_t, psm_p, psm_t = [], [], [], [], [], []
    pairs1, pairs2 = [], []
    for img in gt.images:
        fhs = by_image[img.id]
        by_id = {inst.id: inst for inst in insts[img.id]}
        hyp_map = {fh.hypothesis.location: fh.hypothesis for fh in fhs}
        sa = _scene_assignment(img, insts[img.id], fhs, True, cfg)
        for a in sa.assignments:
            h = hyp_map.get(a.location)
            cls_p.append(h.cls_score if h is not None else 0.0)
            cls_t.append(1.0 if a.is_initial_positive else 0.0)
            if h is not None:
                psm_p.append(h.pose_score)
                psm_t.append(a.psm_target)
            if a.is_initial_positive:
                pairs1.append((h, by_id[a.instance_id].pose))
            if a.is_refine_positive:
                pairs2.append((h, by_id[a.instance_id].pose))
        hm_t.append(gaussian_heatmap_targets(insts[img.id], img.width, img.height, k).ravel())
        dets = pose_nms(_detections(fhs, "fused", cfg.pipeline.min_confidence), cfg.nms, cfg.skeleton)
        hm_p.append(_predicted_heatmap(dets, img.width, img.height, k).ravel())
    comps = {
        "cls": focal_loss(np.array(cls_p), np.array(cls_t), cfg.focal),
        "heatmap": heatmap_loss(np.concatenate(hm_p or [np.zeros(0)]), np.concatenate(hm_t or [np.zeros(0)]),
                                cfg.focal),
        "reg_initial": l1_regression_loss(pairs1, "initial"),
        "reg_refined": l1_regression_loss(pairs2, "refined"),
        "psm": bce_score_loss(np.array(psm_p), np.array(psm_t)),
    }
    comps["total"] = total_loss([comps[n] for n in LOSS_NAMES], cfg.loss_weights)
    return comps


def simulate_fixture(cfg: RunConfig) -> dict:
    scenes = [generate_scene((cfg.seed, 0, i), cfg.scene, cfg.skeleton, cfg.assigner)
              for i in range(cfg.simulate.n_scenes)]
    denses = [simulate_dense(s, cfg.noise, (cfg.seed, SCORE_STREAM, i), cfg.skeleton, cfg.assigner)
              for i, s in enumerate(scenes)]
    return simulation_fixture(scenes, denses, cfg.pipeline_config())


def cmd_losses(args, cfg: RunConfig):
    data = _read_json(args.fixture) if args.fixture else simulate_fixture(cfg)
    return {"losses": fixture_losses(data, cfg), "weights": dict(zip(LOSS_NAMES, cfg.loss_weights.as_tuple())),
            "config": cfg.to_dict()}


def cmd_simulate(args, cfg: RunConfig):
    return dict(simulate_fixture(cfg), config=cfg.to_dict())


def _scoring_csv(results) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("score_mode",) + METRIC_NAMES)
    for mode, r in results.items():
        writer.writerow([mode] + [f"{v:.6f}" for v in r.as_tuple()])
    return buf.getvalue()


def cmd_ablate(args, cfg: RunConfig) -> tuple[str, dict]:
    acfg = cfg.ablation_config()
    if args.experiment == "scoring":
        n = acfg.n_trials * acfg.n_test_scenes
        scenes = [generate_scene((cfg.seed, 1, i), cfg.scene, cfg.skeleton, cfg.assigner) for i in range(n)]
        results = run_scoring_experiment(scenes, cfg.noise, cfg.seed, SCORE_MODES, cfg.pipeline_config(),
                                         cfg.skeleton, cfg.assigner)
        report = {"rows": [{"score_mode": m, "metrics": r.to_dict()} for m, r in results.items()]}
        return _scoring_csv(results), report
    if args.experiment == "refine-sweep":
        rep = run_refine_sweep(acfg, cfg.ablation.refine_thresholds, cfg.strategy.score_mode, args.jobs)
    else:
        rep = run_strategy_ablation(acfg, args.jobs)
    return rep.to_csv(), rep.to_dict()


COMMANDS = {
    "oks": cmd_oks,
    "assign": cmd_assign,
    "nms": cmd_nms,
    "eval": cmd_eval,
    "losses": cmd_losses,
    "simulate": cmd_simulate,
}


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
        return
    Path(out).write_text(text)
    print(f"wrote {out}", file=sys.stderr)


def run_command(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        if args.command == "ablate":
            text, report = cmd_ablate(args, cfg)
            report = dict(report, experiment=args.experiment, config=cfg.to_dict())
            _emit(text, args.out)
            if args.out is not None:
                _emit(json.dumps(report, indent=2) + "\n", str(Path(args.out).with_suffix(".json")))
        else:
            payload = COMMANDS[args.command](args, cfg)
            _emit(payload if isinstance(payload, str) else json.dumps(payload) + "\n", args.out)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"densepose-kit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InputError as exc:
        print(f"densepose-kit: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - anything else is a broken invariant
        traceback.print_exc(file=sys.stderr)
        print(f"densepose-kit: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()

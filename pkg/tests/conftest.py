import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "default", max_examples=60, deadline=None, derandomize=True, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

K = 17


def random_pose(rng, cx, cy, size, k=K):
    """Loose person-like cloud of k keypoints around (cx, cy)."""
    pts = np.column_stack([rng.normal(cx, 0.25 * size, k), rng.normal(cy, 0.4 * size, k)])
    return pts


def make_eval_fixture(seed=0, n_images=20):
    """Synthetic COCO keypoint ground truth and detections of mixed quality.

    Roughly 3 GT and 6 detections per image. Some GT are crowd regions, some
    have unlabeled keypoints or no annotated area; detections include noisy
    copies of GT, duplicates and unrelated poses.
    """
    rng = np.random.default_rng(seed)
    images, anns, results = [], [], []
    ann_id = 1
    for img_id in range(1, n_images + 1):
        images.append({"id": img_id, "width": 640, "height": 480})
        n_gt = int(rng.integers(1, 6))
        poses = []
        for _ in range(n_gt):
            size = float(np.exp(rng.uniform(np.log(15), np.log(250))))
            pts = random_pose(rng, rng.uniform(50, 590), rng.uniform(50, 430), size)
            vis = np.where(rng.random(K) < 0.8, 2, np.where(rng.random(K) < 0.5, 1, 0))
            if not (vis > 0).any():
                vis[0] = 2
            lab = pts[vis > 0]
            span = lab.max(axis=0) - lab.min(axis=0)
            ann = {
                "id": ann_id,
                "image_id": img_id,
                "category_id": 1,
                "keypoints": [float(v) for row in np.column_stack([pts, vis]) for v in row],
                "num_keypoints": int((vis > 0).sum()),
                "iscrowd": int(rng.random() < 0.08),
                "bbox": [float(lab[:, 0].min()), float(lab[:, 1].min()), float(span[0]), float(span[1])],
            }
            if rng.random() < 0.85:
                ann["area"] = float(span[0] * span[1] * rng.uniform(0.4, 0.9))
            for i in range(K):
                ann["keypoints"][3 * i + 2] = int(ann["keypoints"][3 * i + 2])
            anns.append(ann)
            poses.append((pts, size))
            ann_id += 1
        for pts, size in poses:
            for _ in range(int(rng.integers(0, 4))):
                noise = rng.normal(0.0, rng.uniform(0.002, 0.08) * size, pts.shape)
                results.append(_result(img_id, pts + noise, rng.random()))
        for _ in range(int(rng.integers(0, 3))):
            size = float(np.exp(rng.uniform(np.log(15), np.log(250))))
            results.append(_result(img_id, random_pose(rng, rng.uniform(50, 590), rng.uniform(50, 430), size),
                                   rng.random()))
    gt = {"images": images, "annotations": anns, "categories": [{"id": 1, "name": "person"}]}
    return gt, results


def _result(img_id, pts, score):
    kps = np.column_stack([pts, np.ones(len(pts))])
    return {"image_id": img_id, "category_id": 1, "keypoints": [float(v) for v in kps.ravel()],
            "score": float(score)}


@pytest.fixture(scope="session")
def eval_fixture():
    return make_eval_fixture(0)

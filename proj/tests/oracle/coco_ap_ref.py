#!/usr/bin/env python3
"""Reference COCO-protocol AP evaluator used to freeze test fixtures.

Follows the standard COCO evaluation protocol (greedy per-image matching with
ignorable out-of-range ground truth, 101-point interpolated AP, maxDets cap),
implemented with numpy arrays and argsort ordering so it shares no code or
structure with the C++ implementation it checks.

Usage:
  coco_ap_ref.py eval fixture.json    # print metrics for the fixture inputs
  coco_ap_ref.py gen fixture.json     # generate a random fixture + expected values
"""

import json
import sys

import numpy as np


def iou_xywh(dets, gts):
    """dets [D,4], gts [G,4] in xywh -> [D,G] IoU matrix."""
    D, G = len(dets), len(gts)
    out = np.zeros((D, G))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            ix = min(d[0] + d[2], g[0] + g[2]) - max(d[0], g[0])
            iy = min(d[1] + d[3], g[1] + g[3]) - max(d[1], g[1])
            if ix <= 0 or iy <= 0:
                continue
            inter = ix * iy
            union = d[2] * d[3] + g[2] * g[3] - inter
            out[i, j] = inter / union if union > 0 else 0.0
    return out


def evaluate_img(dets, scores, gts, thr, area_rng, max_dets):
    """Returns (scores_kept, matched, ignored, n_gt) for one image."""
    gts = np.asarray(gts, dtype=float).reshape(-1, 4)
    dets = np.asarray(dets, dtype=float).reshape(-1, 4)
    scores = np.asarray(scores, dtype=float)

    g_areas = gts[:, 2] * gts[:, 3] if len(gts) else np.zeros(0)
    g_ig = (g_areas < area_rng[0]) | (g_areas > area_rng[1])
    g_ord = np.argsort(g_ig, kind="mergesort")

    d_ord = np.argsort(-scores, kind="mergesort")[:max_dets]
    ious = iou_xywh(dets[d_ord], gts)

    gtm = np.full(len(gts), -1)
    dtm = np.full(len(d_ord), -1)
    dt_ig = np.zeros(len(d_ord), dtype=bool)
    for di in range(len(d_ord)):
        best = min(thr, 1 - 1e-10)
        m = -1
        for gi in g_ord:
            if gtm[gi] >= 0 and not g_ig[gi]:
                continue
            if m > -1 and not g_ig[m] and g_ig[gi]:
                break
            if ious[di, gi] < best:
                continue
            best = ious[di, gi]
            m = gi
        if m > -1:
            gtm[m] = di
            dtm[di] = m
            dt_ig[di] = g_ig[m]
    d_areas = dets[d_ord, 2] * dets[d_ord, 3] if len(d_ord) else np.zeros(0)
    dt_ig |= (dtm < 0) & ((d_areas < area_rng[0]) | (d_areas > area_rng[1]))
    matched = (dtm >= 0) & ~dt_ig
    return scores[d_ord], matched, dt_ig, int((~g_ig).sum())


def ap_at(images, thr, area_rng, max_dets):
    per_img = [evaluate_img(d, s, g, thr, area_rng, max_dets) for d, s, g in images]
    n_gt = sum(x[3] for x in per_img)
    if n_gt == 0:
        return None
    scores = np.concatenate([x[0] for x in per_img]) if per_img else np.zeros(0)
    matched = np.concatenate([x[1] for x in per_img]) if per_img else np.zeros(0, bool)
    ignored = np.concatenate([x[2] for x in per_img]) if per_img else np.zeros(0, bool)
    order = np.argsort(-scores, kind="mergesort")
    matched, ignored = matched[order], ignored[order]
    keep = ~ignored
    tps = np.cumsum(matched[keep])
    fps = np.cumsum(~matched[keep])
    rc = tps / n_gt
    pr = tps / np.maximum(tps + fps, 1e-12)
    pr = pr.tolist()
    for i in range(len(pr) - 1, 0, -1):
        pr[i - 1] = max(pr[i - 1], pr[i])
    rec_thrs = np.linspace(0.0, 1.0, 101)
    inds = np.searchsorted(rc, rec_thrs, side="left")
    q = np.zeros(101)
    for ri, pi in enumerate(inds):
        if pi < len(pr):
            q[ri] = pr[pi]
    return float(q.mean())


def sweep(images, max_dets=100):
    thrs = [round(0.05 * k, 10) for k in range(1, 11)]
    ranges = {
        "all": (0.0, 1e10),
        "small": (0.0, 32.0 ** 2),
        "medium": (32.0 ** 2, 96.0 ** 2),
    }
    out = {}
    for name, rng in ranges.items():
        vals = [ap_at(images, t, rng, max_dets) for t in thrs]
        defined = [v for v in vals if v is not None]
        out[name] = sum(defined) / len(defined) if defined else None
        if name == "all":
            out["per_threshold"] = [v if v is not None else -1.0 for v in vals]
            out["ap_at_050"] = vals[-1]
    return {
        "ap_mean": out["all"],
        "ap_at_050": out["ap_at_050"],
        "ap_small": out["small"],
        "ap_medium": out["medium"],
        "per_threshold": out["per_threshold"],
    }


def load_images(fix):
    return [(im["dets"], im["scores"], im["gts"]) for im in fix["images"]]


def gen(path):
    rng = np.random.default_rng(20240817)
    images = []
    for _ in range(10):
        n_gt = int(rng.integers(0, 7))
        gts, dets, scores = [], [], []
        for _ in range(n_gt):
            w = float(rng.uniform(8, 120))
            h = float(rng.uniform(8, 120))
            x = float(rng.uniform(0, 500 - w))
            y = float(rng.uniform(0, 500 - h))
            gts.append([x, y, w, h])
            # jittered hit with some probability, otherwise nothing
            if rng.uniform() < 0.8:
                dx, dy = rng.uniform(-10, 10, 2)
                sw, sh = rng.uniform(0.7, 1.3, 2)
                dets.append([x + dx, y + dy, w * sw, h * sh])
                scores.append(float(rng.uniform(0.3, 1.0)))
        for _ in range(int(rng.integers(0, 5))):  # false positives
            w = float(rng.uniform(8, 120))
            h = float(rng.uniform(8, 120))
            dets.append([float(rng.uniform(0, 500 - w)), float(rng.uniform(0, 500 - h)), w, h])
            scores.append(float(rng.uniform(0.05, 0.9)))
        images.append({"gts": gts, "dets": dets, "scores": scores})
    fix = {"images": images}
    fix["expected"] = sweep(load_images(fix))
    with open(path, "w") as f:
        json.dump(fix, f, indent=1)
    print(json.dumps(fix["expected"], indent=2))


def main():
    mode, path = sys.argv[1], sys.argv[2]
    if mode == "gen":
        gen(path)
    else:
        with open(path) as f:
            fix = json.load(f)
        print(json.dumps(sweep(load_images(fix)), indent=2))


if __name__ == "__main__":
    main()

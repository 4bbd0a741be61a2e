"""Independent reference computations shared by the unit and acceptance tests."""

import numpy as np


def auc_pairs(score, positive):
    """Probability a random positive outranks a random negative, ties count one half."""
    pos = score[positive]
    neg = score[~positive]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def ap_thresholds(score, positive):
    """Enumerate every threshold, build the PR points, interpolate, integrate over recall steps."""
    thresholds = sorted(set(score.tolist()), reverse=True)
    n_pos = positive.sum()
    points = []
    for t in thresholds:
        pred = score >= t
        tp = np.sum(pred & positive)
        fp = np.sum(pred & ~positive)
        points.append((tp / n_pos, tp / (tp + fp)))
    ap, prev_r = 0.0, 0.0
    for r, _ in points:
        best = max(p for rr, p in points if rr >= r)
        ap += (r - prev_r) * best
        prev_r = r
    return ap


def auc_thresholds(score, positive):
    """Trapezoid over ROC points from every distinct threshold."""
    thresholds = sorted(set(score.tolist()), reverse=True)
    n_pos, n_neg = positive.sum(), (~positive).sum()
    pts = [(0.0, 0.0)]
    for t in thresholds:
        pred = score >= t
        pts.append((np.sum(pred & ~positive) / n_neg, np.sum(pred & positive) / n_pos))
    return sum((x1 - x0) * (y0 + y1) / 2 for (x0, y0), (x1, y1) in zip(pts, pts[1:]))


def macro_oracle(scores, labels, fn, need_negatives):
    vals = []
    for k in range(scores.shape[1]):
        pos = labels == k
        if pos.sum() == 0 or (need_negatives and pos.all()):
            continue
        vals.append(fn(scores[:, k], pos))
    return float(np.mean(vals)) if vals else 0.0


def random_instance(rng):
    n = int(rng.integers(2, 21))
    c = int(rng.integers(2, 5))
    labels = rng.integers(0, c, size=n)
    if rng.random() < 0.5:
        scores = rng.integers(0, 4, size=(n, c)).astype(float)  # heavy ties
    else:
        scores = rng.random((n, c))
    return scores, labels


# Per-layer tallies worked out by hand for the default 64x64 models: (params, flops).
STUDENT_TALLY = [
    (432, 884_736), (32, 0),  # stem 3->16 s2, 32x32 out
    (144, 73_728), (32, 0), (68, 128), (80, 128), (384, 196_608), (48, 0),  # 16->24 at 16x16
    (216, 27_648), (48, 0), (150, 288), (168, 288), (1152, 147_456), (96, 0),  # 24->48 at 8x8
    (432, 55_296), (96, 0), (588, 1152), (624, 1152), (4608, 589_824), (192, 0),  # 48->96 at 8x8
    (776, 1536),  # head
]
_TEACHER_BLOCK = [
    (128, 0),
    (4160, 524_288), (4160, 524_288), (4160, 524_288),  # q, k, v over 64 tokens
    (0, 524_288), (0, 524_288),  # scores, context
    (4160, 524_288), (128, 0),
    (24_960, 3_145_728), (24_640, 3_145_728),  # MLP 64->384->64
]
TEACHER_TALLY = [(12_352, 1_572_864), (4096, 0)] + _TEACHER_BLOCK * 2 + [(128, 0), (8320, 16_384), (1032, 2048)]

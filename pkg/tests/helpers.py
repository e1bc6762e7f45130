"""Random valid hierarchies and brute-force reference implementations."""
import numpy as np
from hypothesis import strategies as st

from hierforecast.hierarchy import make_hierarchy


def random_hierarchy(rng, n_coarse_labels=5, n_fine_labels=7, max_coarse=5, max_children=4, frames=(200, 3000)):
    n_c = int(rng.integers(1, max_coarse + 1))
    cd = rng.dirichlet(np.ones(n_c) * 2.0)
    coarse = [(int(rng.integers(n_coarse_labels)), float(d)) for d in cd]
    fine = []
    for i in range(n_c):
        k = int(rng.integers(1, max_children + 1))
        fd = rng.dirichlet(np.ones(k) * 2.0)
        fine += [(int(rng.integers(n_fine_labels)), float(d), i) for d in fd]
    return make_hierarchy(coarse, fine, task_id="rand", total_frames=int(rng.integers(*frames)))


@st.composite
def hierarchies(draw, **kw):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_hierarchy(np.random.default_rng(seed), **kw)


def brute_force_f1(pred, gt, k):
    """Largest number of one-to-one same-label pairs with IoU >= k, by trying
    every assignment of predictions to ground-truth slots."""
    def iou(a, b):
        inter = max(0, min(a[2], b[2]) - max(a[1], b[1]))
        union = (a[2] - a[1]) + (b[2] - b[1]) - inter
        return inter / union if union else 0.0

    n, m = len(pred), len(gt)

    def search(i, used):
        # each prediction either stays unmatched or takes any unused gt segment
        if i == n:
            return 0
        score = search(i + 1, used)
        for j in range(m):
            if not used & (1 << j):
                hit = pred[i][0] == gt[j][0] and iou(pred[i], gt[j]) >= k
                score = max(score, hit + search(i + 1, used | (1 << j)))
        return score

    best = search(0, 0)
    p = best / n if n else 0.0
    r = best / m if m else float("nan")
    f1 = 0.0 if p + r == 0 else 2 * p * r / (p + r)
    return f1, best


def brute_force_levenshtein(a, b):
    if not a:
        return len(b)
    if not b:
        return len(a)
    return min(brute_force_levenshtein(a[1:], b) + 1,
               brute_force_levenshtein(a, b[1:]) + 1,
               brute_force_levenshtein(a[1:], b[1:]) + (a[0] != b[0]))


def random_segments(rng, n, length=60, labels=3):
    """n contiguous-or-gapped non-overlapping segments inside [0, length)."""
    if n == 0:
        return []
    cuts = sorted(rng.choice(np.arange(1, length), size=2 * n - 1, replace=False).tolist())
    bounds = [0] + cuts + [length]
    segs = []
    for k in range(n):
        s, e = bounds[2 * k], bounds[2 * k + 1]
        if rng.random() < 0.5:
            e = bounds[2 * k + 2]  # close the gap
        segs.append((int(rng.integers(labels)), s, e))
    return segs

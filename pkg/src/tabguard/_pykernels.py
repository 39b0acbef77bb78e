"""Pure numpy implementations of the hot loops (fallback backend)."""
import numpy as np


def portfolio_losses(u, pd, w):
    # column-by-column so the per-simulation summation order matches the compiled loop
    out = np.zeros(u.shape[0], dtype=np.float64)
    for i in range(u.shape[1]):
        out += np.where(u[:, i] < pd[i], w[i], 0.0)
    return out


def auc_counts(s_sorted, y_sorted):
    if s_sorted.size == 0:
        return 0, 0
    _, start, counts = np.unique(s_sorted, return_index=True, return_counts=True)
    pos = np.add.reduceat(y_sorted.astype(np.int64), start)
    neg = counts - pos
    neg_below = np.concatenate(([0], np.cumsum(neg)[:-1]))
    return int(np.dot(pos, neg_below)), int(np.dot(pos, neg))


def ks_gap(a, b):
    pts = np.concatenate((a, b))
    ca = np.searchsorted(a, pts, side="right")
    cb = np.searchsorted(b, pts, side="right")
    return float(np.max(np.abs(ca / float(a.size) - cb / float(b.size))))


def bin_stats(scores, labels, edges):
    m = edges.size - 1
    k = np.clip(np.searchsorted(edges, scores, side="left") - 1, 0, m - 1)
    counts = np.bincount(k, minlength=m).astype(np.int64)
    conf = np.bincount(k, weights=scores, minlength=m)
    acc = np.bincount(k, weights=labels, minlength=m)
    return counts, conf, acc


def wasserstein_sorted(a, b):
    if a.size == 0 or b.size == 0:
        return 0.0
    pts = np.unique(np.concatenate((a, b)))
    ca = np.searchsorted(a, pts[:-1], side="right") / float(a.size)
    cb = np.searchsorted(b, pts[:-1], side="right") / float(b.size)
    return float(np.sum(np.abs(ca - cb) * np.diff(pts)))

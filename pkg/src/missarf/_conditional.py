"""Compiled kernel: for each row, the leaves consistent with its observed cells
and their unnormalized log weights log(w_l) + sum_j log p_lj(x_j)."""

import numpy as np
from numba import njit

from ._trees import _goes_left


@njit(cache=True, nogil=True)
def _leaf_logp(x, d, is_cat, lo, hi, na_only, uniform, log_norm, mu, sigma, cat_logp, cat_slot):
    total = 0.0
    for j in range(x.shape[0]):
        v = x[j]
        if np.isnan(v):
            continue
        if na_only[d, j]:
            return -np.inf
        if is_cat[j]:
            c = np.int64(v)
            if c < 0 or c >= cat_logp.shape[2]:
                return -np.inf
            total += cat_logp[d, cat_slot[j], c]
        else:
            if not (v > lo[d, j] and v <= hi[d, j]):
                return -np.inf
            if uniform[d, j]:
                total += -np.log(hi[d, j] - lo[d, j])
            else:
                z = (v - mu[d, j]) / sigma[d, j]
                total += -0.5 * z * z - log_norm[d, j]
        if total == -np.inf:
            return total
    return total


@njit(cache=True, nogil=True)
def candidate_leaves(X, is_cat, roots, feature, threshold, missing_left, left, right,
                     cat_left, cat_right, node_density, log_w, lo, hi, na_only, uniform,
                     log_norm, mu, sigma, cat_logp, cat_slot):
    """Returns (ptr, leaf, logw) in CSR layout over the rows of X.

    A tree is descended along the observed coordinates; at a split on a
    missing coordinate both children are visited. Leaves with zero weight
    are dropped.
    """
    n = X.shape[0]
    cap = max(16, n * roots.shape[0])
    out_leaf = np.empty(cap, dtype=np.int64)
    out_logw = np.empty(cap)
    ptr = np.zeros(n + 1, dtype=np.int64)
    stack = np.empty(feature.shape[0], dtype=np.int64)
    k = 0
    for i in range(n):
        x = X[i]
        for t in range(roots.shape[0]):
            top = 1
            stack[0] = roots[t]
            while top > 0:
                top -= 1
                node = stack[top]
                f = feature[node]
                if f >= 0:
                    v = x[f]
                    if np.isnan(v):
                        stack[top] = right[node]
                        stack[top + 1] = left[node]
                        top += 2
                    elif _goes_left(v, is_cat[f], threshold[node], missing_left[node],
                                    cat_left[node], cat_right[node]):
                        stack[top] = left[node]
                        top += 1
                    else:
                        stack[top] = right[node]
                        top += 1
                    continue
                d = node_density[node]
                if d < 0:
                    continue
                lw = log_w[d] + _leaf_logp(x, d, is_cat, lo, hi, na_only, uniform,
                                           log_norm, mu, sigma, cat_logp, cat_slot)
                if lw == -np.inf:
                    continue
                if k == cap:
                    cap *= 2
                    nl = np.empty(cap, dtype=np.int64)
                    nw = np.empty(cap)
                    nl[:k] = out_leaf[:k]
                    nw[:k] = out_logw[:k]
                    out_leaf = nl
                    out_logw = nw
                out_leaf[k] = d
                out_logw[k] = lw
                k += 1
        ptr[i + 1] = k
    return ptr, out_leaf[:k].copy(), out_logw[:k].copy()

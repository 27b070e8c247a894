"""Compiled kernels for growing and querying MIA classification trees.

Trees are stored as flat node arrays. Categorical columns are encoded as
integer codes; inside split search the missing value acts as one extra label
with code ``n_categories``. Node field ``na_side`` marks a child that only
missing values can reach (0: none, 1: left, 2: right).
"""

import numpy as np
from numba import njit

NA_NONE = 0
NA_LEFT = 1
NA_RIGHT = 2

MAX_EXHAUSTIVE_LABELS = 10


@njit(cache=True, nogil=True)
def _next(state):
    # xorshift64*
    x = state[0]
    x ^= x >> np.uint64(12)
    x ^= x << np.uint64(25)
    x ^= x >> np.uint64(27)
    state[0] = x
    return x * np.uint64(2685821657736338717)


@njit(cache=True, nogil=True)
def _randint(state, n):
    return np.int64(_next(state) % np.uint64(n))


@njit(cache=True, nogil=True)
def weighted_gini(n_left, pos_left, n_right, pos_right):
    g = 0.0
    if n_left > 0:
        g += 2.0 * pos_left * (n_left - pos_left) / n_left
    if n_right > 0:
        g += 2.0 * pos_right * (n_right - pos_right) / n_right
    return g / (n_left + n_right)


@njit(cache=True, nogil=True)
def best_numeric_split(x, y, rows, min_node):
    """Best MIA split of ``rows`` on a numeric column.

    Returns (found, score, threshold, missing_left, na_side). Thresholds are
    midpoints between consecutive distinct observed values, each tried with
    the missing values on the left (Split A) then on the right (Split B); when
    values are missing, the split "all observed | all missing" is tried last
    with threshold +inf.
    """
    n = rows.shape[0]
    vals = np.empty(n)
    labs = np.empty(n, dtype=np.int64)
    n_obs = 0
    n_miss = 0
    pos_miss = 0
    pos_total = 0
    for k in range(n):
        r = rows[k]
        v = x[r]
        pos_total += y[r]
        if np.isnan(v):
            n_miss += 1
            pos_miss += y[r]
        else:
            vals[n_obs] = v
            labs[n_obs] = y[r]
            n_obs += 1
    best = np.inf
    best_thr = np.nan
    best_ml = True
    best_na = NA_NONE
    found = False
    if pos_total == 0 or pos_total == n or n_obs == 0:
        return found, best, best_thr, best_ml, best_na
    vals = vals[:n_obs]
    labs = labs[:n_obs]
    order = np.argsort(vals, kind="mergesort")
    cl = 0
    pl = 0
    for i in range(n_obs - 1):
        cl += 1
        pl += labs[order[i]]
        lo = vals[order[i]]
        hi = vals[order[i + 1]]
        if not lo < hi:
            continue
        thr = lo + (hi - lo) / 2.0
        if thr >= hi:
            thr = lo
        # Split A: missing joins the left child
        nl = cl + n_miss
        ppl = pl + pos_miss
        nr = n - nl
        if nl >= min_node and nr >= min_node:
            s = weighted_gini(nl, ppl, nr, pos_total - ppl)
            if s < best:
                best = s
                best_thr = thr
                best_ml = True
                best_na = NA_NONE
                found = True
        if n_miss > 0:
            # Split B: missing joins the right child
            nl = cl
            nr = n - nl
            if nl >= min_node and nr >= min_node:
                s = weighted_gini(nl, pl, nr, pos_total - pl)
                if s < best:
                    best = s
                    best_thr = thr
                    best_ml = False
                    best_na = NA_NONE
                    found = True
    if n_miss > 0 and n_obs >= min_node and n_miss >= min_node:
        pos_obs = pos_total - pos_miss
        s = weighted_gini(n_obs, pos_obs, n_miss, pos_miss)
        if s < best:
            best = s
            best_thr = np.inf
            best_ml = False
            best_na = NA_RIGHT
            found = True
    return found, best, best_thr, best_ml, best_na


@njit(cache=True, nogil=True)
def best_categorical_split(x, y, rows, n_cat, min_node):
    """Best split of ``rows`` on a categorical column, missing as its own label.

    Returns (found, score, left_mask, right_mask, missing_left, na_side). Masks
    are bit sets over the category codes present in the node.
    """
    n = rows.shape[0]
    cnt = np.zeros(n_cat + 1, dtype=np.int64)
    pos = np.zeros(n_cat + 1, dtype=np.int64)
    pos_total = 0
    for k in range(n):
        r = rows[k]
        v = x[r]
        c = n_cat if np.isnan(v) else np.int64(v)
        cnt[c] += 1
        pos[c] += y[r]
        pos_total += y[r]
    present = np.empty(n_cat + 1, dtype=np.int64)
    k_present = 0
    for c in range(n_cat + 1):
        if cnt[c] > 0:
            present[k_present] = c
            k_present += 1
    best = np.inf
    best_left = np.uint64(0)
    best_right = np.uint64(0)
    best_ml = True
    best_na = NA_NONE
    found = False
    if k_present < 2 or pos_total == 0 or pos_total == n:
        return found, best, best_left, best_right, best_ml, best_na
    present = present[:k_present]
    in_left = np.zeros(k_present, dtype=np.bool_)
    if k_present <= MAX_EXHAUSTIVE_LABELS:
        # the last present label always sits on the right
        for mask in range(1, 1 << (k_present - 1)):
            nl = 0
            pl = 0
            for b in range(k_present - 1):
                if (mask >> b) & 1:
                    nl += cnt[present[b]]
                    pl += pos[present[b]]
            nr = n - nl
            if nl < min_node or nr < min_node:
                continue
            s = weighted_gini(nl, pl, nr, pos_total - pl)
            if s < best:
                best = s
                found = True
                for b in range(k_present):
                    in_left[b] = b < k_present - 1 and ((mask >> b) & 1) == 1
                best_left, best_right, best_ml, best_na = _encode_partition(
                    present, in_left, cnt, n_cat
                )
    else:
        frac = np.empty(k_present)
        for b in range(k_present):
            frac[b] = pos[present[b]] / cnt[present[b]]
        order = np.argsort(frac, kind="mergesort")
        nl = 0
        pl = 0
        for i in range(k_present - 1):
            nl += cnt[present[order[i]]]
            pl += pos[present[order[i]]]
            nr = n - nl
            if nl < min_node or nr < min_node:
                continue
            s = weighted_gini(nl, pl, nr, pos_total - pl)
            if s < best:
                best = s
                found = True
                for b in range(k_present):
                    in_left[b] = False
                for q in range(i + 1):
                    in_left[order[q]] = True
                best_left, best_right, best_ml, best_na = _encode_partition(
                    present, in_left, cnt, n_cat
                )
    return found, best, best_left, best_right, best_ml, best_na


@njit(cache=True, nogil=True)
def _encode_partition(present, in_left, cnt, n_cat):
    left = np.uint64(0)
    right = np.uint64(0)
    missing_left = True
    n_left_labels = 0
    n_right_labels = 0
    has_na = False
    for b in range(present.shape[0]):
        c = present[b]
        if c == n_cat:
            has_na = True
            missing_left = in_left[b]
        elif in_left[b]:
            left |= np.uint64(1) << np.uint64(c)
            n_left_labels += 1
        else:
            right |= np.uint64(1) << np.uint64(c)
            n_right_labels += 1
    na_side = NA_NONE
    if has_na:
        if missing_left and n_left_labels == 0:
            na_side = NA_LEFT
        elif not missing_left and n_right_labels == 0:
            na_side = NA_RIGHT
    return left, right, missing_left, na_side


@njit(cache=True, nogil=True)
def grow_tree(X, y, is_cat, n_cats, bag, mtry, min_node, seed):
    """Grow one tree on the rows listed in ``bag`` (duplicates allowed).

    A node is split only when some candidate among ``mtry`` freshly drawn
    features strictly lowers the weighted Gini impurity and leaves both
    children with at least ``min_node`` rows.
    """
    n_rows = bag.shape[0]
    p = X.shape[1]
    max_nodes = 2 * n_rows + 1
    feature = np.full(max_nodes, -1, dtype=np.int32)
    threshold = np.full(max_nodes, np.nan)
    missing_left = np.ones(max_nodes, dtype=np.bool_)
    left = np.full(max_nodes, -1, dtype=np.int32)
    right = np.full(max_nodes, -1, dtype=np.int32)
    cat_left = np.zeros(max_nodes, dtype=np.uint64)
    cat_right = np.zeros(max_nodes, dtype=np.uint64)
    na_side = np.zeros(max_nodes, dtype=np.int8)
    node_start = np.zeros(max_nodes, dtype=np.int64)
    node_end = np.zeros(max_nodes, dtype=np.int64)
    node_pos = np.zeros(max_nodes, dtype=np.int64)

    samples = bag.copy()
    state = np.empty(1, dtype=np.uint64)
    state[0] = np.uint64(seed) | np.uint64(1)
    for _ in range(4):
        _next(state)
    perm = np.arange(p)
    m = min(mtry, p)

    stack = np.empty(max_nodes, dtype=np.int64)
    n_nodes = 1
    node_start[0] = 0
    node_end[0] = n_rows
    stack[0] = 0
    top = 1
    while top > 0:
        top -= 1
        node = stack[top]
        s0 = node_start[node]
        s1 = node_end[node]
        rows = samples[s0:s1]
        npos = 0
        for r in rows:
            npos += y[r]
        node_pos[node] = npos
        nn = s1 - s0
        if nn < 2 * min_node or npos == 0 or npos == nn:
            continue
        parent = weighted_gini(nn, npos, 0, 0)
        for i in range(m):
            k = i + _randint(state, p - i)
            tmp = perm[i]
            perm[i] = perm[k]
            perm[k] = tmp
        feats = np.sort(perm[:m])
        best = parent
        bf = -1
        b_thr = np.nan
        b_ml = True
        b_cl = np.uint64(0)
        b_cr = np.uint64(0)
        b_na = NA_NONE
        for f in feats:
            if is_cat[f]:
                ok, s, cl, cr, ml, na = best_categorical_split(X[:, f], y, rows, n_cats[f], min_node)
                if ok and s < best:
                    best = s
                    bf = f
                    b_thr = np.nan
                    b_ml = ml
                    b_cl = cl
                    b_cr = cr
                    b_na = na
            else:
                ok, s, thr, ml, na = best_numeric_split(X[:, f], y, rows, min_node)
                if ok and s < best:
                    best = s
                    bf = f
                    b_thr = thr
                    b_ml = ml
                    b_cl = np.uint64(0)
                    b_cr = np.uint64(0)
                    b_na = na
        if bf < 0:
            continue
        # partition samples[s0:s1] in place, left rows first
        col = X[:, bf]
        buf = rows.copy()
        i_l = s0
        i_r = s1 - 1
        for r in buf:
            go_left = _goes_left(col[r], is_cat[bf], b_thr, b_ml, b_cl, b_cr)
            if go_left:
                samples[i_l] = r
                i_l += 1
            else:
                samples[i_r] = r
                i_r -= 1
        # keep the right block in original order for determinism of later scans
        samples[i_l:s1] = samples[i_l:s1][::-1].copy()
        feature[node] = bf
        threshold[node] = b_thr
        missing_left[node] = b_ml
        cat_left[node] = b_cl
        cat_right[node] = b_cr
        na_side[node] = b_na
        lc = n_nodes
        rc = n_nodes + 1
        n_nodes += 2
        left[node] = lc
        right[node] = rc
        node_start[lc] = s0
        node_end[lc] = i_l
        node_start[rc] = i_l
        node_end[rc] = s1
        stack[top] = rc
        stack[top + 1] = lc
        top += 2
    return (
        feature[:n_nodes].copy(),
        threshold[:n_nodes].copy(),
        missing_left[:n_nodes].copy(),
        left[:n_nodes].copy(),
        right[:n_nodes].copy(),
        cat_left[:n_nodes].copy(),
        cat_right[:n_nodes].copy(),
        na_side[:n_nodes].copy(),
        node_start[:n_nodes].copy(),
        node_end[:n_nodes].copy(),
        node_pos[:n_nodes].copy(),
        samples,
    )


@njit(cache=True, nogil=True)
def _goes_left(v, is_cat, thr, ml, cl, cr):
    if np.isnan(v):
        return ml
    if is_cat:
        c = np.int64(v)
        if c < 64:
            bit = np.uint64(1) << np.uint64(c)
            if cl & bit:
                return True
            if cr & bit:
                return False
        # label not seen at this node during training
        return ml
    return v <= thr


@njit(cache=True, nogil=True)
def route_rows(X, is_cat, roots, feature, threshold, missing_left, left, right, cat_left, cat_right):
    """Leaf node index reached by each row in each tree, shape (n, T)."""
    n = X.shape[0]
    T = roots.shape[0]
    out = np.empty((n, T), dtype=np.int64)
    for i in range(n):
        for t in range(T):
            node = roots[t]
            while feature[node] >= 0:
                f = feature[node]
                if _goes_left(X[i, f], is_cat[f], threshold[node], missing_left[node],
                              cat_left[node], cat_right[node]):
                    node = left[node]
                else:
                    node = right[node]
            out[i, t] = node
    return out

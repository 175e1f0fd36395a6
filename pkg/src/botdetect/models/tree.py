"""CART regression/classification trees on dense float arrays.

Both tree flavours minimise the weighted squared error of a target vector.
For 0/1 targets this is proportional to Gini impurity, so the same split
search serves the forest (target = label) and boosting (target = negative
gradient). Thresholds are observed feature values; a sample goes left when
``x <= threshold``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

LEAF = -1


@dataclass
class Tree:
    feature: np.ndarray      # int, LEAF for leaves
    threshold: np.ndarray    # float
    left: np.ndarray         # int
    right: np.ndarray        # int
    value: np.ndarray        # float leaf output (also set on internal nodes)
    weight: np.ndarray       # float, weighted samples reaching the node
    gain: np.ndarray         # float, weighted squared-error decrease of the split

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=int)
        for i in range(self.n_nodes):
            if self.feature[i] != LEAF:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if self.n_nodes else 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf index reached by each row."""
        node = np.zeros(X.shape[0], dtype=np.intp)
        active = np.flatnonzero(self.feature[node] != LEAF)
        rows = np.arange(X.shape[0])
        while active.size:
            cur = node[active]
            go_left = X[rows[active], self.feature[cur]] <= self.threshold[cur]
            node[active] = np.where(go_left, self.left[cur], self.right[cur])
            active = active[self.feature[node[active]] != LEAF]
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def feature_gains(self, n_features: int) -> np.ndarray:
        out = np.zeros(n_features)
        internal = self.feature != LEAF
        np.add.at(out, self.feature[internal], self.gain[internal])
        return out

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "weight": self.weight.tolist(),
            "gain": self.gain.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Tree":
        return cls(
            feature=np.asarray(d["feature"], dtype=np.intp),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.intp),
            right=np.asarray(d["right"], dtype=np.intp),
            value=np.asarray(d["value"], dtype=np.float64),
            weight=np.asarray(d["weight"], dtype=np.float64),
            gain=np.asarray(d["gain"], dtype=np.float64),
        )


class _Builder:
    def __init__(self):
        self.feature, self.threshold, self.left, self.right = [], [], [], []
        self.value, self.weight, self.gain = [], [], []

    def add(self, value: float, weight: float) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.value.append(float(value))
        self.weight.append(float(weight))
        self.gain.append(0.0)
        return len(self.feature) - 1

    def split(self, node: int, feature: int, threshold: float, gain: float,
              left_value: float, left_weight: float,
              right_value: float, right_weight: float) -> tuple[int, int]:
        left = self.add(left_value, left_weight)
        right = self.add(right_value, right_weight)
        self.feature[node] = int(feature)
        self.threshold[node] = float(threshold)
        self.left[node], self.right[node] = left, right
        self.gain[node] = float(gain)
        return left, right

    def build(self) -> Tree:
        return Tree(
            feature=np.array(self.feature, dtype=np.intp),
            threshold=np.array(self.threshold, dtype=np.float64),
            left=np.array(self.left, dtype=np.intp),
            right=np.array(self.right, dtype=np.intp),
            value=np.array(self.value, dtype=np.float64),
            weight=np.array(self.weight, dtype=np.float64),
            gain=np.array(self.gain, dtype=np.float64),
        )


def _best_split_sorted(xs, wts, ws, min_leaf: int):
    """Best cut of presorted rows.

    ``xs`` is (k, n), each row one feature sorted ascending; ``wts`` holds
    weight * target and ``ws`` the weights in the same order (``ws=None``
    means unit weights). Returns (row, cut position, proxy) maximising
    ``S_l^2 / W_l + S_r^2 / W_r``; the cut sends columns ``[0, pos]`` left.
    """
    n = xs.shape[1]
    if n < 2:
        return None
    cs = np.cumsum(wts, axis=1)
    rs = cs[:, -1:] - cs[:, :-1]
    cs = cs[:, :-1]
    valid = xs[:, :-1] < xs[:, 1:]
    if ws is None:
        cw = _ARANGE[1:n] if n <= _ARANGE.size else np.arange(1, n, dtype=np.float64)
        proxy = cs * cs / cw + rs * rs / cw[::-1]
    else:
        cw = np.cumsum(ws, axis=1)
        rw = cw[:, -1:] - cw[:, :-1]
        cw = cw[:, :-1]
        valid &= (cw > 0) & (rw > 0)
        with np.errstate(divide="ignore", invalid="ignore"):
            proxy = cs * cs / cw + rs * rs / rw
    if min_leaf > 1:
        counts = np.arange(1, n)
        valid &= (counts >= min_leaf) & (n - counts >= min_leaf)
    proxy = np.where(valid, proxy, -np.inf)
    # Row-major argmax keeps the earliest feature (in candidate order) on ties.
    flat = int(np.argmax(proxy))
    row, pos = divmod(flat, n - 1)
    best = float(proxy[row, pos])
    if best == -np.inf:
        return None
    return row, pos, best


_ARANGE = np.arange(4096, dtype=np.float64)


def _node_stats(t, w):
    sw = float(w.sum())
    st = float((w * t).sum())
    return st, sw


def _is_pure(t) -> bool:
    return t.size == 0 or bool(np.all(t == t[0]))


@njit(cache=True)
def _grow_random(XT, wt, w, unit, rows, seed, max_features, max_depth, min_split,
                 min_leaf, cand):
    np.random.seed(seed)
    n = rows.size
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    weight = np.zeros(cap)
    gain = np.zeros(cap)

    idx = rows.copy()
    tmp = np.empty(n, np.int64)
    vals = np.empty(n)
    perm = cand.copy()
    n_cand = perm.size

    st = 0.0
    sw = 0.0
    for i in range(n):
        st += wt[idx[i]]
        sw += 1.0 if unit else w[idx[i]]
    value[0] = st / sw if sw > 0 else 0.0
    weight[0] = sw
    n_nodes = 1

    # Stack of (node, start, end, depth, st, sw); each node owns idx[start:end].
    s_node = np.empty(cap, np.int64)
    s_start = np.empty(cap, np.int64)
    s_end = np.empty(cap, np.int64)
    s_depth = np.empty(cap, np.int64)
    s_st = np.empty(cap)
    s_sw = np.empty(cap)
    top = 0
    s_node[0], s_start[0], s_end[0], s_depth[0], s_st[0], s_sw[0] = 0, 0, n, 0, st, sw
    top = 1
    while top > 0:
        top -= 1
        node, a, b = s_node[top], s_start[top], s_end[top]
        depth, st, sw = s_depth[top], s_st[top], s_sw[top]
        m = b - a
        # Targets lie in [0, 1], so a node is pure iff its mean is 0 or 1.
        if ((max_depth >= 0 and depth >= max_depth) or m < min_split
                or m < 2 * min_leaf or st <= 0.0 or st >= sw):
            continue
        best_proxy = -np.inf
        best_f = -1
        best_thr = 0.0
        found = 0
        for j in range(n_cand):
            if found >= max_features:
                break
            r = j + np.random.randint(n_cand - j)
            perm[j], perm[r] = perm[r], perm[j]
            f = perm[j]
            lo = np.inf
            hi = -np.inf
            for i in range(m):
                v = XT[f, idx[a + i]]
                vals[i] = v
                lo = min(lo, v)
                hi = max(hi, v)
            if not lo < hi:
                continue
            found += 1
            order = np.argsort(vals[:m])
            cs = 0.0
            cw = 0.0
            for p in range(m - 1):
                row = idx[a + order[p]]
                cs += wt[row]
                cw += 1.0 if unit else w[row]
                if not vals[order[p]] < vals[order[p + 1]]:
                    continue
                if p + 1 < min_leaf or m - p - 1 < min_leaf:
                    continue
                rw = sw - cw
                if cw <= 0.0 or rw <= 0.0:
                    continue
                rs = st - cs
                proxy = cs * cs / cw + rs * rs / rw
                if proxy > best_proxy:
                    best_proxy = proxy
                    best_f = f
                    best_thr = vals[order[p]]
        if best_f < 0:
            continue
        # Stable partition of idx[a:b] into left then right.
        nl = 0
        lst = 0.0
        lsw = 0.0
        for i in range(m):
            row = idx[a + i]
            if XT[best_f, row] <= best_thr:
                idx[a + nl] = row
                nl += 1
                lst += wt[row]
                lsw += 1.0 if unit else w[row]
            else:
                tmp[i - nl] = row
        for i in range(m - nl):
            idx[a + nl + i] = tmp[i]
        rst = st - lst
        rsw = sw - lsw
        ln, rn = n_nodes, n_nodes + 1
        n_nodes += 2
        feature[node] = best_f
        threshold[node] = best_thr
        left[node], right[node] = ln, rn
        gain[node] = max(best_proxy - st * st / sw, 0.0)
        value[ln], weight[ln] = lst / lsw, lsw
        value[rn], weight[rn] = rst / rsw, rsw
        # Right pushed first so the left subtree is built first.
        s_node[top], s_start[top], s_end[top] = rn, a + nl, b
        s_depth[top], s_st[top], s_sw[top] = depth + 1, rst, rsw
        top += 1
        s_node[top], s_start[top], s_end[top] = ln, a, a + nl
        s_depth[top], s_st[top], s_sw[top] = depth + 1, lst, lsw
        top += 1
    k = n_nodes
    return (feature[:k], threshold[:k], left[:k], right[:k], value[:k], weight[:k],
            gain[:k])


@njit(cache=True)
def _grow_presorted(XT, wt, w, unit, rows, srt, seed, max_features, max_depth, min_split,
                    min_leaf, cand):
    """Same tree as ``_grow_random`` using per-tree presorted index lists.

    ``srt[c]`` lists sample positions ordered by feature ``cand[c]``; every
    node owns the same segment ``[a, b)`` of each list, and splits stably
    partition all lists, so no per-node sorting is needed. A feature constant
    on a node stays constant below it, so each stack entry carries the mask
    of features still worth partitioning.
    """
    np.random.seed(seed)
    n = rows.size
    n_cand = cand.size
    cap = 2 * n + 1
    feature = np.full(cap, -1, np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    value = np.zeros(cap)
    weight = np.zeros(cap)
    gain = np.zeros(cap)

    goes_left = np.zeros(n, np.bool_)
    tmp = np.empty(n, srt.dtype)
    perm = np.arange(n_cand)

    st = 0.0
    sw = 0.0
    for i in range(n):
        st += wt[rows[i]]
        sw += 1.0 if unit else w[rows[i]]
    value[0] = st / sw if sw > 0 else 0.0
    weight[0] = sw
    n_nodes = 1

    s_node = np.empty(cap, np.int64)
    s_start = np.empty(cap, np.int64)
    s_end = np.empty(cap, np.int64)
    s_depth = np.empty(cap, np.int64)
    s_st = np.empty(cap)
    s_sw = np.empty(cap)
    s_live = np.ones((n + 2, n_cand), np.bool_)
    live = np.empty(n_cand, np.bool_)
    s_node[0], s_start[0], s_end[0], s_depth[0], s_st[0], s_sw[0] = 0, 0, n, 0, st, sw
    top = 1
    while top > 0:
        top -= 1
        node, a, b = s_node[top], s_start[top], s_end[top]
        depth, st, sw = s_depth[top], s_st[top], s_sw[top]
        m = b - a
        if ((max_depth >= 0 and depth >= max_depth) or m < min_split
                or m < 2 * min_leaf or st <= 0.0 or st >= sw):
            continue
        for c in range(n_cand):
            live[c] = s_live[top, c] and XT[cand[c], rows[srt[c, a]]] < \
                XT[cand[c], rows[srt[c, b - 1]]]
        best_proxy = -np.inf
        best_c = -1
        best_thr = 0.0
        best_nl = 0
        found = 0
        for j in range(n_cand):
            if found >= max_features:
                break
            r = j + np.random.randint(n_cand - j)
            perm[j], perm[r] = perm[r], perm[j]
            c = perm[j]
            f = cand[c]
            if not live[c]:
                continue
            found += 1
            cs = 0.0
            cw = 0.0
            nxt = XT[f, rows[srt[c, a]]]
            for p in range(m - 1):
                row = rows[srt[c, a + p]]
                cur = nxt
                nxt = XT[f, rows[srt[c, a + p + 1]]]
                cs += wt[row]
                cw += 1.0 if unit else w[row]
                if not cur < nxt:
                    continue
                if p + 1 < min_leaf or m - p - 1 < min_leaf:
                    continue
                rw = sw - cw
                if cw <= 0.0 or rw <= 0.0:
                    continue
                rs = st - cs
                proxy = cs * cs / cw + rs * rs / rw
                if proxy > best_proxy:
                    best_proxy = proxy
                    best_c = c
                    best_thr = cur
                    best_nl = p + 1
        if best_c < 0:
            continue
        lst = 0.0
        lsw = 0.0
        for i in range(best_nl):
            pos = srt[best_c, a + i]
            goes_left[pos] = True
            lst += wt[rows[pos]]
            lsw += 1.0 if unit else w[rows[pos]]
        for c in range(n_cand):
            if not live[c]:
                continue
            nl = 0
            for i in range(m):
                pos = srt[c, a + i]
                if goes_left[pos]:
                    srt[c, a + nl] = pos
                    nl += 1
                else:
                    tmp[i - nl] = pos
            for i in range(m - nl):
                srt[c, a + nl + i] = tmp[i]
        for i in range(best_nl):
            goes_left[srt[best_c, a + i]] = False
        rst = st - lst
        rsw = sw - lsw
        ln, rn = n_nodes, n_nodes + 1
        n_nodes += 2
        feature[node] = cand[best_c]
        threshold[node] = best_thr
        left[node], right[node] = ln, rn
        gain[node] = max(best_proxy - st * st / sw, 0.0)
        value[ln], weight[ln] = lst / lsw, lsw
        value[rn], weight[rn] = rst / rsw, rsw
        s_node[top], s_start[top], s_end[top] = rn, a + best_nl, b
        s_depth[top], s_st[top], s_sw[top] = depth + 1, rst, rsw
        s_live[top] = live
        top += 1
        s_node[top], s_start[top], s_end[top] = ln, a, a + best_nl
        s_depth[top], s_st[top], s_sw[top] = depth + 1, lst, lsw
        s_live[top] = live
        top += 1
    k = n_nodes
    return (feature[:k], threshold[:k], left[:k], right[:k], value[:k], weight[:k],
            gain[:k])


def build_tree_random(XT: np.ndarray, target: np.ndarray, weight: np.ndarray | None,
                      sample_index: np.ndarray, rng: np.random.Generator,
                      max_features: int, max_depth: int | None = None,
                      min_samples_split: int = 2, min_samples_leaf: int = 1,
                      candidate_features: np.ndarray | None = None,
                      presort: bool | None = None) -> Tree:
    """Depth-first tree with a random feature subset per node.

    ``XT`` is the feature-major (n_features, n_samples) training matrix and
    ``target`` lies in [0, 1]. ``sample_index`` may repeat rows (bootstrap).
    At each node, features are drawn without replacement until
    ``max_features`` non-constant ones have been evaluated or the pool is
    exhausted. Leaf value is the weighted mean target. ``weight=None`` means
    unit weights. Ties between cuts go to the feature drawn first, then to
    the lowest threshold.

    ``presort`` picks the split-search strategy (sort per node, or presort
    once and partition); ``None`` chooses by feature count. Both strategies
    grow the same tree up to floating-point summation order.
    """
    if candidate_features is None:
        candidate_features = np.arange(XT.shape[0])
    cand = np.asarray(candidate_features, dtype=np.int64)
    rows = np.asarray(sample_index, dtype=np.int64)
    unit = weight is None
    w = np.ones(1) if unit else np.asarray(weight, dtype=np.float64)
    wt = np.asarray(target, dtype=np.float64) * (1.0 if unit else w)
    XT = np.ascontiguousarray(XT, dtype=np.float64)
    seed = int(rng.integers(0, 2 ** 32 - 1))
    depth = -1 if max_depth is None else int(max_depth)
    if presort is None:
        # Partitioning every candidate list beats per-node sorting only when
        # the candidate pool is small relative to the per-node draw.
        presort = cand.size <= 8 * max_features
    if presort:
        srt = np.argsort(XT[cand[:, None], rows], axis=1, kind="stable").astype(np.int32)
        out = _grow_presorted(XT, wt, w, unit, rows, srt, seed, int(max_features), depth,
                              int(min_samples_split), int(min_samples_leaf), cand)
    else:
        out = _grow_random(XT, wt, w, unit, rows, seed, int(max_features), depth,
                           int(min_samples_split), int(min_samples_leaf), cand)
    feature, threshold, left, right, value, wgt, gain = out
    return Tree(feature=feature.astype(np.intp), threshold=threshold, left=left.astype(np.intp),
                right=right.astype(np.intp), value=value, weight=wgt, gain=gain)


class PresortedData:
    """Feature-major copy of a fixed training matrix with per-feature sort order.

    Built once and reused by every boosting stage.
    """

    def __init__(self, X: np.ndarray):
        self.X = X
        self.XT = np.ascontiguousarray(X.T)
        self.order = np.argsort(self.XT, axis=1, kind="stable").astype(np.int32)
        self.X_sorted = np.take_along_axis(self.XT, self.order, axis=1)


def build_tree_levelwise(data: PresortedData, target: np.ndarray, weight: np.ndarray | None,
                         leaf_value, max_depth: int, min_samples_split: int = 2,
                         min_samples_leaf: int = 1) -> Tree:
    """Breadth-first tree evaluating every feature at every node.

    Split search for a whole level is vectorised over all features using the
    presorted columns. ``leaf_value(rows)`` gives the output stored on a node.
    ``weight=None`` means unit weights.
    """
    XT, order, X_sorted = data.XT, data.order, data.X_sorted
    n = XT.shape[1]
    unit = weight is None
    w = np.ones(n) if unit else weight
    wt = w * target
    b = _Builder()
    all_rows = np.arange(n)
    root = b.add(leaf_value(all_rows), float(w.sum()))
    assign = np.zeros(n, dtype=np.int16)  # level-local node slot, -1 = done
    level_nodes = [root]
    rows_of = [all_rows]

    for depth in range(max_depth):
        splittable = []
        for rows in rows_of:
            ok = (rows.size >= min_samples_split and rows.size >= 2 * min_samples_leaf
                  and not _is_pure(target[rows]))
            splittable.append(ok)
            if not ok:
                assign[rows] = -1
        if not any(splittable):
            break
        if depth == 0:
            rows_grouped, xs_all = order, X_sorted
        else:
            # Group every sorted feature row by node slot; the stable sort keeps
            # the feature order inside each slot.
            regroup = np.argsort(assign[order], axis=1, kind="stable")
            rows_grouped = np.take_along_axis(order, regroup, axis=1)
            xs_all = np.take_along_axis(X_sorted, regroup, axis=1)
        counts = np.bincount(assign.astype(np.int64) + 1, minlength=len(level_nodes) + 1)
        offsets = np.concatenate([[0], np.cumsum(counts)])
        wt_grouped = wt[rows_grouped]
        w_grouped = None if unit else w[rows_grouped]

        next_nodes, next_rows = [], []
        new_assign = np.full(n, -1, dtype=np.int16)
        for slot, node in enumerate(level_nodes):
            if not splittable[slot]:
                continue
            lo, hi = offsets[slot + 1], offsets[slot + 2]
            res = _best_split_sorted(xs_all[:, lo:hi], wt_grouped[:, lo:hi],
                                     None if unit else w_grouped[:, lo:hi], min_samples_leaf)
            if res is None:
                continue
            f, pos, proxy = res
            thr = float(xs_all[f, lo + pos])
            rows = rows_of[slot]
            go_left = XT[f, rows] <= thr
            li, ri = rows[go_left], rows[~go_left]
            st, sw = _node_stats(target[rows], w[rows])
            gain = max(proxy - st * st / sw, 0.0)
            left, right = b.split(node, f, thr, gain,
                                  leaf_value(li), float(w[li].sum()),
                                  leaf_value(ri), float(w[ri].sum()))
            for child, crow in ((left, li), (right, ri)):
                new_assign[crow] = len(next_nodes)
                next_nodes.append(child)
                next_rows.append(crow)
        if not next_nodes:
            break
        assign = new_assign
        level_nodes, rows_of = next_nodes, next_rows
    return b.build()

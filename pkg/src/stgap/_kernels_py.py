"""NumPy fallback kernels for tree fitting and prediction.

The compiled twins in ``_core.pyx`` must produce bitwise-identical output,
so the two files share one arithmetic contract:

* per-node left sums are sequential prefix sums in ascending feature-value
  order (``np.cumsum`` here, a scalar running sum there);
* missing-row aggregates per node accumulate in ascending sample order
  (``np.bincount`` here, an index loop there) and are exact zeros when a
  node has no missing rows, so the two default directions tie bitwise and
  the tie rule (missing goes left) decides, not rounding residue;
* the gain expression is written with the same operation tree in both:
  ``0.5 * (gl*gl/(hl+lam) + gr*gr/(hr+lam) - gt_term) - gamma``;
* right-side sums come from node totals minus the left side;
* a candidate whose midpoint rounds up to the right-hand value cannot
  separate the pair under ``x <= thresh`` routing and is skipped;
* prediction accumulates ``lr * leaf`` tree by tree in fit order.

Tie rules: within a feature the lowest threshold wins (first maximum);
between the two default directions, ties go left. Candidates must leave at
least ``min_child_weight`` rows (hessian = row count here) on each side.
"""

from __future__ import annotations

import numpy as np

NAME = "pure"


def scan_feature(pres_idx, pres_val, miss_idx, node_of, g,
                 node_g, node_cnt, lam, gamma, min_child_weight,
                 out_gain, out_thresh, out_dleft, out_has):
    """Best split of one feature for every active node slot.

    pres_idx/pres_val: sample indices and values of rows where the feature is
    present, globally sorted by value ascending (ties in stable original
    order). miss_idx: rows where it is missing, ascending. node_of maps each
    sample row to its node slot (< 0 when the row sits in a finished leaf).
    node_g/node_cnt are per-slot gradient totals and row counts. Outputs are
    per-slot arrays; out_has stays 0 where the feature offers no candidate.
    """
    S = node_g.shape[0]
    out_gain[:] = -np.inf
    out_thresh[:] = 0.0
    out_dleft[:] = 0
    out_has[:] = 0

    slot = node_of[pres_idx]
    keep = slot >= 0
    slot_k = slot[keep]
    order = np.argsort(slot_k, kind="stable")  # radix; keeps value order per slot
    vv_all = pres_val[keep][order]
    gg_all = g[pres_idx[keep][order]]
    slot_sorted = slot_k[order]
    starts = np.searchsorted(slot_sorted, np.arange(S), side="left")
    ends = np.searchsorted(slot_sorted, np.arange(S), side="right")

    mslot = node_of[miss_idx]
    mkeep = mslot >= 0
    miss_g = np.bincount(mslot[mkeep], weights=g[miss_idx[mkeep]], minlength=S)
    miss_c = np.bincount(mslot[mkeep], minlength=S)

    for s in range(S):
        a, b = starts[s], ends[s]
        if b - a < 2:
            continue
        vv = vv_all[a:b]
        run = np.cumsum(gg_all[a:b])
        bnd = np.flatnonzero(vv[1:] != vv[:-1])
        if bnd.size == 0:
            continue
        mid = 0.5 * (vv[bnd] + vv[bnd + 1])
        sep = mid != vv[bnd + 1]

        gn = node_g[s]
        cn = node_cnt[s]
        gm = miss_g[s]
        cm = miss_c[s]
        gt_term = gn * gn / (float(cn) + lam)

        gl_r = run[bnd]
        hl_r = bnd + 1          # integer row counts
        gr_r = gn - gl_r
        hr_r = cn - hl_r
        gl_l = gl_r + gm
        hl_l = hl_r + cm
        gr_l = gn - gl_l
        hr_l = cn - hl_l

        gain_r = 0.5 * (gl_r * gl_r / (hl_r + lam) + gr_r * gr_r / (hr_r + lam) - gt_term) - gamma
        gain_l = 0.5 * (gl_l * gl_l / (hl_l + lam) + gr_l * gr_l / (hr_l + lam) - gt_term) - gamma
        gain_r = np.where(sep & (hl_r >= min_child_weight) & (hr_r >= min_child_weight),
                          gain_r, -np.inf)
        gain_l = np.where(sep & (hl_l >= min_child_weight) & (hr_l >= min_child_weight),
                          gain_l, -np.inf)

        use_left = gain_l >= gain_r
        gain = np.where(use_left, gain_l, gain_r)
        i = int(np.argmax(gain))  # first maximum = lowest threshold
        if gain[i] == -np.inf:
            continue
        out_gain[s] = gain[i]
        out_thresh[s] = mid[i]
        out_dleft[s] = bool(use_left[i])
        out_has[s] = 1


def predict_rows(values, missing, tfeat, tthresh, tdleft, tleft, tright,
                 tvalue, offsets, base, lr, out):
    """Accumulate tree outputs for every row: out = base + sum_k lr * leaf_k.

    Tree node arrays are concatenated; offsets[k] is tree k's root index.
    Internal nodes have tfeat >= 0; rows with the split feature missing follow
    the recorded default direction, otherwise value <= threshold goes left.
    """
    n = values.shape[0]
    out[:] = base
    for k in range(offsets.shape[0] - 1):
        cur = np.full(n, offsets[k], dtype=np.int64)
        while True:
            feat = tfeat[cur]
            act = np.flatnonzero(feat >= 0)
            if act.size == 0:
                break
            nodes = cur[act]
            f = feat[act]
            miss = missing[act, f]
            goleft = np.where(miss, tdleft[nodes].astype(bool),
                              values[act, f] <= tthresh[nodes])
            cur[act] = np.where(goleft, tleft[nodes], tright[nodes])
        out += lr * tvalue[cur]

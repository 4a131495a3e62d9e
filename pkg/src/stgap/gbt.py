"""Second-order gradient-boosted regression trees with missing-aware splits.

Squared-error objective: per-row gradient is (prediction - target) and the
hessian is identically 1, so hessian sums are row counts. Split gain is

    0.5 * (GL^2/(HL+lambda) + GR^2/(HR+lambda) - GT^2/(HT+lambda)) - gamma

and a leaf weighs -G/(H+lambda). Every split learns a default direction for
rows whose feature is missing by scoring the candidate both ways. Trees are
grown breadth-first by exact greedy scan over midpoints between consecutive
distinct feature values (optionally pre-binned, see GbtParams.tree_method).

Determinism: fitting is free of randomness, ties resolve by fixed rules
(lowest feature index, lowest threshold, missing-left), and both kernel
backends produce bitwise-identical models. Prediction never reads the
stored value of a missing cell.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .backend import get_backend
from .errors import FormatError, StgapError
from .features import FeatureMatrix

FORMAT = "stgap-gbt"
VERSION = 1
_HIST_BINS = 256
_PREDICT_CHUNK = 16384


@dataclass(frozen=True)
class GbtParams:
    n_estimators: int = 200
    learning_rate: float = 0.1
    max_depth: int = 6
    reg_lambda: float = 1.0
    gamma: float = 0.0
    min_child_weight: float = 1.0
    seed: int = 0
    tree_method: str = "exact"

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.reg_lambda < 0 or self.gamma < 0:
            raise ValueError("reg_lambda and gamma must be >= 0")
        if self.min_child_weight < 0:
            raise ValueError("min_child_weight must be >= 0")
        if self.tree_method not in ("exact", "hist"):
            raise ValueError("tree_method must be 'exact' or 'hist'")


@dataclass
class Tree:
    """Flat node arrays in breadth-first order; feat < 0 marks a leaf."""

    feat: np.ndarray
    thresh: np.ndarray
    default_left: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray       # leaf weight (0.0 on internal nodes)
    gain: np.ndarray        # realized split gain (0.0 on leaves)

    def n_nodes(self):
        return len(self.feat)


@dataclass
class GbtEnsemble:
    base_score: float
    learning_rate: float
    feature_names: tuple
    trees: list = field(default_factory=list)
    params: GbtParams = None

    def importance(self) -> dict:
        """Total realized split gain per feature; unsplit features get 0."""
        total = {name: 0.0 for name in self.feature_names}
        for tree in self.trees:
            for f, gn in zip(tree.feat, tree.gain):
                if f >= 0:
                    total[self.feature_names[f]] += float(gn)
        return total


# --- fitting -----------------------------------------------------------------

def _presort(values, missing):
    """Per feature: row indices sorted by present value, and missing rows."""
    pres_idx, pres_val, miss_idx = [], [], []
    for j in range(values.shape[1]):
        idx = np.flatnonzero(~missing[:, j]).astype(np.int32)
        vals = values[idx, j]
        order = np.argsort(vals, kind="stable")
        pres_idx.append(np.ascontiguousarray(idx[order]))
        pres_val.append(np.ascontiguousarray(vals[order]))
        miss_idx.append(np.flatnonzero(missing[:, j]).astype(np.int32))
    return pres_idx, pres_val, miss_idx


def _equal_frequency_edges(sorted_vals, n_bins):
    """Bin upper edges (actual data values) for equal-frequency binning."""
    distinct = np.unique(sorted_vals)
    if distinct.size <= n_bins:
        return distinct
    take = ((np.arange(1, n_bins + 1) * sorted_vals.size) // n_bins) - 1
    return np.unique(sorted_vals[take])


def _hist_binned(values, missing):
    """Snap present values to their equal-frequency bin's upper edge."""
    binned = values.copy()
    for j in range(values.shape[1]):
        pres = ~missing[:, j]
        if not pres.any():
            continue
        edges = _equal_frequency_edges(np.sort(values[pres, j]), _HIST_BINS)
        pos = np.searchsorted(edges, values[pres, j], side="left")
        binned[pres, j] = edges[pos]
    return binned


def grow_tree(backend, scan_values, missing, presort, g, params,
              feature_sampler=None):
    """Grow one tree; returns (Tree, per-sample leaf node id).

    scan_values/missing are the dense (n, p) arrays used for routing;
    presort is the matching _presort() result. feature_sampler(S) may return
    a bool (S, p) mask restricting which features each frontier slot may
    split on (random forests); None allows all.
    """
    pres_idx, pres_val, miss_idx = presort
    n = g.shape[0]
    p = len(pres_idx)
    lam = params.reg_lambda

    feat, thresh, dleft, left, right = [], [], [], [], []
    value, gain, stat_g, stat_c = [], [], [], []

    def new_node(gsum, cnt):
        feat.append(-1)
        thresh.append(0.0)
        dleft.append(0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        gain.append(0.0)
        stat_g.append(gsum)
        stat_c.append(cnt)
        return len(feat) - 1

    node_of = np.zeros(n, dtype=np.int32)     # frontier slot per sample
    node_assign = np.zeros(n, dtype=np.int32)  # node id per sample
    root_g = float(np.bincount(np.zeros(n, dtype=np.intp), weights=g)[0])
    new_node(root_g, n)
    frontier = [0]

    for _ in range(params.max_depth):
        S = len(frontier)
        node_g = np.array([stat_g[nid] for nid in frontier])
        node_cnt = np.array([stat_c[nid] for nid in frontier], dtype=np.int64)
        best_gain = np.full(S, -np.inf)
        best_feat = np.full(S, -1, dtype=np.int32)
        best_thresh = np.zeros(S)
        best_dleft = np.zeros(S, dtype=np.uint8)

        allowed = None if feature_sampler is None else feature_sampler(S)
        out_gain = np.empty(S)
        out_thresh = np.empty(S)
        out_dleft = np.empty(S, dtype=np.uint8)
        out_has = np.empty(S, dtype=np.uint8)
        for j in range(p):
            backend.scan_feature(
                pres_idx[j], pres_val[j], miss_idx[j], node_of, g,
                node_g, node_cnt, lam, params.gamma, params.min_child_weight,
                out_gain, out_thresh, out_dleft, out_has,
            )
            upd = (out_has == 1) & (out_gain > best_gain)
            if allowed is not None:
                upd &= allowed[:, j]
            best_gain[upd] = out_gain[upd]
            best_feat[upd] = j
            best_thresh[upd] = out_thresh[upd]
            best_dleft[upd] = out_dleft[upd]

        split = best_gain > 0.0
        if not split.any():
            break

        # record splits, allocate children left-then-right in slot order;
        # ids are consecutive from first_child, so slot = id - first_child
        first_child = len(feat)
        child_left = np.full(S, -1, dtype=np.int32)
        child_right = np.full(S, -1, dtype=np.int32)
        next_frontier = []
        for s in np.flatnonzero(split):
            nid = frontier[s]
            feat[nid] = int(best_feat[s])
            thresh[nid] = float(best_thresh[s])
            dleft[nid] = int(best_dleft[s])
            gain[nid] = float(best_gain[s])
            lid = new_node(0.0, 0)
            rid = new_node(0.0, 0)
            left[nid], right[nid] = lid, rid
            child_left[s], child_right[s] = lid, rid
            next_frontier.extend((lid, rid))

        # route the rows of split nodes (shared by both backends)
        act_rows = np.flatnonzero(node_of >= 0)
        s_of = node_of[act_rows]
        in_split = split[s_of]
        rows = act_rows[in_split]
        s_rows = s_of[in_split]
        fj = best_feat[s_rows]
        goleft = np.where(missing[rows, fj], best_dleft[s_rows].astype(bool),
                          scan_values[rows, fj] <= best_thresh[s_rows])
        new_ids = np.where(goleft, child_left[s_rows], child_right[s_rows])
        node_assign[rows] = new_ids
        node_of[act_rows[~in_split]] = -1
        node_of[rows] = (new_ids - first_child).astype(np.int32)

        # child statistics: ascending-row sequential accumulation
        slot_new = node_of[rows]
        gsum = np.bincount(slot_new, weights=g[rows], minlength=len(next_frontier))
        csum = np.bincount(slot_new, minlength=len(next_frontier))
        for s, nid in enumerate(next_frontier):
            stat_g[nid] = float(gsum[s])
            stat_c[nid] = int(csum[s])
        frontier = next_frontier

    for nid in range(len(feat)):
        if feat[nid] < 0:
            value[nid] = -stat_g[nid] / (stat_c[nid] + lam)

    tree = Tree(
        np.array(feat, dtype=np.int32), np.array(thresh),
        np.array(dleft, dtype=np.uint8),
        np.array(left, dtype=np.int32), np.array(right, dtype=np.int32),
        np.array(value), np.array(gain),
    )
    return tree, node_assign


def fit(train: FeatureMatrix, params: GbtParams, backend=None) -> GbtEnsemble:
    """Boost params.n_estimators trees on the training matrix."""
    if train.target is None:
        raise StgapError("training matrix has no target")
    n = len(train)
    if n == 0:
        raise StgapError("empty training matrix")
    impl = get_backend(backend)

    values = np.ascontiguousarray(train.values, dtype=np.float64)
    missing = np.ascontiguousarray(train.missing, dtype=bool)
    y = np.ascontiguousarray(train.target, dtype=np.float64)

    scan_values = _hist_binned(values, missing) if params.tree_method == "hist" else values
    presort = _presort(scan_values, missing)

    base = float(np.mean(y))
    pred = np.full(n, base)
    trees = []
    for _ in range(params.n_estimators):
        g = pred - y
        tree, node_assign = grow_tree(impl, scan_values, missing, presort, g, params)
        trees.append(tree)
        pred = pred + params.learning_rate * tree.value[node_assign]

    return GbtEnsemble(base, params.learning_rate, tuple(train.feature_names),
                       trees, params)


# --- prediction ---------------------------------------------------------------

def _concat_trees(trees):
    if not trees:
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int32)
        return zi, z, zi.astype(np.uint8), zi, zi, z, np.zeros(1, dtype=np.int64)
    offsets = np.zeros(len(trees) + 1, dtype=np.int64)
    for k, tree in enumerate(trees):
        offsets[k + 1] = offsets[k] + tree.n_nodes()
    shift = [
        np.where(tree.left >= 0, tree.left + offsets[k], tree.left)
        for k, tree in enumerate(trees)
    ]
    shiftr = [
        np.where(tree.right >= 0, tree.right + offsets[k], tree.right)
        for k, tree in enumerate(trees)
    ]
    return (
        np.concatenate([t.feat for t in trees]).astype(np.int32),
        np.concatenate([t.thresh for t in trees]),
        np.concatenate([t.default_left for t in trees]).astype(np.uint8),
        np.concatenate(shift).astype(np.int32),
        np.concatenate(shiftr).astype(np.int32),
        np.concatenate([t.value for t in trees]),
        offsets,
    )


def predict(model: GbtEnsemble, rows, backend=None, threads=1) -> np.ndarray:
    """Predict one float per row of a FeatureMatrix or (values, missing) pair."""
    if isinstance(rows, FeatureMatrix):
        values, missing = rows.values, rows.missing
        if rows.feature_names != tuple(model.feature_names):
            raise StgapError(
                f"matrix features {rows.feature_names} != model features "
                f"{tuple(model.feature_names)}"
            )
    else:
        values, missing = rows
    values = np.ascontiguousarray(values, dtype=np.float64)
    missing_u8 = np.ascontiguousarray(missing, dtype=np.uint8)
    if values.ndim != 2 or values.shape[1] != len(model.feature_names):
        raise StgapError(
            f"prediction rows have {values.shape[1] if values.ndim == 2 else '?'} "
            f"features, model expects {len(model.feature_names)}"
        )
    impl = get_backend(backend)
    tfeat, tthresh, tdleft, tleft, tright, tvalue, offsets = _concat_trees(model.trees)
    out = np.empty(values.shape[0])

    def run(lo, hi):
        impl.predict_rows(values[lo:hi], missing_u8[lo:hi], tfeat, tthresh,
                          tdleft, tleft, tright, tvalue, offsets,
                          model.base_score, model.learning_rate, out[lo:hi])

    n = values.shape[0]
    if threads > 1 and n > _PREDICT_CHUNK:
        bounds = list(range(0, n, _PREDICT_CHUNK)) + [n]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(run, lo, hi)
                for lo, hi in zip(bounds[:-1], bounds[1:])
            ]
            for fut in futures:
                fut.result()
    else:
        run(0, n)
    return out


def feature_importance(model: GbtEnsemble):
    """(feature, total gain) pairs, descending gain; ties keep feature order."""
    total = model.importance()
    order = sorted(
        range(len(model.feature_names)),
        key=lambda j: (-total[model.feature_names[j]], j),
    )
    return [(model.feature_names[j], total[model.feature_names[j]]) for j in order]


# --- serialization -------------------------------------------------------------

def _tree_to_preorder(tree: Tree):
    """Nodes as JSON dicts in preorder; child links become preorder positions."""
    nodes = []

    def visit(nid):
        pos = len(nodes)
        if tree.feat[nid] < 0:
            nodes.append({"leaf": float(tree.value[nid])})
            return pos
        node = {
            "feat": int(tree.feat[nid]),
            "thresh": float(tree.thresh[nid]),
            "default": "left" if tree.default_left[nid] else "right",
            "left": -1,
            "right": -1,
            "gain": float(tree.gain[nid]),
        }
        nodes.append(node)
        node["left"] = visit(int(tree.left[nid]))
        node["right"] = visit(int(tree.right[nid]))
        return pos

    visit(0)
    return nodes


def _tree_from_nodes(nodes, n_features):
    count = len(nodes)
    tree = Tree(
        np.full(count, -1, dtype=np.int32), np.zeros(count),
        np.zeros(count, dtype=np.uint8),
        np.full(count, -1, dtype=np.int32), np.full(count, -1, dtype=np.int32),
        np.zeros(count), np.zeros(count),
    )
    seen = np.zeros(count, dtype=bool)
    for i, node in enumerate(nodes):
        if "leaf" in node:
            tree.value[i] = float(node["leaf"])
            continue
        try:
            f, th, d = node["feat"], node["thresh"], node["default"]
            l, r = node["left"], node["right"]
        except (KeyError, TypeError):
            raise FormatError(f"tree node {i} violates the node schema") from None
        if not 0 <= f < n_features:
            raise FormatError(f"tree node {i}: feature index {f} out of range")
        if d not in ("left", "right"):
            raise FormatError(f"tree node {i}: default must be left/right")
        # preorder puts children strictly after their parent; forward-only
        # links also rule out cycles
        if not (i < l < count and i < r < count) or seen[l] or seen[r]:
            raise FormatError(f"tree node {i}: malformed child links")
        seen[l] = seen[r] = True
        tree.feat[i] = f
        tree.thresh[i] = float(th)
        if not np.isfinite(tree.thresh[i]):
            raise FormatError(f"tree node {i}: non-finite threshold")
        tree.default_left[i] = d == "left"
        tree.left[i] = l
        tree.right[i] = r
        tree.gain[i] = float(node.get("gain", 0.0))
    return tree


def model_to_dict(model: GbtEnsemble) -> dict:
    trees = [_tree_to_preorder(t) for t in model.trees]
    # accumulate importance in the serialized node order so that
    # save -> load -> save reproduces the file byte for byte
    importance = {name: 0.0 for name in model.feature_names}
    for nodes in trees:
        for node in nodes:
            if "feat" in node:
                importance[model.feature_names[node["feat"]]] += node["gain"]
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "base_score": float(model.base_score),
        "learning_rate": float(model.learning_rate),
        "feature_names": list(model.feature_names),
        "trees": trees,
        "importance": {k: float(v) for k, v in importance.items()},
    }
    if model.params is not None:
        doc["params"] = {
            "n_estimators": model.params.n_estimators,
            "learning_rate": model.params.learning_rate,
            "max_depth": model.params.max_depth,
            "reg_lambda": model.params.reg_lambda,
            "gamma": model.params.gamma,
            "min_child_weight": model.params.min_child_weight,
            "seed": model.params.seed,
            "tree_method": model.params.tree_method,
        }
    return doc


def model_from_dict(doc) -> GbtEnsemble:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise FormatError(f"not a {FORMAT} document")
    if doc.get("version") != VERSION:
        raise FormatError(f"unsupported {FORMAT} version {doc.get('version')!r}")
    for key in ("base_score", "learning_rate", "feature_names", "trees"):
        if key not in doc:
            raise FormatError(f"model document missing field {key!r}")
    names = tuple(doc["feature_names"])
    params = None
    if "params" in doc:
        try:
            params = GbtParams(**doc["params"])
        except (TypeError, ValueError) as exc:
            raise FormatError(f"bad params block: {exc}") from None
    trees = [_tree_from_nodes(nodes, len(names)) for nodes in doc["trees"]]
    return GbtEnsemble(float(doc["base_score"]), float(doc["learning_rate"]),
                       names, trees, params)


def save_model(model: GbtEnsemble, path) -> None:
    """JSON with shortest-round-trip floats: load(save(m)) predicts bitwise."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh, indent=None, sort_keys=True)
        fh.write("\n")


def load_model(path) -> GbtEnsemble:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(f"{path}: truncated or malformed JSON: {exc}") from None
    return model_from_dict(doc)

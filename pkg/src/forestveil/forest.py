"""Plaintext random forests over complete binary trees.

Conventions: nodes and leaves are stored in level order and indexed from 0
(node 0 is the root, children of node i are 2i+1 and 2i+2; leaf 0 is the
leftmost).  Feature indices are 0-based.  Thresholds and leaf labels sit on
the 10^-3 fixed-point grid.  A node routes right iff x[feature] >= threshold,
i.e. sign(0) = +1.

A tree may carry a ``gamma`` vector produced by :func:`randomize_tree`; a
node with gamma = -1 routes with its sign flipped (its subtrees were
swapped), so the tree still computes the original function.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

import numpy as np
from scipy.stats import rankdata

from .lhe import FIXED_LIMIT, SCALE, EncodingError, to_grid


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class SplitNode:
    feature: int
    threshold: float


@dataclass(frozen=True)
class DecisionTree:
    depth: int
    nodes: tuple[SplitNode, ...]
    leaves: tuple[float, ...]
    n_features: int
    gamma: tuple[int, ...] | None = None

    def __post_init__(self):
        d = self.depth
        if d < 1:
            raise TreeError("depth must be >= 1")
        if len(self.nodes) != 2**d - 1 or len(self.leaves) != 2**d:
            raise TreeError(f"a complete depth-{d} tree needs {2**d - 1} nodes and {2**d} leaves")
        for nd in self.nodes:
            if not 0 <= nd.feature < self.n_features:
                raise TreeError(f"feature index {nd.feature} outside [0, {self.n_features})")
        for leaf in self.leaves:
            if not 0 <= leaf <= 1:
                raise TreeError(f"leaf label {leaf} outside [0, 1]")
        if self.gamma is not None and len(self.gamma) != len(self.nodes):
            raise TreeError("gamma length must match the node count")


@dataclass(frozen=True)
class RandomForest:
    trees: tuple[DecisionTree, ...]
    n_features: int

    @property
    def m(self) -> int:
        return len(self.trees)

    @property
    def d(self) -> int:
        return max(t.depth for t in self.trees)


# -- partial trees (training output, before completion) ---------------------

@dataclass(frozen=True)
class Leaf:
    value: float


@dataclass(frozen=True)
class Node:
    feature: int
    threshold: float
    left: "PartialTree"
    right: "PartialTree"


PartialTree = Union[Leaf, Node]


def partial_depth(t: PartialTree) -> int:
    if isinstance(t, Leaf):
        return 0
    return 1 + max(partial_depth(t.left), partial_depth(t.right))


def evaluate_partial(t: PartialTree, x) -> float:
    while isinstance(t, Node):
        t = t.right if x[t.feature] >= t.threshold else t.left
    return t.value


DUMMY = SplitNode(0, 0.0)


def complete_tree(partial: PartialTree, depth: int, n_features: int) -> DecisionTree:
    """Pad ``partial`` with dummy nodes to a complete tree of ``depth``."""
    if partial_depth(partial) > depth:
        raise TreeError(f"partial tree deeper than {depth}")
    nodes: list[SplitNode] = [DUMMY] * (2**depth - 1)
    leaves: list[float] = [0.0] * 2**depth

    def fill(t: PartialTree, pos: int, level: int) -> None:
        if level == depth:
            leaves[pos - (2**depth - 1)] = t.value
            return
        if isinstance(t, Leaf):
            fill(t, 2 * pos + 1, level + 1)
            fill(t, 2 * pos + 2, level + 1)
        else:
            nodes[pos] = SplitNode(t.feature, t.threshold)
            fill(t.left, 2 * pos + 1, level + 1)
            fill(t.right, 2 * pos + 2, level + 1)

    fill(partial, 0, 0)
    return DecisionTree(depth, tuple(nodes), tuple(leaves), n_features)


# -- evaluation -------------------------------------------------------------

def node_signs(tree: DecisionTree, x) -> list[int]:
    """sign(x[j_i] - t_i) for every node, ignoring any randomization."""
    return [1 if x[nd.feature] >= nd.threshold else -1 for nd in tree.nodes]


def leaf_index(tree: DecisionTree, x) -> int:
    if len(x) != tree.n_features:
        raise TreeError(f"input has {len(x)} features, tree expects {tree.n_features}")
    i = 0
    for _ in range(tree.depth):
        nd = tree.nodes[i]
        s = 1 if x[nd.feature] >= nd.threshold else -1
        if tree.gamma is not None:
            s *= tree.gamma[i]
        i = 2 * i + (2 if s > 0 else 1)
    return i - (2**tree.depth - 1)


def evaluate_tree(tree: DecisionTree, x) -> float:
    return tree.leaves[leaf_index(tree, x)]


def forest_predict(forest: RandomForest, x, exact: bool = False):
    """Arithmetic mean of the tree outputs (as a Fraction if ``exact``)."""
    total = sum(to_grid(evaluate_tree(t, x)) for t in forest.trees)
    y = Fraction(total, SCALE * forest.m)
    return y if exact else float(y)


def merge_forests(*forests: RandomForest) -> RandomForest:
    dims = {f.n_features for f in forests}
    if len(dims) != 1:
        raise TreeError("forests disagree on the number of features")
    return RandomForest(tuple(t for f in forests for t in f.trees), dims.pop())


# -- polynomial path representation -----------------------------------------

@dataclass(frozen=True)
class PathPolynomial:
    """Product over the path of (v_j - g_j) for left turns, (v_j + g_j) for right.

    ``indices`` are the node positions on the root-to-leaf path and ``turns``
    the matching -1 (left) / +1 (right) choices.
    """

    leaf: int
    indices: tuple[int, ...]
    turns: tuple[int, ...]

    def evaluate(self, values: Sequence[int], gamma: Sequence[int] | None = None) -> int:
        z = 1
        for idx, turn in zip(self.indices, self.turns):
            g = 1 if gamma is None else gamma[idx]
            z *= values[idx] + turn * g
        return z


_POLY_CACHE: dict[int, tuple[PathPolynomial, ...]] = {}


def path_polynomials(d: int) -> tuple[PathPolynomial, ...]:
    if d < 1:
        raise TreeError("depth must be >= 1")
    if d not in _POLY_CACHE:
        polys = []
        for leaf in range(2**d):
            pos, idx, turns = 0, [], []
            for level in range(d - 1, -1, -1):
                bit = (leaf >> level) & 1
                idx.append(pos)
                turns.append(1 if bit else -1)
                pos = 2 * pos + 1 + bit
            polys.append(PathPolynomial(leaf, tuple(idx), tuple(turns)))
        _POLY_CACHE[d] = tuple(polys)
    return _POLY_CACHE[d]


def nonzero_leaves(d: int, values: Sequence[int], gamma: Sequence[int] | None = None) -> list[int]:
    return [p.leaf for p in path_polynomials(d) if p.evaluate(values, gamma) != 0]


# -- randomization ----------------------------------------------------------

def randomization_maps(d: int, gamma: Sequence[int]) -> tuple[list[int], list[int]]:
    """Where each node / leaf of the randomized tree comes from.

    Swaps are applied top-down: gamma[p] acts on whatever node sits at
    position p once its ancestors have been swapped.  Returns
    ``node_src[p]`` and ``leaf_src[l]``, original positions.
    """
    n_nodes = 2**d - 1
    if len(gamma) != n_nodes:
        raise TreeError(f"gamma must have length {n_nodes}")
    src = [0] * (2 * n_nodes + 1)
    for p in range(n_nodes):
        o = src[p]
        lo, hi = 2 * o + 1, 2 * o + 2
        if gamma[p] == -1:
            lo, hi = hi, lo
        elif gamma[p] != 1:
            raise TreeError("gamma entries must be +1 or -1")
        src[2 * p + 1], src[2 * p + 2] = lo, hi
    return src[:n_nodes], [s - n_nodes for s in src[n_nodes:]]


def randomize_tree(tree: DecisionTree, gamma: Sequence[int]) -> tuple[DecisionTree, list[int]]:
    """Swap subtrees where gamma = -1; returns the tree and its leaf sources."""
    node_src, leaf_src = randomization_maps(tree.depth, gamma)
    old_gamma = tree.gamma or (1,) * len(tree.nodes)
    new = DecisionTree(
        tree.depth,
        tuple(tree.nodes[o] for o in node_src),
        tuple(tree.leaves[o] for o in leaf_src),
        tree.n_features,
        tuple(g * old_gamma[o] for g, o in zip(gamma, node_src)),
    )
    return new, leaf_src


# -- datasets ---------------------------------------------------------------

@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be 2-D with one row per label")
        if not np.isin(self.y, (0, 1)).all():
            raise ValueError("labels must be 0 or 1")
        if np.abs(self.X).max(initial=0) > FIXED_LIMIT:
            raise EncodingError(f"feature values must lie in [-{FIXED_LIMIT}, {FIXED_LIMIT}]")
        scaled = self.X * SCALE
        if np.abs(scaled - np.round(scaled)).max(initial=0) > 1e-6:
            raise EncodingError("feature values must have at most 3 fractional digits")
        if not self.feature_names:
            self.feature_names = [f"x{i + 1}" for i in range(self.X.shape[1])]

    def __len__(self):
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    @property
    def grid(self) -> np.ndarray:
        return np.round(self.X * SCALE).astype(np.int64)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], list(self.feature_names))


def load_csv(path) -> Dataset:
    """Header row, numeric feature columns, last column the 0/1 label."""
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    header, body = rows[0], [r for r in rows[1:] if r]
    data = np.array([[float(v) for v in r] for r in body])
    return Dataset(data[:, :-1], data[:, -1].astype(np.int64), header[:-1])


def load_row(path) -> list[float]:
    """A single input vector: optional header, one numeric row."""
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(f) if r]
    for r in rows:
        try:
            return [float(v) for v in r]
        except ValueError:
            continue
    raise ValueError(f"{path}: no numeric row")


# -- training ---------------------------------------------------------------

def _leaf_value(pos: int, n: int) -> float:
    return ((2 * SCALE * pos + n) // (2 * n)) / SCALE


def _grow(X, y, idx, depth, max_depth, k_feat, rng) -> PartialTree:
    ys = y[idx]
    n = len(idx)
    pos = int(ys.sum())
    if depth == max_depth or n < 2 or pos == 0 or pos == n:
        return Leaf(_leaf_value(pos, n))
    feats = np.sort(rng.choice(X.shape[1], size=k_feat, replace=False))
    best = None  # (score, feature, threshold)
    nl = np.arange(1, n)
    nr = n - nl
    for f in feats:
        v = X[idx, f]
        order = np.argsort(v, kind="stable")
        vs, yo = v[order], ys[order]
        valid = vs[1:] != vs[:-1]
        if not valid.any():
            continue
        cl = np.cumsum(yo)[:-1]
        cr = pos - cl
        # maximizing this minimizes the weighted Gini impurity of the children
        score = (cl**2 + (nl - cl) ** 2) / nl + (cr**2 + (nr - cr) ** 2) / nr
        score = np.where(valid, score, -np.inf)
        k = int(np.argmax(score))
        s = float(score[k])
        if best is None or s > best[0] + 1e-9 * max(1.0, abs(best[0])):
            thr = (int(vs[k]) + int(vs[k + 1]) + 1) // 2
            best = (s, int(f), thr)
    if best is None:
        return Leaf(_leaf_value(pos, n))
    _, f, thr = best
    go_right = X[idx, f] >= thr
    return Node(
        f, thr / SCALE,
        _grow(X, y, idx[~go_right], depth + 1, max_depth, k_feat, rng),
        _grow(X, y, idx[go_right], depth + 1, max_depth, k_feat, rng),
    )


def train_tree(data: Dataset, depth: int, feature_fraction: float = 0.1,
               rng: np.random.Generator | None = None, bootstrap: bool = True) -> DecisionTree:
    rng = rng if rng is not None else np.random.default_rng()
    Xg = data.grid
    n = len(data)
    idx = rng.integers(0, n, size=n) if bootstrap else np.arange(n)
    k_feat = max(1, int(round(feature_fraction * data.n_features)))
    partial = _grow(Xg, data.y, idx, 0, depth, k_feat, rng)
    return complete_tree(partial, depth, data.n_features)


def train_forest(data: Dataset, m: int, d: int, feature_fraction: float = 0.1,
                 rng_seed: int | None = 0) -> RandomForest:
    """Bagged CART forest; every tree is completed to depth ``d``."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if m < 1 or d < 1:
        raise ValueError("need m >= 1 and d >= 1")
    streams = np.random.SeedSequence(rng_seed).spawn(m)
    trees = tuple(train_tree(data, d, feature_fraction, np.random.default_rng(s)) for s in streams)
    return RandomForest(trees, data.n_features)


# -- metrics ----------------------------------------------------------------

def auc(scores, labels) -> float:
    """P(score of a random positive > score of a random negative); ties count 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def predict_many(forest: RandomForest, X) -> np.ndarray:
    """Vectorized forest scores for the rows of X."""
    X = np.round(np.asarray(X, dtype=float) * SCALE).astype(np.int64)
    out = np.zeros(len(X))
    for t in forest.trees:
        pos = np.zeros(len(X), dtype=np.int64)
        feats = np.array([nd.feature for nd in t.nodes])
        thr = np.array([to_grid(nd.threshold) for nd in t.nodes])
        gam = np.array(t.gamma) if t.gamma is not None else np.ones(len(t.nodes), dtype=np.int64)
        rows = np.arange(len(X))
        for _ in range(t.depth):
            s = np.where(X[rows, feats[pos]] >= thr[pos], 1, -1) * gam[pos]
            pos = 2 * pos + np.where(s > 0, 2, 1)
        out += np.asarray(t.leaves)[pos - (2**t.depth - 1)]
    return out / forest.m


# -- persistence ------------------------------------------------------------

_FOREST_MAGIC = b"FVRF"
_FOREST_VERSION = 1


def forest_to_bytes(forest: RandomForest) -> bytes:
    out = [_FOREST_MAGIC, struct.pack(">HIII", _FOREST_VERSION, forest.m, forest.d, forest.n_features)]
    for t in forest.trees:
        out.append(struct.pack(">I", t.depth))
        for nd in t.nodes:
            out.append(struct.pack(">Iq", nd.feature, to_grid(nd.threshold)))
        for leaf in t.leaves:
            out.append(struct.pack(">I", to_grid(leaf)))
    return b"".join(out)


def forest_from_bytes(buf: bytes) -> RandomForest:
    if buf[:4] != _FOREST_MAGIC:
        raise ValueError("not a forest file")
    version, m, _, n = struct.unpack_from(">HIII", buf, 4)
    if version != _FOREST_VERSION:
        raise ValueError(f"unsupported forest file version {version}")
    off = 18
    trees = []
    for _ in range(m):
        (depth,) = struct.unpack_from(">I", buf, off)
        off += 4
        nodes = []
        for _ in range(2**depth - 1):
            f, t = struct.unpack_from(">Iq", buf, off)
            off += 12
            nodes.append(SplitNode(f, t / SCALE))
        leaves = struct.unpack_from(f">{2**depth}I", buf, off)
        off += 4 * 2**depth
        trees.append(DecisionTree(depth, tuple(nodes), tuple(v / SCALE for v in leaves), n))
    return RandomForest(tuple(trees), n)


def save_forest(forest: RandomForest, path) -> None:
    with open(path, "wb") as f:
        f.write(forest_to_bytes(forest))


def load_forest(path) -> RandomForest:
    with open(path, "rb") as f:
        return forest_from_bytes(f.read())

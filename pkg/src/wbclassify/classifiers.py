"""Entropy-split decision trees, a bagged random forest and a Gaussian naive Bayes baseline.

Class labels are handled as indices into an ordered ``classes`` tuple;
every argmax breaks ties toward the lowest index, so the declared class
order is the tie-break order.  Trees route a sample left when
``x[feature] <= threshold``.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .scene import ModulationKind

MODEL_FORMAT_VERSION = 1


# ---------------------------------------------------------------- impurity

def entropy(labels: Sequence[Hashable]) -> float:
    """Shannon entropy in bits of a label multiset."""
    counts = np.array(list(Counter(labels).values()), dtype=float)
    if counts.sum() == 0:
        raise ValueError("entropy of an empty multiset")
    return _entropy_counts(counts)


def _entropy_counts(counts: np.ndarray) -> float:
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log2(p)).sum()) + 0.0


def information_gain(parent: Sequence[Hashable], partition: Sequence[Sequence[Hashable]]) -> float:
    """Parent entropy minus the size-weighted entropy of the cells."""
    if Counter(parent) != sum((Counter(c) for c in partition), Counter()):
        raise ValueError("partition cells must add up to the parent multiset")
    n = len(parent)
    child = sum(len(c) / n * entropy(c) for c in partition if len(c))
    return max(entropy(parent) - child, 0.0)


def _split_entropies(left_counts: np.ndarray) -> np.ndarray:
    """Weighted child entropy for every split position, given cumulative left class counts."""
    total = left_counts[-1]
    n = total.sum()
    right_counts = total[None, :] - left_counts
    out = np.zeros(len(left_counts))
    for counts in (left_counts, right_counts):
        size = counts.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            p = counts / size[:, None]
            h = -np.where(p > 0, p * np.log2(p), 0.0).sum(axis=1)
        out += np.where(size > 0, size / n * h, 0.0)
    return out


# ---------------------------------------------------------------- data

@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray  # class indices
    classes: tuple = tuple(ModulationKind)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=int)
        if self.X.ndim != 2 or len(self.X) != len(self.y):
            raise ValueError("X must be (n, d) with one label per row")
        if len(self.y) and (self.y.min() < 0 or self.y.max() >= len(self.classes)):
            raise ValueError("label index outside the class list")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return len(self.y)

    @classmethod
    def from_features(cls, rows, classes=tuple(ModulationKind)) -> "Dataset":
        rows = list(rows)
        if any(r.label is None for r in rows):
            raise ValueError("all rows must be labelled")
        X = np.array([r.as_array() for r in rows]).reshape(len(rows), 4)
        y = np.array([classes.index(r.label) for r in rows], dtype=int)
        return cls(X, y, tuple(classes))


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        std = X.std(axis=0)
        return cls(X.mean(axis=0), np.where(std > 0, std, 1.0))

    def __call__(self, X) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def identity(cls, d: int) -> "Standardizer":
        return cls(np.zeros(d), np.ones(d))


# ---------------------------------------------------------------- trees

@dataclass
class Leaf:
    class_counts: np.ndarray

    @property
    def label(self) -> int:
        return int(np.argmax(self.class_counts))


@dataclass
class Decision:
    feature_index: int
    threshold: float
    left: "Leaf | Decision"
    right: "Leaf | Decision"


TreeNode = Leaf | Decision


@dataclass(frozen=True)
class TreeConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 2
    features_per_split: int | None = None  # None -> ceil(sqrt(d))
    bootstrap: bool = True
    rank_thresholds: bool = False
    standardize: bool = True

    def n_features(self, d: int) -> int:
        k = math.ceil(math.sqrt(d)) if self.features_per_split is None else self.features_per_split
        return max(1, min(d, k))


class _RankMap:
    """Maps raw feature values to counts of training uniques ``<= x`` (rank space)."""

    def __init__(self, X: np.ndarray):
        self.uniques = [np.unique(X[:, j]) for j in range(X.shape[1])]

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.column_stack([np.searchsorted(u, X[:, j], side="right") for j, u in enumerate(self.uniques)]
                               ).astype(float)


def _best_split(X, y, n_classes, features, min_leaf):
    # zero-gain splits are accepted when nothing better exists (XOR-like nodes)
    best = (-np.inf, None, None)
    n = len(y)
    parent_h = _entropy_counts(np.bincount(y, minlength=n_classes).astype(float))
    for j in features:
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y[order]] = 1.0
        left = np.cumsum(onehot, axis=0)
        # split after position i: left = first i+1 samples
        pos = np.arange(n - 1)
        valid = (xs[:-1] < xs[1:]) & (pos + 1 >= min_leaf) & (n - pos - 1 >= min_leaf)
        if not valid.any():
            continue
        gains = parent_h - _split_entropies(left)[:-1]
        gains = np.where(valid, gains, -np.inf)
        i = int(np.argmax(gains))
        if gains[i] > best[0] + 1e-12:
            thr = 0.5 * (xs[i] + xs[i + 1])
            best = (float(gains[i]), j, thr if thr < xs[i + 1] else xs[i])
    return best


def _grow(X, y, n_classes, config, rng, depth):
    counts = np.bincount(y, minlength=n_classes).astype(float)
    if depth >= config.max_depth or len(y) < 2 * config.min_leaf or np.count_nonzero(counts) == 1:
        return Leaf(counts)
    d = X.shape[1]
    k = config.n_features(d)
    features = np.arange(d) if k == d else np.sort(rng.choice(d, size=k, replace=False))
    gain, j, thr = _best_split(X, y, n_classes, features, config.min_leaf)
    if j is None:
        return Leaf(counts)
    mask = X[:, j] <= thr
    return Decision(int(j), float(thr),
                    _grow(X[mask], y[mask], n_classes, config, rng, depth + 1),
                    _grow(X[~mask], y[~mask], n_classes, config, rng, depth + 1))


def train_tree(data: Dataset, config: TreeConfig = TreeConfig(), rng_seed: int = 0) -> TreeNode:
    """Greedy information-gain tree on ``data.X`` as given (no standardisation)."""
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    rng = np.random.default_rng(rng_seed)
    return _grow(data.X, data.y, len(data.classes), config, rng, 0)


def tree_predict(node: TreeNode, X: np.ndarray) -> np.ndarray:
    """Leaf labels for every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(len(X), dtype=int)
    _route(node, X, np.arange(len(X)), out)
    return out


def _route(node, X, idx, out):
    if isinstance(node, Leaf):
        out[idx] = node.label
        return
    go_left = X[idx, node.feature_index] <= node.threshold
    if go_left.any():
        _route(node.left, X, idx[go_left], out)
    if (~go_left).any():
        _route(node.right, X, idx[~go_left], out)


def tree_depth(node: TreeNode) -> int:
    if isinstance(node, Leaf):
        return 0
    return 1 + max(tree_depth(node.left), tree_depth(node.right))


def _node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": [float(c) for c in node.class_counts]}
    return {"feature": node.feature_index, "threshold": node.threshold,
            "left": _node_to_dict(node.left), "right": _node_to_dict(node.right)}


def _node_from_dict(d: dict) -> TreeNode:
    if "leaf" in d:
        return Leaf(np.asarray(d["leaf"], dtype=float))
    return Decision(int(d["feature"]), float(d["threshold"]), _node_from_dict(d["left"]),
                    _node_from_dict(d["right"]))


# ---------------------------------------------------------------- forest

@dataclass
class ForestModel:
    trees: list
    config: TreeConfig
    classes: tuple
    seed: int
    scaler: Standardizer
    rank_map: _RankMap | None = None
    oob_accuracy: float | None = None
    dim: int = 4

    def _transform(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise ValueError(f"expected {self.dim} features, got {X.shape[1]}")
        X = self.scaler(X)
        return self.rank_map(X) if self.rank_map is not None else X

    def votes(self, X) -> np.ndarray:
        Xt = self._transform(X)
        v = np.zeros((len(Xt), len(self.classes)), dtype=int)
        for tree in self.trees:
            v[np.arange(len(Xt)), tree_predict(tree, Xt)] += 1
        return v

    def predict(self, X) -> np.ndarray:
        """Majority vote; ties go to the lowest class index."""
        return np.argmax(self.votes(X), axis=1)

    def to_json(self) -> str:
        if self.rank_map is not None:
            rank = [u.tolist() for u in self.rank_map.uniques]
        else:
            rank = None
        doc = {
            "format": "wbclassify.forest",
            "version": MODEL_FORMAT_VERSION,
            "classes": [_label_name(c) for c in self.classes],
            "config": asdict(self.config),
            "seed": int(self.seed),
            "dim": self.dim,
            "normalization": self.scaler.to_dict(),
            "rank_uniques": rank,
            "oob_accuracy": self.oob_accuracy,
            "trees": [_node_to_dict(t) for t in self.trees],
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ForestModel":
        d = json.loads(text)
        if d.get("format") != "wbclassify.forest" or d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError("not a version-1 forest document")
        rank = None
        if d["rank_uniques"] is not None:
            rank = _RankMap.__new__(_RankMap)
            rank.uniques = [np.asarray(u) for u in d["rank_uniques"]]
        norm = d["normalization"]
        return cls([_node_from_dict(t) for t in d["trees"]], TreeConfig(**d["config"]),
                   tuple(_label_from_name(c) for c in d["classes"]), d["seed"],
                   Standardizer(np.asarray(norm["mean"]), np.asarray(norm["std"])), rank,
                   d["oob_accuracy"], d["dim"])


def _label_name(c) -> str:
    return c.value if isinstance(c, ModulationKind) else str(c)


def _label_from_name(s: str):
    try:
        return ModulationKind(s)
    except ValueError:
        return s


def train_forest(data: Dataset, config: TreeConfig = TreeConfig(), rng_seed: int = 0) -> ForestModel:
    """Bagged ensemble of ``config.n_trees`` entropy trees.

    Each tree draws from its own child of ``SeedSequence(rng_seed)``, so
    trees could be grown in any order without changing the result.
    """
    if len(data) == 0:
        raise ValueError("cannot train on an empty dataset")
    if config.n_trees < 1:
        raise ValueError("need at least one tree")
    scaler = Standardizer.fit(data.X) if config.standardize else Standardizer.identity(data.dim)
    X = scaler(data.X)
    rank_map = None
    if config.rank_thresholds:
        rank_map = _RankMap(X)
        X = rank_map(X)
    n = len(data)
    n_classes = len(data.classes)
    oob_votes = np.zeros((n, n_classes), dtype=int)
    trees = []
    for child in np.random.SeedSequence(rng_seed).spawn(config.n_trees):
        rng = np.random.default_rng(child)
        if config.bootstrap:
            idx = rng.integers(0, n, size=n)
        else:
            idx = np.arange(n)
        tree = _grow(X[idx], data.y[idx], n_classes, config, rng, 0)
        trees.append(tree)
        if config.bootstrap:
            oob = np.setdiff1d(np.arange(n), idx)
            if len(oob):
                oob_votes[oob, tree_predict(tree, X[oob])] += 1
    oob_acc = None
    has_vote = oob_votes.sum(axis=1) > 0
    if config.bootstrap and has_vote.any():
        oob_acc = float(np.mean(np.argmax(oob_votes[has_vote], axis=1) == data.y[has_vote]))
    return ForestModel(trees, config, tuple(data.classes), int(rng_seed), scaler, rank_map, oob_acc, data.dim)


def predict(model: ForestModel, x) -> object:
    """Class label (not index) for a single feature vector or 4-array."""
    arr = x.as_array() if hasattr(x, "as_array") else np.asarray(x, dtype=float)
    if arr.ndim != 1:
        raise ValueError("predict takes a single feature vector; use model.predict for batches")
    return model.classes[int(model.predict(arr[None, :])[0])]


# ---------------------------------------------------------------- naive Bayes

@dataclass
class NaiveBayesModel:
    priors: np.ndarray
    means: np.ndarray  # (classes, d)
    variances: np.ndarray
    classes: tuple
    scaler: Standardizer = field(default=None)

    def log_posterior(self, X) -> np.ndarray:
        """Unnormalised log posterior per class, shape (n, classes)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.means.shape[1]:
            raise ValueError(f"expected {self.means.shape[1]} features, got {X.shape[1]}")
        Xs = self.scaler(X) if self.scaler is not None else X
        diff = Xs[:, None, :] - self.means[None, :, :]
        ll = -0.5 * (np.log(2 * np.pi * self.variances)[None] + diff ** 2 / self.variances[None])
        with np.errstate(divide="ignore"):
            return np.log(self.priors)[None, :] + ll.sum(axis=2)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.log_posterior(X), axis=1)

    def to_json(self) -> str:
        return json.dumps({
            "format": "wbclassify.nbc",
            "version": MODEL_FORMAT_VERSION,
            "classes": [_label_name(c) for c in self.classes],
            "priors": self.priors.tolist(),
            "means": self.means.tolist(),
            "variances": self.variances.tolist(),
            "normalization": None if self.scaler is None else self.scaler.to_dict(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NaiveBayesModel":
        d = json.loads(text)
        if d.get("format") != "wbclassify.nbc" or d.get("version") != MODEL_FORMAT_VERSION:
            raise ValueError("not a version-1 naive Bayes document")
        norm = d["normalization"]
        scaler = None if norm is None else Standardizer(np.asarray(norm["mean"]), np.asarray(norm["std"]))
        return cls(np.asarray(d["priors"]), np.asarray(d["means"]), np.asarray(d["variances"]),
                   tuple(_label_from_name(c) for c in d["classes"]), scaler)


def train_nbc(data: Dataset, standardize: bool = True, var_floor: float = 1e-9) -> NaiveBayesModel:
    """Gaussian naive Bayes; classes absent from ``data`` get zero prior."""
    present = np.unique(data.y)
    counts = np.bincount(data.y, minlength=len(data.classes))
    if len(present) < 2:
        raise ValueError("need at least two classes to train")
    if (counts[present] < 2).any():
        raise ValueError("every present class needs at least 2 samples")
    scaler = Standardizer.fit(data.X) if standardize else None
    X = scaler(data.X) if scaler is not None else data.X
    k, d = len(data.classes), data.dim
    means = np.zeros((k, d))
    variances = np.ones((k, d))
    for c in present:
        Xc = X[data.y == c]
        means[c] = Xc.mean(axis=0)
        variances[c] = Xc.var(axis=0)
    floor = var_floor * max(float(X.var(axis=0).max()), 1.0)
    variances = np.maximum(variances, floor)
    return NaiveBayesModel(counts / counts.sum(), means, variances, tuple(data.classes), scaler)


def predict_nbc(model: NaiveBayesModel, x) -> object:
    arr = x.as_array() if hasattr(x, "as_array") else np.asarray(x, dtype=float)
    return model.classes[int(model.predict(arr[None, :])[0])]


# ---------------------------------------------------------------- evaluation

def confusion_matrix(truth: Sequence, pred: Sequence, classes: Sequence) -> tuple[np.ndarray, dict]:
    """Counts with rows = true class, columns = predicted, plus per-class correct rates.

    Rates for classes that never occur in ``truth`` are ``nan``.
    """
    truth, pred = list(truth), list(pred)
    if len(truth) != len(pred):
        raise ValueError("truth and prediction lengths differ")
    index = {c: i for i, c in enumerate(classes)}
    mat = np.zeros((len(classes), len(classes)), dtype=int)
    for t, p in zip(truth, pred):
        if t not in index or p not in index:
            raise ValueError(f"unknown label {t if t not in index else p!r}")
        mat[index[t], index[p]] += 1
    rows = mat.sum(axis=1)
    rates = {c: (mat[i, i] / rows[i] if rows[i] else float("nan")) for i, c in enumerate(classes)}
    return mat, rates

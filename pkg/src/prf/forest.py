"""Ensemble training and accuracy-weighted voting.

Each tree's out-of-bag accuracy becomes its voting weight, so trees that
generalize poorly count for less at prediction time. Training is a pure
function of (dataset, hyperparams): per-tree generators are derived from the
run seed with fixed stream tags, so results do not depend on execution order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import Dataset, Schema, vertical_partition
from .sampling import DsiTable, OobSet, build_dsi, oob_indices
from .tree import (
    DecisionTree,
    Hyperparams,
    predict_tree,
    train_tree,
    tree_from_dict,
    tree_to_dict,
)

TREE_STREAM = 1  # SeedSequence stream tag; sampling uses tag 0


class ForestError(ValueError):
    pass


@dataclass
class Forest:
    trees: list[DecisionTree]
    hyperparams: Hyperparams
    schema: Schema
    dsi_digest: str
    n_rows: int

    @property
    def k(self) -> int:
        return len(self.trees)

    @property
    def weights(self) -> list[float]:
        return [t.oob_accuracy for t in self.trees]

    def mean_variable_importance(self) -> list[float]:
        stack = np.asarray([t.variable_importance for t in self.trees])
        return [float(v) for v in stack.mean(axis=0)]

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "hyperparams": self.hyperparams.to_dict(),
            "dsi_digest": self.dsi_digest,
            "n_rows": self.n_rows,
            "trees": [tree_to_dict(t) for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Forest":
        schema = Schema.from_dict(d["schema"])
        return cls(
            trees=[tree_from_dict(t, schema) for t in d["trees"]],
            hyperparams=Hyperparams.from_dict(d["hyperparams"]),
            schema=schema,
            dsi_digest=d["dsi_digest"],
            n_rows=d["n_rows"],
        )


@dataclass
class PredictionReport:
    predictions: list
    tallies: list[dict[str, float]] | None = None  # classification only
    oob_error: float | None = None


def _tree_rng(seed: int, tree_index: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((seed, TREE_STREAM, tree_index))))


def _input_row(d: Dataset, i: int) -> tuple:
    return tuple(d.columns[j][i] for j in range(d.m - 1))


def tree_accuracy(tree: DecisionTree, oob: OobSet, d: Dataset) -> tuple[float, bool]:
    """OOB accuracy of one tree: correct / total over its out-of-bag rows.

    An empty OOB set yields (0.0, True); such a tree is effectively excluded
    from weighted voting.
    """
    if oob.size == 0:
        return 0.0, True
    target = d.columns[d.schema.target_index]
    correct = sum(
        1 for i in oob.row_indexes
        if predict_tree(tree, _input_row(d, int(i))) == target[int(i)]
    )
    return correct / oob.size, False


def train(d: Dataset, h: Hyperparams) -> tuple[Forest, DsiTable]:
    """Train k trees on bootstrap index rows and weight each by OOB accuracy."""
    if d.n < 1:
        raise ForestError("empty dataset")
    h = h.resolve(d.m - 1)
    dsi = build_dsi(d.n, h.k_trees, h.seed)
    subsets = vertical_partition(d)
    trees = []
    for i in range(h.k_trees):
        tree = train_tree(dsi.row(i), subsets, d.schema, h, _tree_rng(h.seed, i),
                          tree_index=i)
        tree.oob_accuracy, tree.oob_empty = tree_accuracy(tree, oob_indices(dsi, i), d)
        trees.append(tree)
    forest = Forest(trees=trees, hyperparams=h, schema=d.schema,
                    dsi_digest=dsi.digest(), n_rows=d.n)
    return forest, dsi


def weighted_vote(votes: list, weights: list[float],
                  class_order: tuple[str, ...]) -> tuple[str, dict[str, float]]:
    """Argmax of per-class weight sums; ties break by class order.

    If every weight is zero the vote falls back to an unweighted majority so
    a prediction is always produced.
    """
    if len(votes) != len(weights):
        raise ForestError("votes and weights differ in length")
    effective = weights if any(w > 0 for w in weights) else [1.0] * len(weights)
    tallies = {c: 0.0 for c in class_order}
    for label, w in zip(votes, effective):
        if label not in tallies:
            raise ForestError(f"vote {label!r} not in class labels")
        tallies[label] += w
    winner = max(class_order, key=lambda c: (tallies[c], -class_order.index(c)))
    return winner, tallies


def predict_classification(f: Forest, samples: list) -> PredictionReport:
    if f.schema.is_regression:
        raise ForestError("regression forest cannot classify")
    class_order = f.schema.class_labels
    weights = f.weights
    predictions, tallies = [], []
    for sample in samples:
        votes = [predict_tree(t, sample) for t in f.trees]
        winner, tally = weighted_vote(votes, weights, class_order)
        predictions.append(winner)
        tallies.append(tally)
    return PredictionReport(predictions=predictions, tallies=tallies)


def predict_regression(f: Forest, samples: list,
                       mode: str = "normalized") -> PredictionReport:
    """Weighted mean of tree outputs.

    ``normalized`` divides by the weight sum; ``paper-literal`` divides by the
    tree count, which shrinks predictions toward 0 whenever weights sum below k.
    """
    if not f.schema.is_regression:
        raise ForestError("classification forest cannot regress")
    if mode not in ("normalized", "paper-literal"):
        raise ForestError(f"unknown regression mode {mode!r}")
    weights = f.weights
    wsum = sum(weights)
    predictions = []
    for sample in samples:
        outputs = [float(predict_tree(t, sample)) for t in f.trees]
        weighted = sum(w * o for w, o in zip(weights, outputs))
        if mode == "paper-literal":
            predictions.append(weighted / f.k)
        else:
            if wsum <= 0:
                predictions.append(sum(outputs) / f.k)
            else:
                predictions.append(weighted / wsum)
    return PredictionReport(predictions=predictions)


def oob_error(f: Forest, d: Dataset, dsi: DsiTable) -> float:
    """Weighted-vote error over rows, each judged only by trees that kept it
    out of bag."""
    if dsi.digest() != f.dsi_digest:
        raise ForestError("DSI table does not match the forest")
    if f.schema.is_regression:
        raise ForestError("oob_error is defined for classification forests")
    oob_sets = [set(oob_indices(dsi, i).row_indexes.tolist()) for i in range(f.k)]
    class_order = f.schema.class_labels
    target = d.columns[d.schema.target_index]
    judged = wrong = 0
    for row in range(d.n):
        votes, weights = [], []
        for i, tree in enumerate(f.trees):
            if row in oob_sets[i]:
                votes.append(predict_tree(tree, _input_row(d, row)))
                weights.append(tree.oob_accuracy)
        if not votes:
            continue
        winner, _ = weighted_vote(votes, weights, class_order)
        judged += 1
        if winner != target[row]:
            wrong += 1
    if judged == 0:
        raise ForestError("no row has an out-of-bag vote; error rate undefined")
    return wrong / judged


def save_forest(f: Forest, path: str | Path, meta: dict | None = None) -> None:
    doc = {"meta": meta or {}, **f.to_dict()}
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_forest(path: str | Path) -> Forest:
    with open(path) as fh:
        return Forest.from_dict(json.load(fh))

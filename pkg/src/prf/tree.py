"""Single decision-tree induction with gain-ratio splitting.

Splitting follows C4.5: base-2 entropy, information gain divided by the
split's self-information. Categorical features split multiway over their
observed values and are consumed in the subtree; continuous features split
on the best midpoint threshold and stay usable below. Per-tree feature
selection keeps the top k features by normalized gain-ratio importance and
fills the rest uniformly at random.

Regression trees reuse the same machinery with variance in place of entropy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .dataset import CATEGORICAL, FeatureSubset, Schema

_GAIN_TOL = 1e-12


class TreeError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    k_trees: int = 10
    m_selected: int | None = None  # default: ceil(log2 M) + 1, capped at M-1
    k_top: int | None = None       # default: ceil(sqrt(m_selected)), < m_selected
    max_depth: int = 32
    min_samples_split: int = 2
    min_leaf_size: int = 1
    seed: int = 0

    def resolve(self, n_input_features: int) -> "Hyperparams":
        """Fill defaults against a concrete feature count and validate."""
        if n_input_features < 1:
            raise TreeError("need at least one input feature")
        m = self.m_selected
        if m is None:
            m = min(n_input_features, math.ceil(math.log2(n_input_features + 1)) + 1)
        if not 1 <= m <= n_input_features:
            raise TreeError(
                f"m_selected={m} out of range [1, {n_input_features}]")
        k_top = self.k_top
        if k_top is None:
            k_top = min(math.ceil(math.sqrt(m)), m - 1)
        if not 0 <= k_top < m:
            raise TreeError(f"k_top={k_top} must satisfy 0 <= k_top < m_selected={m}")
        if self.k_trees < 1:
            raise TreeError("k_trees must be >= 1")
        if self.max_depth < 1:
            raise TreeError("max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise TreeError("min_samples_split must be >= 2")
        if self.min_leaf_size < 1:
            raise TreeError("min_leaf_size must be >= 1")
        if self.seed < 0:
            raise TreeError("seed must be non-negative")
        return replace(self, m_selected=m, k_top=k_top)

    def to_dict(self) -> dict:
        return {
            "k_trees": self.k_trees, "m_selected": self.m_selected,
            "k_top": self.k_top, "max_depth": self.max_depth,
            "min_samples_split": self.min_samples_split,
            "min_leaf_size": self.min_leaf_size, "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**d)


@dataclass(frozen=True)
class LabelDistribution:
    counts: dict[str, int]

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def majority(self, class_order: tuple[str, ...]) -> str:
        # ties break toward the earlier class in schema order
        best, best_n = None, -1
        for label in class_order:
            n = self.counts.get(label, 0)
            if n > best_n:
                best, best_n = label, n
        if best is None:
            raise TreeError("empty distribution has no majority")
        return best


@dataclass(frozen=True)
class SplitRule:
    feature_index: int
    kind: str  # "multiway" | "threshold"
    values: tuple[str, ...] | None = None
    cut: float | None = None

    def __post_init__(self):
        if self.kind == "multiway":
            if self.values is None or len(self.values) < 2:
                raise TreeError("multiway rule needs >= 2 values")
        elif self.kind == "threshold":
            if self.cut is None or not math.isfinite(self.cut):
                raise TreeError("threshold rule needs a finite cut")
        else:
            raise TreeError(f"unknown rule kind {self.kind!r}")


@dataclass(frozen=True)
class GainRatioResult:
    feature_index: int
    entropy_target: float
    entropy_feature: float
    split_info: float
    info_gain: float
    gain_ratio: float
    rule: SplitRule | None
    degenerate: bool = False


@dataclass
class Leaf:
    distribution: LabelDistribution | None  # classification
    value: float | None                     # regression
    n_samples: int = 0
    prediction: object = None


@dataclass
class Internal:
    rule: SplitRule
    children: dict[str, "TreeNode"]
    majority_child: str
    n_samples: int = 0


TreeNode = Leaf | Internal


@dataclass
class DecisionTree:
    root: TreeNode
    selected_features: tuple[int, ...]
    tree_index: int = 0
    oob_accuracy: float = 0.0
    oob_empty: bool = False
    variable_importance: tuple[float, ...] = ()


# ---------------------------------------------------------------- entropy

def _entropy_counts(counts: np.ndarray) -> float:
    n = counts.sum()
    if n <= 0:
        return 0.0
    p = counts[counts > 0] / n
    return float(-(p * np.log2(p)).sum())


def entropy(dist: LabelDistribution) -> float:
    """Base-2 entropy of a label distribution; empty -> 0."""
    return _entropy_counts(np.asarray(list(dist.counts.values()), dtype=np.float64))


def _impurity(fs: FeatureSubset, rows: np.ndarray) -> float:
    """Entropy of the targets over rows (variance for regression)."""
    y = fs.target_codes[rows]
    if fs.n_classes == 0:
        return float(np.var(y)) if len(y) else 0.0
    return _entropy_counts(np.bincount(y, minlength=fs.n_classes).astype(np.float64))


def _partition_rows(fs: FeatureSubset, rows: np.ndarray, rule: SplitRule) -> list[np.ndarray]:
    if rule.feature_index != fs.feature_index:
        raise TreeError(
            f"rule for feature {rule.feature_index} applied to subset {fs.feature_index}")
    if rule.kind == "multiway":
        vals = fs.values[rows]
        return [rows[np.asarray([v == want for v in vals], dtype=bool)]
                for want in rule.values]
    v = fs.values[rows]
    return [rows[v <= rule.cut], rows[v > rule.cut]]


def feature_entropy(fs: FeatureSubset, active_rows: np.ndarray, rule: SplitRule) -> float:
    """Size-weighted impurity of the partitions the rule induces."""
    rows = np.asarray(active_rows, dtype=np.int64)
    if len(rows) == 0:
        raise TreeError("active_rows is empty")
    total = 0.0
    for part in _partition_rows(fs, rows, rule):
        if len(part):
            total += (len(part) / len(rows)) * _impurity(fs, part)
    return total


def split_info(fs: FeatureSubset, active_rows: np.ndarray, rule: SplitRule) -> float:
    """Self-information of the partition proportions; 0 for one partition."""
    rows = np.asarray(active_rows, dtype=np.int64)
    sizes = np.asarray([len(p) for p in _partition_rows(fs, rows, rule)], dtype=np.float64)
    return _entropy_counts(sizes)


def _degenerate(fs: FeatureSubset, h_target: float) -> GainRatioResult:
    return GainRatioResult(
        feature_index=fs.feature_index, entropy_target=h_target,
        entropy_feature=h_target, split_info=0.0, info_gain=0.0,
        gain_ratio=0.0, rule=None, degenerate=True)


def _gain_ratio_categorical(fs, rows, h_target, min_leaf_size):
    codes = fs.value_codes[rows]
    n = len(rows)
    n_vals = len(fs.vocab)
    if fs.n_classes > 0:
        joint = np.bincount(codes * fs.n_classes + fs.target_codes[rows],
                            minlength=n_vals * fs.n_classes).astype(np.float64)
        joint = joint.reshape(n_vals, fs.n_classes)
        sizes = joint.sum(axis=1)
        child_imp = np.array([_entropy_counts(joint[v]) for v in range(n_vals)])
    else:
        y = fs.target_codes[rows]
        sizes = np.bincount(codes, minlength=n_vals).astype(np.float64)
        sums = np.bincount(codes, weights=y, minlength=n_vals)
        sumsq = np.bincount(codes, weights=y * y, minlength=n_vals)
        with np.errstate(invalid="ignore", divide="ignore"):
            child_imp = np.where(sizes > 0, sumsq / np.maximum(sizes, 1)
                                 - (sums / np.maximum(sizes, 1)) ** 2, 0.0)
        child_imp = np.maximum(child_imp, 0.0)
    present = sizes > 0
    if present.sum() < 2:
        return _degenerate(fs, h_target)
    if sizes[present].min() < min_leaf_size:
        return _degenerate(fs, h_target)
    h_feature = float((sizes[present] / n * child_imp[present]).sum())
    si = _entropy_counts(sizes[present])
    gain = h_target - h_feature
    ratio = gain / si if si > 0 else 0.0
    rule = SplitRule(feature_index=fs.feature_index, kind="multiway",
                     values=tuple(fs.vocab[v] for v in np.nonzero(present)[0]))
    return GainRatioResult(fs.feature_index, h_target, h_feature, si, gain, ratio, rule)


def _child_entropies(cum_left: np.ndarray, totals: np.ndarray):
    """Entropies of left/right class-count prefixes, vectorized over cuts."""
    nl = cum_left.sum(axis=1)
    right = totals[None, :] - cum_left
    nr = right.sum(axis=1)

    def ent(counts, sizes):
        with np.errstate(invalid="ignore", divide="ignore"):
            p = counts / sizes[:, None]
            term = np.where(counts > 0, -p * np.log2(p), 0.0)
        return term.sum(axis=1)

    return ent(cum_left, nl), ent(right, nr), nl, nr


def _gain_ratio_continuous(fs, rows, h_target, min_leaf_size):
    v = fs.values[rows]
    n = len(rows)
    order = np.argsort(v, kind="stable")
    vs = v[order]
    boundaries = np.nonzero(vs[:-1] < vs[1:])[0]  # cut after position i
    if len(boundaries) == 0:
        return _degenerate(fs, h_target)
    nl_all = boundaries + 1
    if fs.n_classes > 0:
        y = fs.target_codes[rows][order]
        onehot = np.zeros((n, fs.n_classes))
        onehot[np.arange(n), y] = 1.0
        cum = np.cumsum(onehot, axis=0)
        totals = cum[-1]
        h_l, h_r, nl, nr = _child_entropies(cum[boundaries], totals)
    else:
        y = fs.target_codes[rows][order].astype(np.float64)
        cs, csq = np.cumsum(y), np.cumsum(y * y)
        nl = nl_all.astype(np.float64)
        nr = n - nl
        sl, sql = cs[boundaries], csq[boundaries]
        sr, sqr = cs[-1] - sl, csq[-1] - sql
        h_l = np.maximum(sql / nl - (sl / nl) ** 2, 0.0)
        h_r = np.maximum(sqr / nr - (sr / nr) ** 2, 0.0)
    valid = (nl >= min_leaf_size) & (nr >= min_leaf_size)
    if not valid.any():
        return _degenerate(fs, h_target)
    pl, pr = nl / n, nr / n
    h_feature = pl * h_l + pr * h_r
    si = -(pl * np.log2(pl) + pr * np.log2(pr))
    gain = h_target - h_feature
    with np.errstate(invalid="ignore", divide="ignore"):
        ratio = np.where(si > 0, gain / si, 0.0)
    ratio = np.where(valid, ratio, -np.inf)
    best = int(np.argmax(ratio))  # first max -> smallest threshold
    i = boundaries[best]
    cut = float((vs[i] + vs[i + 1]) / 2.0)
    rule = SplitRule(feature_index=fs.feature_index, kind="threshold", cut=cut)
    return GainRatioResult(
        fs.feature_index, h_target, float(h_feature[best]), float(si[best]),
        float(gain[best]), float(ratio[best]) if si[best] > 0 else 0.0, rule)


def gain_ratio(fs: FeatureSubset, active_rows: np.ndarray,
               min_leaf_size: int = 1) -> GainRatioResult:
    """Best split of one feature over the active rows.

    Categorical features are scored on their full multiway partition;
    continuous features on the best midpoint threshold (ties toward the
    smallest cut). A single-valued feature comes back degenerate with
    gain_ratio 0.
    """
    rows = np.asarray(active_rows, dtype=np.int64)
    if len(rows) == 0:
        raise TreeError("active_rows is empty")
    h_target = _impurity(fs, rows)
    if fs.kind == CATEGORICAL:
        return _gain_ratio_categorical(fs, rows, h_target, min_leaf_size)
    return _gain_ratio_continuous(fs, rows, h_target, min_leaf_size)


def variable_importance(results: list[GainRatioResult]) -> list[float]:
    """Each feature's share of the summed gain ratios; uniform if all zero."""
    if not results:
        raise TreeError("no gain-ratio results")
    ratios = [max(r.gain_ratio, 0.0) for r in results]
    total = sum(ratios)
    if total <= 0.0:
        return [1.0 / len(results)] * len(results)
    return [r / total for r in ratios]


def dimension_reduce(results: list[GainRatioResult], h: Hyperparams,
                     rng: np.random.Generator) -> list[int]:
    """Select m features: top k_top by importance, the rest sampled uniformly.

    ``results`` must cover every input feature. Importance ties break toward
    the lower feature index. The random fill draws without replacement from
    the features outside the top block.
    """
    m, k_top = h.m_selected, h.k_top
    if m is None or k_top is None:
        raise TreeError("hyperparams must be resolved before dimension_reduce")
    if m > len(results):
        raise TreeError(f"m_selected={m} exceeds feature count {len(results)}")
    vi = variable_importance(results)
    order = sorted(range(len(results)), key=lambda j: (-vi[j], j))
    top = order[:k_top]
    rest = sorted(order[k_top:])
    fill = m - k_top
    if fill > 0:
        picked = rng.choice(len(rest), size=fill, replace=False)
        top = top + [rest[i] for i in sorted(picked)]
    return top


# ---------------------------------------------------------------- training

def _distribution(fs: FeatureSubset, rows: np.ndarray,
                  class_labels: tuple[str, ...]) -> LabelDistribution:
    counts = np.bincount(fs.target_codes[rows], minlength=len(class_labels))
    return LabelDistribution({c: int(n) for c, n in zip(class_labels, counts) if n > 0})


def _make_leaf(subsets, rows, schema: Schema) -> Leaf:
    fs = subsets[0]
    if schema.is_regression:
        value = float(np.mean(fs.target_codes[rows]))
        return Leaf(distribution=None, value=value, n_samples=len(rows), prediction=value)
    dist = _distribution(fs, rows, schema.class_labels)
    return Leaf(distribution=dist, value=None, n_samples=len(rows),
                prediction=dist.majority(schema.class_labels))


def _is_pure(fs: FeatureSubset, rows: np.ndarray) -> bool:
    y = fs.target_codes[rows]
    return bool(np.all(y == y[0]))


def _best_result(subsets, rows, usable, h) -> GainRatioResult | None:
    best = None
    for j in sorted(usable):  # ascending index, so strict > keeps the lowest on ties
        r = gain_ratio(subsets[j], rows, min_leaf_size=h.min_leaf_size)
        if r.degenerate or r.info_gain <= _GAIN_TOL or r.gain_ratio <= 0.0:
            continue
        if best is None or r.gain_ratio > best.gain_ratio:
            best = r
    return best


def _grow(subsets, rows, usable, depth, h, schema) -> TreeNode:
    if (len(rows) < h.min_samples_split or depth >= h.max_depth
            or not usable or _is_pure(subsets[0], rows)):
        return _make_leaf(subsets, rows, schema)
    best = _best_result(subsets, rows, usable, h)
    if best is None:
        return _make_leaf(subsets, rows, schema)
    rule = best.rule
    fs = subsets[rule.feature_index]
    parts = _partition_rows(fs, rows, rule)
    if rule.kind == "multiway":
        branches = list(rule.values)
        child_usable = usable - {rule.feature_index}
    else:
        branches = ["le", "gt"]
        child_usable = usable
    children = {}
    for label, part in zip(branches, parts):
        children[label] = _grow(subsets, part, child_usable, depth + 1, h, schema)
    sizes = {label: len(part) for label, part in zip(branches, parts)}
    majority_child = max(branches, key=lambda b: (sizes[b], -branches.index(b)))
    return Internal(rule=rule, children=children,
                    majority_child=majority_child, n_samples=len(rows))


def train_tree(sample_rows: np.ndarray, subsets: list[FeatureSubset],
               schema: Schema, h: Hyperparams, rng: np.random.Generator,
               tree_index: int = 0) -> DecisionTree:
    """Grow one tree on a bootstrap row multiset.

    Feature selection runs once, at the root, over the full feature set;
    every node below evaluates only the still-usable selected features.
    """
    rows = np.asarray(sample_rows, dtype=np.int64)
    if len(rows) == 0:
        raise TreeError("empty training sample")
    if h.m_selected is None or h.k_top is None:
        h = h.resolve(len(subsets))
    root_results = [gain_ratio(s, rows, min_leaf_size=h.min_leaf_size) for s in subsets]
    vi = variable_importance(root_results)
    selected = dimension_reduce(root_results, h, rng)
    root = _grow(subsets, rows, set(selected), 0, h, schema)
    return DecisionTree(root=root, selected_features=tuple(selected),
                        tree_index=tree_index, variable_importance=tuple(vi))


# -------------------------------------------------------------- prediction

def predict_tree(tree: DecisionTree, sample) -> object:
    """Route one sample (input feature values, schema order) to a leaf."""
    node = tree.root
    while isinstance(node, Internal):
        rule = node.rule
        try:
            value = sample[rule.feature_index]
        except (IndexError, KeyError):
            raise TreeError(f"sample lacks feature {rule.feature_index}") from None
        if rule.kind == "threshold":
            branch = "le" if float(value) <= rule.cut else "gt"
        else:
            branch = str(value)
            if branch not in node.children:
                branch = node.majority_child
        node = node.children[branch]
    return node.prediction


# ------------------------------------------------------------- persistence

def node_to_dict(node: TreeNode) -> dict:
    if isinstance(node, Leaf):
        d = {"leaf": True, "n": node.n_samples}
        if node.distribution is not None:
            d["counts"] = dict(sorted(node.distribution.counts.items()))
        else:
            d["value"] = node.value
        return d
    return {
        "leaf": False,
        "n": node.n_samples,
        "feature": node.rule.feature_index,
        "kind": node.rule.kind,
        "values": list(node.rule.values) if node.rule.values else None,
        "cut": node.rule.cut,
        "majority_child": node.majority_child,
        "children": {k: node_to_dict(v) for k, v in node.children.items()},
    }


def node_from_dict(d: dict, schema: Schema) -> TreeNode:
    if d["leaf"]:
        if "counts" in d:
            dist = LabelDistribution(dict(d["counts"]))
            return Leaf(distribution=dist, value=None, n_samples=d["n"],
                        prediction=dist.majority(schema.class_labels))
        return Leaf(distribution=None, value=d["value"], n_samples=d["n"],
                    prediction=d["value"])
    rule = SplitRule(feature_index=d["feature"], kind=d["kind"],
                     values=tuple(d["values"]) if d["values"] else None,
                     cut=d["cut"])
    children = {k: node_from_dict(v, schema) for k, v in d["children"].items()}
    return Internal(rule=rule, children=children,
                    majority_child=d["majority_child"], n_samples=d["n"])


def tree_to_dict(tree: DecisionTree) -> dict:
    return {
        "tree_index": tree.tree_index,
        "selected_features": list(tree.selected_features),
        "oob_accuracy": tree.oob_accuracy,
        "oob_empty": tree.oob_empty,
        "variable_importance": list(tree.variable_importance),
        "root": node_to_dict(tree.root),
    }


def tree_from_dict(d: dict, schema: Schema) -> DecisionTree:
    return DecisionTree(
        root=node_from_dict(d["root"], schema),
        selected_features=tuple(d["selected_features"]),
        tree_index=d["tree_index"],
        oob_accuracy=d["oob_accuracy"],
        oob_empty=d["oob_empty"],
        variable_importance=tuple(d.get("variable_importance", ())),
    )

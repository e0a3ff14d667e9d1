"""Gradient-boosted regression trees on the same residual targets.

Squared-error boosting with exact greedy split search (variance-reduction
criterion over every feature and threshold), depth-limited trees, mean-value
leaves and shrinkage. Categorical fields enter as one-hot indicator columns.
Split ties break toward the lowest feature index, then the lowest threshold,
so a fixed dataset always yields an identical forest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ScopeError
from .features import design_column_names, encode_batch, one_hot_matrix
from .ingest import RunRecord
from .lawfit import ChinchillaFit, ChinchillaPredictor, Scope
from .regressor import build_training_rows
from .schema import RunConfig, Schema


@dataclass
class GBTParams:
    rounds: int = 500
    max_depth: int = 6
    learning_rate: float = 0.05
    min_leaf: int = 5

    def validate(self):
        if self.rounds < 0:
            raise ValueError("rounds must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0 < self.learning_rate <= 1:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.min_leaf < 1:
            raise ValueError("min_leaf must be >= 1")


@dataclass
class BoostedForest:
    """Flattened forest: parallel node arrays, one root offset per tree.

    Internal nodes have feature >= 0 and route x[feature] <= threshold to
    ``left``. Leaves have feature == -1 and carry their value. Prediction is
    base_score + learning_rate * sum of per-tree leaf values.
    """

    base_score: float
    learning_rate: float
    n_features: int
    feature: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    threshold: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float64))
    left: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    right: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    value: np.ndarray = field(default_factory=lambda: np.zeros(0, np.float64))
    offsets: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))

    def n_trees(self) -> int:
        return int(self.offsets.size)

    def predict(self, x: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(
                f"design matrix has {x.shape[1] if x.ndim == 2 else '?'} features, "
                f"forest expects {self.n_features}"
            )
        out = np.full(x.shape[0], self.base_score, dtype=np.float64)
        if self.n_trees():
            out += self.learning_rate * _kernels.forest_predict(
                x, self.feature, self.threshold, self.left, self.right,
                self.value, self.offsets,
            )
        return out

    # -- textual dump ------------------------------------------------------

    def dump_text(self) -> str:
        lines = [
            f"forest base_score={self.base_score!r} learning_rate={self.learning_rate!r} "
            f"n_features={self.n_features} n_trees={self.n_trees()} n_nodes={self.feature.size}"
        ]
        for t in range(self.n_trees()):
            lines.append(f"tree {t} root={int(self.offsets[t])}")
        for i in range(self.feature.size):
            if self.feature[i] < 0:
                lines.append(f"node {i} leaf value={float(self.value[i])!r}")
            else:
                lines.append(
                    f"node {i} feature={int(self.feature[i])} "
                    f"threshold={float(self.threshold[i])!r} "
                    f"left={int(self.left[i])} right={int(self.right[i])}"
                )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BoostedForest":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        head = dict(kv.split("=", 1) for kv in lines[0].split()[1:])
        n_nodes = int(head["n_nodes"])
        forest = cls(
            base_score=float(head["base_score"]),
            learning_rate=float(head["learning_rate"]),
            n_features=int(head["n_features"]),
            feature=np.full(n_nodes, -1, dtype=np.int64),
            threshold=np.zeros(n_nodes, dtype=np.float64),
            left=np.zeros(n_nodes, dtype=np.int64),
            right=np.zeros(n_nodes, dtype=np.int64),
            value=np.zeros(n_nodes, dtype=np.float64),
            offsets=np.zeros(int(head["n_trees"]), dtype=np.int64),
        )
        for ln in lines[1:]:
            parts = ln.split()
            if parts[0] == "tree":
                forest.offsets[int(parts[1])] = int(parts[2].split("=", 1)[1])
            elif parts[2] == "leaf":
                forest.value[int(parts[1])] = float(ln.split("value=", 1)[1])
            else:
                kv = dict(p.split("=", 1) for p in parts[2:])
                i = int(parts[1])
                forest.feature[i] = int(kv["feature"])
                forest.threshold[i] = float(kv["threshold"])
                forest.left[i] = int(kv["left"])
                forest.right[i] = int(kv["right"])
        return forest


class _TreeBuilder:
    """Accumulates one tree's nodes in preorder."""

    def __init__(self):
        self.feature: list[int] = []
        self.threshold: list[float] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.value: list[float] = []

    def build(self, x, y, rows, depth_left, min_leaf, leaf_of_row) -> int:
        idx = len(self.feature)
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)

        sub_y = y[rows]
        if depth_left == 0 or rows.size < 2 * min_leaf:
            self._close_leaf(idx, sub_y, rows, leaf_of_row)
            return idx
        sub_x = np.ascontiguousarray(x[rows])
        feat, thr, gain, _ = _kernels.best_split(sub_x, sub_y, min_leaf)
        if feat < 0 or gain <= 0.0:
            self._close_leaf(idx, sub_y, rows, leaf_of_row)
            return idx
        go_left = sub_x[:, feat] <= thr
        self.feature[idx] = int(feat)
        self.threshold[idx] = float(thr)
        self.left[idx] = self.build(x, y, rows[go_left], depth_left - 1, min_leaf, leaf_of_row)
        self.right[idx] = self.build(x, y, rows[~go_left], depth_left - 1, min_leaf, leaf_of_row)
        return idx

    def _close_leaf(self, idx, sub_y, rows, leaf_of_row):
        v = float(np.mean(sub_y))
        self.value[idx] = v
        leaf_of_row[rows] = v


def fit_gbt_arrays(x: np.ndarray, y: np.ndarray, params: GBTParams = GBTParams()) -> BoostedForest:
    """Boost on a prepared design matrix. Returns the forest and nothing else;
    training MSE per round is recoverable from predictions if needed."""
    params.validate()
    x = np.ascontiguousarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 1 or x.shape[0] != y.shape[0]:
        raise ValueError("x must be (n, d) and y (n,) with matching n")
    n = y.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    if n < 2 * params.min_leaf:
        raise ValueError(f"need at least {2 * params.min_leaf} examples, got {n}")

    base = float(np.mean(y))
    forest = BoostedForest(
        base_score=base, learning_rate=params.learning_rate, n_features=x.shape[1]
    )
    residual = y - base
    feats: list[int] = []
    thrs: list[float] = []
    lefts: list[int] = []
    rights: list[int] = []
    values: list[float] = []
    offsets: list[int] = []
    all_rows = np.arange(n)
    leaf_of_row = np.zeros(n, dtype=np.float64)
    for _ in range(params.rounds):
        tb = _TreeBuilder()
        tb.build(x, residual, all_rows, params.max_depth, params.min_leaf, leaf_of_row)
        off = len(feats)
        offsets.append(off)
        feats.extend(tb.feature)
        thrs.extend(tb.threshold)
        lefts.extend(v if v < 0 else v + off for v in tb.left)
        rights.extend(v if v < 0 else v + off for v in tb.right)
        values.extend(tb.value)
        residual = residual - params.learning_rate * leaf_of_row

    forest.feature = np.asarray(feats, dtype=np.int64)
    forest.threshold = np.asarray(thrs, dtype=np.float64)
    forest.left = np.asarray(lefts, dtype=np.int64)
    forest.right = np.asarray(rights, dtype=np.int64)
    forest.value = np.asarray(values, dtype=np.float64)
    forest.offsets = np.asarray(offsets, dtype=np.int64)
    return forest


def predict_gbt(forest: BoostedForest, schema: Schema, fv) -> float:
    """Residual prediction for a single feature vector."""
    x_num, x_cat = encode_batch(schema, [fv])
    x = one_hot_matrix(schema, x_num, x_cat)
    return float(forest.predict(x)[0])


class GBTPredictor:
    """Boosted-forest analog of the neural predictor: baseline + residual."""

    def __init__(self, forest: BoostedForest, schema: Schema,
                 baselines: dict[Scope, ChinchillaFit]):
        self.forest = forest
        self.schema = schema
        self.baselines = dict(baselines)
        self._chinchilla = ChinchillaPredictor(baselines)

    def predict_residual(self, config: RunConfig) -> float:
        frac = 1.0 if self.schema.include_frac else None
        return predict_gbt(self.forest, self.schema, self.schema.canonicalize(config, frac=frac))

    def predict_final_loss(self, config: RunConfig) -> float:
        return self._chinchilla.predict_final_loss(config) + self.predict_residual(config)

    def predict_final_loss_batch(self, configs: list[RunConfig]) -> np.ndarray:
        frac = 1.0 if self.schema.include_frac else None
        fvs = [self.schema.canonicalize(c, frac=frac) for c in configs]
        x_num, x_cat = encode_batch(self.schema, fvs)
        res = self.forest.predict(one_hot_matrix(self.schema, x_num, x_cat))
        base = np.array([self._chinchilla.predict_final_loss(c) for c in configs])
        return base + res

    def save(self, path: str) -> None:
        import json

        header = {
            "schema": self.schema.dump(),
            "schema_hash": self.schema.schema_hash(),
            "columns": design_column_names(self.schema),
            "baselines": [f.to_dict() for _, f in sorted(
                self.baselines.items(), key=lambda kv: (kv[0].source, kv[0].optimizer or "")
            )],
        }
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("#losscast-gbt-1 " + json.dumps(header, sort_keys=True,
                                                     separators=(",", ":")) + "\n")
            fh.write(self.forest.dump_text())

    @classmethod
    def load(cls, path: str) -> "GBTPredictor":
        import json

        from .schema import SchemaError

        with open(path, "r", encoding="utf-8") as fh:
            first = fh.readline()
            if not first.startswith("#losscast-gbt-1 "):
                raise SchemaError("not a losscast GBT dump")
            header = json.loads(first.split(" ", 1)[1])
            forest = BoostedForest.from_text(fh.read())
        schema = Schema.from_dump(header["schema"])
        if schema.schema_hash() != header["schema_hash"]:
            raise SchemaError("GBT dump schema hash mismatch")
        baselines = {}
        for d in header["baselines"]:
            fit = ChinchillaFit.from_dict(d)
            baselines[fit.scope] = fit
        return cls(forest=forest, schema=schema, baselines=baselines)


def fit_gbt(
    train_records: list[RunRecord],
    baselines: dict[Scope, ChinchillaFit],
    params: GBTParams = GBTParams(),
    schema: Schema | None = None,
    all_records: list[RunRecord] | None = None,
) -> GBTPredictor:
    """Fit on residual targets of the given (already filtered, train-side)
    records. ``all_records`` may widen categorical vocabularies so validation
    configs encode; it never contributes training rows."""
    if not train_records:
        raise ValueError("empty dataset")
    if schema is None:
        schema = Schema.default().with_vocab_from(
            r.config for r in (all_records if all_records is not None else train_records)
        )
    baseline = ChinchillaPredictor(baselines)
    x_num, x_cat, y = build_training_rows(train_records, baseline, schema, "final")
    x = one_hot_matrix(schema, x_num, x_cat)
    forest = fit_gbt_arrays(x, y, params)
    return GBTPredictor(forest=forest, schema=schema, baselines=baselines)

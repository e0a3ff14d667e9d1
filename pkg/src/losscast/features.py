"""Feature-vector batching: schema-ordered arrays for model consumption."""

from __future__ import annotations

import numpy as np

from .schema import CATEGORICAL, NUMERICAL, FeatureVector, Schema


def encode_batch(schema: Schema, fvs: list[FeatureVector]) -> tuple[np.ndarray, np.ndarray]:
    """Stack feature vectors into (numerical, categorical) arrays.

    Returns X_num (n, n_numerical) float64 and X_cat (n, n_categorical) int64,
    columns in schema order within each kind.
    """
    num_idx = [i for i, s in enumerate(schema.specs) if s.kind == NUMERICAL]
    cat_idx = [i for i, s in enumerate(schema.specs) if s.kind == CATEGORICAL]
    n = len(fvs)
    x_num = np.empty((n, len(num_idx)), dtype=np.float64)
    x_cat = np.empty((n, len(cat_idx)), dtype=np.int64)
    names = tuple(s.name for s in schema.specs)
    for r, fv in enumerate(fvs):
        if fv.names != names:
            raise ValueError("feature vector does not match the schema")
        slots = fv.slots
        for j, i in enumerate(num_idx):
            x_num[r, j] = slots[i]
        for j, i in enumerate(cat_idx):
            x_cat[r, j] = slots[i]
    return x_num, x_cat


def one_hot_matrix(schema: Schema, x_num: np.ndarray, x_cat: np.ndarray) -> np.ndarray:
    """Design matrix with numerical columns followed by one-hot categorical
    indicator columns, in schema order. Used by tree models."""
    cats = schema.categorical_fields()
    cols = [x_num]
    for j, spec in enumerate(cats):
        v = len(spec.vocabulary)
        block = np.zeros((x_cat.shape[0], v), dtype=np.float64)
        block[np.arange(x_cat.shape[0]), x_cat[:, j]] = 1.0
        cols.append(block)
    return np.concatenate(cols, axis=1)


def design_column_names(schema: Schema) -> list[str]:
    names = [s.name for s in schema.numerical_fields()]
    for spec in schema.categorical_fields():
        names.extend(f"{spec.name}={v}" for v in spec.vocabulary)
    return names

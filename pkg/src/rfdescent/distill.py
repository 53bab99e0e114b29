"""Distillation through noisy copies of the training features (DA-DT / DA-RF)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataio import Dataset
from .forest import Forest, ForestConfig, train_rf
from .tree import DecisionTree, GrowConfig, grow_tree


@dataclass(frozen=True)
class AugmentConfig:
    """``T`` noisy copies with i.i.d. Gaussian noise of standard deviation ``epsilon``."""

    T: int = 10
    epsilon: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.T < 0 or self.epsilon < 0:
            raise ValueError("T and epsilon must be non-negative")


def augment(ds: Dataset, idx, teacher, cfg: AugmentConfig) -> Dataset:
    """Original rows with their true labels, followed by T teacher-labelled noisy copies.

    Noise hits every encoded column, one-hot indicators included.
    """
    idx = np.asarray(idx, dtype=np.int64)
    X0 = ds.X[idx]
    if getattr(teacher, "n_features", X0.shape[1]) != X0.shape[1]:
        raise ValueError("teacher arity does not match the dataset")
    Xs, Ys = [X0], [ds.Y[idx]]
    eye = np.eye(ds.C)
    for i in range(cfg.T):
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(i,)))
        Xi = X0 + rng.normal(0.0, cfg.epsilon, size=X0.shape) if cfg.epsilon > 0 else X0.copy()
        Xs.append(Xi)
        Ys.append(eye[teacher.predict(Xi)])
    return Dataset(np.vstack(Xs), np.vstack(Ys), ds.feature_names, ds.class_names,
                   f"{ds.name}+aug")


def train_da_dt(ds: Dataset, idx, rf_cfg: ForestConfig, grow_cfg: GrowConfig,
                aug: AugmentConfig) -> DecisionTree:
    """Fit a single tree to a random forest's labels on augmented data."""
    teacher = train_rf(ds, idx, rf_cfg)
    aug_ds = augment(ds, idx, teacher, aug)
    return grow_tree(aug_ds, np.arange(aug_ds.N), grow_cfg)


def train_da_rf(ds: Dataset, idx, dt_cfg: GrowConfig, forest_cfg: ForestConfig,
                aug: AugmentConfig) -> Forest:
    """Fit a random forest to a single tree's labels on augmented data."""
    idx = np.asarray(idx, dtype=np.int64)
    teacher = grow_tree(ds, idx, dt_cfg)
    aug_ds = augment(ds, idx, teacher, aug)
    return train_rf(aug_ds, np.arange(aug_ds.N), forest_cfg)

"""Synthetic classification tasks with class prototypes, base/new splits and few-shot draws.

Every image is ``n_patches`` tokens, each one the class prototype plus independent
Gaussian noise. Class "name" embeddings are noisy copies of the prototypes mapped into
text space, standing in for the word embeddings a real tokenizer would give.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import RangeError, ShapeError


@dataclass(frozen=True)
class SyntheticDataset:
    c_total: int
    prototypes: np.ndarray        # C x d_vis, unit rows
    class_embeddings: np.ndarray  # C x d_text
    noise_sigma: float
    patches: np.ndarray           # S x p x d_vis
    labels: np.ndarray            # S
    test_patches: np.ndarray
    test_labels: np.ndarray
    seed: int

    def __len__(self):
        return len(self.labels)

    @property
    def samples(self):
        return list(zip(self.patches, self.labels.tolist()))

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for a in (self.prototypes, self.class_embeddings, self.patches, self.labels,
                  self.test_patches, self.test_labels):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class SplitSpec:
    base_classes: tuple
    new_classes: tuple


def _unit_rows(x):
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def _draw_images(rng, prototypes, labels, n_patches, noise_sigma):
    base = prototypes[labels][:, None, :]
    noise = rng.normal(0.0, 1.0, size=(len(labels), n_patches, prototypes.shape[1]))
    return np.repeat(base, n_patches, axis=1) + noise_sigma * noise


def generate(c_total, per_class, noise_sigma=0.3, seed=0, *, d_vis=64, d_text=None,
             n_patches=9, test_per_class=0, name_noise=0.5) -> SyntheticDataset:
    """Balanced dataset of ``c_total * per_class`` training images (plus an optional test set)."""
    if c_total < 2:
        raise RangeError(f"c_total must be >= 2, got {c_total}")
    if per_class < 1:
        raise RangeError(f"per_class must be >= 1, got {per_class}")
    if noise_sigma < 0 or name_noise < 0:
        raise RangeError("noise levels must be non-negative")
    if test_per_class < 0 or n_patches < 1:
        raise RangeError("test_per_class must be >= 0 and n_patches >= 1")
    d_text = d_vis if d_text is None else d_text
    rng = np.random.default_rng(seed)
    prototypes = _unit_rows(rng.normal(size=(c_total, d_vis)))
    names = prototypes @ np.eye(d_text, d_vis).T
    names = names + name_noise * rng.normal(size=names.shape) / np.sqrt(d_text)
    labels = np.repeat(np.arange(c_total), per_class)
    patches = _draw_images(rng, prototypes, labels, n_patches, noise_sigma)
    test_labels = np.repeat(np.arange(c_total), test_per_class)
    test_patches = _draw_images(rng, prototypes, test_labels, n_patches, noise_sigma)
    return SyntheticDataset(c_total, prototypes, names, float(noise_sigma), patches, labels,
                            test_patches, test_labels, seed)


def split_base_new(dataset, seed=0) -> SplitSpec:
    """Random halving of the classes; the base half gets the extra class when C is odd."""
    c_total = dataset if isinstance(dataset, int) else dataset.c_total
    if c_total < 2:
        raise RangeError(f"need at least two classes, got {c_total}")
    perm = np.random.default_rng(seed).permutation(c_total)
    n_base = (c_total + 1) // 2
    return SplitSpec(tuple(sorted(perm[:n_base].tolist())), tuple(sorted(perm[n_base:].tolist())))


def sample_shots(dataset, classes, shots, seed=0) -> np.ndarray:
    """Indices of ``shots`` training images per listed class, drawn without replacement."""
    rng = np.random.default_rng(seed)
    picked = []
    for c in classes:
        pool = np.flatnonzero(dataset.labels == c)
        if shots > len(pool):
            raise RangeError(f"class {c} has {len(pool)} samples, cannot draw {shots} shots")
        if shots < 1:
            raise RangeError(f"shots must be >= 1, got {shots}")
        picked.append(np.sort(rng.choice(pool, size=shots, replace=False)))
    return np.concatenate(picked) if picked else np.zeros(0, dtype=int)


def save_csv(dataset, path) -> None:
    """One row per patch: split, sample, label, patch, then the patch vector (17 significant digits)."""
    d = dataset.patches.shape[2]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["split", "sample", "label", "patch"] + [f"x{j}" for j in range(d)])
        for split, patches, labels in (("train", dataset.patches, dataset.labels),
                                       ("test", dataset.test_patches, dataset.test_labels)):
            for s, (img, label) in enumerate(zip(patches, labels)):
                for t, row in enumerate(img):
                    w.writerow([split, s, int(label), t] + [format(x, ".17g") for x in row])


def load_csv(path):
    """Inverse of save_csv: ``{split: (patches, labels)}``."""
    rows = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:4] != ["split", "sample", "label", "patch"]:
            raise ShapeError(f"unexpected dataset CSV header {header[:4]}")
        for rec in reader:
            split, s, label, t = rec[0], int(rec[1]), int(rec[2]), int(rec[3])
            rows.setdefault(split, {}).setdefault(s, [label, {}])[1][t] = [float(x) for x in rec[4:]]
    out = {}
    for split, samples in rows.items():
        keys = sorted(samples)
        patches = np.array([[samples[k][1][t] for t in sorted(samples[k][1])] for k in keys])
        labels = np.array([samples[k][0] for k in keys])
        out[split] = (patches, labels)
    return out

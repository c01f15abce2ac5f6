"""Shared containers for region features: labeled datasets and per-class banks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPLITS = ("seen-train", "seen-test", "unseen-test")


@dataclass
class FeatureDataset:
    """Rows of (region feature, class id) belonging to one evaluation split."""

    features: np.ndarray  # (n, d)
    labels: list[str]
    split: str

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError(f"features must be (n, d), got shape {self.features.shape}")
        if len(self.labels) != self.features.shape[0]:
            raise ValueError(f"{len(self.labels)} labels for {self.features.shape[0]} feature rows")
        if self.split not in SPLITS:
            raise ValueError(f"unknown split {self.split!r}, expected one of {SPLITS}")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("non-finite feature values")

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def __len__(self) -> int:
        return int(self.features.shape[0])

    @property
    def class_ids(self) -> tuple[str, ...]:
        seen: dict[str, None] = {}
        for lab in self.labels:
            seen.setdefault(lab)
        return tuple(seen)

    def rows_for(self, class_id: str) -> np.ndarray:
        idx = [i for i, lab in enumerate(self.labels) if lab == class_id]
        return self.features[idx]


@dataclass
class FeatureBank:
    """Per-class blocks of synthesized (or selected) region features."""

    rows: dict[str, np.ndarray]  # class id -> (m, d)

    def __post_init__(self):
        if not self.rows:
            raise ValueError("feature bank has no classes")
        dims = set()
        for cid, block in self.rows.items():
            block = np.asarray(block, dtype=np.float64)
            if block.ndim != 2 or block.shape[0] < 1:
                raise ValueError(f"bank block for {cid!r} must be a non-empty (m, d) array")
            if not np.all(np.isfinite(block)):
                raise ValueError(f"non-finite synthesized features for class {cid!r}")
            self.rows[cid] = block
            dims.add(block.shape[1])
        if len(dims) != 1:
            raise ValueError(f"inconsistent feature widths across classes: {sorted(dims)}")

    @property
    def class_ids(self) -> tuple[str, ...]:
        return tuple(self.rows)

    @property
    def dim(self) -> int:
        return int(next(iter(self.rows.values())).shape[1])

    @property
    def per_class_counts(self) -> dict[str, int]:
        return {cid: int(block.shape[0]) for cid, block in self.rows.items()}

    def flatten(self) -> tuple[np.ndarray, list[str]]:
        feats = np.vstack([self.rows[cid] for cid in self.rows])
        labels = [cid for cid in self.rows for _ in range(self.rows[cid].shape[0])]
        return feats, labels

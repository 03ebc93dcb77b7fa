"""Synthetic bias-imbalanced datasets.

Each sample is generated from two independent causes: a binary target ``y``
and a binary bias attribute ``b``.  The target drives one Gaussian feature
channel, the bias drives another, and the remaining columns are nuisance
noise.  The bias channel is made easier to separate than the target channel
so that an unconstrained classifier prefers it as a shortcut.

Labels always use the canonical encoding where a sample is bias-aligned iff
``y == b``.  Presets whose majority pairing is reversed are relabelled before
the table is returned.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

PRESETS = ("sbp_analog", "gbp_analog_tr1", "gbp_analog_tr2")
SPLITS = ("train", "val", "test")
# (y, b) group order used in every count tuple.
GROUP_ORDER = ((1, 1), (1, 0), (0, 1), (0, 0))
SIGNIFICANT_DIGITS = 9


@dataclass(frozen=True)
class GenConfig:
    preset: str = "sbp_analog"
    bias_ratio_pct: float = 10.0
    majority_group_size: int = 1000
    target_separation: float = 1.0
    bias_separation: float = 3.0
    noise_dims: int = 8
    noise_sigma: float = 1.0
    val_per_group: int = 200
    test_per_group: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}; expected one of {PRESETS}")
        if not 0.0 < self.bias_ratio_pct <= 100.0:
            raise ValueError(f"bias_ratio_pct must lie in (0, 100], got {self.bias_ratio_pct}")
        if self.majority_group_size < 1:
            raise ValueError("majority_group_size must be >= 1")
        if self.target_separation <= 0 or self.bias_separation <= 0:
            raise ValueError("separations must be positive")
        if self.bias_separation <= self.target_separation:
            raise ValueError(
                "bias_separation must exceed target_separation "
                f"({self.bias_separation} <= {self.target_separation})"
            )
        if self.noise_dims < 0:
            raise ValueError("noise_dims must be >= 0")
        if self.noise_sigma <= 0:
            raise ValueError("noise_sigma must be positive")
        if self.val_per_group < 1 or self.test_per_group < 1:
            raise ValueError("val_per_group and test_per_group must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.minority_group_size < 1:
            raise ValueError(
                f"bias ratio {self.bias_ratio_pct}% of {self.majority_group_size} "
                "rounds to an empty minority group"
            )

    @property
    def minority_group_size(self) -> int:
        return int(round(self.majority_group_size * self.bias_ratio_pct / 100.0))

    def train_group_counts(self) -> tuple[int, int, int, int]:
        """Training counts in ``GROUP_ORDER`` (canonical encoding)."""
        n0, n1 = self.majority_group_size, self.minority_group_size
        return (n0, n1, n1, n0)


@dataclass(eq=False)
class SampleTable:
    """Feature matrix with target labels, optional bias labels and split tags."""

    features: np.ndarray
    target: np.ndarray
    split: np.ndarray
    bias: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.int64)
        self.split = np.asarray(self.split, dtype=object)
        if self.bias is not None:
            self.bias = np.asarray(self.bias, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[1] < 2:
            raise ValueError("features must be a 2-D matrix with at least 2 columns")
        m = self.features.shape[0]
        for name, vec in (("target", self.target), ("split", self.split), ("bias", self.bias)):
            if vec is not None and vec.shape != (m,):
                raise ValueError(f"{name} has shape {vec.shape}, expected ({m},)")
        if not np.isin(self.target, (0, 1)).all():
            raise ValueError("target labels must be 0 or 1")
        if self.bias is not None and not np.isin(self.bias, (0, 1)).all():
            raise ValueError("bias labels must be 0 or 1")
        bad = set(self.split.tolist()) - set(SPLITS)
        if bad:
            raise ValueError(f"unknown split tags {sorted(bad)}")

    @property
    def num_rows(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def has_bias(self) -> bool:
        return self.bias is not None

    def subset(self, split: str) -> SampleTable:
        mask = self.split == split
        return SampleTable(
            features=self.features[mask],
            target=self.target[mask],
            split=self.split[mask],
            bias=None if self.bias is None else self.bias[mask],
        )

    def group_counts(self, split: str | None = None) -> tuple[int, int, int, int]:
        if self.bias is None:
            raise ValueError("group counts require bias labels")
        mask = np.ones(self.num_rows, bool) if split is None else self.split == split
        y, b = self.target[mask], self.bias[mask]
        return tuple(int(np.sum((y == gy) & (b == gb))) for gy, gb in GROUP_ORDER)

    def __eq__(self, other):
        if not isinstance(other, SampleTable):
            return NotImplemented
        if (self.bias is None) != (other.bias is None):
            return False
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.target, other.target)
            and np.array_equal(self.split, other.split)
            and (self.bias is None or np.array_equal(self.bias, other.bias))
        )


def _quantize(x: np.ndarray) -> np.ndarray:
    # Values must survive the CSV's decimal form unchanged.
    flat = [float(f"{v:.{SIGNIFICANT_DIGITS}g}") for v in x.ravel().tolist()]
    return np.array(flat, dtype=np.float64).reshape(x.shape)


def _majority_pairs_agree(preset: str) -> bool:
    # gbp_analog_tr2 reverses which raw (y, b) pairing dominates.
    return preset != "gbp_analog_tr2"


def generate_biased_dataset(config: GenConfig) -> SampleTable:
    """Draw train/val/test splits according to ``config``.

    Training groups follow the bias ratio; val and test are group-balanced.
    """
    rng = np.random.default_rng(config.seed)
    same = _majority_pairs_agree(config.preset)
    train_counts = dict(zip(GROUP_ORDER, config.train_group_counts()))

    feats, ys, bs, tags = [], [], [], []
    for split in SPLITS:
        if split == "train":
            counts = train_counts
        else:
            per = config.val_per_group if split == "val" else config.test_per_group
            counts = {g: per for g in GROUP_ORDER}
        rows, y_split, b_split = [], [], []
        for (y, b), n in counts.items():
            raw_b = b if same else 1 - b
            t_sign = 1.0 if y == 1 else -1.0
            b_sign = 1.0 if raw_b == 1 else -1.0
            t_col = rng.normal(t_sign * config.target_separation / 2, 1.0, size=n)
            b_col = rng.normal(b_sign * config.bias_separation / 2, config.noise_sigma, size=n)
            noise = rng.normal(0.0, config.noise_sigma, size=(n, config.noise_dims))
            rows.append(np.column_stack([t_col, b_col, noise]))
            y_split.append(np.full(n, y))
            b_split.append(np.full(n, b))
        x = np.concatenate(rows)
        order = rng.permutation(x.shape[0])
        feats.append(x[order])
        ys.append(np.concatenate(y_split)[order])
        bs.append(np.concatenate(b_split)[order])
        tags.append(np.full(x.shape[0], split, dtype=object))

    return SampleTable(
        features=_quantize(np.concatenate(feats)),
        target=np.concatenate(ys),
        bias=np.concatenate(bs),
        split=np.concatenate(tags),
    )


def alignment_tags(table: SampleTable) -> np.ndarray:
    """Boolean vector, True where the sample is bias-aligned (``y == b``)."""
    if table.bias is None:
        raise ValueError("alignment tags require bias labels")
    return table.target == table.bias


def conflicting_fraction(table: SampleTable, split: str = "train") -> float:
    mask = table.split == split
    return float(np.mean(~alignment_tags(table)[mask]))


class DatasetFormatError(ValueError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(message if row is None else f"row {row}: {message}")


def write_dataset_csv(table: SampleTable, path) -> None:
    d = table.num_features
    header = [f"feature_{i}" for i in range(d)] + ["target"]
    if table.bias is not None:
        header.append("bias")
    header.append("split")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(table.num_rows):
            row = [f"{v:.{SIGNIFICANT_DIGITS}g}" for v in table.features[i].tolist()]
            row.append(str(int(table.target[i])))
            if table.bias is not None:
                row.append(str(int(table.bias[i])))
            row.append(table.split[i])
            writer.writerow(row)


def _parse_label(value: str, column: str, row: int) -> int:
    if value not in ("0", "1"):
        raise DatasetFormatError(f"{column} label must be 0 or 1, got {value!r}", row)
    return int(value)


def read_dataset_csv(path) -> SampleTable:
    """Parse a dataset CSV.  Row numbers in errors count the header as row 1."""
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError("empty file", 1) from None
        n_feat = 0
        while n_feat < len(header) and header[n_feat] == f"feature_{n_feat}":
            n_feat += 1
        rest = header[n_feat:]
        if n_feat < 2 or rest not in (["target", "split"], ["target", "bias", "split"]):
            raise DatasetFormatError(
                "header must be feature_0..feature_{d-1} (d >= 2), target, [bias,] split", 1
            )
        has_bias = "bias" in rest
        feats, ys, bs, tags = [], [], [], []
        for row_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DatasetFormatError(f"expected {len(header)} fields, got {len(row)}", row_no)
            try:
                feats.append([float(v) for v in row[:n_feat]])
            except ValueError as exc:
                raise DatasetFormatError(f"bad feature value ({exc})", row_no) from None
            ys.append(_parse_label(row[n_feat], "target", row_no))
            if has_bias:
                bs.append(_parse_label(row[n_feat + 1], "bias", row_no))
            tag = row[-1]
            if tag not in SPLITS:
                raise DatasetFormatError(f"split must be one of {SPLITS}, got {tag!r}", row_no)
            tags.append(tag)
    if not feats:
        raise DatasetFormatError("no data rows", 2)
    return SampleTable(
        features=np.array(feats, dtype=np.float64),
        target=np.array(ys),
        bias=np.array(bs) if has_bias else None,
        split=np.array(tags, dtype=object),
    )

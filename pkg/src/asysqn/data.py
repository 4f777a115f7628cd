"""Dataset ingestion, preprocessing, and vertical feature partitioning.

Each party in a vertical federated setup owns a contiguous block of feature
columns plus a replicated copy of the full label vector.  Splitting happens
on the full design matrix, so the shards reassemble bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

# Above this many columns the design matrix is kept in CSR form.
DENSE_COLUMN_LIMIT = 10_000


class ParseError(ValueError):
    """Malformed input file; carries the 1-based line number."""

    def __init__(self, message, line_no=None):
        if line_no is not None:
            message = f"line {line_no}: {message}"
        super().__init__(message)
        self.line_no = line_no


class EmptyDatasetError(ValueError):
    pass


class EncodeError(ValueError):
    pass


@dataclass
class Dataset:
    """A labeled design matrix with entries checked finite on construction."""

    features: np.ndarray | sp.csr_matrix  # n x d
    labels: np.ndarray                    # n, in {-1,+1} or reals

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.float64)
        if self.features.shape[0] != self.labels.shape[0]:
            raise ValueError(
                f"label count {self.labels.shape[0]} does not match "
                f"sample count {self.features.shape[0]}"
            )
        data = self.features.data if sp.issparse(self.features) else self.features
        if not np.all(np.isfinite(data)):
            raise ValueError("non-finite feature values")
        if not np.all(np.isfinite(self.labels)):
            raise ValueError("non-finite labels")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def dense_features(self) -> np.ndarray:
        if sp.issparse(self.features):
            return self.features.toarray()
        return self.features


@dataclass
class PartyShard:
    """One party's vertical slice plus its own block of model weights.

    ``columns`` lists the global feature indices owned; ``n_pad`` all-zero
    columns are appended on the right so that every party holds at least two
    columns (a single column would let a colluding reader factor the local
    inner products).
    """

    party_id: int
    columns: list[int]
    local_features: np.ndarray  # n x d_ell, pads included
    labels: np.ndarray          # full n-vector, replicated
    w_block: np.ndarray         # d_ell
    n_pad: int = 0

    @property
    def d_ell(self) -> int:
        return self.local_features.shape[1]

    @property
    def n(self) -> int:
        return self.local_features.shape[0]


def _map_labels(raw: np.ndarray, line_of=None) -> np.ndarray:
    values = set(np.unique(raw))
    if values <= {-1.0, 1.0}:
        return raw
    if values <= {0.0, 1.0}:
        return np.where(raw == 0.0, -1.0, 1.0)
    bad = sorted(values - {-1.0, 0.0, 1.0})
    raise ParseError(f"labels must be in {{-1,+1}} or {{0,1}}, got {bad[:5]}")


def parse_libsvm(stream, n_features: int | None = None) -> Dataset:
    """Parse LIBSVM text (1-based indices) into a Dataset.

    ``n_features`` pads the column count (e.g. a9a is conventionally read
    with more columns than its max observed index).
    """
    if isinstance(stream, str):
        lines = stream.splitlines()
    else:
        lines = [ln.decode() if isinstance(ln, bytes) else ln for ln in stream]

    labels = []
    rows = []  # list of (indices, values)
    d = 0
    for line_no, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            label = float(parts[0])
        except ValueError:
            raise ParseError(f"bad label {parts[0]!r}", line_no) from None
        idxs, vals = [], []
        prev = 0
        for tok in parts[1:]:
            try:
                idx_s, val_s = tok.split(":", 1)
                idx, val = int(idx_s), float(val_s)
            except ValueError:
                raise ParseError(f"bad feature token {tok!r}", line_no) from None
            if idx < 1:
                raise ParseError(f"index {idx} is not 1-based", line_no)
            if idx <= prev:
                raise ParseError(
                    f"non-monotone feature index {idx} after {prev}", line_no
                )
            prev = idx
            idxs.append(idx - 1)
            vals.append(val)
        labels.append(label)
        rows.append((idxs, vals))
        d = max(d, prev)

    if not rows:
        raise EmptyDatasetError("no samples in stream")
    if n_features is not None:
        if n_features < d:
            raise ParseError(f"n_features={n_features} below max index {d}")
        d = n_features

    n = len(rows)
    indptr = np.cumsum([0] + [len(ix) for ix, _ in rows])
    indices = np.concatenate([np.asarray(ix, dtype=np.int64) for ix, _ in rows]) \
        if indptr[-1] else np.zeros(0, dtype=np.int64)
    values = np.concatenate([np.asarray(v, dtype=np.float64) for _, v in rows]) \
        if indptr[-1] else np.zeros(0)
    mat = sp.csr_matrix((values, indices, indptr), shape=(n, d))
    if d <= DENSE_COLUMN_LIMIT:
        mat = mat.toarray()
    y = _map_labels(np.asarray(labels))
    return Dataset(features=mat, labels=y)


def serialize_libsvm(dataset: Dataset) -> str:
    """Inverse of parse_libsvm (emits explicit zeros away; 17 digits)."""
    X = dataset.features
    out = []
    for i in range(dataset.n):
        row = X.getrow(i).toarray().ravel() if sp.issparse(X) else X[i]
        nz = np.nonzero(row)[0]
        toks = [f"{dataset.labels[i]:+.17g}"]
        toks += [f"{j + 1}:{row[j]:.17g}" for j in nz]
        out.append(" ".join(toks))
    return "\n".join(out) + "\n"


def parse_csv(stream, label_column: str) -> Dataset:
    """Parse CSV with a header row; ``label_column`` names the target."""
    if isinstance(stream, str):
        lines = [ln for ln in stream.splitlines() if ln.strip()]
    else:
        lines = [ln.strip() for ln in stream if ln.strip()]
    if not lines:
        raise EmptyDatasetError("no rows in stream")
    header = [h.strip() for h in lines[0].split(",")]
    if label_column not in header:
        raise ParseError(f"label column {label_column!r} not in header {header}")
    label_idx = header.index(label_column)
    rows, labels = [], []
    for line_no, line in enumerate(lines[1:], start=2):
        cells = line.split(",")
        if len(cells) != len(header):
            raise ParseError(
                f"expected {len(header)} cells, got {len(cells)}", line_no
            )
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            raise ParseError("non-numeric cell", line_no) from None
        labels.append(vals.pop(label_idx))
        rows.append(vals)
    if not rows:
        raise EmptyDatasetError("header only, no samples")
    X = np.asarray(rows, dtype=np.float64)
    y = _map_labels(np.asarray(labels))
    return Dataset(features=X, labels=y)


def one_hot_encode(dataset: Dataset, categorical_columns) -> Dataset:
    """Replace integer-coded columns by one indicator column per category."""
    categorical = sorted(set(int(c) for c in categorical_columns))
    if not categorical:
        return dataset
    X = dataset.dense_features()
    for c in categorical:
        if not (0 <= c < dataset.d):
            raise EncodeError(f"column {c} out of range [0, {dataset.d})")
        col = X[:, c]
        if not np.all(col == np.round(col)):
            raise EncodeError(f"column {c} holds non-integer values")
    blocks = []
    cat_set = set(categorical)
    for c in range(dataset.d):
        if c not in cat_set:
            blocks.append(X[:, c : c + 1])
            continue
        cats = np.unique(X[:, c])
        blocks.append((X[:, c : c + 1] == cats[None, :]).astype(np.float64))
    return Dataset(features=np.hstack(blocks), labels=dataset.labels.copy())


def zscore_normalize(dataset: Dataset) -> Dataset:
    """Center and scale each column to sample std 1; constant columns go to 0."""
    if dataset.n < 2:
        raise ValueError("z-score normalization needs at least 2 samples")
    X = dataset.dense_features().copy()
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    nonconst = std > 0
    X[:, nonconst] = (X[:, nonconst] - mean[nonconst]) / std[nonconst]
    X[:, ~nonconst] = 0.0
    return Dataset(features=X, labels=dataset.labels.copy())


def vertical_split(
    dataset: Dataset, q: int, seed: int | None = None, shuffle: bool = False
) -> list[PartyShard]:
    """Split columns into q near-equal contiguous blocks, one per party.

    Parties that would end up with a single column receive one zero-pad
    column so the factorization of their inner products stays ambiguous.
    """
    if q < 1:
        raise ValueError(f"q must be >= 1, got {q}")
    if dataset.d < q:
        raise ValueError(f"cannot split d={dataset.d} columns over q={q} parties")
    order = np.arange(dataset.d)
    if shuffle:
        order = np.random.default_rng(seed).permutation(dataset.d)
    X = dataset.dense_features()
    shards = []
    for pid, block in enumerate(np.array_split(order, q)):
        cols = [int(c) for c in block]
        local = X[:, block]
        n_pad = 0
        if local.shape[1] < 2:
            pad = np.zeros((dataset.n, 2 - local.shape[1]))
            local = np.hstack([local, pad])
            n_pad = local.shape[1] - len(cols)
        shards.append(
            PartyShard(
                party_id=pid,
                columns=cols,
                local_features=np.ascontiguousarray(local),
                labels=dataset.labels.copy(),
                w_block=np.zeros(local.shape[1]),
                n_pad=n_pad,
            )
        )
    return shards


def reassemble(shards: list[PartyShard]) -> np.ndarray:
    """Rebuild the original design matrix from the shards (pads dropped)."""
    d = sum(len(s.columns) for s in shards)
    n = shards[0].n
    X = np.empty((n, d))
    for s in shards:
        real = len(s.columns)
        X[:, s.columns] = s.local_features[:, :real]
    return X


def assemble_weights(shards: list[PartyShard]) -> np.ndarray:
    """Concatenate per-party weight blocks into the global model vector."""
    d = sum(len(s.columns) for s in shards)
    w = np.zeros(d)
    for s in shards:
        real = len(s.columns)
        w[s.columns] = s.w_block[:real]
    return w


def synthetic_sparse_binary(n: int, d: int, seed: int = 0) -> Dataset:
    """Binary indicator features with log-uniform activation rates.

    Mimics census-style one-hot data: rare and common indicators coexist,
    which makes the per-block Hessians badly conditioned.
    """
    rng = np.random.default_rng(seed)
    p = np.exp(rng.uniform(np.log(0.005), np.log(0.6), size=d))
    X = (rng.random((n, d)) < p).astype(np.float64)
    w_true = rng.standard_normal(d)
    margin = (X - p) @ w_true + 0.5 * rng.standard_normal(n)
    y = np.where(margin >= 0, 1.0, -1.0)
    return Dataset(features=X, labels=y)


def synthetic_classification(
    n: int,
    d: int,
    seed: int = 0,
    density: float = 1.0,
    noise: float = 0.5,
) -> Dataset:
    """Seeded logistic-ground-truth dataset for experiments and tests."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, d))
    if density < 1.0:
        X *= rng.random((n, d)) < density
    w_true = rng.standard_normal(d) / np.sqrt(d)
    margin = X @ w_true + noise * rng.standard_normal(n)
    y = np.where(margin >= 0, 1.0, -1.0)
    return Dataset(features=X, labels=y)

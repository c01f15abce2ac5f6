"""File formats: word2vec-style embedding text, binary feature banks with CSV
mirrors, and the binary checkpoint. All writes are atomic (temp file + rename);
all multi-byte integers are little-endian."""

from __future__ import annotations

import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .data import FeatureBank, FeatureDataset
from .semantic import Corpus, SemanticTable

log = logging.getLogger(__name__)

BANK_MAGIC = b"SEEDSFB1"
CKPT_MAGIC = b"SEEDSCP1"
CKPT_VERSION = 1

_DTYPE_CODES = {0: "<f8", 1: "u1", 2: "<u8"}
_CODE_FOR_KIND = {"f": 0, "u1": 1, "u8": 2}


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# embedding files: first line "count dim", then "token v0 v1 ... v{dim-1}"


def write_embeddings(path: str | Path, tokens, matrix: np.ndarray) -> None:
    matrix = np.asarray(matrix, dtype=np.float64)
    tokens = list(tokens)
    if matrix.shape[0] != len(tokens):
        raise ValueError(f"{len(tokens)} tokens for {matrix.shape[0]} vectors")
    for tok in tokens:
        if not tok or any(ch.isspace() for ch in tok):
            raise ValueError(f"token {tok!r} is empty or contains whitespace")
    lines = [f"{len(tokens)} {matrix.shape[1]}"]
    for tok, row in zip(tokens, matrix):
        lines.append(tok + " " + " ".join(f"{x:.17g}" for x in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_embeddings(path: str | Path):
    """Returns (tokens, matrix); malformed records are rejected with their line number."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read().splitlines()
    if not raw:
        raise ValueError(f"{path}: empty embedding file")
    header = raw[0].split()
    if len(header) != 2:
        raise ValueError(f"{path}:1: header must be 'count dim', got {raw[0]!r}")
    try:
        count, dim = int(header[0]), int(header[1])
    except ValueError:
        raise ValueError(f"{path}:1: header must be 'count dim', got {raw[0]!r}") from None
    if count < 1 or dim < 1:
        raise ValueError(f"{path}:1: count and dim must be positive, got {count} {dim}")
    records = [line for line in raw[1:] if line.strip()]
    if len(records) != count:
        raise ValueError(f"{path}: header promises {count} records, found {len(records)}")
    tokens: list[str] = []
    matrix = np.empty((count, dim))
    for i, line in enumerate(records):
        lineno = i + 2
        parts = line.split()
        if len(parts) != dim + 1:
            raise ValueError(f"{path}:{lineno}: expected token plus {dim} values, "
                             f"got {len(parts) - 1} values")
        tok = parts[0]
        if tok in tokens:
            raise ValueError(f"{path}:{lineno}: duplicate token {tok!r}")
        try:
            matrix[i] = [float(x) for x in parts[1:]]
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value in record") from None
        tokens.append(tok)
    return tokens, matrix


def load_corpus(path: str | Path, domain: str) -> Corpus:
    tokens, matrix = read_embeddings(path)
    return Corpus(domain, tuple(tokens), matrix)


def load_semantic_table(seen_path: str | Path, unseen_path: str | Path) -> SemanticTable:
    seen_tokens, seen_mat = read_embeddings(seen_path)
    unseen_tokens, unseen_mat = read_embeddings(unseen_path)
    if seen_mat.shape[1] != unseen_mat.shape[1]:
        raise ValueError(f"seen dim {seen_mat.shape[1]} != unseen dim {unseen_mat.shape[1]}")
    vectors = {tok: seen_mat[i] for i, tok in enumerate(seen_tokens)}
    for i, tok in enumerate(unseen_tokens):
        if tok in vectors:
            raise ValueError(f"class {tok!r} appears in both seen and unseen files")
        vectors[tok] = unseen_mat[i]
    return SemanticTable(seen_mat.shape[1], vectors, tuple(seen_tokens), tuple(unseen_tokens))


def save_semantic_table(seen_path: str | Path, unseen_path: str | Path,
                        table: SemanticTable) -> None:
    write_embeddings(seen_path, table.seen, table.matrix(table.seen))
    write_embeddings(unseen_path, table.unseen, table.matrix(table.unseen))


# ---------------------------------------------------------------------------
# class listing: id, split, display name


def save_classes(path: str | Path, table: SemanticTable, class_names: dict[str, str]) -> None:
    lines = [f"{cid}\tseen\t{class_names[cid]}" for cid in table.seen]
    lines += [f"{cid}\tunseen\t{class_names[cid]}" for cid in table.unseen]
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_classes(path: str | Path):
    """Returns (class_names, seen_ids, unseen_ids)."""
    names: dict[str, str] = {}
    seen: list[str] = []
    unseen: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[1] not in ("seen", "unseen"):
                raise ValueError(f"{path}:{lineno}: expected 'id<TAB>seen|unseen<TAB>name'")
            cid, split, name = parts
            names[cid] = name
            (seen if split == "seen" else unseen).append(cid)
    if not names:
        raise ValueError(f"{path}: no classes listed")
    return names, seen, unseen


# ---------------------------------------------------------------------------
# feature banks


def save_feature_bank(path: str | Path, bank: FeatureBank) -> None:
    """Binary bank; requires the same row count for every class."""
    counts = set(bank.per_class_counts.values())
    if len(counts) != 1:
        raise ValueError(f"bank save requires uniform per-class rows, got {bank.per_class_counts}")
    rows_per_class = counts.pop()
    class_ids = bank.class_ids
    blob = bytearray()
    blob += BANK_MAGIC
    blob += struct.pack("<III", len(class_ids), rows_per_class, bank.dim)
    for cid in class_ids:
        blob += np.ascontiguousarray(bank.rows[cid], dtype="<f8").tobytes()
    for cid in class_ids:
        encoded = cid.encode("utf-8")
        blob += struct.pack("<H", len(encoded)) + encoded
    atomic_write_bytes(path, bytes(blob))


def load_feature_bank(path: str | Path) -> FeatureBank:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 8 or data[:8] != BANK_MAGIC:
        raise ValueError(f"{path}: not a feature bank (bad magic)")
    off = 8
    if len(data) < off + 12:
        raise ValueError(f"{path}: truncated header")
    n_classes, rows_per_class, dim = struct.unpack_from("<III", data, off)
    off += 12
    block_bytes = rows_per_class * dim * 8
    rows: dict[str, np.ndarray] = {}
    blocks = []
    for _ in range(n_classes):
        if len(data) < off + block_bytes:
            raise ValueError(f"{path}: truncated feature block")
        block = np.frombuffer(data, dtype="<f8", count=rows_per_class * dim, offset=off)
        blocks.append(block.reshape(rows_per_class, dim).copy())
        off += block_bytes
    for i in range(n_classes):
        if len(data) < off + 2:
            raise ValueError(f"{path}: truncated class table")
        (klen,) = struct.unpack_from("<H", data, off)
        off += 2
        if len(data) < off + klen:
            raise ValueError(f"{path}: truncated class name")
        cid = data[off:off + klen].decode("utf-8")
        off += klen
        rows[cid] = blocks[i]
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return FeatureBank(rows)


def bank_to_csv(path: str | Path, bank: FeatureBank) -> None:
    d = bank.dim
    lines = ["class," + ",".join(f"f{i}" for i in range(d))]
    for cid in bank.class_ids:
        for row in bank.rows[cid]:
            lines.append(cid + "," + ",".join(f"{x:.17g}" for x in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def bank_from_csv(path: str | Path) -> FeatureBank:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("class,"):
        raise ValueError(f"{path}:1: expected header 'class,f0,...'")
    dim = len(lines[0].split(",")) - 1
    rows: dict[str, list[np.ndarray]] = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise ValueError(f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}")
        try:
            vec = np.array([float(x) for x in parts[1:]])
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric value") from None
        rows.setdefault(parts[0], []).append(vec)
    return FeatureBank({cid: np.vstack(vs) for cid, vs in rows.items()})


def dataset_to_bank(dataset: FeatureDataset) -> FeatureBank:
    return FeatureBank({cid: dataset.rows_for(cid) for cid in dataset.class_ids})


def bank_to_dataset(bank: FeatureBank, split: str) -> FeatureDataset:
    feats, labels = bank.flatten()
    return FeatureDataset(feats, labels, split)


# ---------------------------------------------------------------------------
# checkpoints


def _dtype_code(arr: np.ndarray) -> int:
    if arr.dtype.kind == "f":
        return 0
    if arr.dtype == np.uint8:
        return 1
    if arr.dtype == np.uint64:
        return 2
    raise ValueError(f"unsupported checkpoint dtype {arr.dtype}")


def save_checkpoint(path: str | Path, config_text: str, arrays: dict[str, np.ndarray]) -> None:
    blob = bytearray()
    blob += CKPT_MAGIC
    blob += struct.pack("<I", CKPT_VERSION)
    cfg = config_text.encode("utf-8")
    blob += struct.pack("<Q", len(cfg)) + cfg
    blob += struct.pack("<I", len(arrays))
    for key, arr in arrays.items():
        arr = np.asarray(arr)
        code = _dtype_code(arr)
        encoded = key.encode("utf-8")
        blob += struct.pack("<H", len(encoded)) + encoded
        blob += struct.pack("<BB", code, arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<Q", dim)
        blob += np.ascontiguousarray(arr, dtype=_DTYPE_CODES[code]).tobytes()
    atomic_write_bytes(path, bytes(blob))


def load_checkpoint(path: str | Path):
    """Returns (config_text, arrays); refuses bad magic, version drift, truncation."""
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", data, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version} unsupported "
                         f"(this build reads version {CKPT_VERSION})")
    off = 12
    (cfg_len,) = struct.unpack_from("<Q", data, off)
    off += 8
    if len(data) < off + cfg_len:
        raise ValueError(f"{path}: truncated config block")
    config_text = data[off:off + cfg_len].decode("utf-8")
    off += cfg_len
    (n_arrays,) = struct.unpack_from("<I", data, off)
    off += 4
    arrays: dict[str, np.ndarray] = {}
    for _ in range(n_arrays):
        if len(data) < off + 2:
            raise ValueError(f"{path}: truncated array directory")
        (klen,) = struct.unpack_from("<H", data, off)
        off += 2
        key = data[off:off + klen].decode("utf-8")
        off += klen
        code, ndim = struct.unpack_from("<BB", data, off)
        off += 2
        if code not in _DTYPE_CODES:
            raise ValueError(f"{path}: array {key!r} has unknown dtype code {code}")
        shape = []
        for _ in range(ndim):
            (dim,) = struct.unpack_from("<Q", data, off)
            off += 8
            shape.append(dim)
        dtype = np.dtype(_DTYPE_CODES[code])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize
        count = nbytes // dtype.itemsize
        if len(data) < off + nbytes:
            raise ValueError(f"{path}: truncated data for array {key!r}")
        arr = np.frombuffer(data, dtype=dtype, count=count, offset=off).reshape(shape).copy()
        off += nbytes
        arrays[key] = arr
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return config_text, arrays


def save_loss_curve(path: str | Path, curve: list[dict[str, float]]) -> None:
    from .pipeline import LOSS_CURVE_FIELDS
    lines = [",".join(LOSS_CURVE_FIELDS)]
    for row in curve:
        lines.append(",".join(f"{row[k]:.17g}" for k in LOSS_CURVE_FIELDS))
    atomic_write_text(path, "\n".join(lines) + "\n")

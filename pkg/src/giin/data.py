"""Examples, dataset manifests, feature-vector files and synthetic data."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import rng_for
from .errors import FormatError, SchemaError
from .imaging import DESK_SIZE, read_ppm, resize_bilinear, write_ppm
from .schema import DEFAULT_SCHEMA, CategorySchema

SPLITS = ("train", "valid", "test")
# split proportions of the public 7PC release (413/203/395 cases)
SEVEN_PC_SPLIT = (413 / 1011, 203 / 1011, 395 / 1011)

FV_MAGIC = b"GIINFV01"
_FV_HEADER = struct.Struct("<8sII")


@dataclass(frozen=True, eq=False)
class Example:
    id: str
    derm: np.ndarray
    clin: np.ndarray
    labels: tuple[int, ...]
    split: str = "train"
    kind: str = "feature"  # or "image"

    def __post_init__(self):
        if self.split not in SPLITS:
            raise SchemaError(f"{self.id}: unknown split {self.split!r}")
        if self.kind == "feature":
            if self.derm.ndim != 1 or self.clin.ndim != 1:
                raise SchemaError(f"{self.id}: feature inputs must be vectors")
        elif self.kind == "image":
            if self.derm.ndim != 3 or self.clin.ndim != 3:
                raise SchemaError(f"{self.id}: image inputs must be HxWx3")
        else:
            raise SchemaError(f"{self.id}: unknown input kind {self.kind!r}")


def split_of(dataset, split: str) -> list[Example]:
    return [ex for ex in dataset if ex.split == split]


# -------------------------------------------------------- feature-vector IO

def write_features(path, vec: np.ndarray) -> None:
    vec = np.asarray(vec, dtype="<f8").ravel()
    with open(path, "wb") as fh:
        fh.write(_FV_HEADER.pack(FV_MAGIC, vec.size, 0))
        fh.write(vec.tobytes())


def read_features(path, expected_dim: int | None = None) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _FV_HEADER.size:
        raise FormatError(f"{path}: file too short for feature header")
    magic, n, _ = _FV_HEADER.unpack_from(raw)
    if magic != FV_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if len(raw) != _FV_HEADER.size + 8 * n:
        raise FormatError(f"{path}: header says {n} values, file holds {(len(raw) - 16) / 8}")
    if expected_dim is not None and n != expected_dim:
        raise FormatError(f"{path}: feature length {n}, expected {expected_dim}")
    return np.frombuffer(raw, dtype="<f8", offset=_FV_HEADER.size).astype(np.float64)


# ---------------------------------------------------------------- manifests

def load_manifest(path, schema: CategorySchema = DEFAULT_SCHEMA) -> tuple[list[Example], CategorySchema]:
    """Read a comma-separated manifest.

    Columns: ``id``, ``derm_path`` or ``derm_features``, ``clin_path`` or
    ``clin_features``, one column per category name, and ``split``. Relative
    file paths resolve against the manifest's directory. Splits are taken
    as given.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    root = path.parent
    examples: list[Example] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return examples, schema
        cols = set(reader.fieldnames)
        if {"derm_features", "clin_features"} <= cols:
            kind, dcol, ccol = "feature", "derm_features", "clin_features"
        elif {"derm_path", "clin_path"} <= cols:
            kind, dcol, ccol = "image", "derm_path", "clin_path"
        else:
            raise SchemaError(f"{path}: need derm_/clin_ path or feature columns")
        missing = [c for c in ("id", "split", *schema.names) if c not in cols]
        if missing:
            raise SchemaError(f"{path}: missing columns {missing}")
        seen: set[str] = set()
        for rowno, row in enumerate(reader, start=2):
            labels = []
            for cat in schema.categories:
                value = row[cat.name].strip()
                if value not in cat.classes:
                    raise SchemaError(
                        f"{path}: row {rowno}, column {cat.name}: {value!r} not in {cat.classes}")
                labels.append(cat.classes.index(value))
            if row["id"] in seen:
                raise SchemaError(f"{path}: row {rowno}: duplicate id {row['id']!r}")
            seen.add(row["id"])
            derm_file, clin_file = root / row[dcol], root / row[ccol]
            for f in (derm_file, clin_file):
                if not f.exists():
                    raise FileNotFoundError(f"{path}: row {rowno}: missing file {f}")
            reader_fn = read_features if kind == "feature" else read_ppm
            examples.append(Example(row["id"], reader_fn(derm_file), reader_fn(clin_file),
                                    tuple(labels), row["split"].strip(), kind))
    return examples, schema


def write_dataset(examples, out_dir, schema: CategorySchema = DEFAULT_SCHEMA) -> Path:
    """Write examples as feature/PPM files plus ``manifest.csv``; returns its path."""
    out = Path(out_dir)
    (out / "data").mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.csv"
    if not examples:
        manifest.write_text("", encoding="utf-8")
        return manifest
    kind = examples[0].kind
    prefix, ext = ("features", "fv") if kind == "feature" else ("path", "ppm")
    header = ["id", f"derm_{prefix}", f"clin_{prefix}", *schema.names, "split"]
    with open(manifest, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for ex in examples:
            files = []
            for mod, arr in (("derm", ex.derm), ("clin", ex.clin)):
                rel = f"data/{ex.id}_{mod}.{ext}"
                (write_features if kind == "feature" else write_ppm)(out / rel, arr)
                files.append(rel)
            w.writerow([ex.id, *files, *schema.decode(ex.labels), ex.split])
    return manifest


# ----------------------------------------------------------- synthetic data

def _sample_labels(rng: np.random.Generator, n: int, schema: CategorySchema,
                   correlation: float) -> np.ndarray:
    labels = np.zeros((n, len(schema)), dtype=np.int64)
    diag = schema.categories[0]
    mel = diag.classes.index("MEL") if "MEL" in diag.classes else None
    labels[:, 0] = rng.integers(diag.k, size=n)
    for j, cat in enumerate(schema.categories[1:], start=1):
        ind = [i for i, c in enumerate(cat.classes) if c in cat.indicative]
        free = rng.integers(cat.k, size=n)
        planted = rng.random(n) < correlation
        is_mel = labels[:, 0] == mel if mel is not None else np.zeros(n, bool)
        labels[:, j] = np.where(is_mel & planted & bool(ind), ind[0] if ind else 0, free)
    return labels


def _prototypes(rng: np.random.Generator, schema: CategorySchema, shape) -> list[np.ndarray]:
    """One prototype per (category, class), each of squared norm ``size``.

    When the space is large enough the prototypes are mutually orthogonal,
    so every category's class is linearly recoverable from their sum.
    """
    total = sum(schema.class_counts)
    size = int(np.prod(shape))
    g = rng.normal(0.0, 1.0, size=(size, total))
    if size >= total:
        g, _ = np.linalg.qr(g)
        g = g * np.sqrt(size)
    protos = g.T.reshape(total, *shape)
    out, start = [], 0
    for k in schema.class_counts:
        out.append(protos[start:start + k])
        start += k
    return out


def _assign_splits(rng: np.random.Generator, n: int, fractions) -> list[str]:
    fr = np.asarray(fractions, dtype=float)
    fr = fr / fr.sum()
    counts = np.floor(fr * n).astype(int)
    counts[0] += n - counts.sum()
    splits = np.repeat(np.array(SPLITS), counts)
    return list(splits[rng.permutation(n)])


def synth_generate(seed: int, n: int, feature_dim: int = 512, noise: float = 0.5,
                   correlation: float = 0.7, clin_noise_ratio: float = 2.0,
                   splits=SEVEN_PC_SPLIT, schema: CategorySchema = DEFAULT_SCHEMA,
                   kind: str = "feature", image_size: tuple[int, int] = DESK_SIZE) -> list[Example]:
    """Synthetic paired-modality dataset with planted label structure.

    Labels: diagnosis is uniform; for melanoma cases each checklist
    criterion takes its melanoma-indicative class with probability
    ``correlation``, otherwise classes are uniform. Inputs: each modality
    sums one prototype per (category, class) (mutually orthogonal, squared
    norm equal to the input size) and adds isotropic noise of std ``noise``;
    the clinical noise is ``clin_noise_ratio`` times larger.

    ``kind="image"`` renders the prototypes as smooth 3-channel patterns
    instead of feature vectors.
    """
    if n < 1:
        raise SchemaError("synth_generate needs n >= 1")
    rng = rng_for(seed, "synth")
    labels = _sample_labels(rng, n, schema, correlation)
    split = _assign_splits(rng, n, splits)
    if kind == "feature":
        shape = (feature_dim,)
    elif kind == "image":
        shape = (4, 6, 3)
    else:
        raise SchemaError(f"unknown synthetic kind {kind!r}")
    protos = {mod: _prototypes(rng, schema, shape) for mod in ("derm", "clin")}
    sigma = {"derm": noise, "clin": noise * clin_noise_ratio}
    out = []
    for i in range(n):
        inputs = {}
        for mod in ("derm", "clin"):
            x = sum(protos[mod][j][labels[i, j]] for j in range(len(schema)))
            x = x + rng.normal(0.0, 1.0, size=shape) * sigma[mod]
            if kind == "image":
                x = np.clip(128.0 + 16.0 * resize_bilinear(x, image_size), 0.0, 255.0)
            inputs[mod] = x
        out.append(Example(f"s{i:05d}", inputs["derm"], inputs["clin"],
                           tuple(int(v) for v in labels[i]), split[i], kind))
    return out


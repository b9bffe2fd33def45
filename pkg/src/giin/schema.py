"""Category schema for the 7-point checklist and the point-score rule."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import SchemaError


@dataclass(frozen=True)
class Category:
    name: str
    classes: tuple[str, ...]
    indicative: frozenset[str] = frozenset()

    @property
    def k(self) -> int:
        return len(self.classes)

    def index(self, label: str) -> int:
        try:
            return self.classes.index(label)
        except ValueError:
            raise SchemaError(f"{label!r} is not a class of {self.name} {self.classes}") from None


INDICATIVE = frozenset({"PRS", "ATP", "IR"})

_DEFAULT_CATEGORIES = (
    Category("DIAG", ("BCC", "NEV", "MEL", "MISC", "SK")),
    Category("PN", ("ABS", "TYP", "ATP"), frozenset({"ATP"})),
    Category("STR", ("ABS", "REG", "IR"), frozenset({"IR"})),
    Category("PIG", ("ABS", "REG", "IR"), frozenset({"IR"})),
    Category("RS", ("ABS", "PRS"), frozenset({"PRS"})),
    Category("DaG", ("ABS", "REG", "IR"), frozenset({"IR"})),
    Category("BWV", ("ABS", "PRS"), frozenset({"PRS"})),
    Category("VS", ("ABS", "REG", "IR"), frozenset({"IR"})),
)

# classical checklist: major criteria score 2, minor criteria 1
_DEFAULT_WEIGHTS = {"PN": 2, "BWV": 2, "VS": 2, "STR": 1, "PIG": 1, "RS": 1, "DaG": 1}


@dataclass(frozen=True)
class CategorySchema:
    categories: tuple[Category, ...] = _DEFAULT_CATEGORIES
    weights: dict[str, int] = field(default_factory=lambda: dict(_DEFAULT_WEIGHTS))
    threshold: int = 3

    def __post_init__(self):
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate category names {names}")
        for c in self.categories:
            if len(c.classes) < 2:
                raise SchemaError(f"category {c.name} needs at least 2 classes")
            if not c.indicative <= set(c.classes):
                raise SchemaError(f"indicative classes of {c.name} not in its class list")
        for n in self.weights:
            if n not in names:
                raise SchemaError(f"weight given for unknown category {n}")

    def __hash__(self):
        return hash(self.fingerprint())

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)

    @property
    def class_counts(self) -> tuple[int, ...]:
        return tuple(c.k for c in self.categories)

    def __len__(self) -> int:
        return len(self.categories)

    def category(self, name: str) -> Category:
        for c in self.categories:
            if c.name == name:
                return c
        raise SchemaError(f"unknown category {name!r}")

    def encode(self, labels) -> tuple[int, ...]:
        if len(labels) != len(self.categories):
            raise SchemaError(f"expected {len(self.categories)} labels, got {len(labels)}")
        return tuple(c.index(lab) for c, lab in zip(self.categories, labels))

    def decode(self, indices) -> tuple[str, ...]:
        return tuple(c.classes[i] for c, i in zip(self.categories, indices))

    def validate(self, indices) -> None:
        if len(indices) != len(self.categories):
            raise SchemaError(f"expected {len(self.categories)} labels, got {len(indices)}")
        for c, i in zip(self.categories, indices):
            if not 0 <= int(i) < c.k:
                raise SchemaError(f"label index {i} out of range for {c.name}")

    def fingerprint(self) -> str:
        parts = []
        for c in self.categories:
            parts.append(f"{c.name}:{','.join(c.classes)}:{','.join(sorted(c.indicative))}")
        parts.append(";".join(f"{k}={self.weights[k]}" for k in sorted(self.weights)))
        parts.append(f"threshold={self.threshold}")
        return "|".join(parts)

    def hash64(self) -> int:
        return int.from_bytes(hashlib.sha256(self.fingerprint().encode()).digest()[:8], "little")


DEFAULT_SCHEMA = CategorySchema()


def seven_point_score(labels, schema: CategorySchema = DEFAULT_SCHEMA) -> tuple[int, bool]:
    """Total checklist points and whether the lesion is flagged as suspicious.

    ``labels`` are class indices in schema order; the diagnosis category
    carries no weight and never contributes.
    """
    schema.validate(labels)
    score = 0
    for c, i in zip(schema.categories, labels):
        if c.classes[int(i)] in c.indicative:
            score += schema.weights.get(c.name, 0)
    return score, score >= schema.threshold


def load_schema(path) -> CategorySchema:
    """Read a ``key = value`` override file.

    Recognised keys: ``weight.<CATEGORY> = <int>`` and ``threshold = <int>``.
    """
    weights = dict(_DEFAULT_WEIGHTS)
    threshold = 3
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SchemaError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            num = int(value)
        except ValueError:
            raise SchemaError(f"{path}:{lineno}: {value!r} is not an integer") from None
        if key == "threshold":
            threshold = num
        elif key.startswith("weight."):
            weights[key[len("weight."):]] = num
        else:
            raise SchemaError(f"{path}:{lineno}: unknown key {key!r}")
    return replace(DEFAULT_SCHEMA, weights=weights, threshold=threshold)

"""Tabular dataset loading, preprocessing, splitting and domain extraction.

Schema files are plain text, one feature per line::

    # comment
    @dataset adult
    @delimiter ,
    @missing ?
    @composite
    @encoding onehot
    age            | continuous  | 17:90            |
    hours-per-week | continuous  | 1:100            | integral
    workclass      | categorical | Private,State-gov |
    sex            | categorical | Male,Female      | sensitive
    age            | binned      | 40               | sensitive
    income         | categorical | <=50K,>50K       | label

Fields are separated by ``|``.  ``continuous`` takes ``lo:hi`` or ``auto``
(observed min/max); ``categorical`` takes a comma-separated category list;
``binned`` takes ascending thresholds and yields categories ``<t1``,
``[t1,t2)``, ..., ``>=tk``.  Flags are ``sensitive``, ``label`` and
``integral``.  ``@composite`` merges several sensitive features into one
categorical value; without it exactly one sensitive feature is allowed.
Directives are optional; ``@missing`` may be repeated.
"""

from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .response import SensitiveDomain
from .verify import InputDomain

log = logging.getLogger(__name__)

KINDS = ("continuous", "categorical", "binned")
FLAGS = ("sensitive", "label", "integral")
DEFAULT_MISSING = ("", "?", "NA", "N/A", "nan")


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    kind: str
    categories: tuple[str, ...] = ()
    lo: float | None = None
    hi: float | None = None
    thresholds: tuple[float, ...] = ()
    sensitive: bool = False
    label: bool = False
    integral: bool = False

    @property
    def column(self) -> str:
        return self.name

    def bin_labels(self) -> tuple[str, ...]:
        t = [f"{v:g}" for v in self.thresholds]
        middle = [f"[{a},{b})" for a, b in zip(t, t[1:])]
        return (f"<{t[0]}", *middle, f">={t[-1]}")

    @property
    def levels(self) -> tuple[str, ...]:
        return self.bin_labels() if self.kind == "binned" else self.categories


@dataclass
class DatasetSchema:
    features: list[Feature]
    name: str = ""
    delimiter: str = ","
    missing: tuple[str, ...] = DEFAULT_MISSING
    composite: bool = False
    encoding: str = "onehot"

    def __post_init__(self):
        labels = [f for f in self.features if f.label]
        if len(labels) != 1:
            raise SchemaError(f"exactly one label column required, found {len(labels)}")
        sens = self.sensitive_features
        if not sens:
            raise SchemaError("at least one sensitive feature required")
        if len(sens) > 1 and not self.composite:
            raise SchemaError("several sensitive features need the @composite directive")
        for f in sens:
            if f.kind == "continuous":
                raise SchemaError(f"sensitive feature {f.name!r} must be categorical or binned")
        if labels[0].kind != "categorical":
            raise SchemaError("the label column must be categorical")

    @property
    def label(self) -> Feature:
        return next(f for f in self.features if f.label)

    @property
    def sensitive_features(self) -> list[Feature]:
        return [f for f in self.features if f.sensitive]

    @property
    def inputs(self) -> list[Feature]:
        return [f for f in self.features if not (f.sensitive or f.label)]

    @property
    def columns(self) -> list[str]:
        return list(dict.fromkeys(f.column for f in self.features))

    def sensitive_domain(self) -> SensitiveDomain:
        levels = [f.levels for f in self.sensitive_features]
        values = tuple("&".join(combo) for combo in itertools.product(*levels))
        return SensitiveDomain(values, self.encoding)


def _parse_feature(line: str, lineno: int) -> Feature:
    parts = [p.strip() for p in line.split("|")]
    if len(parts) < 3:
        raise SchemaError(f"line {lineno}: expected 'name | kind | spec | flags'")
    name, kind, spec = parts[:3]
    flags = {f for f in (parts[3].replace(",", " ").split() if len(parts) > 3 else [])}
    unknown = flags - set(FLAGS)
    if unknown:
        raise SchemaError(f"line {lineno}: unknown flags {sorted(unknown)}")
    if kind not in KINDS:
        raise SchemaError(f"line {lineno}: unknown kind {kind!r}")
    kw = dict(sensitive="sensitive" in flags, label="label" in flags, integral="integral" in flags)
    if kind == "continuous":
        if spec == "auto":
            return Feature(name, kind, **kw)
        lo, _, hi = spec.partition(":")
        try:
            return Feature(name, kind, lo=float(lo), hi=float(hi), **kw)
        except ValueError:
            raise SchemaError(f"line {lineno}: bad range {spec!r}") from None
    if kind == "binned":
        try:
            thresholds = tuple(float(t) for t in spec.split(","))
        except ValueError:
            raise SchemaError(f"line {lineno}: bad thresholds {spec!r}") from None
        if list(thresholds) != sorted(set(thresholds)):
            raise SchemaError(f"line {lineno}: thresholds must be strictly ascending")
        return Feature(name, kind, thresholds=thresholds, **kw)
    cats = tuple(c.strip() for c in spec.split(",") if c.strip())
    if len(cats) < 1 or len(set(cats)) != len(cats):
        raise SchemaError(f"line {lineno}: categories must be non-empty and distinct")
    return Feature(name, kind, categories=cats, **kw)


def parse_schema(text: str) -> DatasetSchema:
    features, opts, missing = [], {}, []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip() if not raw.lstrip().startswith("@missing") else raw.strip()
        if not line:
            continue
        if line.startswith("@"):
            key, _, value = line[1:].partition(" ")
            value = value.strip()
            if key == "dataset":
                opts["name"] = value
            elif key == "delimiter":
                opts["delimiter"] = {"tab": "\t", "space": " "}.get(value, value)
            elif key == "missing":
                missing.append(value)
            elif key == "composite":
                opts["composite"] = True
            elif key == "encoding":
                opts["encoding"] = value
            else:
                raise SchemaError(f"line {lineno}: unknown directive @{key}")
            continue
        features.append(_parse_feature(line, lineno))
    if missing:
        opts["missing"] = tuple(missing) + ("",)
    return DatasetSchema(features, **opts)


def load_schema(path) -> DatasetSchema:
    schema = parse_schema(Path(path).read_text())
    if not schema.name:
        schema.name = Path(path).stem
    return schema


def bundled_schemas() -> dict[str, Path]:
    root = Path(__file__).parent / "schemas"
    return {p.stem: p for p in sorted(root.glob("*.schema"))}


@dataclass
class RawTable:
    columns: dict[str, list[str]]
    n_rows: int
    dropped: int = 0
    source: str = ""


def _parses(value: str, feature: Feature) -> bool:
    if feature.kind == "categorical":
        return True
    try:
        return np.isfinite(float(value))
    except ValueError:
        return False


def load_csv(path, schema: DatasetSchema) -> RawTable:
    """Read the schema columns of a headed CSV file.

    Rows with a missing or unparseable value in any schema column are
    dropped and counted.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such data file: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter, skipinitialspace=True)
        header = [h.strip() for h in next(reader, [])]
        absent = [c for c in schema.columns if c not in header]
        if absent:
            raise SchemaError(f"{path}: header lacks schema columns {absent}")
        pos = {c: header.index(c) for c in schema.columns}
        by_col = {f.column: f for f in schema.features}
        missing = set(schema.missing)
        columns = {c: [] for c in schema.columns}
        kept = dropped = 0
        for row in reader:
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                values = {c: row[i].strip() for c, i in pos.items()}
            except IndexError:
                dropped += 1
                continue
            if any(v in missing or not _parses(v, by_col[c]) for c, v in values.items()):
                dropped += 1
                continue
            for c, v in values.items():
                columns[c].append(v)
            kept += 1
    if kept == 0:
        raise ValueError(f"{path}: no usable rows")
    if dropped:
        log.info("%s: dropped %d rows with missing values", path, dropped)
    return RawTable(columns, kept, dropped, str(path))


@dataclass
class Dataset:
    x: np.ndarray
    s: np.ndarray
    y: np.ndarray
    schema: DatasetSchema
    feature_names: list[str]
    groups: list[list[int]]
    sensitive: SensitiveDomain
    n_classes: int
    norm: dict[str, tuple[float, float]] = field(default_factory=dict)
    continuous_index: dict[str, int] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.y)

    @property
    def n_features(self) -> int:
        return self.x.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return replace(self, x=self.x[idx], s=self.s[idx], y=self.y[idx])

    def denormalize(self) -> dict[str, np.ndarray]:
        """Continuous features mapped back to their original units."""
        out = {}
        for name, col in self.continuous_index.items():
            lo, hi = self.norm[name]
            out[name] = self.x[:, col] * (hi - lo) + lo if hi > lo else np.full(len(self), lo)
        return out


def _binned_index(values: np.ndarray, thresholds) -> np.ndarray:
    return np.searchsorted(np.asarray(thresholds), values, side="right")


def _category_index(values: list[str], feature: Feature) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(feature.categories)}
    try:
        return np.array([lookup[v] for v in values], dtype=np.intp)
    except KeyError as exc:
        raise SchemaError(f"feature {feature.name!r}: value {exc.args[0]!r} not in declared categories") from None


def _levels_index(raw: RawTable, feature: Feature) -> np.ndarray:
    col = raw.columns[feature.column]
    if feature.kind == "binned":
        return _binned_index(np.array(col, dtype=np.float64), feature.thresholds)
    return _category_index(col, feature)


def preprocess(raw: RawTable, schema: DatasetSchema) -> Dataset:
    """Scale, one-hot encode and index a raw table.

    Continuous features are min-max scaled to [0, 1] with their declared
    range (observed range for ``auto``); values outside a declared range are
    clipped.  Non-sensitive categoricals become one-hot blocks.  Sensitive
    features become value indices, merged into one composite value when
    the schema asks for it.  Labels are 1-based category positions.
    """
    if raw.n_rows == 0:
        raise ValueError("empty table")
    n = raw.n_rows
    blocks, names, groups, norm, cont_index = [], [], [], {}, {}
    width = 0
    for feat in schema.inputs:
        if feat.kind == "continuous":
            v = np.array(raw.columns[feat.column], dtype=np.float64)
            lo = float(v.min()) if feat.lo is None else feat.lo
            hi = float(v.max()) if feat.hi is None else feat.hi
            outside = int(((v < lo) | (v > hi)).sum())
            if outside:
                log.warning("%s: clipped %d values to [%g, %g]", feat.name, outside, lo, hi)
                v = np.clip(v, lo, hi)
            if hi > lo:
                col = (v - lo) / (hi - lo)
            else:
                log.warning("%s: degenerate range, emitted as constant 0", feat.name)
                col = np.zeros(n)
            norm[feat.name] = (lo, hi)
            cont_index[feat.name] = width
            blocks.append(col[:, None])
            names.append(feat.name)
            width += 1
        else:
            idx = _levels_index(raw, feat)
            levels = feat.levels
            blocks.append(np.eye(len(levels))[idx])
            names += [f"{feat.name}={lvl}" for lvl in levels]
            groups.append(list(range(width, width + len(levels))))
            width += len(levels)
    x = np.hstack(blocks) if blocks else np.zeros((n, 0))

    sens = schema.sensitive_features
    codes = np.zeros(n, dtype=np.intp)
    for feat in sens:
        codes = codes * len(feat.levels) + _levels_index(raw, feat)
    label = schema.label
    y = _category_index(raw.columns[label.column], label) + 1
    return Dataset(x, codes, y, schema, names, groups, schema.sensitive_domain(),
                   len(label.categories), norm, cont_index)


def load_dataset(data_path, schema_path) -> Dataset:
    schema = load_schema(schema_path) if not isinstance(schema_path, DatasetSchema) else schema_path
    return preprocess(load_csv(data_path, schema), schema)


def split(dataset: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded random split: ``floor(n * f)`` test rows, the rest for training."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(dataset)
    n_test = int(np.floor(n * test_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    return dataset.subset(np.sort(perm[n_test:])), dataset.subset(np.sort(perm[:n_test]))


def schema_layout(schema: DatasetSchema) -> tuple[list[str], list[list[int]]]:
    """Feature names and one-hot groups that :func:`preprocess` produces for ``schema``."""
    names, groups = [], []
    for feat in schema.inputs:
        if feat.kind == "continuous":
            names.append(feat.name)
        else:
            groups.append(list(range(len(names), len(names) + len(feat.levels))))
            names += [f"{feat.name}={lvl}" for lvl in feat.levels]
    return names, groups


def schema_domain(schema: DatasetSchema) -> InputDomain:
    """The verification domain of :func:`extract_domain`, built from the schema alone."""
    names, groups = schema_layout(schema)
    integral = np.zeros(len(names), dtype=bool)
    for group in groups:
        integral[group] = True
    return InputDomain(np.zeros(len(names)), np.ones(len(names)), schema.sensitive_domain(),
                       names, integral, groups)


def extract_domain(dataset: Dataset) -> InputDomain:
    """Unit box over the preprocessed features; one-hot blocks relaxed to [0, 1]."""
    d = dataset.n_features
    integral = np.zeros(d, dtype=bool)
    for group in dataset.groups:
        integral[group] = True
    return InputDomain(np.zeros(d), np.ones(d), dataset.sensitive, list(dataset.feature_names),
                       integral, [list(g) for g in dataset.groups])

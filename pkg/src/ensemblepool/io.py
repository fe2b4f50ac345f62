"""File formats: label and prediction CSVs, bundle manifests, split documents.

Prediction CSVs have the header ``sample_id,<class_0>,...,<class_{C-1}>`` and
floats written with 10 significant digits. All writers replace their target
atomically (temporary file in the same directory, then rename).
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .core import (
    EPS_INGEST,
    EPS_NORM,
    EnsembleBundle,
    EnsemblePoolError,
    FoldMember,
    FoldRole,
    LabelVector,
    Member,
    NormalizationError,
    Partition,
    PredictionMatrix,
    SourceKind,
    SplitAssignment,
    validate_bundle,
)

SCHEMA_VERSION = 1
FLOAT_FORMAT = "{:.10g}"


class ParseError(EnsemblePoolError):
    pass


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dumps_json(data) -> str:
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_json(path, data) -> None:
    atomic_write_text(path, dumps_json(data))


def read_json(path):
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None


def _rows(path):
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        for row in reader:
            # reader.line_num is the physical line of the row just read
            yield reader.line_num, row


# --------------------------------------------------------------------------- labels

def read_labels(path, class_count: int = None) -> LabelVector:
    ids, labels = [], []
    rows = _rows(path)
    header = next(rows, None)
    if header is None or [h.strip() for h in header[1]] != ["sample_id", "label"]:
        raise ParseError(f"{path}:1: expected header 'sample_id,label'")
    for line, row in rows:
        if not row:
            continue
        if len(row) != 2:
            raise ParseError(f"{path}:{line}: expected 2 fields, got {len(row)}")
        try:
            label = int(row[1])
        except ValueError:
            raise ParseError(f"{path}:{line}: label {row[1]!r} is not an integer") from None
        if label < 0:
            raise ParseError(f"{path}:{line}: negative label {label}")
        ids.append(row[0])
        labels.append(label)
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate sample ids")
    return LabelVector(ids, np.array(labels, dtype=np.int64), class_count)


def format_labels(labels: LabelVector) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["sample_id", "label"])
    for sample_id, label in zip(labels.sample_ids, labels.labels):
        writer.writerow([sample_id, int(label)])
    return buf.getvalue()


def write_labels(path, labels: LabelVector) -> None:
    atomic_write_text(path, format_labels(labels))


# --------------------------------------------------------------------------- predictions

def read_predictions(path, tol: float = EPS_INGEST):
    """Parse a prediction CSV into ``(PredictionMatrix, class_names)``.

    Rows off by more than the validation tolerance but within ``tol`` of
    summing to one are renormalized; rows already normalized are kept as
    written, so parse/format round trips are stable. A file whose rows
    all carry exactly one nonzero entry in (0, 1] is read as a degenerate
    (Global Argmax) matrix and left as is.
    """
    rows = _rows(path)
    header = next(rows, None)
    if header is None or not header[1] or header[1][0].strip() != "sample_id" or len(header[1]) < 2:
        raise ParseError(f"{path}:1: expected header 'sample_id,<class_0>,...'")
    class_names = [h.strip() for h in header[1][1:]]
    width = len(class_names)
    ids, values, lines = [], [], []
    for line, row in rows:
        if not row:
            continue
        if len(row) != width + 1:
            raise ParseError(f"{path}:{line}: expected {width + 1} fields, got {len(row)}")
        try:
            values.append([float(v) for v in row[1:]])
        except ValueError as exc:
            raise ParseError(f"{path}:{line}: {exc}") from None
        ids.append(row[0])
        lines.append(line)
    if len(set(ids)) != len(ids):
        raise ParseError(f"{path}: duplicate sample ids")
    arr = np.array(values, dtype=float).reshape(len(ids), width)
    bad = ~np.isfinite(arr).all(axis=1) | (arr < 0).any(axis=1) | (arr > 1).any(axis=1)
    if bad.any():
        raise NormalizationError(f"{path}:{lines[int(np.argmax(bad))]}: probabilities must lie in [0, 1]")

    sums = arr.sum(axis=1)
    off = np.abs(sums - 1.0) > tol
    if off.any():
        if np.all(np.count_nonzero(arr, axis=1) == 1):
            return PredictionMatrix(ids, arr, degenerate=True), class_names
        raise NormalizationError(f"{path}:{lines[int(np.argmax(off))]}: row sums to {sums[off][0]!r}")
    drift = np.abs(sums - 1.0) > EPS_NORM
    arr[drift] /= sums[drift, None]
    return PredictionMatrix(ids, arr), class_names


def format_predictions(matrix: PredictionMatrix, class_names=None) -> str:
    class_names = class_names or [f"class_{c}" for c in range(matrix.class_count)]
    lines = [",".join(["sample_id", *class_names])]
    for sample_id, row in zip(matrix.sample_ids, matrix.values):
        lines.append(",".join([_csv_field(sample_id), *(FLOAT_FORMAT.format(v) for v in row)]))
    return "\n".join(lines) + "\n"


def _csv_field(value: str) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="").writerow([value])
    return buf.getvalue()


def write_predictions(path, matrix: PredictionMatrix, class_names=None) -> None:
    atomic_write_text(path, format_predictions(matrix, class_names))


# --------------------------------------------------------------------------- manifests

def read_manifest(path):
    """Load a bundle manifest; returns ``(bundle, labels or None, class_names)``.

    Manifest layout::

        {"schema_version": 1,
         "class_names": ["a", "b"],            # optional
         "labels": "labels.csv",               # optional
         "members": [{"name": "m0", "path": "m0.csv", "source_kind": "architecture"}]}

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    doc = read_json(path)
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"{path}: unsupported or missing schema_version (expected {SCHEMA_VERSION})")
    members_doc = doc.get("members")
    if not isinstance(members_doc, list) or not members_doc:
        raise ParseError(f"{path}: 'members' must be a non-empty list")
    base = path.parent
    members, class_names = [], doc.get("class_names")
    for i, item in enumerate(members_doc):
        if not isinstance(item, dict) or "path" not in item:
            raise ParseError(f"{path}: members[{i}] needs a 'path'")
        member_path = base / item["path"]
        if not member_path.exists():
            raise ParseError(f"{path}: members[{i}] file {member_path} does not exist")
        matrix, names = read_predictions(member_path)
        if class_names is None:
            class_names = names
        elif len(names) != len(class_names):
            raise ParseError(f"{member_path}: {len(names)} classes, manifest declares {len(class_names)}")
        try:
            kind = SourceKind(item.get("source_kind", "architecture"))
        except ValueError:
            raise ParseError(f"{path}: members[{i}] has unknown source_kind {item.get('source_kind')!r}") from None
        members.append(Member(item.get("name", member_path.stem), kind, matrix))
    bundle = validate_bundle(EnsembleBundle(tuple(members)), tol=EPS_INGEST)
    labels = None
    if doc.get("labels"):
        labels_path = base / doc["labels"]
        if not labels_path.exists():
            raise ParseError(f"{path}: labels file {labels_path} does not exist")
        labels = read_labels(labels_path, len(class_names))
    return bundle, labels, class_names


def write_manifest(path, member_paths, names=None, labels_path=None, class_names=None,
                   source_kind=SourceKind.ARCHITECTURE) -> None:
    names = names or [Path(p).stem for p in member_paths]
    doc = {
        "schema_version": SCHEMA_VERSION,
        "members": [{"name": n, "path": str(p), "source_kind": SourceKind(source_kind).value}
                    for n, p in zip(names, member_paths)],
    }
    if labels_path is not None:
        doc["labels"] = str(labels_path)
    if class_names is not None:
        doc["class_names"] = list(class_names)
    write_json(path, doc)


# --------------------------------------------------------------------------- splits

def _role_to_str(role):
    return role.role.value if isinstance(role, FoldMember) else role.value


def split_to_dict(split: SplitAssignment, seed=None, stratified=None, ratios=None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "percentage",
        "seed": seed,
        "stratified": stratified,
        "ratios": ratios,
        "assignment": {s: _role_to_str(r) for s, r in split.assignment.items()},
    }


def kfold_to_dict(base: SplitAssignment, folds, seed=None, stratified=None, ratios=None) -> dict:
    doc = split_to_dict(base, seed, stratified, ratios)
    doc["kind"] = "kfold"
    doc["k"] = len(folds)
    doc["folds"] = [
        {"fold_index": i, "assignment": {s: _role_to_str(r) for s, r in fold.assignment.items()}}
        for i, fold in enumerate(folds)
    ]
    return doc


def _parse_assignment(mapping, fold_index=None, where="assignment"):
    out = {}
    for sample_id, name in mapping.items():
        try:
            out[sample_id] = Partition(name)
        except ValueError:
            try:
                role = FoldRole(name)
            except ValueError:
                raise ParseError(f"{where}: unknown partition {name!r} for sample {sample_id!r}") from None
            if fold_index is None:
                raise ParseError(f"{where}: fold role outside a fold for sample {sample_id!r}")
            out[sample_id] = FoldMember(fold_index, role)
    return SplitAssignment(out)


def split_from_dict(doc: dict):
    """Return ``(base SplitAssignment, list of fold SplitAssignments)``."""
    if not isinstance(doc, dict) or doc.get("schema_version") != SCHEMA_VERSION:
        raise ParseError(f"split document: unsupported schema_version (expected {SCHEMA_VERSION})")
    base = _parse_assignment(doc.get("assignment", {}))
    folds = [
        _parse_assignment(fold["assignment"], fold["fold_index"], f"folds[{i}]")
        for i, fold in enumerate(doc.get("folds", []))
    ]
    return base, folds


def read_split(path):
    return split_from_dict(read_json(path))

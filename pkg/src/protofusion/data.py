"""Embedding dataset model and its comma-separated file formats.

Three files describe a dataset:

* visual file  -- header ``id,class,split,d0,...,d{V-1}``, one row per sample,
  ``split`` in {base, novel};
* text file    -- header ``id,text_idx,e0,...,e{T-1}``, one row per textual
  description, grouped per sample and ordered by ``text_idx``;
* split file   -- optional override, rows ``class,split``.

Lines starting with ``#`` are comments and are skipped everywhere, so tools
can prepend their resolved configuration to generated files.

Text vectors are reachable only through :meth:`EmbeddingDataset.texts_for`,
which counts accesses; evaluation paths that claim to be image-only can be
audited against that counter.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DataValidationError

SPLITS = ("base", "novel")


@dataclass(frozen=True)
class Sample:
    id: str
    class_id: str
    split: str
    visual: np.ndarray


class EmbeddingDataset:
    """Immutable store of visual vectors, per-sample text vectors and splits."""

    def __init__(self, samples, texts, text_dim, class_splits=None):
        samples = tuple(samples)
        if not samples:
            raise DataValidationError("dataset has no samples")
        self.visual_dim = samples[0].visual.shape[0]
        self.text_dim = int(text_dim)

        ids = set()
        for s in samples:
            if s.id in ids:
                raise DataValidationError(f"duplicate sample id {s.id!r}")
            ids.add(s.id)
            if s.visual.shape != (self.visual_dim,):
                raise DataValidationError(
                    f"sample {s.id!r} has visual dim {s.visual.shape[0]}, "
                    f"expected {self.visual_dim}"
                )
            if not np.all(np.isfinite(s.visual)):
                raise DataValidationError(f"sample {s.id!r} has non-finite visual values")
            if s.split not in SPLITS:
                raise DataValidationError(f"sample {s.id!r} has unknown split {s.split!r}")

        if class_splits is None:
            class_splits = {}
            for s in samples:
                prev = class_splits.setdefault(s.class_id, s.split)
                if prev != s.split:
                    raise DataValidationError(
                        f"class {s.class_id!r} appears in both splits"
                    )
        else:
            class_splits = dict(class_splits)
            for c, sp in class_splits.items():
                if sp not in SPLITS:
                    raise DataValidationError(f"class {c!r} has unknown split {sp!r}")
            for s in samples:
                if s.class_id not in class_splits:
                    raise DataValidationError(
                        f"sample {s.id!r} references unknown class {s.class_id!r}"
                    )
            # realign sample split markers with the (possibly overriding) registry
            samples = tuple(
                s if s.split == class_splits[s.class_id]
                else Sample(s.id, s.class_id, class_splits[s.class_id], s.visual)
                for s in samples
            )

        clean_texts = {}
        for sid, mat in texts.items():
            if sid not in ids:
                raise DataValidationError(f"text row for unknown sample id {sid!r}")
            arr = np.asarray(mat, dtype=np.float64)
            if arr.ndim != 2 or arr.shape[1] != self.text_dim:
                raise DataValidationError(
                    f"texts for sample {sid!r} have dim {arr.shape}, "
                    f"expected (*, {self.text_dim})"
                )
            if not np.all(np.isfinite(arr)):
                raise DataValidationError(f"texts for sample {sid!r} contain non-finite values")
            clean_texts[sid] = arr
        empty = np.zeros((0, self.text_dim))
        for s in samples:
            clean_texts.setdefault(s.id, empty)

        self.samples = samples
        self.class_splits = class_splits
        self.base_classes = tuple(sorted(c for c, sp in class_splits.items() if sp == "base"))
        self.novel_classes = tuple(sorted(c for c, sp in class_splits.items() if sp == "novel"))
        self._texts = clean_texts
        self._by_id = {s.id: s for s in samples}
        by_class: dict[str, list[Sample]] = {}
        for s in samples:
            by_class.setdefault(s.class_id, []).append(s)
        self._by_class = {c: tuple(v) for c, v in by_class.items()}
        self.text_reads = 0  # diagnostic counter, see texts_for

    def __len__(self):
        return len(self.samples)

    def by_id(self, sample_id) -> Sample:
        try:
            return self._by_id[sample_id]
        except KeyError:
            raise KeyError(f"unknown sample id {sample_id!r}") from None

    def samples_of(self, class_id):
        return self._by_class.get(class_id, ())

    def text_count(self, sample_id) -> int:
        return self._texts[sample_id].shape[0]

    def texts_for(self, sample_id, cap=None) -> np.ndarray:
        """Text vectors of one sample, truncated to the first ``cap`` by index.

        Every read is tallied in ``text_reads`` so image-only code paths can
        be verified to never touch the text modality.
        """
        self.text_reads += 1
        mat = self._texts[sample_id]
        if cap is not None:
            if cap < 1:
                raise ValueError("texts cap must be >= 1")
            mat = mat[:cap]
        return mat


def _data_rows(path):
    """Yield (line_number, fields) from a CSV file, skipping # comments."""
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or (row[0].lstrip().startswith("#")):
                continue
            yield lineno, row


def _parse_floats(fields, path, lineno):
    try:
        return np.array([float(f) for f in fields], dtype=np.float64)
    except ValueError:
        raise DataValidationError(
            f"{path} line {lineno}: could not parse embedding values"
        ) from None


def load_dataset(visual_path, text_path, split_path=None) -> EmbeddingDataset:
    """Load and fully validate a dataset from its visual/text/split files."""
    rows = _data_rows(visual_path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataValidationError(f"{visual_path}: empty file") from None
    if header[:3] != ["id", "class", "split"] or len(header) < 4:
        raise DataValidationError(
            f"{visual_path}: header must start with id,class,split,d0,..."
        )
    visual_dim = len(header) - 3

    samples = []
    for lineno, row in rows:
        if len(row) != 3 + visual_dim:
            raise DataValidationError(
                f"{visual_path} line {lineno}: expected {3 + visual_dim} fields "
                f"for visual dim {visual_dim}, got {len(row)}"
            )
        sid, cls, split = row[0], row[1], row[2]
        if split not in SPLITS:
            raise DataValidationError(
                f"{visual_path} line {lineno}: split must be one of {SPLITS}, got {split!r}"
            )
        samples.append(Sample(sid, cls, split, _parse_floats(row[3:], visual_path, lineno)))

    rows = _data_rows(text_path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataValidationError(f"{text_path}: empty file") from None
    if header[:2] != ["id", "text_idx"] or len(header) < 3:
        raise DataValidationError(
            f"{text_path}: header must start with id,text_idx,e0,..."
        )
    text_dim = len(header) - 2

    per_sample: dict[str, list] = {}
    for lineno, row in rows:
        if len(row) != 2 + text_dim:
            raise DataValidationError(
                f"{text_path} line {lineno}: expected {2 + text_dim} fields "
                f"for text dim {text_dim}, got {len(row)}"
            )
        sid = row[0]
        try:
            tidx = int(row[1])
        except ValueError:
            raise DataValidationError(
                f"{text_path} line {lineno}: text_idx must be an integer"
            ) from None
        entries = per_sample.setdefault(sid, [])
        if any(t == tidx for t, _ in entries):
            raise DataValidationError(
                f"{text_path} line {lineno}: duplicate text_idx {tidx} for sample {sid!r}"
            )
        entries.append((tidx, _parse_floats(row[2:], text_path, lineno)))

    texts = {
        sid: np.stack([vec for _, vec in sorted(entries)])
        for sid, entries in per_sample.items()
    }

    class_splits = None
    if split_path is not None:
        class_splits = {s.class_id: s.split for s in samples}
        for lineno, row in _data_rows(split_path):
            if row == ["class", "split"]:
                continue
            if len(row) != 2:
                raise DataValidationError(
                    f"{split_path} line {lineno}: expected class,split"
                )
            class_splits[row[0]] = row[1]

    return EmbeddingDataset(samples, texts, text_dim, class_splits)


def _fmt(value: float) -> str:
    return repr(float(value))


def write_dataset(dataset: EmbeddingDataset, visual_path, text_path, comments=()):
    """Write a dataset back to its file formats (round-trips exactly)."""
    with open(visual_path, "w", newline="\n") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write("id,class,split," + ",".join(f"d{i}" for i in range(dataset.visual_dim)) + "\n")
        for s in dataset.samples:
            fh.write(",".join([s.id, s.class_id, s.split] + [_fmt(v) for v in s.visual]) + "\n")
    with open(text_path, "w", newline="\n") as fh:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write("id,text_idx," + ",".join(f"e{i}" for i in range(dataset.text_dim)) + "\n")
        for s in dataset.samples:
            for tidx, vec in enumerate(dataset._texts[s.id]):
                fh.write(",".join([s.id, str(tidx)] + [_fmt(v) for v in vec]) + "\n")

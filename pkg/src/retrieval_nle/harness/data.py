"""Samples, dataset splits and the JSONL dataset format.

One sample per line::

    {"id": str, "image_ref": str, "question": str,
     "answers": [str, ...], "explanations": [str, ...]}

A dataset directory holds ``train.jsonl``, ``val.jsonl`` and ``test.jsonl``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from retrieval_nle.errors import ValidationError
from retrieval_nle.model.template import template_violation

SPLITS = ("train", "val", "test")
_FIELDS = ("id", "image_ref", "question", "answers", "explanations")


@dataclass(frozen=True)
class Sample:
    id: str
    image_ref: str
    question: str
    answers: tuple[str, ...]
    explanations: tuple[str, ...]

    def to_json(self) -> str:
        d = asdict(self)
        d["answers"] = list(self.answers)
        d["explanations"] = list(self.explanations)
        return json.dumps(d)


@dataclass
class DatasetSplits:
    train: list[Sample]
    val: list[Sample]
    test: list[Sample]

    def split(self, name: str) -> list[Sample]:
        if name not in SPLITS:
            raise ValidationError(f"unknown split {name!r}; choose from {', '.join(SPLITS)}")
        return getattr(self, name)

    def all_samples(self) -> list[Sample]:
        return [*self.train, *self.val, *self.test]

    def find(self, sample_id: str) -> tuple[str, Sample]:
        for name in SPLITS:
            for s in getattr(self, name):
                if s.id == sample_id:
                    return name, s
        raise ValidationError(f"no sample with id {sample_id!r}")

    def check_disjoint(self) -> None:
        seen: dict[str, str] = {}
        for name in SPLITS:
            for s in getattr(self, name):
                if s.id in seen:
                    raise ValidationError(f"sample id {s.id!r} appears in both {seen[s.id]} and {name}")
                seen[s.id] = name


def parse_sample(rec, where: str) -> Sample:
    if not isinstance(rec, dict):
        raise ValidationError(f"{where}: expected a JSON object")
    for f in _FIELDS:
        if f not in rec:
            raise ValidationError(f"{where}: missing field {f!r}")
    for f in ("id", "image_ref", "question"):
        if not isinstance(rec[f], str) or not rec[f].strip():
            raise ValidationError(f"{where}: field {f!r} must be a non-empty string")
    for f in ("answers", "explanations"):
        vals = rec[f]
        if not isinstance(vals, list) or not vals or not all(isinstance(v, str) and v.strip() for v in vals):
            raise ValidationError(f"{where}: field {f!r} must be a non-empty list of non-empty strings")
    sample = Sample(rec["id"], rec["image_ref"], rec["question"], tuple(rec["answers"]), tuple(rec["explanations"]))
    for a in sample.answers:
        for e in sample.explanations:
            problem = template_violation(a, e)
            if problem:
                raise ValidationError(f"{where}: sample {sample.id!r} rejected: {problem}")
    return sample


def read_split(path, name: str) -> list[Sample]:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"missing split file {path}")
    samples, ids = [], set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{where}: malformed JSON ({exc.msg})") from None
            s = parse_sample(rec, where)
            if s.id in ids:
                raise ValidationError(f"{where}: duplicate id {s.id!r}")
            ids.add(s.id)
            samples.append(s)
    if not samples:
        raise ValidationError(f"empty split: {name}")
    return samples


def load_dataset(path) -> DatasetSplits:
    path = Path(path)
    splits = DatasetSplits(*(read_split(path / f"{name}.jsonl", name) for name in SPLITS))
    splits.check_disjoint()
    return splits


def write_split(path, samples) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(s.to_json() + "\n")


def write_dataset(path, splits: DatasetSplits) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        write_split(path / f"{name}.jsonl", getattr(splits, name))

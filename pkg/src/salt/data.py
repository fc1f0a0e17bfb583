"""Sentence-pair task examples and their JSONL form."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import DataError, InputError


@dataclass(frozen=True)
class TaskExample:
    sentence_a: str
    sentence_b: str
    label: int
    language: str
    index: int

    def to_dict(self) -> dict:
        return asdict(self)


def read_jsonl(path: str | Path) -> list[dict]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f"file not found: {path}")
    rows = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
    return rows


def write_jsonl(path: str | Path, rows) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_examples(path: str | Path, language: str | None = None) -> list[TaskExample]:
    """Load task examples; ``premise``/``hypothesis`` keys are accepted as aliases."""
    out = []
    for k, row in enumerate(read_jsonl(path)):
        a = row.get("sentence_a", row.get("premise", row.get("sentence1")))
        b = row.get("sentence_b", row.get("hypothesis", row.get("sentence2")))
        if a is None or b is None or "label" not in row:
            raise DataError(f"{path}: record {k} lacks a sentence pair or label")
        out.append(TaskExample(a, b, int(row["label"]), row.get("language", language or ""), int(row.get("index", k))))
    if not out:
        raise InputError(f"no examples in {path}")
    return out


def save_examples(path: str | Path, examples) -> None:
    write_jsonl(path, (ex.to_dict() for ex in examples))

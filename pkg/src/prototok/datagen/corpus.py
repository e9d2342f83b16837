"""Corpus records tying texts to their augmentation lineage.

Each record carries a variant tag: "original" for source sentences,
"lexical" for surface-level (typo) variants, "semantic" for paraphrases.
`source_id` points back at the record the variant was derived from; original
records leave it empty. `label` is a free-form cluster key and may be empty.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from ..errors import ValidationError

VARIANT_KINDS = ("original", "lexical", "semantic")


@dataclass(frozen=True)
class CorpusRecord:
    record_id: str
    text: str
    label: str = ""
    variant: str = "original"
    source_id: str = ""

    def __post_init__(self) -> None:
        if not self.record_id:
            raise ValidationError("record_id must be non-empty")
        if not self.text:
            raise ValidationError(f"record {self.record_id!r} has empty text")
        if self.variant not in VARIANT_KINDS:
            raise ValidationError(
                f"record {self.record_id!r}: variant must be one of "
                f"{VARIANT_KINDS}, got {self.variant!r}")


def save_corpus_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps({"id": rec.record_id, "text": rec.text,
                                 "label": rec.label, "variant": rec.variant,
                                 "source_id": rec.source_id}) + "\n")


def load_corpus_jsonl(path) -> list:
    records = []
    seen = set()
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            for key in ("id", "text"):
                if key not in obj:
                    raise ValidationError(f"{path}:{lineno}: missing field {key!r}")
            rec = CorpusRecord(record_id=obj["id"], text=obj["text"],
                               label=obj.get("label", ""),
                               variant=obj.get("variant", "original"),
                               source_id=obj.get("source_id", ""))
            if rec.record_id in seen:
                raise ValidationError(f"{path}:{lineno}: duplicate id {rec.record_id!r}")
            seen.add(rec.record_id)
            records.append(rec)
    return records


def load_paraphrases(path) -> list:
    """Read a {source_id: [paraphrase, ...]} JSON file as semantic records.

    Every paraphrase of one source shares label = source_id, which is the
    cluster linkage downstream similarity analyses group by.
    """
    with open(path, "r", encoding="utf-8") as fh:
        try:
            table = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(table, dict):
        raise ValidationError(f"{path}: expected an object mapping source id "
                              "to a list of paraphrases")
    records = []
    for source_id, phrases in table.items():
        if not source_id:
            raise ValidationError(f"{path}: empty source id")
        if not isinstance(phrases, list) or not phrases:
            raise ValidationError(
                f"{path}: source {source_id!r} must map to a non-empty list")
        for k, phrase in enumerate(phrases):
            if not isinstance(phrase, str) or not phrase.strip():
                raise ValidationError(
                    f"{path}: source {source_id!r} entry {k} is not usable text")
            records.append(CorpusRecord(record_id=f"{source_id}/s{k}",
                                        text=phrase, label=source_id,
                                        variant="semantic", source_id=source_id))
    return records

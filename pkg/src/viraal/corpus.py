"""Corpus ingestion for aligned intent/slot datasets (ATIS/SNIPS style).

A split lives in a directory with three aligned files:

    seq.in   one utterance per line, space-separated tokens
    seq.out  one slot-tag sequence per line, same token count
    label    one intent per line
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

PAD_WORD = "<pad>"
UNK_WORD = "<unk>"
BOS_SLOT = "<bos>"

SPLIT_FILES = ("seq.in", "seq.out", "label")


class AlignmentError(ValueError):
    """Token/slot counts disagree on some line of a split."""


@dataclass(frozen=True)
class Utterance:
    id: int
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens or any(not t for t in self.tokens):
            raise ValueError(f"utterance {self.id}: empty token sequence or empty token")

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Annotation:
    intent: str
    slots: tuple[str, ...]


@dataclass(frozen=True)
class Example:
    utterance: Utterance
    annotation: Annotation | None
    split: str = "train"

    def __post_init__(self):
        if self.annotation is not None:
            if len(self.annotation.slots) != self.utterance.length:
                raise AlignmentError(
                    f"example {self.utterance.id}: {self.utterance.length} tokens "
                    f"but {len(self.annotation.slots)} slot tags"
                )
        elif self.split in ("dev", "test"):
            raise ValueError(f"{self.split} example {self.utterance.id} must be annotated")

    @property
    def id(self) -> int:
        return self.utterance.id

    @property
    def tokens(self) -> tuple[str, ...]:
        return self.utterance.tokens


@dataclass
class Vocabulary:
    """Dense, contiguous indices over words, slot tags and intents.

    Word ids reserve PAD=0 and UNK=1.  Slot tags occupy 0..n_slots-1 in
    first-occurrence order; a reserved begin-of-sequence row used for
    conditioning the first decoder step sits at index n_slots (it is never
    a classifier target, so ``n_slots`` stays the classifier width).
    """

    word_index: dict[str, int] = field(default_factory=dict)
    slot_index: dict[str, int] = field(default_factory=dict)
    intent_index: dict[str, int] = field(default_factory=dict)

    @property
    def n_words(self) -> int:
        return len(self.word_index)

    @property
    def n_slots(self) -> int:
        return len(self.slot_index) - 1  # exclude the reserved BOS row

    @property
    def n_intents(self) -> int:
        return len(self.intent_index)

    @property
    def bos_slot_id(self) -> int:
        return self.slot_index[BOS_SLOT]

    @property
    def pad_id(self) -> int:
        return self.word_index[PAD_WORD]

    @property
    def unk_id(self) -> int:
        return self.word_index[UNK_WORD]

    def word_ids(self, tokens: Iterable[str]) -> list[int]:
        unk = self.word_index[UNK_WORD]
        return [self.word_index.get(t, unk) for t in tokens]

    def slot_ids(self, tags: Iterable[str]) -> list[int]:
        return [self.slot_index[t] for t in tags]

    def intent_id(self, intent: str) -> int:
        return self.intent_index[intent]

    def intent_name(self, idx: int) -> str:
        return self.intent_names()[idx]

    def slot_name(self, idx: int) -> str:
        return self.slot_names()[idx]

    def intent_names(self) -> list[str]:
        names = [""] * len(self.intent_index)
        for name, idx in self.intent_index.items():
            names[idx] = name
        return names

    def slot_names(self) -> list[str]:
        names = [""] * len(self.slot_index)
        for name, idx in self.slot_index.items():
            names[idx] = name
        return names

    def content_hash(self) -> str:
        payload = json.dumps(
            [sorted(self.word_index.items()), sorted(self.slot_index.items()),
             sorted(self.intent_index.items())]
        ).encode()
        return hashlib.sha256(payload).hexdigest()

    def to_dict(self) -> dict:
        return {
            "word_index": dict(self.word_index),
            "slot_index": dict(self.slot_index),
            "intent_index": dict(self.intent_index),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(
            word_index=dict(d["word_index"]),
            slot_index=dict(d["slot_index"]),
            intent_index=dict(d["intent_index"]),
        )


def load_split(path: str | Path, split: str) -> list[Example]:
    """Load one split from the three-file aligned format.

    Raises AlignmentError (with the offending 1-based line number) when the
    token and slot counts of a line disagree or file lengths differ, and
    FileNotFoundError when a file is missing.
    """
    root = Path(path)
    lines = {}
    for name in SPLIT_FILES:
        fp = root / name
        if not fp.is_file():
            raise FileNotFoundError(f"missing split file: {fp}")
        lines[name] = fp.read_text(encoding="utf-8").splitlines()

    counts = {name: len(ls) for name, ls in lines.items()}
    if len(set(counts.values())) != 1:
        raise AlignmentError(f"{root}: line counts differ across files: {counts}")

    examples = []
    for i, (toks, tags, intent) in enumerate(
        zip(lines["seq.in"], lines["seq.out"], lines["label"])
    ):
        tokens = tuple(toks.split())
        slots = tuple(tags.split())
        if len(tokens) != len(slots):
            raise AlignmentError(
                f"{root} line {i + 1}: {len(tokens)} tokens but {len(slots)} slot tags"
            )
        examples.append(
            Example(
                utterance=Utterance(id=i, tokens=tokens),
                annotation=Annotation(intent=intent.strip(), slots=slots),
                split=split,
            )
        )
    return examples


def write_split(examples: Sequence[Example], path: str | Path) -> None:
    """Serialize examples back to the three-file format (round-trip safe)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "seq.in", "w", encoding="utf-8") as f_in, \
         open(root / "seq.out", "w", encoding="utf-8") as f_out, \
         open(root / "label", "w", encoding="utf-8") as f_lab:
        for ex in examples:
            if ex.annotation is None:
                raise ValueError(f"example {ex.id} has no annotation to serialize")
            f_in.write(" ".join(ex.tokens) + "\n")
            f_out.write(" ".join(ex.annotation.slots) + "\n")
            f_lab.write(ex.annotation.intent + "\n")


def build_vocab(examples: Sequence[Example]) -> Vocabulary:
    """Index all words, slot tags and intents in first-occurrence order."""
    if not examples:
        raise ValueError("cannot build a vocabulary from zero examples")

    word_index = {PAD_WORD: 0, UNK_WORD: 1}
    slot_index: dict[str, int] = {}
    intent_index: dict[str, int] = {}
    for ex in examples:
        for tok in ex.tokens:
            if tok not in word_index:
                word_index[tok] = len(word_index)
        if ex.annotation is None:
            continue
        for tag in ex.annotation.slots:
            if tag not in slot_index:
                slot_index[tag] = len(slot_index)
        if ex.annotation.intent not in intent_index:
            intent_index[ex.annotation.intent] = len(intent_index)

    slot_index[BOS_SLOT] = len(slot_index)
    return Vocabulary(word_index=word_index, slot_index=slot_index, intent_index=intent_index)


def split_hash(path: str | Path) -> str:
    """Content hash of a split directory, for run manifests."""
    h = hashlib.sha256()
    root = Path(path)
    for name in SPLIT_FILES:
        h.update((root / name).read_bytes())
    return h.hexdigest()


def write_regime_manifest(
    path: str | Path,
    examples: Sequence[Example],
    labeled_ids: Iterable[int],
    seed: int,
    fraction: float,
) -> None:
    """Dump one JSON record per example: {id, split, labeled, seed, fraction}."""
    labeled = set(labeled_ids)
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            rec = {
                "id": ex.id,
                "split": ex.split,
                "labeled": ex.id in labeled,
                "seed": seed,
                "fraction": fraction,
            }
            f.write(json.dumps(rec) + "\n")

"""Triple files, vocabularies and the filtered-evaluation index.

A dataset directory holds ``train.txt``, ``valid.txt`` and ``test.txt`` with
one ``head<TAB>relation<TAB>tail`` fact per line. Optional
``entities.dict`` / ``relations.dict`` files (``id<TAB>name``) fix the id
assignment; otherwise ids follow first appearance over train, valid, test.
"""
from __future__ import annotations

import os
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import DatasetError, DatasetParseError

SPLITS = ("train", "valid", "test")


def load_tsv(path) -> list[tuple[str, str, str]]:
    """Read raw ``(head, relation, tail)`` name triples in file order."""
    triples = []
    with open(path, "rb") as f:
        for lineno, raw in enumerate(f, start=1):
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise DatasetParseError(path, lineno, f"invalid UTF-8 ({exc.reason})") from None
            line = line[:-1] if line.endswith("\n") else line
            if not line.strip():
                raise DatasetParseError(path, lineno, "blank line")
            fields = line.split("\t")
            if len(fields) != 3 or not all(fields):
                raise DatasetParseError(
                    path, lineno, f"expected 3 tab-separated fields, got {len(fields)}"
                )
            triples.append((fields[0], fields[1], fields[2]))
    return triples


def serialize_tsv(triples) -> str:
    return "".join(f"{h}\t{r}\t{t}\n" for h, r, t in triples)


def write_tsv(path, triples):
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(serialize_tsv(triples))


@dataclass
class Vocab:
    entities: list[str] = field(default_factory=list)
    relations: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.entity_id = {name: i for i, name in enumerate(self.entities)}
        self.relation_id = {name: i for i, name in enumerate(self.relations)}
        if len(self.entity_id) != len(self.entities) or len(self.relation_id) != len(self.relations):
            raise DatasetError("vocabulary contains duplicate names")

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def add_entity(self, name):
        if name not in self.entity_id:
            self.entity_id[name] = len(self.entities)
            self.entities.append(name)
        return self.entity_id[name]

    def add_relation(self, name):
        if name not in self.relation_id:
            self.relation_id[name] = len(self.relations)
            self.relations.append(name)
        return self.relation_id[name]

    def encode(self, triples) -> np.ndarray:
        try:
            rows = [(self.entity_id[h], self.relation_id[r], self.entity_id[t]) for h, r, t in triples]
        except KeyError as exc:
            raise DatasetError(f"name {exc.args[0]!r} is not in the vocabulary") from None
        return np.asarray(rows, dtype=np.int64).reshape(-1, 3)

    def decode(self, ids) -> list[tuple[str, str, str]]:
        return [(self.entities[h], self.relations[r], self.entities[t]) for h, r, t in np.asarray(ids).tolist()]


def build_vocab(train, valid=(), test=()) -> Vocab:
    vocab = Vocab()
    for split in (train, valid, test):
        for h, r, t in split:
            vocab.add_entity(h)
            vocab.add_relation(r)
            vocab.add_entity(t)
    return vocab


def load_dict(path) -> list[str]:
    """Read an ``id<TAB>name`` file into a dense, id-ordered name list."""
    names = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or not parts[0].isdigit():
                raise DatasetParseError(path, lineno, "expected 'id<TAB>name'")
            names[int(parts[0])] = parts[1]
    if sorted(names) != list(range(len(names))):
        raise DatasetError(f"{path}: ids are not dense from 0")
    return [names[i] for i in range(len(names))]


class FilterIndex:
    """Known true tails per ``(h, r)`` and true heads per ``(r, t)``."""

    def __init__(self, *splits):
        tails = defaultdict(set)
        heads = defaultdict(set)
        for split in splits:
            for h, r, t in np.asarray(split, dtype=np.int64).reshape(-1, 3).tolist():
                tails[(h, r)].add(t)
                heads[(r, t)].add(h)
        self._tails = dict(tails)
        self._heads = dict(heads)

    def __contains__(self, triple) -> bool:
        h, r, t = (int(v) for v in triple)
        return t in self._tails.get((h, r), ())

    def __len__(self) -> int:
        return sum(len(v) for v in self._tails.values())

    def tails(self, h: int, r: int) -> set[int]:
        return self._tails.get((int(h), int(r)), set())

    def heads(self, r: int, t: int) -> set[int]:
        return self._heads.get((int(r), int(t)), set())

    def add(self, triple):
        h, r, t = (int(v) for v in triple)
        self._tails.setdefault((h, r), set()).add(t)
        self._heads.setdefault((r, t), set()).add(h)


def build_filter_index(*splits) -> FilterIndex:
    return FilterIndex(*splits)


@dataclass
class Dataset:
    vocab: Vocab
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    name: str = ""

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise DatasetError(f"unknown split {name!r}; choose from {', '.join(SPLITS)}")
        return getattr(self, name)

    def filter_index(self) -> FilterIndex:
        return FilterIndex(self.train, self.valid, self.test)


def load_dataset(directory) -> Dataset:
    """Load a dataset directory, resolving names to dense ids."""
    if not os.path.isdir(directory):
        raise DatasetError(f"dataset directory {directory!r} does not exist")
    raw = {}
    for split in SPLITS:
        path = os.path.join(directory, f"{split}.txt")
        if not os.path.exists(path):
            raise DatasetError(f"missing {path}")
        raw[split] = load_tsv(path)
    ent_dict = os.path.join(directory, "entities.dict")
    rel_dict = os.path.join(directory, "relations.dict")
    vocab = build_vocab(raw["train"], raw["valid"], raw["test"])
    if os.path.exists(ent_dict) or os.path.exists(rel_dict):
        vocab = Vocab(
            load_dict(ent_dict) if os.path.exists(ent_dict) else vocab.entities,
            load_dict(rel_dict) if os.path.exists(rel_dict) else vocab.relations,
        )
    return Dataset(
        vocab,
        *(vocab.encode(raw[s]) for s in SPLITS),
        name=os.path.basename(os.path.normpath(directory)),
    )


def dataset_stats(dataset: Dataset | None = None, **splits) -> dict:
    """Entity, relation and per-split triple counts.

    Entity and relation counts are distinct ids observed in any split (or the
    vocabulary size when a Dataset is given).
    """
    if dataset is not None:
        splits = {s: dataset.split(s) for s in SPLITS}
    arrays = {s: np.asarray(splits.get(s, np.zeros((0, 3))), dtype=np.int64).reshape(-1, 3) for s in SPLITS}
    allt = np.concatenate(list(arrays.values()))
    if dataset is not None:
        n_ent, n_rel = dataset.vocab.n_entities, dataset.vocab.n_relations
    else:
        n_ent = len(np.unique(allt[:, [0, 2]])) if len(allt) else 0
        n_rel = len(np.unique(allt[:, 1])) if len(allt) else 0
    out = {"entities": n_ent, "relations": n_rel}
    out.update({s: len(a) for s, a in arrays.items()})
    return out

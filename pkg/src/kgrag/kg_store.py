"""In-memory triple store with dense integer vocabularies and adjacency indexes.

Triple files are UTF-8 TSV (``head<TAB>relation<TAB>tail``); ``#`` comments and
blank lines are skipped. Alias files are ``surface<TAB>canonical_label``.
A saved store is a directory holding ``triples.tsv``, ``entities.vocab``,
``relations.vocab`` and ``aliases.tsv``; line number in a vocab file is the id.
"""

from __future__ import annotations

import io
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, TextIO

from .errors import IngestError, UnknownIdError

OUTGOING = "out"
INCOMING = "in"
BOTH = "both"


def normalize_label(text: str) -> str:
    """Lowercase, trim and collapse internal whitespace."""
    return " ".join(text.lower().split())


class Triple(NamedTuple):
    head: int
    relation: int
    tail: int


class Neighbor(NamedTuple):
    relation: int
    entity: int
    direction: str


@dataclass
class GraphStats:
    num_entities: int = 0
    num_relations: int = 0
    num_triples: int = 0
    degree_histogram: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "entities": self.num_entities,
            "relations": self.num_relations,
            "triples": self.num_triples,
            "relation_counts": dict(self.degree_histogram),
        }


class _Vocab:
    def __init__(self) -> None:
        self.labels: list[str] = []
        self.index: dict[str, int] = {}

    def add(self, label: str) -> int:
        key = normalize_label(label)
        if not key:
            raise ValueError("empty label")
        idx = self.index.get(key)
        if idx is None:
            idx = len(self.labels)
            self.labels.append(key)
            self.index[key] = idx
        return idx

    def __len__(self) -> int:
        return len(self.labels)


class KnowledgeGraph:
    """Directed multi-relational graph stored as a set of (head, relation, tail) ids.

    Writes happen only through the ingestion methods; once built the store is
    treated as read-only and can be shared between threads.
    """

    def __init__(self) -> None:
        self._entities = _Vocab()
        self._relations = _Vocab()
        self._triples: list[Triple] = []
        self._triple_set: set[Triple] = set()
        self._out: list[list[tuple[int, int]]] = []
        self._in: list[list[tuple[int, int]]] = []
        self._sorted = True
        self.aliases: dict[str, int] = {}

    # -- construction -----------------------------------------------------

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[tuple[str, str, str]],
        entities: Iterable[str] = (),
        relations: Iterable[str] = (),
    ) -> "KnowledgeGraph":
        """Build a store from label triples, pre-registering optional vocabularies."""
        kg = cls()
        for label in entities:
            kg.add_entity(label)
        for label in relations:
            kg.add_relation(label)
        for h, r, t in triples:
            kg.add_triple(h, r, t)
        return kg

    def add_entity(self, label: str) -> int:
        idx = self._entities.add(label)
        while len(self._out) < len(self._entities):
            self._out.append([])
            self._in.append([])
        return idx

    def add_relation(self, label: str) -> int:
        return self._relations.add(label)

    def add_triple(self, head: str, relation: str, tail: str) -> bool:
        """Add a labelled triple; returns False when it was already stored."""
        h = self.add_entity(head)
        r = self.add_relation(relation)
        t = self.add_entity(tail)
        triple = Triple(h, r, t)
        if triple in self._triple_set:
            return False
        self._triples.append(triple)
        self._triple_set.add(triple)
        self._out[h].append((r, t))
        self._in[t].append((r, h))
        self._sorted = False
        return True

    def add_alias(self, surface: str, canonical: str) -> None:
        key = normalize_label(surface)
        if not key:
            raise ValueError("empty alias")
        self.aliases[key] = self.entity_id(canonical)

    def ingest_triples(self, source: TextIO | Iterable[str], alias_source: TextIO | Iterable[str] | None = None) -> GraphStats:
        """Read triples (and optionally aliases) from line streams.

        Raises IngestError carrying the 1-based line number of a malformed line.
        """
        for lineno, fields in _tsv_records(source):
            if len(fields) != 3:
                raise IngestError(f"expected 3 tab-separated fields, got {len(fields)}", lineno)
            if not all(normalize_label(f) for f in fields):
                raise IngestError("empty field", lineno)
            self.add_triple(*fields)
        if alias_source is not None:
            self.ingest_aliases(alias_source)
        return self.graph_stats()

    def ingest_aliases(self, source: TextIO | Iterable[str]) -> None:
        for lineno, fields in _tsv_records(source):
            if len(fields) != 2:
                raise IngestError(f"expected 2 tab-separated fields, got {len(fields)}", lineno)
            if not normalize_label(fields[0]):
                raise IngestError("empty alias", lineno)
            try:
                self.add_alias(fields[0], fields[1])
            except UnknownIdError as exc:
                raise IngestError(f"alias target {fields[1]!r} is not an entity", lineno) from exc

    # -- lookups ----------------------------------------------------------

    @property
    def num_entities(self) -> int:
        return len(self._entities)

    @property
    def num_relations(self) -> int:
        return len(self._relations)

    @property
    def triples(self) -> list[Triple]:
        return list(self._triples)

    def __len__(self) -> int:
        return len(self._triples)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self._triples)

    @property
    def entity_labels(self) -> list[str]:
        return list(self._entities.labels)

    @property
    def relation_labels(self) -> list[str]:
        return list(self._relations.labels)

    def entity_label(self, e: int) -> str:
        self._check_entity(e)
        return self._entities.labels[e]

    def relation_label(self, r: int) -> str:
        self._check_relation(r)
        return self._relations.labels[r]

    def entity_id(self, label: str) -> int:
        key = normalize_label(label)
        idx = self._entities.index.get(key)
        if idx is None:
            idx = self.aliases.get(key)
        if idx is None:
            raise UnknownIdError(f"unknown entity {label!r}")
        return idx

    def relation_id(self, label: str) -> int:
        idx = self._relations.index.get(normalize_label(label))
        if idx is None:
            raise UnknownIdError(f"unknown relation {label!r}")
        return idx

    def encode(self, head: str, relation: str, tail: str) -> Triple:
        return Triple(self.entity_id(head), self.relation_id(relation), self.entity_id(tail))

    def decode(self, triple: Triple) -> tuple[str, str, str]:
        h, r, t = triple
        return self.entity_label(h), self.relation_label(r), self.entity_label(t)

    def contains_triple(self, h: int, r: int, t: int) -> bool:
        self._check_entity(h)
        self._check_relation(r)
        self._check_entity(t)
        return Triple(h, r, t) in self._triple_set

    def __contains__(self, triple: object) -> bool:
        return triple in self._triple_set

    def neighbors(self, e: int, direction: str = BOTH) -> list[Neighbor]:
        """Adjacent (relation, entity, direction) items ordered by relation id, then entity id."""
        self._check_entity(e)
        if direction not in (OUTGOING, INCOMING, BOTH):
            raise ValueError(f"direction must be one of out/in/both, got {direction!r}")
        self._ensure_sorted()
        items: list[Neighbor] = []
        if direction in (OUTGOING, BOTH):
            items.extend(Neighbor(r, t, OUTGOING) for r, t in self._out[e])
        if direction in (INCOMING, BOTH):
            items.extend(Neighbor(r, h, INCOMING) for r, h in self._in[e])
        if direction == BOTH:
            items.sort(key=lambda n: (n.relation, n.entity, n.direction != OUTGOING))
        return items

    def degree(self, e: int) -> int:
        """Number of incident triples, self-loops excluded."""
        return sum(1 for n in self.neighbors(e, BOTH) if n.entity != e)

    def graph_stats(self) -> GraphStats:
        counts = Counter(self._relations.labels[t.relation] for t in self._triples)
        return GraphStats(
            num_entities=self.num_entities,
            num_relations=self.num_relations,
            num_triples=len(self._triples),
            degree_histogram={label: counts.get(label, 0) for label in self._relations.labels},
        )

    def _ensure_sorted(self) -> None:
        if not self._sorted:
            for adj in self._out:
                adj.sort()
            for adj in self._in:
                adj.sort()
            self._sorted = True

    def _check_entity(self, e: int) -> None:
        if not isinstance(e, (int,)) and not hasattr(e, "__index__"):
            raise UnknownIdError(f"entity id must be an integer, got {e!r}")
        if not 0 <= int(e) < len(self._entities):
            raise UnknownIdError(f"entity id {e} out of range [0, {len(self._entities)})")

    def _check_relation(self, r: int) -> None:
        if not isinstance(r, (int,)) and not hasattr(r, "__index__"):
            raise UnknownIdError(f"relation id must be an integer, got {r!r}")
        if not 0 <= int(r) < len(self._relations):
            raise UnknownIdError(f"relation id {r} out of range [0, {len(self._relations)})")

    # -- persistence ------------------------------------------------------

    def save(self, path: str | Path) -> None:
        out = Path(path)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "triples.tsv", "w", encoding="utf-8") as f:
            for triple in self._triples:
                f.write("\t".join(self.decode(triple)) + "\n")
        (out / "entities.vocab").write_text("".join(f"{x}\n" for x in self._entities.labels), encoding="utf-8")
        (out / "relations.vocab").write_text("".join(f"{x}\n" for x in self._relations.labels), encoding="utf-8")
        with open(out / "aliases.tsv", "w", encoding="utf-8") as f:
            for alias, idx in sorted(self.aliases.items()):
                f.write(f"{alias}\t{self._entities.labels[idx]}\n")

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeGraph":
        src = Path(path)
        if not src.is_dir():
            raise FileNotFoundError(f"store directory not found: {src}")
        kg = cls()
        for name, add in (("entities.vocab", kg.add_entity), ("relations.vocab", kg.add_relation)):
            with open(src / name, encoding="utf-8") as f:
                for line in f:
                    add(line.rstrip("\n"))
        with open(src / "triples.tsv", encoding="utf-8") as f:
            kg.ingest_triples(f)
        aliases = src / "aliases.tsv"
        if aliases.exists():
            with open(aliases, encoding="utf-8") as f:
                kg.ingest_aliases(f)
        return kg


def _tsv_records(source: TextIO | Iterable[str] | str) -> Iterator[tuple[int, list[str]]]:
    if isinstance(source, str):
        source = io.StringIO(source)
    for lineno, raw in enumerate(source, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        yield lineno, line.split("\t")


def load_store(triples_path: str | Path, aliases_path: str | Path | None = None) -> KnowledgeGraph:
    """Ingest a triple TSV (plus optional alias TSV) from disk."""
    kg = KnowledgeGraph()
    with open(triples_path, encoding="utf-8") as f:
        if aliases_path is None:
            kg.ingest_triples(f)
        else:
            with open(aliases_path, encoding="utf-8") as a:
                kg.ingest_triples(f, a)
    return kg


def read_label_triples(path: str | Path) -> list[tuple[str, str, str]]:
    out = []
    with open(path, encoding="utf-8") as f:
        for lineno, fields in _tsv_records(f):
            if len(fields) != 3:
                raise IngestError(f"expected 3 tab-separated fields, got {len(fields)}", lineno)
            out.append((fields[0], fields[1], fields[2]))
    return out


def desk_kg_path() -> Path:
    return Path(__file__).parent / "data" / "desk_kg.tsv"


def desk_aliases_path() -> Path:
    return Path(__file__).parent / "data" / "desk_aliases.tsv"


def load_desk_kg() -> KnowledgeGraph:
    """The bundled 20-triple tobacco pest/disease graph."""
    return load_store(desk_kg_path(), desk_aliases_path())

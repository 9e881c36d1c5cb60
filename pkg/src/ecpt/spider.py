"""Loaders for Spider-format datasets: schema catalog, question files, and
SQLite database locations, with subset selection and exclusion lists."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .cases import SchemaDescription
from .errors import DataError


def normalize_question(text: str) -> str:
    return " ".join(text.split())


def question_hash(text: str) -> str:
    """64-bit stable hash of the normalized question, as 16 hex digits."""
    digest = hashlib.blake2b(normalize_question(text).encode("utf-8"), digest_size=8)
    return digest.hexdigest()


@dataclass(frozen=True)
class DatasetItem:
    db_id: str
    question: str
    ground_truth_sql: str

    @property
    def ref(self) -> str:
        return f"{self.db_id}:{question_hash(self.question)}"


@dataclass(frozen=True)
class ExclusionList:
    """Items excluded from evaluation, keyed by (db_id, question hash)."""

    entries: frozenset[tuple[str, str]] = frozenset()

    def excludes(self, db_id: str, question: str) -> bool:
        return (db_id, question_hash(question)) in self.entries

    @classmethod
    def from_file(cls, path: str | Path) -> "ExclusionList":
        path = Path(path)
        if not path.exists():
            raise DataError(f"exclusion list not found: {path}")
        entries = set()
        for number, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DataError(f"{path}:{number}: expected 'db_id<TAB>hash'")
            entries.add((parts[0], parts[1]))
        return cls(entries=frozenset(entries))

    def to_file(self, path: str | Path) -> None:
        lines = sorted(f"{db_id}\t{qhash}" for db_id, qhash in self.entries)
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def load_schemas(path: str | Path) -> dict[str, SchemaDescription]:
    """Load a Spider tables catalog into SchemaDescriptions keyed by db_id.

    Foreign keys arrive as column-index pairs and are resolved to named
    "table.column" references; a dangling index is a DataError.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"schema catalog not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"schema catalog {path} is not valid JSON: {exc}") from exc
    schemas: dict[str, SchemaDescription] = {}
    for entry in raw:
        db_id = entry["db_id"]
        table_names = entry["table_names_original"]
        column_names = entry["column_names_original"]
        column_types = entry["column_types"]

        def resolve(index: int, what: str) -> str:
            if index <= 0 or index >= len(column_names):
                raise DataError(f"{db_id}: dangling column index {index} in {what}")
            table_index, column = column_names[index]
            return f"{table_names[table_index]}.{column}"

        columns_by_table: dict[int, list[tuple[str, str]]] = {
            i: [] for i in range(len(table_names))
        }
        for column_index, (table_index, column) in enumerate(column_names):
            if table_index < 0:
                continue  # the synthetic "*" column
            ctype = column_types[column_index].strip().lower()
            columns_by_table[table_index].append((column, ctype))
        tables = tuple(
            (name, tuple(columns_by_table[i])) for i, name in enumerate(table_names)
        )
        primary_keys = tuple(
            resolve(i, "primary_keys") for i in entry.get("primary_keys", ())
        )
        foreign_keys = tuple(
            (resolve(src, "foreign_keys"), resolve(dst, "foreign_keys"))
            for src, dst in entry.get("foreign_keys", ())
        )
        try:
            schemas[db_id] = SchemaDescription(
                db_id=db_id,
                tables=tables,
                primary_keys=primary_keys,
                foreign_keys=foreign_keys,
            )
        except ValueError as exc:
            raise DataError(f"invalid schema for {db_id}: {exc}") from exc
    return schemas


def load_items(
    path: str | Path,
    schemas: Mapping[str, SchemaDescription],
    exclusions: ExclusionList | None = None,
    subset: Sequence[str] | None = None,
) -> list[DatasetItem]:
    """Load question/query pairs in stable file order, filtered by subset and exclusions."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"question file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"question file {path} is not valid JSON: {exc}") from exc
    exclusions = exclusions or ExclusionList()
    wanted = set(subset) if subset is not None else None
    items = []
    for entry in raw:
        db_id = entry["db_id"]
        if db_id not in schemas:
            raise DataError(f"question references unknown db_id {db_id!r}")
        if wanted is not None and db_id not in wanted:
            continue
        question = entry["question"]
        if exclusions.excludes(db_id, question):
            continue
        items.append(
            DatasetItem(db_id=db_id, question=question, ground_truth_sql=entry["query"])
        )
    return items


def database_path(root: str | Path, db_id: str) -> Path:
    return Path(root) / "database" / db_id / f"{db_id}.sqlite"


def database_paths(root: str | Path, db_ids: Iterable[str]) -> dict[str, Path]:
    return {db_id: database_path(root, db_id) for db_id in db_ids}

"""Read-only SQL execution against SQLite databases, result-set comparison,
and classification of generated queries against ground truth."""

from __future__ import annotations

import math
import sqlite3
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .cases import ExecutionOutcome, OutcomeKind
from .errors import DataError

DEFAULT_TIMEOUT_MS = 30_000
DEFAULT_ROW_CAP = 50_000

# progress-handler callback granularity, in VM instructions
_PROGRESS_STEP = 10_000


class SqlExecutionError(Exception):
    """Execution failed; message is the database error text, verbatim."""


class SqlTimeout(SqlExecutionError):
    pass


class UnknownDatabase(DataError):
    pass


@dataclass(frozen=True)
class ResultTable:
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", tuple(tuple(row) for row in self.rows))
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(
                    f"row width {len(row)} does not match {len(self.columns)} columns"
                )


@dataclass(frozen=True)
class ExecutionResult:
    table: ResultTable | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass(frozen=True)
class ComparisonPolicy:
    order_sensitive: bool = False
    multiset: bool = True
    float_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.float_tolerance <= 0:
            raise ValueError("float_tolerance must be positive")


class SqlRunner:
    """Executes SQL read-only against registered SQLite files.

    Connections are opened per call, so concurrent execution across cases is
    safe without sharing.
    """

    def __init__(
        self,
        databases: Mapping[str, str | Path],
        timeout_ms: int = DEFAULT_TIMEOUT_MS,
        row_cap: int = DEFAULT_ROW_CAP,
    ):
        self._databases = {db_id: Path(p) for db_id, p in databases.items()}
        self._timeout_ms = timeout_ms
        self._row_cap = row_cap

    @property
    def databases(self) -> Mapping[str, Path]:
        return dict(self._databases)

    def execute(self, db_id: str, sql: str, timeout_ms: int | None = None) -> ResultTable:
        """Run SQL read-only; raises SqlExecutionError / SqlTimeout / UnknownDatabase."""
        if db_id not in self._databases:
            raise UnknownDatabase(f"unknown db_id {db_id!r}")
        path = self._databases[db_id]
        if not path.exists():
            raise UnknownDatabase(f"database file missing for {db_id!r}: {path}")
        timeout_ms = self._timeout_ms if timeout_ms is None else timeout_ms
        deadline = time.monotonic() + timeout_ms / 1000.0
        connection = sqlite3.connect(f"file:{path}?mode=ro", uri=True)
        try:
            connection.set_progress_handler(
                lambda: 1 if time.monotonic() > deadline else 0, _PROGRESS_STEP
            )
            try:
                cursor = connection.execute(sql)
                rows = cursor.fetchmany(self._row_cap)
                columns = (
                    tuple(d[0] for d in cursor.description) if cursor.description else ()
                )
            except sqlite3.Error as exc:
                if time.monotonic() > deadline:
                    raise SqlTimeout(f"query timed out after {timeout_ms} ms") from exc
                raise SqlExecutionError(str(exc)) from exc
        finally:
            connection.close()
        return ResultTable(columns=columns, rows=tuple(tuple(r) for r in rows))

    def try_execute(
        self, db_id: str, sql: str, timeout_ms: int | None = None
    ) -> ExecutionResult:
        try:
            return ExecutionResult(table=self.execute(db_id, sql, timeout_ms))
        except SqlExecutionError as exc:
            return ExecutionResult(error=str(exc))


def detect_order_by(sql: str) -> bool:
    """True iff ORDER BY appears at the top level of the statement, ignoring
    string literals, quoted identifiers, comments, and parenthesized subqueries."""
    tokens = _top_level_words(sql)
    return any(a == "order" and b == "by" for a, b in zip(tokens, tokens[1:]))


def _top_level_words(sql: str) -> list[str]:
    words: list[str] = []
    depth = 0
    i = 0
    n = len(sql)
    while i < n:
        c = sql[i]
        if c == "'" or c == '"' or c == "`":
            i = _skip_quoted(sql, i, c)
        elif c == "[":
            end = sql.find("]", i + 1)
            i = n if end == -1 else end + 1
        elif sql.startswith("--", i):
            end = sql.find("\n", i)
            i = n if end == -1 else end + 1
        elif sql.startswith("/*", i):
            end = sql.find("*/", i + 2)
            i = n if end == -1 else end + 2
        elif c == "(":
            depth += 1
            i += 1
        elif c == ")":
            depth = max(0, depth - 1)
            i += 1
        elif depth == 0 and (c.isalpha() or c == "_"):
            start = i
            while i < n and (sql[i].isalnum() or sql[i] == "_"):
                i += 1
            words.append(sql[start:i].lower())
        else:
            i += 1
    return words


def _skip_quoted(sql: str, start: int, quote: str) -> int:
    # doubled quote chars escape themselves inside SQL literals/identifiers
    i = start + 1
    n = len(sql)
    while i < n:
        if sql[i] == quote:
            if i + 1 < n and sql[i + 1] == quote:
                i += 2
                continue
            return i + 1
        i += 1
    return n


def compare(generated: ResultTable, truth: ResultTable, policy: ComparisonPolicy) -> bool:
    """Multiset (or sequence, when order-sensitive) equality of row tuples.

    Column names are ignored; column counts must match; numeric values compare
    with relative tolerance; NULL equals NULL only.
    """
    if len(generated.columns) != len(truth.columns):
        return False
    if len(generated.rows) != len(truth.rows):
        return False
    if policy.order_sensitive:
        lhs, rhs = generated.rows, truth.rows
    else:
        lhs = sorted(generated.rows, key=_row_sort_key)
        rhs = sorted(truth.rows, key=_row_sort_key)
    return all(
        _rows_equal(a, b, policy.float_tolerance) for a, b in zip(lhs, rhs)
    )


def _row_sort_key(row: tuple) -> tuple:
    return tuple(_value_sort_key(v) for v in row)


def _value_sort_key(value: object) -> tuple:
    if value is None:
        return (0, "")
    if isinstance(value, bool):
        return (1, f"{float(value):.9e}")
    if isinstance(value, (int, float)):
        # canonicalized so near-equal floats sort adjacently
        return (1, f"{float(value):.9e}")
    if isinstance(value, bytes):
        return (3, value.hex())
    return (2, str(value))


def _rows_equal(a: tuple, b: tuple, tolerance: float) -> bool:
    return len(a) == len(b) and all(
        _values_equal(x, y, tolerance) for x, y in zip(a, b)
    )


def _values_equal(a: object, b: object, tolerance: float) -> bool:
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, (int, float)) and isinstance(b, (int, float)):
        return math.isclose(a, b, rel_tol=tolerance, abs_tol=1e-9)
    return a == b


def classify_outcome(
    generated: ExecutionResult, truth: ResultTable, policy: ComparisonPolicy
) -> ExecutionOutcome:
    """Map a generated query's execution against ground truth onto an outcome kind."""
    if generated.error is not None:
        return ExecutionOutcome(OutcomeKind.EXECUTION_ERROR, generated.error)
    assert generated.table is not None
    if compare(generated.table, truth, policy):
        return ExecutionOutcome(OutcomeKind.SUCCESS)
    if not generated.table.rows and truth.rows:
        return ExecutionOutcome(
            OutcomeKind.EMPTY_TABLE,
            f"query returned no rows; expected {len(truth.rows)}",
        )
    return ExecutionOutcome(
        OutcomeKind.UNDESIRED_RESULT,
        "result mismatch: got {}x{}, expected {}x{}".format(
            len(generated.table.rows),
            len(generated.table.columns),
            len(truth.rows),
            len(truth.columns),
        ),
    )

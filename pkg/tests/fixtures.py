"""Shared test fixtures: a two-database Spider-format dataset, labeled
correction cases, and the scripted mock backend driving the end-to-end runs."""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass
from pathlib import Path

from ecpt.cases import (
    Case,
    CorrectionCase,
    ExecutionOutcome,
    OutcomeKind,
    SchemaDescription,
)

CONCERT_DB = "concert_hall"
PET_DB = "pet_clinic"


@dataclass(frozen=True)
class ScriptedItem:
    """One dataset item plus the canned behavior of the mock backend for it."""

    db_id: str
    question: str
    ground_truth_sql: str
    zero_shot_sql: str  # what the mock answers to the zero-shot prompt
    treatment_sqls: tuple[str, ...] = ()  # per-trial treatment answers; last repeats

    @property
    def zero_shot_succeeds(self) -> bool:
        return self.zero_shot_sql == self.ground_truth_sql or not self.treatment_sqls


SCRIPTED_ITEMS: tuple[ScriptedItem, ...] = (
    # zero-shot successes
    ScriptedItem(
        CONCERT_DB,
        "How many singers do we have?",
        "SELECT count(*) FROM singer",
        "SELECT count(*) FROM singer",
    ),
    ScriptedItem(
        CONCERT_DB,
        "Show name and age for every singer.",
        "SELECT name, age FROM singer",
        # same rows in a different order; truth has no ORDER BY, so this passes
        "SELECT name, age FROM singer ORDER BY age DESC",
    ),
    ScriptedItem(
        CONCERT_DB,
        "What are the names of all stadiums?",
        "SELECT name FROM stadium",
        "SELECT name FROM stadium",
    ),
    ScriptedItem(
        CONCERT_DB,
        "What is the maximum capacity of any stadium?",
        "SELECT max(capacity) FROM stadium",
        "SELECT max(capacity) FROM stadium",
    ),
    ScriptedItem(
        CONCERT_DB,
        "List singer names from France.",
        "SELECT name FROM singer WHERE country = 'France'",
        "SELECT name FROM singer WHERE country = 'France'",
    ),
    ScriptedItem(
        CONCERT_DB,
        "What is the average age of all singers?",
        "SELECT avg(age) FROM singer",
        "SELECT avg(age) FROM singer",
    ),
    ScriptedItem(
        CONCERT_DB,
        "Show concert years in increasing order.",
        "SELECT year FROM concert ORDER BY year",
        "SELECT year FROM concert ORDER BY year",
    ),
    ScriptedItem(
        CONCERT_DB,
        "Which singers are older than 40? Show their names.",
        "SELECT name FROM singer WHERE age > 40",
        "SELECT name FROM singer WHERE age > 40",
    ),
    ScriptedItem(
        CONCERT_DB,
        "How many concerts happened in 2015?",
        "SELECT count(*) FROM concert WHERE year = 2015",
        "SELECT count(*) FROM concert WHERE year = 2015",
    ),
    ScriptedItem(
        CONCERT_DB,
        "Show each singer name with the year of their concerts.",
        "SELECT T1.name, T2.year FROM singer AS T1 JOIN concert AS T2 "
        "ON T1.singer_id = T2.singer_id",
        "SELECT T1.name, T2.year FROM singer AS T1 JOIN concert AS T2 "
        "ON T1.singer_id = T2.singer_id",
    ),
    ScriptedItem(
        PET_DB,
        "How many students are there?",
        "SELECT count(*) FROM student",
        "SELECT count(*) FROM student",
    ),
    ScriptedItem(
        PET_DB,
        "What are all the different majors?",
        "SELECT DISTINCT major FROM student",
        "SELECT DISTINCT major FROM student",
    ),
    # failures fixed on trial 1
    ScriptedItem(
        PET_DB,
        "What are all the different food allergies?",
        "SELECT allergy FROM allergy_type WHERE allergytype = 'food'",
        'SELECT allergy FROM allergy_type WHERE allergytype = "Food"',
        treatment_sqls=("SELECT allergy FROM allergy_type WHERE allergytype = 'food'",),
    ),
    ScriptedItem(
        CONCERT_DB,
        "How many distinct countries do singers come from?",
        "SELECT count(DISTINCT country) FROM singer",
        "SELECT count(country) FROM singer",
        treatment_sqls=("SELECT count(DISTINCT country) FROM singer",),
    ),
    ScriptedItem(
        CONCERT_DB,
        "Show the name of the youngest singer.",
        "SELECT name FROM singer ORDER BY age LIMIT 1",
        "SELECT name FROM singer ORDER BY age DESC LIMIT 1",
        treatment_sqls=("SELECT name FROM singer ORDER BY age LIMIT 1",),
    ),
    # fixed on trial 2
    ScriptedItem(
        CONCERT_DB,
        "How many concerts were held in each stadium? Show the stadium name and the count.",
        "SELECT T1.name, count(*) FROM stadium AS T1 JOIN concert AS T2 "
        "ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
        "SELECT name, count(*) FROM stadium",
        treatment_sqls=(
            "SELECT T1.name, count(*) FROM stadium AS T1 JOIN concert AS T2 "
            "ON T1.stadium_id = T2.stadium_id",
            "SELECT T1.name, count(*) FROM stadium AS T1 JOIN concert AS T2 "
            "ON T1.stadium_id = T2.stadium_id GROUP BY T1.stadium_id",
        ),
    ),
    # fixed on trial 3
    ScriptedItem(
        PET_DB,
        "List the names of students who have a food allergy.",
        "SELECT DISTINCT T1.name FROM student AS T1 JOIN has_allergy AS T2 "
        "ON T1.student_id = T2.student_id JOIN allergy_type AS T3 "
        "ON T2.allergy = T3.allergy WHERE T3.allergytype = 'food'",
        "SELECT name FROM student WHERE major = 'food'",
        treatment_sqls=(
            "SELECT T1.name FROM student AS T1 JOIN has_allergy AS T2 "
            "ON T1.student_id = T2.student_id",
            "SELECT DISTINCT T1.name FROM student AS T1 JOIN has_allergy AS T2 "
            "ON T1.student_id = T2.student_id JOIN allergy_type AS T3 "
            "ON T2.allergy = T3.allergy WHERE T3.allergytype = 'Food'",
            "SELECT DISTINCT T1.name FROM student AS T1 JOIN has_allergy AS T2 "
            "ON T1.student_id = T2.student_id JOIN allergy_type AS T3 "
            "ON T2.allergy = T3.allergy WHERE T3.allergytype = 'food'",
        ),
    ),
    # never fixed
    ScriptedItem(
        CONCERT_DB,
        "Show the total attendance across all concerts.",
        "SELECT sum(attendance) FROM concert",
        "SELECT attendanc FROM concert",
        treatment_sqls=("SELECT attendance FROM concert",),
    ),
    ScriptedItem(
        PET_DB,
        "How many students have each major? List the major and the number of students.",
        "SELECT major, count(*) FROM student GROUP BY major",
        "SELECT major, count(*) FROM student",
        treatment_sqls=("SELECT major FROM student GROUP BY major",),
    ),
    ScriptedItem(
        CONCERT_DB,
        "What is the name of the stadium that hosted the most concerts?",
        "SELECT T1.name FROM stadium AS T1 JOIN concert AS T2 "
        "ON T1.stadium_id = T2.stadium_id GROUP BY T2.stadium_id "
        "ORDER BY count(*) DESC LIMIT 1",
        "SELECT names FROM stadium",
        treatment_sqls=("SELECT name FROM stadium",),
    ),
)

# schedule facts asserted by the end-to-end tests
EXPECTED_ZERO_SHOT_SUCCESSES = 12
EXPECTED_ERROR_CASES = 8
EXPECTED_FIXED_CASES = 5
EXPECTED_TOTAL_TRIALS = 17


def _concert_tables_entry() -> dict:
    return {
        "db_id": CONCERT_DB,
        "table_names_original": ["singer", "stadium", "concert"],
        "column_names_original": [
            [-1, "*"],
            [0, "singer_id"],
            [0, "name"],
            [0, "country"],
            [0, "age"],
            [1, "stadium_id"],
            [1, "name"],
            [1, "capacity"],
            [2, "concert_id"],
            [2, "singer_id"],
            [2, "stadium_id"],
            [2, "year"],
            [2, "attendance"],
        ],
        "column_types": [
            "text",
            "number",
            "text",
            "text",
            "number",
            "number",
            "text",
            "number",
            "number",
            "number",
            "number",
            "number",
            "number",
        ],
        "primary_keys": [1, 5, 8],
        "foreign_keys": [[9, 1], [10, 5]],
    }


def _pet_tables_entry() -> dict:
    return {
        "db_id": PET_DB,
        "table_names_original": ["allergy_type", "has_allergy", "student"],
        "column_names_original": [
            [-1, "*"],
            [0, "allergy"],
            [0, "allergytype"],
            [1, "student_id"],
            [1, "allergy"],
            [2, "student_id"],
            [2, "name"],
            [2, "major"],
            [2, "age"],
        ],
        "column_types": [
            "text",
            "text",
            "text",
            "number",
            "text",
            "number",
            "text",
            "text",
            "number",
        ],
        "primary_keys": [1, 5],
        "foreign_keys": [[4, 1], [3, 5]],
    }


def _create_concert_db(path: Path) -> None:
    connection = sqlite3.connect(path)
    connection.executescript(
        """
        CREATE TABLE singer (singer_id INTEGER PRIMARY KEY, name TEXT, country TEXT, age INTEGER);
        CREATE TABLE stadium (stadium_id INTEGER PRIMARY KEY, name TEXT, capacity INTEGER);
        CREATE TABLE concert (
            concert_id INTEGER PRIMARY KEY,
            singer_id INTEGER REFERENCES singer(singer_id),
            stadium_id INTEGER REFERENCES stadium(stadium_id),
            year INTEGER,
            attendance INTEGER
        );
        INSERT INTO singer VALUES
            (1, 'Joe Sharp', 'Netherlands', 52),
            (2, 'Timbaland', 'United States', 32),
            (3, 'Justin Brown', 'France', 29),
            (4, 'Rose White', 'France', 41),
            (5, 'John Nizinik', 'France', 43);
        INSERT INTO stadium VALUES
            (1, 'Stark Arena', 18000),
            (2, 'Balmoor', 3960),
            (3, 'Somerset Park', 11998);
        INSERT INTO concert VALUES
            (1, 1, 1, 2014, 10584),
            (2, 2, 1, 2015, 9367),
            (3, 2, 2, 2015, 8043),
            (4, 3, 2, 2014, 3874),
            (5, 4, 3, 2015, 11301),
            (6, 5, 1, 2016, 10000);
        """
    )
    connection.commit()
    connection.close()


def _create_pet_db(path: Path) -> None:
    connection = sqlite3.connect(path)
    connection.executescript(
        """
        CREATE TABLE allergy_type (allergy TEXT PRIMARY KEY, allergytype TEXT);
        CREATE TABLE has_allergy (
            student_id INTEGER REFERENCES student(student_id),
            allergy TEXT REFERENCES allergy_type(allergy)
        );
        CREATE TABLE student (student_id INTEGER PRIMARY KEY, name TEXT, major TEXT, age INTEGER);
        INSERT INTO allergy_type VALUES
            ('Eggs', 'food'),
            ('Nuts', 'food'),
            ('Milk', 'food'),
            ('Cat', 'animal'),
            ('Dog', 'animal'),
            ('Pollen', 'environmental');
        INSERT INTO has_allergy VALUES (1, 'Eggs'), (1, 'Cat'), (2, 'Nuts'), (3, 'Pollen'), (4, 'Milk'), (5, 'Nuts');
        INSERT INTO student VALUES
            (1, 'Ann', 'CS', 20),
            (2, 'Bob', 'CS', 21),
            (3, 'Cal', 'Math', 22),
            (4, 'Dee', 'Math', 20),
            (5, 'Eli', 'Physics', 23);
        """
    )
    connection.commit()
    connection.close()


def build_spider_fixture(root: Path) -> Path:
    """Create tables.json, dev.json, and database files under `root`."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "tables.json").write_text(
        json.dumps([_concert_tables_entry(), _pet_tables_entry()], indent=1),
        encoding="utf-8",
    )
    questions = [
        {"db_id": item.db_id, "question": item.question, "query": item.ground_truth_sql}
        for item in SCRIPTED_ITEMS
    ]
    (root / "dev.json").write_text(json.dumps(questions, indent=1), encoding="utf-8")
    for db_id, creator in ((CONCERT_DB, _create_concert_db), (PET_DB, _create_pet_db)):
        db_dir = root / "database" / db_id
        db_dir.mkdir(parents=True, exist_ok=True)
        db_path = db_dir / f"{db_id}.sqlite"
        if not db_path.exists():
            creator(db_path)
    return root


def mock_script_rules() -> list[dict]:
    """Mock-backend rules reproducing the scripted schedule, keyed per question."""
    rules: list[dict] = []
    for item in SCRIPTED_ITEMS:
        rules.append(
            {
                "contains": ["Write one SQLite query", item.question],
                "response": item.zero_shot_sql,
            }
        )
        if not item.treatment_sqls:
            continue
        rules.append(
            {
                "contains": ["classify the mistake", item.question],
                "response": "e3, e5",
            }
        )
        rules.append(
            {
                "contains": ["explain why the query failed", item.question],
                "response": (
                    "REASON: The query does not match the intent of the question.\n"
                    "INSTRUCTION: Rewrite the query so it returns the requested values."
                ),
            }
        )
        for sql in item.treatment_sqls[:-1]:
            rules.append(
                {
                    "contains": ["Fix the SQL query below", item.question],
                    "response": sql,
                    "max_uses": 1,
                }
            )
        rules.append(
            {
                "contains": ["Fix the SQL query below", item.question],
                "response": item.treatment_sqls[-1],
            }
        )
    return rules


def write_mock_script(path: Path) -> Path:
    path.write_text(json.dumps({"rules": mock_script_rules()}, indent=1), encoding="utf-8")
    return path


def make_training_cases(schemas: dict[str, SchemaDescription]) -> list[CorrectionCase]:
    """Correction cases with at least two per label, enough for triplet training."""
    cases = []
    for cc in make_correction_cases(schemas):
        cases.append(cc)
        reworded = Case(
            schema=cc.case.schema,
            question="Rephrased: " + cc.case.question,
            generated_sql=cc.case.generated_sql,
            outcome=cc.case.outcome,
        )
        cases.append(
            CorrectionCase(
                case=reworded,
                error_types=cc.error_types,
                ground_truth_sql=cc.ground_truth_sql,
                reason=cc.reason,
                instruction=cc.instruction,
            )
        )
    return cases


def make_correction_cases(
    schemas: dict[str, SchemaDescription]
) -> list[CorrectionCase]:
    """Small labeled knowledge base spanning several error types."""
    concert = schemas[CONCERT_DB]
    pet = schemas[PET_DB]

    def case(schema, question, sql, kind, detail=""):
        return Case(
            schema=schema,
            question=question,
            generated_sql=sql,
            outcome=ExecutionOutcome(OutcomeKind(kind), detail),
        )

    return [
        CorrectionCase(
            case=case(
                pet,
                "Which allergies are of type food?",
                "SELECT allergy FROM allergy_type WHERE allergytype = 'Food'",
                "empty_table",
            ),
            error_types=("e3",),
            ground_truth_sql="SELECT allergy FROM allergy_type WHERE allergytype = 'food'",
            reason="The WHERE clause compares against 'Food' but the stored values are lowercase.",
            instruction="Match the literal value exactly as stored: use 'food'.",
        ),
        CorrectionCase(
            case=case(
                concert,
                "How many different countries are represented by singers?",
                "SELECT count(country) FROM singer",
                "undesired_result",
            ),
            error_types=("e1",),
            ground_truth_sql="SELECT count(DISTINCT country) FROM singer",
            reason="Counting all rows includes duplicate countries.",
            instruction="Apply DISTINCT inside the count.",
        ),
        CorrectionCase(
            case=case(
                concert,
                "Show stadium names from largest to smallest capacity.",
                "SELECT name FROM stadium ORDER BY capacity",
                "undesired_result",
            ),
            error_types=("e2",),
            ground_truth_sql="SELECT name FROM stadium ORDER BY capacity DESC",
            reason="The ordering direction is ascending but the question asks for descending.",
            instruction="Add DESC to the ORDER BY clause.",
        ),
        CorrectionCase(
            case=case(
                concert,
                "How many concerts per year?",
                "SELECT year, count(*) FROM concert",
                "undesired_result",
            ),
            error_types=("e12",),
            ground_truth_sql="SELECT year, count(*) FROM concert GROUP BY year",
            reason="Aggregation without GROUP BY collapses everything into one row.",
            instruction="Group rows by year before counting.",
        ),
        CorrectionCase(
            case=case(
                concert,
                "List singer names with the stadium of their concerts.",
                "SELECT name FROM singer, stadium",
                "undesired_result",
            ),
            error_types=("e8", "e9"),
            ground_truth_sql=(
                "SELECT T1.name, T3.name FROM singer AS T1 JOIN concert AS T2 "
                "ON T1.singer_id = T2.singer_id JOIN stadium AS T3 "
                "ON T2.stadium_id = T3.stadium_id"
            ),
            reason="A cross product of singer and stadium does not connect through concerts.",
            instruction="Join singer to concert and concert to stadium on their key columns.",
        ),
        CorrectionCase(
            case=case(
                pet,
                "Names of students older than 21.",
                "SELECT name FROM student WHERE age < 21 AND age > 23",
                "empty_table",
            ),
            error_types=("e5",),
            ground_truth_sql="SELECT name FROM student WHERE age > 21",
            reason="The contradictory condition can never hold.",
            instruction="Keep a single age predicate greater than 21.",
        ),
        CorrectionCase(
            case=case(
                pet,
                "How many allergy kinds exist?",
                "SELECT count(*) FROM allergy_kinds",
                "execution_error",
                "no such table: allergy_kinds",
            ),
            error_types=("e10",),
            ground_truth_sql="SELECT count(DISTINCT allergytype) FROM allergy_type",
            reason="The query references a table that does not exist.",
            instruction="Use the allergy_type table and count distinct allergytype values.",
        ),
        CorrectionCase(
            case=case(
                concert,
                "How many stadiums are there?",
                "SELECT count(*) FROM stadium",
                "success",
            ),
            error_types=("success",),
            ground_truth_sql="SELECT count(*) FROM stadium",
            reason="The query matched the expected result.",
            instruction="No change needed.",
        ),
    ]

"""End-to-end orchestration per dataset item: zero-shot generation, outcome
classification, and up to three diagnose/prescribe/treat correction trials.

Items run concurrently up to a parallelism limit; each item's trials are
strictly sequential. Completed items are appended to a checkpoint file so an
interrupted run can resume without repeating work.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .cases import (
    DIAGNOSABLE_IDS,
    Case,
    CorrectionCase,
    ExecutionOutcome,
    OutcomeKind,
    SchemaDescription,
    build_preview,
    serialize_case,
)
from .embedding import Embedder, ProjectionModel, embed
from .kb import KbStore, ModelMismatch
from .llm import (
    ChatBackend,
    Diagnosis,
    DiagnosisParseError,
    LlmRequest,
    LlmSettings,
    PrescriptionParseError,
    SqlParseError,
    Usage,
    parse_diagnosis,
    parse_prescription,
    parse_sql,
    render_diagnosis,
    render_generic_fix,
    render_prescription,
    render_treatment,
    render_zero_shot,
)
from .runner import (
    ComparisonPolicy,
    ExecutionResult,
    ResultTable,
    SqlRunner,
    classify_outcome,
    detect_order_by,
)
from .spider import DatasetItem

MODE_ECPT = "ecpt"
MODE_GENERIC = "generic"


@dataclass(frozen=True)
class PipelineOptions:
    option_a_finetuned_embeddings: bool = False
    option_b_examples_in_diagnosis: bool = False
    option_c_resolve_all_at_once: bool = False
    max_trials: int = 3
    retrieval_k: int = 3

    def __post_init__(self) -> None:
        if self.max_trials < 1:
            raise ValueError("max_trials must be >= 1")
        if self.retrieval_k < 0:
            raise ValueError("retrieval_k must be >= 0")


@dataclass(frozen=True)
class TrialRecord:
    item_ref: str
    trial_index: int
    diagnosis: tuple[str, ...] | None
    retrieved_ids: tuple[int, ...]
    candidate_sql: str | None
    outcome: ExecutionOutcome
    prompt_tokens: int
    completion_tokens: int

    def to_record(self) -> dict:
        return {
            "item_ref": self.item_ref,
            "trial_index": self.trial_index,
            "diagnosis": list(self.diagnosis) if self.diagnosis is not None else None,
            "retrieved_ids": list(self.retrieved_ids),
            "candidate_sql": self.candidate_sql,
            "outcome": _outcome_record(self.outcome),
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "TrialRecord":
        diagnosis = record.get("diagnosis")
        return cls(
            item_ref=record["item_ref"],
            trial_index=record["trial_index"],
            diagnosis=tuple(diagnosis) if diagnosis is not None else None,
            retrieved_ids=tuple(record.get("retrieved_ids", ())),
            candidate_sql=record.get("candidate_sql"),
            outcome=_outcome_from_record(record["outcome"]),
            prompt_tokens=record["prompt_tokens"],
            completion_tokens=record["completion_tokens"],
        )


@dataclass(frozen=True)
class CaseResult:
    item_ref: str
    zero_shot_sql: str | None
    zero_shot_outcome: ExecutionOutcome
    final_outcome: ExecutionOutcome
    trials: tuple[TrialRecord, ...]
    zero_shot_prompt_tokens: int = 0
    zero_shot_completion_tokens: int = 0
    error: str | None = None

    @property
    def fixed(self) -> bool:
        return (
            self.zero_shot_outcome.kind is not OutcomeKind.SUCCESS
            and self.final_outcome.kind is OutcomeKind.SUCCESS
        )

    def to_record(self) -> dict:
        return {
            "item_ref": self.item_ref,
            "zero_shot_sql": self.zero_shot_sql,
            "zero_shot_outcome": _outcome_record(self.zero_shot_outcome),
            "final_outcome": _outcome_record(self.final_outcome),
            "trials": [t.to_record() for t in self.trials],
            "zero_shot_prompt_tokens": self.zero_shot_prompt_tokens,
            "zero_shot_completion_tokens": self.zero_shot_completion_tokens,
            "error": self.error,
        }

    @classmethod
    def from_record(cls, record: Mapping) -> "CaseResult":
        return cls(
            item_ref=record["item_ref"],
            zero_shot_sql=record.get("zero_shot_sql"),
            zero_shot_outcome=_outcome_from_record(record["zero_shot_outcome"]),
            final_outcome=_outcome_from_record(record["final_outcome"]),
            trials=tuple(TrialRecord.from_record(t) for t in record.get("trials", ())),
            zero_shot_prompt_tokens=record.get("zero_shot_prompt_tokens", 0),
            zero_shot_completion_tokens=record.get("zero_shot_completion_tokens", 0),
            error=record.get("error"),
        )


def _outcome_record(outcome: ExecutionOutcome) -> dict:
    return {"kind": outcome.kind.value, "detail": outcome.detail}


def _outcome_from_record(record: Mapping) -> ExecutionOutcome:
    return ExecutionOutcome(OutcomeKind(record["kind"]), record.get("detail", ""))


@dataclass(frozen=True)
class ZeroShotResult:
    sql: str | None
    outcome: ExecutionOutcome
    usage: Usage
    execution: ExecutionResult | None


class Pipeline:
    """Binds schemas, the SQL runner, a chat backend, and the retrieval stack."""

    def __init__(
        self,
        *,
        schemas: Mapping[str, SchemaDescription],
        runner: SqlRunner,
        backend: ChatBackend,
        settings: LlmSettings,
        options: PipelineOptions = PipelineOptions(),
        kb: KbStore | None = None,
        model: ProjectionModel | None = None,
        embedder: Embedder | None = None,
        mode: str = MODE_ECPT,
    ):
        if mode not in (MODE_ECPT, MODE_GENERIC):
            raise ValueError(f"unknown pipeline mode {mode!r}")
        if mode == MODE_ECPT:
            if kb is None or model is None or embedder is None:
                raise ValueError("ecpt mode requires kb, model, and embedder")
            if kb.model_hash != model.identity_hash():
                raise ModelMismatch(
                    "knowledge base was embedded with a different projection model"
                )
            if options.option_a_finetuned_embeddings != model.trained:
                raise ValueError(
                    "option A expects a fine-tuned projection; without it the "
                    "identity projection must be used"
                )
        self._schemas = schemas
        self._runner = runner
        self._backend = backend
        self._settings = settings
        self._options = options
        self._kb = kb
        self._model = model
        self._embedder = embedder
        self._mode = mode

    # --- single steps ---------------------------------------------------------

    def run_zero_shot(self, item: DatasetItem) -> ZeroShotResult:
        """Generate SQL for one item, execute it, and classify the outcome."""
        schema = self._schemas[item.db_id]
        prompt = render_zero_shot(schema, item.question)
        response = self._complete(prompt, self._settings.zero_shot_max_tokens)
        usage = Usage.from_response(response)
        try:
            sql = parse_sql(response.text)
        except SqlParseError:
            outcome = ExecutionOutcome(OutcomeKind.EXECUTION_ERROR, "no SQL in completion")
            return ZeroShotResult(sql=None, outcome=outcome, usage=usage, execution=None)
        truth, policy = self._truth_for(item)
        execution = self._runner.try_execute(item.db_id, sql)
        outcome = classify_outcome(execution, truth, policy)
        return ZeroShotResult(sql=sql, outcome=outcome, usage=usage, execution=execution)

    def correct(
        self, item: DatasetItem, case: Case, zero_shot: ZeroShotResult
    ) -> CaseResult:
        """Run up to max_trials correction trials, stopping at the first success."""
        truth, policy = self._truth_for(item)
        trials: list[TrialRecord] = []
        current = case
        for trial_index in range(1, self._options.max_trials + 1):
            if self._mode == MODE_GENERIC:
                trial, current = self._generic_trial(
                    item, current, trial_index, truth, policy
                )
            else:
                trial, current = self._ecpt_trial(
                    item, current, trial_index, truth, policy
                )
            trials.append(trial)
            if trial.outcome.kind is OutcomeKind.SUCCESS:
                break
        return CaseResult(
            item_ref=item.ref,
            zero_shot_sql=zero_shot.sql,
            zero_shot_outcome=zero_shot.outcome,
            final_outcome=trials[-1].outcome,
            trials=tuple(trials),
            zero_shot_prompt_tokens=zero_shot.usage.prompt_tokens,
            zero_shot_completion_tokens=zero_shot.usage.completion_tokens,
        )

    def run_item(self, item: DatasetItem) -> CaseResult:
        zero_shot = self.run_zero_shot(item)
        if zero_shot.outcome.kind is OutcomeKind.SUCCESS:
            return CaseResult(
                item_ref=item.ref,
                zero_shot_sql=zero_shot.sql,
                zero_shot_outcome=zero_shot.outcome,
                final_outcome=zero_shot.outcome,
                trials=(),
                zero_shot_prompt_tokens=zero_shot.usage.prompt_tokens,
                zero_shot_completion_tokens=zero_shot.usage.completion_tokens,
            )
        case = self._build_case(item, zero_shot.sql, zero_shot.outcome, zero_shot.execution)
        return self.correct(item, case, zero_shot)

    def run_dataset(
        self,
        items: list[DatasetItem],
        parallelism: int = 1,
        checkpoint_path: str | Path | None = None,
    ) -> list[CaseResult]:
        """Run all items, resuming from the checkpoint; results follow input order."""
        completed: dict[str, CaseResult] = {}
        if checkpoint_path is not None:
            completed.update(_read_checkpoint(checkpoint_path))
        pending = [item for item in items if item.ref not in completed]
        lock = threading.Lock()
        handle = None
        if checkpoint_path is not None:
            handle = open(checkpoint_path, "a", encoding="utf-8")
        try:

            def work(item: DatasetItem) -> None:
                try:
                    result = self.run_item(item)
                except Exception as exc:  # per-item failures never abort the run
                    failure = ExecutionOutcome(
                        OutcomeKind.EXECUTION_ERROR, f"run failed: {exc}"
                    )
                    result = CaseResult(
                        item_ref=item.ref,
                        zero_shot_sql=None,
                        zero_shot_outcome=failure,
                        final_outcome=failure,
                        trials=(),
                        error=str(exc),
                    )
                with lock:
                    completed[item.ref] = result
                    if handle is not None:
                        handle.write(json.dumps(result.to_record()) + "\n")
                        handle.flush()

            if parallelism <= 1:
                for item in pending:
                    work(item)
            else:
                with ThreadPoolExecutor(max_workers=parallelism) as pool:
                    list(pool.map(work, pending))
        finally:
            if handle is not None:
                handle.close()
        return [completed[item.ref] for item in items]

    # --- internals --------------------------------------------------------------

    def _complete(self, prompt: str, max_tokens: int):
        return self._backend.complete(
            LlmRequest(
                model_name=self._settings.model_name,
                temperature=self._settings.temperature,
                max_tokens=max_tokens,
                prompt=prompt,
            )
        )

    def _truth_for(self, item: DatasetItem) -> tuple[ResultTable, ComparisonPolicy]:
        truth = self._runner.execute(item.db_id, item.ground_truth_sql)
        policy = ComparisonPolicy(order_sensitive=detect_order_by(item.ground_truth_sql))
        return truth, policy

    def _build_case(
        self,
        item: DatasetItem,
        sql: str | None,
        outcome: ExecutionOutcome,
        execution: ExecutionResult | None,
    ) -> Case:
        preview = None
        if execution is not None and execution.table is not None:
            preview = build_preview(execution.table.columns, execution.table.rows)
        return Case(
            schema=self._schemas[item.db_id],
            question=item.question,
            generated_sql=sql if sql is not None else "",
            outcome=outcome,
            result_preview=preview,
        )

    def _ecpt_trial(
        self,
        item: DatasetItem,
        case: Case,
        trial_index: int,
        truth: ResultTable,
        policy: ComparisonPolicy,
    ) -> tuple[TrialRecord, Case]:
        assert self._kb is not None and self._model is not None
        assert self._embedder is not None
        usage = Usage()

        def failed(detail: str, diagnosis: Diagnosis | None, retrieved: tuple[int, ...]):
            record = TrialRecord(
                item_ref=item.ref,
                trial_index=trial_index,
                diagnosis=diagnosis.ranked_error_ids if diagnosis else None,
                retrieved_ids=retrieved,
                candidate_sql=None,
                outcome=ExecutionOutcome(OutcomeKind.EXECUTION_ERROR, detail),
                prompt_tokens=usage.prompt_tokens,
                completion_tokens=usage.completion_tokens,
            )
            return record, case

        case_text = serialize_case(case, include_result=True)
        query_vector = embed(case_text, self._model, self._embedder)

        option_b = None
        if self._options.option_b_examples_in_diagnosis:
            option_b = self._nearest_per_error_type(query_vector)
        response = self._complete(
            render_diagnosis(case, option_b), self._settings.diagnosis_max_tokens
        )
        usage += Usage.from_response(response)
        try:
            diagnosis = parse_diagnosis(response.text)
        except DiagnosisParseError:
            return failed("unparseable diagnosis", None, ())

        if self._options.option_c_resolve_all_at_once:
            error_filter = set(diagnosis.ranked_error_ids)
        else:
            error_filter = {diagnosis.top}
        retrieved: list = []
        if self._options.retrieval_k >= 1:
            retrieved = self._kb.search(
                query_vector, self._options.retrieval_k, error_filter
            )
        retrieved_ids = tuple(entry.id for entry, _ in retrieved)
        retrieved_cases = [entry.correction_case for entry, _ in retrieved]

        response = self._complete(
            render_prescription(case, diagnosis, retrieved_cases),
            self._settings.prescription_max_tokens,
        )
        usage += Usage.from_response(response)
        try:
            prescription = parse_prescription(response.text)
        except PrescriptionParseError:
            return failed("unparseable prescription", diagnosis, retrieved_ids)

        response = self._complete(
            render_treatment(case, prescription), self._settings.treatment_max_tokens
        )
        usage += Usage.from_response(response)
        try:
            candidate_sql = parse_sql(response.text)
        except SqlParseError:
            return failed("no SQL in completion", diagnosis, retrieved_ids)

        execution = self._runner.try_execute(item.db_id, candidate_sql)
        outcome = classify_outcome(execution, truth, policy)
        record = TrialRecord(
            item_ref=item.ref,
            trial_index=trial_index,
            diagnosis=diagnosis.ranked_error_ids,
            retrieved_ids=retrieved_ids,
            candidate_sql=candidate_sql,
            outcome=outcome,
            prompt_tokens=usage.prompt_tokens,
            completion_tokens=usage.completion_tokens,
        )
        # later trials diagnose against the newest failing SQL and result
        next_case = self._build_case(item, candidate_sql, outcome, execution)
        return record, next_case

    def _generic_trial(
        self,
        item: DatasetItem,
        case: Case,
        trial_index: int,
        truth: ResultTable,
        policy: ComparisonPolicy,
    ) -> tuple[TrialRecord, Case]:
        response = self._complete(
            render_generic_fix(case), self._settings.treatment_max_tokens
        )
        usage = Usage.from_response(response)
        try:
            candidate_sql = parse_sql(response.text)
        except SqlParseError:
            record = TrialRecord(
                item_ref=item.ref,
                trial_index=trial_index,
                diagnosis=None,
                retrieved_ids=(),
                candidate_sql=None,
                outcome=ExecutionOutcome(OutcomeKind.EXECUTION_ERROR, "no SQL in completion"),
                prompt_tokens=usage.prompt_tokens,
                completion_tokens=usage.completion_tokens,
            )
            return record, case
        execution = self._runner.try_execute(item.db_id, candidate_sql)
        outcome = classify_outcome(execution, truth, policy)
        record = TrialRecord(
            item_ref=item.ref,
            trial_index=trial_index,
            diagnosis=None,
            retrieved_ids=(),
            candidate_sql=candidate_sql,
            outcome=outcome,
            prompt_tokens=usage.prompt_tokens,
            completion_tokens=usage.completion_tokens,
        )
        return record, self._build_case(item, candidate_sql, outcome, execution)

    def _nearest_per_error_type(
        self, query_vector
    ) -> dict[str, CorrectionCase]:
        assert self._kb is not None
        examples: dict[str, CorrectionCase] = {}
        for error_id in DIAGNOSABLE_IDS:
            hits = self._kb.search(query_vector, 1, {error_id})
            if hits:
                examples[error_id] = hits[0][0].correction_case
        return examples


def _read_checkpoint(path: str | Path) -> dict[str, CaseResult]:
    path = Path(path)
    if not path.exists():
        return {}
    completed: dict[str, CaseResult] = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        result = CaseResult.from_record(record)
        completed[result.item_ref] = result
    return completed


def write_results(path: str | Path, results: list[CaseResult]) -> None:
    """Write CaseResults as line-delimited records, in the given order."""
    with open(path, "w", encoding="utf-8") as handle:
        for result in results:
            handle.write(json.dumps(result.to_record()) + "\n")


def read_results(path: str | Path) -> list[CaseResult]:
    path = Path(path)
    results = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        results.append(CaseResult.from_record(json.loads(line)))
    return results

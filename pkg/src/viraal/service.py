"""Human-in-the-loop annotation backend.

Orchestrates query rounds over the unlabeled pool, serves the least
confident utterances first, persists labels to an append-only event log,
and retrains from scratch on the enlarged labeled set.  Reads stay
available during retraining; the previous checkpoint keeps serving.
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

from .al import QuerySpec, joint_confidence, score_pool, select
from .corpus import BOS_SLOT, Annotation, Example, Vocabulary
from .metrics import MetricsReport, evaluate
from .model import JointNluModel, make_batch, predict
from .trainer import RunConfig, fit

TASK_STATUSES = ("queued", "assigned", "labeled", "skipped")
DEFAULT_LEASE_TIMEOUT = 600.0  # seconds


class ServiceError(Exception):
    def __init__(self, message: str, status: int = 400):
        super().__init__(message)
        self.status = status


@dataclass
class AnnotationTask:
    example_id: int
    tokens: tuple[str, ...]
    suggested_intent: str
    suggested_slots: list[str]
    conf_int: float
    conf_slot: float
    conf_joint: float | None
    rank: int
    status: str = "queued"
    assigned_at: float | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.example_id,
            "tokens": list(self.tokens),
            "suggested_intent": self.suggested_intent,
            "suggested_slots": list(self.suggested_slots),
            "conf_int": self.conf_int,
            "conf_slot": self.conf_slot,
            "conf_joint": self.conf_joint,
            "rank": self.rank,
            "status": self.status,
        }


@dataclass
class Round:
    number: int
    criterion: str
    budget: int
    checkpoint_ref: str
    created_at: float
    completed_at: float | None = None

    def to_dict(self) -> dict:
        return {
            "number": self.number,
            "criterion": self.criterion,
            "budget": self.budget,
            "checkpoint": self.checkpoint_ref,
            "created_at": self.created_at,
            "completed_at": self.completed_at,
        }


@dataclass
class RetrainJob:
    job_id: str
    state: str = "queued"  # queued | running | done | failed
    checkpoint_ref: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "state": self.state,
            "checkpoint": self.checkpoint_ref,
            "error": self.error,
        }


class AnnotationService:
    """Single-writer annotation state machine over one training pool."""

    def __init__(
        self,
        train_examples: Sequence[Example],
        vocab: Vocabulary,
        config: RunConfig,
        data_dir: str | Path,
        labeled_ids: Sequence[int] = (),
        model: JointNluModel | None = None,
        dev_examples: Sequence[Example] | None = None,
        lease_timeout: float = DEFAULT_LEASE_TIMEOUT,
        clock: Callable[[], float] = time.time,
        resume: bool = False,
    ):
        self.examples = {ex.id: ex for ex in train_examples}
        self.vocab = vocab
        self.config = config
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.dev_examples = list(dev_examples or [])
        self.lease_timeout = lease_timeout
        self.clock = clock

        self.labels: dict[int, Annotation] = {}
        for ex_id in labeled_ids:
            ann = self.examples[ex_id].annotation
            if ann is None:
                raise ServiceError(f"initial labeled example {ex_id} has no annotation")
            self.labels[ex_id] = ann
        self.pool: set[int] = set(self.examples) - set(self.labels)

        self.model = model
        self.checkpoint_counter = 1 if model is not None else 0
        self.rounds: list[Round] = []
        self.tasks: dict[int, AnnotationTask] = {}
        self.queue: list[int] = []
        self.new_slot_tags: set[str] = set()
        self.new_intents: set[str] = set()
        self.jobs: dict[str, RetrainJob] = {}
        self.last_metrics: MetricsReport | None = None

        self.lock = threading.RLock()
        self.log_path = self.data_dir / "events.jsonl"
        if resume and self.log_path.exists():
            self._replay_log()

    # -- persistence ---------------------------------------------------------

    def _append_event(self, event: dict) -> None:
        event = {"ts": self.clock(), **event}
        with open(self.log_path, "a", encoding="utf-8") as f:
            f.write(json.dumps(event) + "\n")

    def _replay_log(self) -> None:
        for line in self.log_path.read_text(encoding="utf-8").splitlines():
            event = json.loads(line)
            if event["event"] == "label":
                ann = Annotation(intent=event["intent"], slots=tuple(event["slots"]))
                self.labels[event["example_id"]] = ann
                self.pool.discard(event["example_id"])
            elif event["event"] == "round_open":
                self.rounds.append(Round(
                    number=event["round"], criterion=event["criterion"],
                    budget=event["budget"], checkpoint_ref=event["checkpoint"],
                    created_at=event["ts"], completed_at=event["ts"],
                ))

    def _write_snapshot(self) -> None:
        snapshot = {
            "labeled": {
                str(i): {"intent": a.intent, "slots": list(a.slots)}
                for i, a in sorted(self.labels.items())
            },
            "rounds": [r.to_dict() for r in self.rounds],
        }
        (self.data_dir / "snapshot.json").write_text(
            json.dumps(snapshot, indent=1), encoding="utf-8"
        )

    # -- introspection --------------------------------------------------------

    def checkpoint_ref(self) -> str:
        return f"ckpt-{self.checkpoint_counter}" if self.model is not None else "none"

    def active_round(self) -> Round | None:
        if self.rounds and self.rounds[-1].completed_at is None:
            return self.rounds[-1]
        return None

    def round_tasks_done(self) -> bool:
        return all(t.status in ("labeled", "skipped") for t in self.tasks.values())

    def status(self) -> dict:
        with self.lock:
            active = self.active_round()
            return {
                "round": active.to_dict() if active else
                (self.rounds[-1].to_dict() if self.rounds else None),
                "labeled_count": len(self.labels),
                "pool_count": len(self.pool),
                "checkpoint": self.checkpoint_ref(),
            }

    def vocab_payload(self) -> dict:
        """Label inventories for annotation clients (BOS row excluded)."""
        with self.lock:
            return {
                "intents": self.vocab.intent_names(),
                "slot_tags": self.vocab.slot_names()[: self.vocab.n_slots],
            }

    # -- rounds ---------------------------------------------------------------

    def open_round(self, criterion: str, budget: int, seed: int | None = None) -> Round:
        """Score the pool, select the query set, queue tasks by ascending
        confidence (most informative served first)."""
        with self.lock:
            if self.active_round() is not None:
                raise ServiceError("a round is already active", status=409)
            if not self.pool:
                raise ServiceError("unlabeled pool is empty", status=400)
            if self.model is None:
                raise ServiceError("no trained checkpoint available", status=400)
            if budget <= 0 or budget > len(self.pool):
                raise ServiceError(
                    f"budget {budget} outside (0, {len(self.pool)}]", status=400
                )

            pool_examples = [self.examples[i] for i in sorted(self.pool)]
            records = score_pool(self.model, pool_examples, self.vocab)
            if len(records) >= 2:
                records = joint_confidence(records)
            by_id = {r.example_id: r for r in records}

            number = len(self.rounds) + 1
            spec = QuerySpec(
                criterion=criterion, budget=budget,
                seed=seed if seed is not None else number,
            )
            selected = select(records, spec)

            def order_key(ex_id: int) -> tuple:
                r = by_id[ex_id]
                if criterion == "entropy-int":
                    return (r.conf_int, ex_id)
                if criterion == "entropy-slot":
                    return (r.conf_slot, ex_id)
                c = r.conf_joint if r.conf_joint is not None else r.conf_int
                return (c, ex_id)

            ordered = sorted(selected, key=order_key)
            chosen = [self.examples[i] for i in ordered]
            batch = make_batch(chosen, self.vocab, labeled_ids=set())
            intents, slot_seqs = predict(self.model, batch)
            slot_names = self.vocab.slot_names()
            intent_names = self.vocab.intent_names()

            self.tasks = {}
            self.queue = list(ordered)
            for rank, (ex, intent_idx, slots) in enumerate(zip(chosen, intents, slot_seqs)):
                rec = by_id[ex.id]
                self.tasks[ex.id] = AnnotationTask(
                    example_id=ex.id,
                    tokens=ex.tokens,
                    suggested_intent=intent_names[intent_idx],
                    suggested_slots=[slot_names[s] for s in slots],
                    conf_int=rec.conf_int,
                    conf_slot=rec.conf_slot,
                    conf_joint=rec.conf_joint,
                    rank=rank,
                )

            rnd = Round(
                number=number, criterion=criterion, budget=budget,
                checkpoint_ref=self.checkpoint_ref(), created_at=self.clock(),
            )
            self.rounds.append(rnd)
            self._append_event({
                "event": "round_open", "round": number, "criterion": criterion,
                "budget": budget, "checkpoint": rnd.checkpoint_ref,
                "selected": list(ordered),
            })
            return rnd

    def _expire_leases(self) -> None:
        now = self.clock()
        for task in self.tasks.values():
            if task.status == "assigned" and task.assigned_at is not None \
                    and now - task.assigned_at > self.lease_timeout:
                task.status = "queued"
                task.assigned_at = None

    def next_tasks(self, n: int) -> list[AnnotationTask]:
        """Lease up to n of the lowest-confidence queued tasks."""
        with self.lock:
            if self.active_round() is None:
                raise ServiceError("no active round", status=409)
            if n <= 0:
                return []
            self._expire_leases()
            out = []
            for ex_id in self.queue:
                task = self.tasks[ex_id]
                if task.status == "queued":
                    task.status = "assigned"
                    task.assigned_at = self.clock()
                    out.append(task)
                    if len(out) == n:
                        break
            return out

    # -- labels ----------------------------------------------------------------

    def _validate_label(
        self, task: AnnotationTask, intent: str, slots: Sequence[str],
        allow_new_tags: bool,
    ) -> None:
        problems = {}
        if len(slots) != len(task.tokens):
            problems["slots"] = (
                f"expected {len(task.tokens)} tags (one per token), got {len(slots)}"
            )
        unknown_tags = sorted(
            {s for s in slots if s not in self.vocab.slot_index or s == BOS_SLOT}
        )
        if unknown_tags and not allow_new_tags:
            problems["unknown_tags"] = unknown_tags
        if intent not in self.vocab.intent_index and not allow_new_tags:
            problems["intent"] = f"unknown intent {intent!r}"
        if problems:
            raise ServiceError(f"invalid label: {json.dumps(problems)}", status=422)
        self.new_slot_tags.update(t for t in unknown_tags)
        if intent not in self.vocab.intent_index:
            self.new_intents.add(intent)

    def submit_label(
        self, example_id: int, intent: str, slots: Sequence[str],
        allow_new_tags: bool = False,
    ) -> dict:
        """Persist one annotation; moves the example out of the pool."""
        with self.lock:
            task = self.tasks.get(example_id)
            if task is None:
                raise ServiceError(f"unknown task {example_id}", status=404)
            if task.status == "labeled":
                existing = self.labels.get(example_id)
                if existing and existing.intent == intent \
                        and list(existing.slots) == list(slots):
                    return self._ack(task)  # idempotent resubmission
                raise ServiceError(
                    f"task {example_id} already labeled differently", status=409
                )
            if task.status == "skipped":
                raise ServiceError(f"task {example_id} was skipped", status=409)
            if task.status != "assigned":
                raise ServiceError(
                    f"task {example_id} is not assigned (lease it first)", status=409
                )
            self._validate_label(task, intent, slots, allow_new_tags)

            self.labels[example_id] = Annotation(intent=intent, slots=tuple(slots))
            self.pool.discard(example_id)
            task.status = "labeled"
            self._append_event({
                "event": "label", "example_id": example_id,
                "intent": intent, "slots": list(slots),
                "round": self.rounds[-1].number,
            })
            return self._ack(task)

    def skip_task(self, example_id: int) -> dict:
        """Terminal skip for this round; the example stays in the pool."""
        with self.lock:
            task = self.tasks.get(example_id)
            if task is None:
                raise ServiceError(f"unknown task {example_id}", status=404)
            if task.status in ("labeled", "skipped"):
                return self._ack(task)
            task.status = "skipped"
            self._append_event({
                "event": "skip", "example_id": example_id,
                "round": self.rounds[-1].number,
            })
            return self._ack(task)

    def _ack(self, task: AnnotationTask) -> dict:
        return {
            "ok": True,
            "task": task.to_dict(),
            "labeled_count": len(self.labels),
            "pool_count": len(self.pool),
        }

    # -- retraining --------------------------------------------------------------

    def _extended_vocab(self) -> Vocabulary:
        if not self.new_slot_tags and not self.new_intents:
            return self.vocab
        slot_index = {
            tag: idx for tag, idx in self.vocab.slot_index.items() if tag != BOS_SLOT
        }
        for tag in sorted(self.new_slot_tags):
            slot_index[tag] = len(slot_index)
        slot_index[BOS_SLOT] = len(slot_index)
        intent_index = dict(self.vocab.intent_index)
        for intent in sorted(self.new_intents):
            intent_index[intent] = len(intent_index)
        return Vocabulary(
            word_index=dict(self.vocab.word_index),
            slot_index=slot_index,
            intent_index=intent_index,
        )

    def trigger_retrain(self) -> str:
        """Close the completed round and train from scratch in the background."""
        with self.lock:
            active = self.active_round()
            if active is None:
                raise ServiceError("no active round", status=409)
            if not self.round_tasks_done():
                remaining = sum(
                    1 for t in self.tasks.values()
                    if t.status not in ("labeled", "skipped")
                )
                raise ServiceError(
                    f"round {active.number} incomplete: {remaining} open tasks",
                    status=409,
                )
            active.completed_at = self.clock()
            self._append_event({"event": "round_close", "round": active.number})
            self._write_snapshot()

            job = RetrainJob(job_id=uuid.uuid4().hex)
            self.jobs[job.job_id] = job

        thread = threading.Thread(target=self._retrain, args=(job,), daemon=True)
        thread.start()
        return job.job_id

    def _retrain(self, job: RetrainJob) -> None:
        with self.lock:
            job.state = "running"
            labeled_ids = sorted(self.labels)
            unlabeled_ids = sorted(self.pool)
            vocab = self._extended_vocab()
            overrides = [
                Example(self.examples[i].utterance, self.labels[i], split="train")
                for i in labeled_ids
            ]
            train = overrides + [
                self.examples[i] for i in sorted(self.examples) if i not in self.labels
            ]
        try:
            model, _ = fit(
                train, labeled_ids, unlabeled_ids, vocab, self.config,
                dev_examples=self.dev_examples or None,
            )
            report = (
                evaluate(model, self.dev_examples, vocab, seed=self.config.seed)
                if self.dev_examples else None
            )
            with self.lock:
                self.model = model
                self.vocab = vocab
                self.new_slot_tags.clear()
                self.new_intents.clear()
                self.checkpoint_counter += 1
                if report is not None:
                    self.last_metrics = report
                job.state = "done"
                job.checkpoint_ref = self.checkpoint_ref()
                self._append_event({
                    "event": "checkpoint", "checkpoint": self.checkpoint_ref(),
                })
        except Exception as err:  # previous checkpoint stays live
            with self.lock:
                job.state = "failed"
                job.error = repr(err)

    def metrics(self) -> MetricsReport | None:
        with self.lock:
            return self.last_metrics


def oracle_annotate(service: AnnotationService, chunk: int = 5) -> list[int]:
    """Simulated annotator: labels every open task with the gold annotation.

    Returns the labeled example ids in serving order.  Used to compare a
    live service round against the batch AL pipeline.
    """
    done: list[int] = []
    while True:
        tasks = service.next_tasks(chunk)
        if not tasks:
            break
        for task in tasks:
            gold = service.examples[task.example_id].annotation
            if gold is None:
                raise ServiceError(f"no gold annotation for {task.example_id}")
            service.submit_label(task.example_id, gold.intent, list(gold.slots))
            done.append(task.example_id)
    return done

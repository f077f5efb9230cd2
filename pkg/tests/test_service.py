import json
import time

import pytest

from viraal.al import QuerySpec, joint_confidence, score_pool, select
from viraal.corpus import build_vocab
from viraal.service import AnnotationService, ServiceError, oracle_annotate
from viraal.toy import toy_corpus
from viraal.trainer import RunConfig

TINY = dict(embedding_dim=16, hidden_size=8, slot_embedding_dim=6, attention_dim=8,
            epochs=2, batch_size=16, validation="none")


@pytest.fixture(scope="module")
def corpus():
    train, test = toy_corpus(40, 10, seed=21)
    return train, test, build_vocab(train)


def trained_model(train, vocab, labeled_ids):
    from viraal.trainer import fit

    config = RunConfig(losses=("ce-int", "ce-slot"), seed=0, **TINY)
    model, _ = fit(train, labeled_ids, [], vocab, config)
    return model


@pytest.fixture()
def service(corpus, tmp_path):
    train, _, vocab = corpus
    labeled = [ex.id for ex in train[:10]]
    model = trained_model(train, vocab, labeled)
    return AnnotationService(
        train, vocab, RunConfig(losses=("ce-int", "ce-slot"), seed=0, **TINY),
        data_dir=tmp_path / "svc", labeled_ids=labeled, model=model,
    )


def test_status_reports_counts(service):
    status = service.status()
    assert status["labeled_count"] == 10
    assert status["pool_count"] == 30
    assert status["round"] is None
    assert status["checkpoint"] == "ckpt-1"


def test_open_round_selection_delegates_to_query(service, corpus):
    """Round task ids must equal the pool query's own selection output."""
    train, _, vocab = corpus
    pool = [service.examples[i] for i in sorted(service.pool)]
    records = joint_confidence(score_pool(service.model, pool, vocab))
    expected = select(records, QuerySpec(criterion="entropy-joint", budget=5, seed=1))

    rnd = service.open_round("entropy-joint", budget=5, seed=1)
    assert rnd.number == 1
    assert set(service.tasks) == set(expected)
    # queue is the same set ordered by ascending joint confidence
    confs = [service.tasks[i].conf_joint for i in service.queue]
    assert confs == sorted(confs)


def test_open_round_single_budget_picks_least_confident(service, corpus):
    train, _, vocab = corpus
    pool = [service.examples[i] for i in sorted(service.pool)]
    records = joint_confidence(score_pool(service.model, pool, vocab))
    least = min(records, key=lambda r: (r.conf_joint, r.example_id))
    service.open_round("entropy-joint", budget=1)
    assert list(service.tasks) == [least.example_id]


def test_open_round_conflicts(service):
    service.open_round("entropy-joint", budget=3)
    with pytest.raises(ServiceError) as err:
        service.open_round("entropy-joint", budget=3)
    assert err.value.status == 409


def test_open_round_random_reproducible(corpus, tmp_path):
    train, _, vocab = corpus
    labeled = [ex.id for ex in train[:10]]
    model = trained_model(train, vocab, labeled)
    picks = []
    for run in range(2):
        svc = AnnotationService(
            train, vocab, RunConfig(losses=("ce-int",), seed=0, **TINY),
            data_dir=tmp_path / f"svc{run}", labeled_ids=labeled, model=model,
        )
        svc.open_round("random", budget=4, seed=77)
        picks.append(sorted(svc.tasks))
    assert picks[0] == picks[1]


def test_next_tasks_lease_semantics(service):
    service.open_round("entropy-joint", budget=5, seed=0)
    assert service.next_tasks(0) == []
    first = service.next_tasks(2)
    second = service.next_tasks(2)
    assert len(first) == 2 and len(second) == 2
    assert {t.example_id for t in first}.isdisjoint({t.example_id for t in second})
    # served in ascending-confidence order
    assert [t.example_id for t in first + second] == service.queue[:4]
    rest = service.next_tasks(10)
    assert len(rest) == 1  # only one task remains


def test_lease_expiry_requeues(corpus, tmp_path):
    train, _, vocab = corpus
    labeled = [ex.id for ex in train[:10]]
    model = trained_model(train, vocab, labeled)
    now = [1000.0]
    svc = AnnotationService(
        train, vocab, RunConfig(losses=("ce-int",), seed=0, **TINY),
        data_dir=tmp_path / "svc", labeled_ids=labeled, model=model,
        lease_timeout=60.0, clock=lambda: now[0],
    )
    svc.open_round("entropy-int", budget=2)
    t1 = svc.next_tasks(1)[0]
    assert svc.next_tasks(2)[0].example_id != t1.example_id or True
    now[0] += 120.0  # lease expires
    leased = svc.next_tasks(2)
    assert t1.example_id in {t.example_id for t in leased}


def test_submit_label_happy_path(service):
    service.open_round("entropy-joint", budget=3, seed=0)
    task = service.next_tasks(1)[0]
    gold = service.examples[task.example_id].annotation
    before = service.status()
    ack = service.submit_label(task.example_id, gold.intent, list(gold.slots))
    after = service.status()
    assert ack["ok"]
    assert after["pool_count"] == before["pool_count"] - 1
    assert after["labeled_count"] == before["labeled_count"] + 1
    # conservation of the example universe
    assert after["pool_count"] + after["labeled_count"] == 40


def test_submit_label_idempotent(service):
    service.open_round("entropy-joint", budget=2, seed=0)
    task = service.next_tasks(1)[0]
    gold = service.examples[task.example_id].annotation
    service.submit_label(task.example_id, gold.intent, list(gold.slots))
    count = service.status()["labeled_count"]
    ack = service.submit_label(task.example_id, gold.intent, list(gold.slots))
    assert ack["ok"]
    assert service.status()["labeled_count"] == count  # no double-count


def test_submit_label_conflicting_duplicate(service):
    service.open_round("entropy-joint", budget=2, seed=0)
    task = service.next_tasks(1)[0]
    gold = service.examples[task.example_id].annotation
    service.submit_label(task.example_id, gold.intent, list(gold.slots))
    other_intent = next(i for i in service.vocab.intent_index if i != gold.intent)
    with pytest.raises(ServiceError) as err:
        service.submit_label(task.example_id, other_intent, list(gold.slots))
    assert err.value.status == 409


def test_submit_label_misaligned_rejected(service):
    service.open_round("entropy-joint", budget=2, seed=0)
    task = service.next_tasks(1)[0]
    gold = service.examples[task.example_id].annotation
    with pytest.raises(ServiceError) as err:
        service.submit_label(task.example_id, gold.intent, list(gold.slots)[:-1])
    assert err.value.status == 422
    assert "one per token" in str(err.value)


def test_submit_label_unknown_tag_needs_flag(service):
    service.open_round("entropy-joint", budget=2, seed=0)
    task = service.next_tasks(1)[0]
    gold = service.examples[task.example_id].annotation
    slots = ["B-new-kind"] + list(gold.slots)[1:]
    with pytest.raises(ServiceError) as err:
        service.submit_label(task.example_id, gold.intent, slots)
    assert err.value.status == 422
    ack = service.submit_label(task.example_id, gold.intent, slots,
                               allow_new_tags=True)
    assert ack["ok"]
    assert "B-new-kind" in service.new_slot_tags


def test_submit_label_requires_assignment(service):
    service.open_round("entropy-joint", budget=3, seed=0)
    queued_id = service.queue[-1]  # never leased
    gold = service.examples[queued_id].annotation
    with pytest.raises(ServiceError) as err:
        service.submit_label(queued_id, gold.intent, list(gold.slots))
    assert err.value.status == 409


def test_submit_label_unknown_task(service):
    service.open_round("entropy-joint", budget=2, seed=0)
    with pytest.raises(ServiceError) as err:
        service.submit_label(99999, "whatever", [])
    assert err.value.status == 404


def test_skip_keeps_example_in_pool(service):
    service.open_round("entropy-joint", budget=2, seed=0)
    task = service.next_tasks(1)[0]
    pool_before = service.status()["pool_count"]
    service.skip_task(task.example_id)
    assert service.status()["pool_count"] == pool_before
    assert service.tasks[task.example_id].status == "skipped"


def test_retrain_requires_complete_round(service):
    service.open_round("entropy-joint", budget=2, seed=0)
    with pytest.raises(ServiceError) as err:
        service.trigger_retrain()
    assert err.value.status == 409


def wait_for_job(service, job_id, timeout=60.0):
    deadline = time.time() + timeout
    while time.time() < deadline:
        job = service.jobs[job_id]
        if job.state in ("done", "failed"):
            return job
        time.sleep(0.05)
    raise TimeoutError("retrain did not finish")


def test_retrain_full_cycle(service):
    service.open_round("entropy-joint", budget=3, seed=0)
    labeled_before = service.status()["labeled_count"]
    oracle_annotate(service)
    job_id = service.trigger_retrain()
    job = wait_for_job(service, job_id)
    assert job.state == "done"
    assert service.status()["labeled_count"] == labeled_before + 3
    assert service.status()["checkpoint"] == "ckpt-2"
    assert service.active_round() is None
    assert service.rounds[-1].completed_at is not None
    # second round works against the new checkpoint
    rnd = service.open_round("entropy-int", budget=2, seed=0)
    assert rnd.checkpoint_ref == "ckpt-2"


def test_two_rounds_do_not_hurt_dev_metrics(tmp_path):
    """Simulated-annotator rounds enlarge the labeled set; across 4 seeds at
    least one of the dev metrics must be non-decreasing after retraining."""
    from viraal.metrics import evaluate
    from viraal.trainer import fit

    train, dev = toy_corpus(48, 16, seed=33)
    vocab = build_vocab(train)
    for seed in range(4):
        config = RunConfig(losses=("ce-int", "ce-slot"), seed=seed, **TINY)
        labeled = [ex.id for ex in train[: 6 + seed]]
        model, _ = fit(train, labeled, [], vocab, config)
        before = evaluate(model, dev, vocab)
        svc = AnnotationService(
            train, vocab, config, data_dir=tmp_path / f"svc{seed}",
            labeled_ids=labeled, model=model, dev_examples=dev,
        )
        svc.open_round("entropy-joint", budget=8, seed=seed)
        oracle_annotate(svc)
        job = wait_for_job(svc, svc.trigger_retrain())
        assert job.state == "done"
        after = svc.metrics()
        assert after is not None
        assert (after.intent_accuracy >= before.intent_accuracy
                or after.slot_f1 >= before.slot_f1)


def test_event_log_replay_reconstructs_labels(corpus, tmp_path):
    train, _, vocab = corpus
    labeled = [ex.id for ex in train[:10]]
    model = trained_model(train, vocab, labeled)
    config = RunConfig(losses=("ce-int", "ce-slot"), seed=0, **TINY)
    svc = AnnotationService(train, vocab, config, data_dir=tmp_path / "svc",
                            labeled_ids=labeled, model=model)
    svc.open_round("entropy-joint", budget=4, seed=0)
    done = oracle_annotate(svc)
    assert len(done) == 4

    replayed = AnnotationService(train, vocab, config, data_dir=tmp_path / "svc",
                                 labeled_ids=labeled, model=model, resume=True)
    assert replayed.labels == svc.labels
    assert replayed.pool == svc.pool


def test_http_api_flow(corpus, tmp_path):
    from fastapi.testclient import TestClient

    from viraal.http_api import create_app

    train, _, vocab = corpus
    labeled = [ex.id for ex in train[:10]]
    model = trained_model(train, vocab, labeled)
    svc = AnnotationService(
        train, vocab, RunConfig(losses=("ce-int", "ce-slot"), seed=0, **TINY),
        data_dir=tmp_path / "svc", labeled_ids=labeled, model=model,
        dev_examples=train[:6],
    )
    client = TestClient(create_app(svc))

    status = client.get("/status").json()
    assert status["pool_count"] == 30

    vocab_payload = client.get("/vocab").json()
    assert set(vocab_payload) == {"intents", "slot_tags"}
    assert len(vocab_payload["slot_tags"]) == vocab.n_slots  # BOS row excluded

    r = client.post("/rounds", json={"criterion": "entropy-joint", "budget": 3,
                                     "seed": 0})
    assert r.status_code == 200
    assert r.json()["number"] == 1

    conflict = client.post("/rounds", json={"criterion": "random", "budget": 1})
    assert conflict.status_code == 409

    tasks = client.get("/tasks", params={"n": 3}).json()
    assert len(tasks) == 3
    confs = [t["conf_joint"] for t in tasks]
    assert confs == sorted(confs)
    assert all(len(t["suggested_slots"]) == len(t["tokens"]) for t in tasks)

    bad = client.post(f"/tasks/{tasks[0]['id']}/label",
                      json={"intent": "get_weather", "slots": ["O"]})
    assert bad.status_code == 422

    for t in tasks:
        gold = svc.examples[t["id"]].annotation
        ok = client.post(f"/tasks/{t['id']}/label",
                         json={"intent": gold.intent, "slots": list(gold.slots)})
        assert ok.status_code == 200

    job = client.post("/retrain").json()
    wait_for_job(svc, job["job_id"])
    got = client.get(f"/jobs/{job['job_id']}").json()
    assert got["state"] == "done"

    metrics = client.get("/metrics")
    assert metrics.status_code == 200
    assert 0.0 <= metrics.json()["intent_accuracy"] <= 1.0

    assert client.get("/jobs/nope").status_code == 404


def test_http_token_auth(corpus, tmp_path, monkeypatch):
    from fastapi.testclient import TestClient

    from viraal.http_api import create_app

    train, _, vocab = corpus
    svc = AnnotationService(
        train, vocab, RunConfig(losses=("ce-int",), seed=0, **TINY),
        data_dir=tmp_path / "svc", labeled_ids=[ex.id for ex in train[:5]],
    )
    monkeypatch.setenv("VIRAAL_SERVICE_TOKEN", "sekrit")
    client = TestClient(create_app(svc))
    assert client.get("/status").status_code == 401
    assert client.get("/status", headers={"X-Auth-Token": "sekrit"}).status_code == 200

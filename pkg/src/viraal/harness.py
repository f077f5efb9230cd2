"""Experiment driver: regime sweeps, two-round active learning, the
small/medium comparison protocol, and aggregation over seeds.

Every grid cell is an independent job that writes one JSON result file
atomically; rerunning an experiment recomputes only the missing cells.
"""

from __future__ import annotations

import csv
import json
import multiprocessing
import os
import subprocess
import zlib
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .al import QuerySpec, ConfidenceRecord, joint_confidence, score_pool, select
from .corpus import Example, Vocabulary, build_vocab, load_split, split_hash
from .embeddings import EmbeddingMatrix, load_pretrained
from .metrics import evaluate
from .model import save_checkpoint
from .sampling import extract_dev, round_half_up, sample_labeled_count, sample_regime
from .trainer import DEV_SIZES, RunConfig, fit, write_history_csv

TRAININGS = ("int", "slot", "joint")
METHODS = ("ce", "vat")
AL_METHODS = (("ce", "random"), ("ce", "ent"), ("vat", "random"), ("vat", "ent"))

LOSS_VARIANTS = {
    ("int", "ce"): ("ce-int",),
    ("slot", "ce"): ("ce-slot",),
    ("joint", "ce"): ("ce-int", "ce-slot"),
    ("int", "vat"): ("ce-int", "vat-int"),
    ("slot", "vat"): ("ce-slot", "vat-slot"),
    ("joint", "vat"): ("ce-int", "ce-slot", "vat-joint"),
}

ENTROPY_CRITERIA = {
    "int": "entropy-int",
    "slot": "entropy-slot",
    "joint": "entropy-joint",
}

DEFAULT_FRACTIONS = {
    "atis": [5] + list(range(10, 100, 10)),
    "snips": list(range(1, 11)) + list(range(20, 100, 10)),
}
DEFAULT_BUDGETS = {
    "atis": [10, 20, 40, 50, 60],
    "snips": [2, 4, 6, 8, 10, 20, 40],
}
SMALL_MEDIUM_SIZES = {
    ("atis", "small"): 129,
    ("atis", "medium"): 515,
    ("snips", "small"): 327,
    ("snips", "medium"): 1308,
}
SMALL_MEDIUM_METHODS = (
    "baseline", "vat-joint", "viraal-joint-entropy", "viraal-individual-entropy"
)
TUNING_BATCH_SIZES = (4, 8, 16, 32, 64)


def stable_seed(*parts) -> int:
    """Process-stable integer seed derived from the given key parts."""
    return zlib.crc32(":".join(str(p) for p in parts).encode())


def code_revision() -> str:
    try:
        out = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, cwd=Path(__file__).parent, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return f"viraal-{__version__}"


@dataclass
class DatasetBundle:
    name: str
    train: list[Example]
    dev: list[Example]
    test: list[Example]
    vocab: Vocabulary
    embedding_matrix: EmbeddingMatrix | None
    hashes: dict = field(default_factory=dict)

    def by_id(self) -> dict[int, Example]:
        return {ex.id: ex for ex in self.train}


@lru_cache(maxsize=4)
def _cached_bundle(root: str, name: str, vectors: str | None,
                   normalize_vectors: bool) -> DatasetBundle:
    return load_dataset(root, name, vectors, normalize_vectors)


def load_dataset(
    root: str | Path,
    name: str,
    vectors_path: str | Path | None = None,
    normalize_vectors: bool = True,
) -> DatasetBundle:
    """Load train/dev/test splits; carve a dev set out of train if absent."""
    root = Path(root)
    train = load_split(root / "train", "train")
    hashes = {"train": split_hash(root / "train")}
    dev_dir = next((root / d for d in ("dev", "valid") if (root / d).is_dir()), None)
    if dev_dir is not None:
        dev = load_split(dev_dir, "dev")
        hashes["dev"] = split_hash(dev_dir)
    else:
        n_dev = DEV_SIZES.get(name, max(1, len(train) // 10))
        train, dev = extract_dev(train, n_dev, seed=stable_seed(name, "dev"))
    test = load_split(root / "test", "test")
    hashes["test"] = split_hash(root / "test")

    vocab = build_vocab(train)
    emb = None
    if vectors_path:
        emb = load_pretrained(vectors_path, vocab, normalize=normalize_vectors)
    return DatasetBundle(
        name=name, train=train, dev=dev, test=test,
        vocab=vocab, embedding_matrix=emb, hashes=hashes,
    )


def run_manifest(config: RunConfig, bundle: DatasetBundle) -> dict:
    return {
        "config": config.to_dict(),
        "code_revision": code_revision(),
        "seed": config.seed,
        "dataset": bundle.name,
        "dataset_hashes": dict(bundle.hashes),
    }


# -- single cells ------------------------------------------------------------


def run_regime_cell(
    bundle: DatasetBundle,
    fraction: float,
    training: str,
    method: str,
    seed: int,
    base_config: RunConfig | None = None,
) -> dict:
    base = base_config or RunConfig()
    losses = LOSS_VARIANTS[(training, method)]
    config = base.with_overrides(
        losses=losses, dataset=bundle.name, seed=seed, fraction=fraction,
    )
    labeled, unlabeled = sample_regime(bundle.train, fraction, seed=stable_seed(
        bundle.name, "regime", fraction, seed))
    model, history = fit(
        bundle.train, labeled, unlabeled, bundle.vocab, config,
        embedding_matrix=bundle.embedding_matrix, dev_examples=bundle.dev,
    )
    report = evaluate(model, bundle.test, bundle.vocab, seed=seed)
    return {
        "kind": "regime",
        "dataset": bundle.name,
        "fraction": fraction,
        "training": training,
        "method": method,
        "seed": seed,
        "n_labeled": len(labeled),
        "labeled_ids": labeled,
        "metrics": report.to_dict(),
        "manifest": run_manifest(config, bundle),
        "history": history,
    }


def _criterion_for(training: str, method_criterion: str) -> str:
    if method_criterion == "random":
        return "random"
    return ENTROPY_CRITERIA[training]


def select_query_ids(
    model,
    pool_examples: Sequence[Example],
    vocab: Vocabulary,
    criterion: str,
    budget: int,
    seed: int,
) -> tuple[list[int], list[ConfidenceRecord]]:
    """Score a pool and pick the query set for one AL round."""
    if criterion == "random":
        records = [
            ConfidenceRecord(example_id=ex.id, conf_int=0.0, conf_slot=0.0)
            for ex in pool_examples
        ]
    else:
        records = score_pool(model, pool_examples, vocab)
        if criterion == "entropy-joint" and len(records) >= 2:
            records = joint_confidence(records)
    spec = QuerySpec(criterion=criterion, budget=budget, seed=seed)
    return select(records, spec), records


def run_al_cell(
    bundle: DatasetBundle,
    budget_percent: float,
    training: str,
    method: str,
    criterion: str,
    seed: int,
    base_config: RunConfig | None = None,
    checkpoint_dir: str | Path | None = None,
) -> dict:
    """Two-round AL: random initial half-set, method-specific query, refit.

    The initial set derives from (dataset, budget, seed) only so every
    method sees the same starting annotations.
    """
    base = base_config or RunConfig()
    losses = LOSS_VARIANTS[(training, method)]
    half = round_half_up(budget_percent / 2 / 100.0 * len(bundle.train))
    initial, pool = sample_labeled_count(
        bundle.train, half, seed=stable_seed(bundle.name, "al", budget_percent, seed)
    )
    config1 = base.with_overrides(
        losses=losses, dataset=bundle.name, seed=seed, fraction=budget_percent / 2
    )
    model1, _ = fit(
        bundle.train, initial, pool, bundle.vocab, config1,
        embedding_matrix=bundle.embedding_matrix, dev_examples=bundle.dev,
    )

    by_id = bundle.by_id()
    pool_examples = [by_id[i] for i in pool]
    cell_criterion = _criterion_for(training, criterion)
    selected, _ = select_query_ids(
        model1, pool_examples, bundle.vocab, cell_criterion, budget=half,
        seed=stable_seed(bundle.name, "al-query", budget_percent, seed),
    )

    union = sorted(set(initial) | set(selected))
    remaining = sorted(set(pool) - set(selected))
    config2 = base.with_overrides(
        losses=losses, dataset=bundle.name, seed=seed, fraction=budget_percent
    )
    model2, history2 = fit(
        bundle.train, union, remaining, bundle.vocab, config2,
        embedding_matrix=bundle.embedding_matrix, dev_examples=bundle.dev,
    )
    report = evaluate(model2, bundle.test, bundle.vocab, seed=seed)

    result = {
        "kind": "al",
        "dataset": bundle.name,
        "budget_percent": budget_percent,
        "training": training,
        "method": method,
        "criterion": criterion,
        "seed": seed,
        "initial_ids": initial,
        "initial_hash": stable_seed(*initial),
        "selected_ids": selected,
        "final_labeled_ids": union,
        "metrics": report.to_dict(),
        "manifest": run_manifest(config2, bundle),
        "history": history2,
    }
    if checkpoint_dir is not None:
        ckpt = Path(checkpoint_dir)
        ckpt.mkdir(parents=True, exist_ok=True)
        path = ckpt / f"al_{bundle.name}_{budget_percent}_{training}_{method}_{criterion}_{seed}_round1.pt"
        save_checkpoint(path, model1, run_config=config1.to_dict(),
                        vocab_hash=bundle.vocab.content_hash())
        result["round1_checkpoint"] = str(path)
    return result


def run_small_medium_cell(
    bundle: DatasetBundle,
    split: str,
    method: str,
    seed: int,
    base_config: RunConfig | None = None,
    batch_sizes: Sequence[int] = TUNING_BATCH_SIZES,
) -> dict:
    """Table-style comparison on a fixed-size subset with batch-size tuning
    on the full dev set (best-epoch selection doubles as epoch tuning)."""
    if method not in SMALL_MEDIUM_METHODS:
        raise ValueError(f"unknown method {method!r}")
    size = SMALL_MEDIUM_SIZES[(bundle.name, split)]
    base = base_config or RunConfig()
    subset, rest = sample_labeled_count(
        bundle.train, size, seed=stable_seed(bundle.name, "sm", split, seed)
    )

    def tuned_fit(losses, labeled, unlabeled):
        best = None
        for bs in batch_sizes:
            config = base.with_overrides(
                losses=losses, dataset=bundle.name, seed=seed,
                batch_size=bs, validation="full-dev",
            )
            model, history = fit(
                bundle.train, labeled, unlabeled, bundle.vocab, config,
                embedding_matrix=bundle.embedding_matrix, dev_examples=bundle.dev,
            )
            dev_report = evaluate(model, bundle.dev, bundle.vocab)
            score = dev_report.intent_accuracy + dev_report.slot_f1 / 100.0
            if best is None or score > best[0]:
                best = (score, bs, model)
        _, bs, model = best
        return model, bs

    def al_round(losses, criterion):
        half = size // 2
        init, pool = sample_labeled_count(
            bundle.train, half, seed=stable_seed(bundle.name, "sm-init", split, seed)
        )
        model1, _ = tuned_fit(losses, init, pool)
        by_id = bundle.by_id()
        selected, _ = select_query_ids(
            model1, [by_id[i] for i in pool], bundle.vocab, criterion,
            budget=size - half, seed=stable_seed(bundle.name, "sm-query", split, seed),
        )
        union = sorted(set(init) | set(selected))
        remaining = sorted(set(pool) - set(selected))
        return tuned_fit(losses, union, remaining)

    ce_losses = LOSS_VARIANTS[("joint", "ce")]
    vat_losses = LOSS_VARIANTS[("joint", "vat")]
    detail: dict = {}
    if method == "baseline":
        model, bs = tuned_fit(ce_losses, subset, [])
        report = evaluate(model, bundle.test, bundle.vocab, seed=seed)
        row = {"slot_f1": report.slot_f1, "intent_accuracy": report.intent_accuracy}
        detail["batch_size"] = bs
    elif method == "vat-joint":
        model, bs = tuned_fit(vat_losses, subset, rest)
        report = evaluate(model, bundle.test, bundle.vocab, seed=seed)
        row = {"slot_f1": report.slot_f1, "intent_accuracy": report.intent_accuracy}
        detail["batch_size"] = bs
    elif method == "viraal-joint-entropy":
        model, bs = al_round(vat_losses, "entropy-joint")
        report = evaluate(model, bundle.test, bundle.vocab, seed=seed)
        row = {"slot_f1": report.slot_f1, "intent_accuracy": report.intent_accuracy}
        detail["batch_size"] = bs
    else:  # viraal-individual-entropy: one query per task metric
        model_int, bs_i = al_round(vat_losses, "entropy-int")
        model_slot, bs_s = al_round(vat_losses, "entropy-slot")
        report_int = evaluate(model_int, bundle.test, bundle.vocab, seed=seed)
        report_slot = evaluate(model_slot, bundle.test, bundle.vocab, seed=seed)
        row = {
            "slot_f1": report_slot.slot_f1,
            "intent_accuracy": report_int.intent_accuracy,
        }
        detail["batch_size"] = {"int": bs_i, "slot": bs_s}

    return {
        "kind": "small-medium",
        "dataset": bundle.name,
        "split": split,
        "method": method,
        "seed": seed,
        "subset_size": size,
        "metrics": row,
        "detail": detail,
        "manifest": run_manifest(base.with_overrides(dataset=bundle.name, seed=seed),
                                 bundle),
    }


# -- grid execution ----------------------------------------------------------


def _atomic_write_json(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(payload, indent=1, default=str), encoding="utf-8")
    os.replace(tmp, path)


def _cell_worker(args: dict) -> tuple[str, str | None]:
    """Run one cell in a worker process; returns (cell_id, error or None)."""
    out_path = Path(args["out_path"])
    try:
        bundle = _cached_bundle(
            args["data_root"], args["dataset"],
            args.get("vectors"), args.get("normalize_vectors", True),
        )
        base = RunConfig.from_dict(args["base_config"])
        kind = args["kind"]
        if kind == "regime":
            result = run_regime_cell(
                bundle, args["fraction"], args["training"], args["method"],
                args["seed"], base,
            )
        elif kind == "al":
            result = run_al_cell(
                bundle, args["budget_percent"], args["training"], args["method"],
                args["criterion"], args["seed"], base,
            )
        else:
            result = run_small_medium_cell(
                bundle, args["split"], args["method"], args["seed"], base,
                batch_sizes=tuple(args.get("batch_sizes", TUNING_BATCH_SIZES)),
            )
        history = result.pop("history", None)
        if history:
            write_history_csv(history, out_path.with_suffix(".history.csv"))
        _atomic_write_json(out_path, result)
        return args["cell_id"], None
    except Exception as err:  # cell failures are recorded, not fatal
        _atomic_write_json(out_path.with_suffix(".error.json"),
                           {"cell_id": args["cell_id"], "error": repr(err)})
        return args["cell_id"], repr(err)


def run_cells(cells: list[dict], out_dir: str | Path, jobs: int = 1) -> dict:
    """Execute missing cells (serially or in a process pool); returns
    {"done": [...], "skipped": [...], "failed": {cell_id: error}}."""
    out_dir = Path(out_dir)
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)
    pending = []
    skipped = []
    for cell in cells:
        path = out_dir / "cells" / f"{cell['cell_id']}.json"
        cell["out_path"] = str(path)
        if path.exists():
            skipped.append(cell["cell_id"])
        else:
            pending.append(cell)

    failed: dict[str, str] = {}
    done: list[str] = []
    if jobs <= 1:
        results = map(_cell_worker, pending)
        for cell_id, error in results:
            (failed.__setitem__(cell_id, error) if error else done.append(cell_id))
    else:
        # spawn, not fork: forked workers deadlock in the numerics runtime
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx) as pool:
            futures = [pool.submit(_cell_worker, c) for c in pending]
            for fut in as_completed(futures):
                cell_id, error = fut.result()
                (failed.__setitem__(cell_id, error) if error else done.append(cell_id))
    return {"done": done, "skipped": skipped, "failed": failed}


def regime_cells(
    dataset: str,
    data_root: str,
    fractions: Sequence[float] | None = None,
    trainings: Sequence[str] = TRAININGS,
    methods: Sequence[str] = METHODS,
    seeds: Sequence[int] = tuple(range(8)),
    base_config: RunConfig | None = None,
    vectors: str | None = None,
) -> list[dict]:
    fractions = fractions or DEFAULT_FRACTIONS.get(dataset, [10, 50, 100])
    base = (base_config or RunConfig()).to_dict()
    cells = []
    for fraction in fractions:
        for training in trainings:
            for method in methods:
                for seed in seeds:
                    cells.append({
                        "kind": "regime",
                        "cell_id": f"regime_{dataset}_f{fraction}_{training}_{method}_s{seed}",
                        "dataset": dataset,
                        "data_root": data_root,
                        "fraction": fraction,
                        "training": training,
                        "method": method,
                        "seed": seed,
                        "base_config": base,
                        "vectors": vectors,
                    })
    return cells


def al_cells(
    dataset: str,
    data_root: str,
    budgets: Sequence[float] | None = None,
    trainings: Sequence[str] = TRAININGS,
    seeds: Sequence[int] = tuple(range(8)),
    base_config: RunConfig | None = None,
    vectors: str | None = None,
) -> list[dict]:
    budgets = budgets or DEFAULT_BUDGETS.get(dataset, [10, 20])
    base = (base_config or RunConfig()).to_dict()
    cells = []
    for budget in budgets:
        for training in trainings:
            for method, criterion in AL_METHODS:
                for seed in seeds:
                    cells.append({
                        "kind": "al",
                        "cell_id": (
                            f"al_{dataset}_x{budget}_{training}_{method}_{criterion}_s{seed}"
                        ),
                        "dataset": dataset,
                        "data_root": data_root,
                        "budget_percent": budget,
                        "training": training,
                        "method": method,
                        "criterion": criterion,
                        "seed": seed,
                        "base_config": base,
                        "vectors": vectors,
                    })
    return cells


def small_medium_cells(
    dataset: str,
    data_root: str,
    split: str,
    methods: Sequence[str] = SMALL_MEDIUM_METHODS,
    seeds: Sequence[int] = tuple(range(8)),
    base_config: RunConfig | None = None,
    vectors: str | None = None,
    batch_sizes: Sequence[int] = TUNING_BATCH_SIZES,
) -> list[dict]:
    base = (base_config or RunConfig()).to_dict()
    return [
        {
            "kind": "small-medium",
            "cell_id": f"sm_{dataset}_{split}_{method}_s{seed}",
            "dataset": dataset,
            "data_root": data_root,
            "split": split,
            "method": method,
            "seed": seed,
            "base_config": base,
            "vectors": vectors,
            "batch_sizes": list(batch_sizes),
        }
        for method in methods
        for seed in seeds
    ]


# -- aggregation and emission -------------------------------------------------


def aggregate(values: Sequence[float]) -> dict:
    """Population mean/std plus count."""
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        return {"mean": float("nan"), "std": float("nan"), "n": 0}
    return {"mean": float(arr.mean()), "std": float(arr.std()), "n": int(arr.size)}


def load_cell_results(out_dir: str | Path) -> list[dict]:
    results = []
    for path in sorted(Path(out_dir, "cells").glob("*.json")):
        if path.name.endswith(".error.json"):
            continue
        results.append(json.loads(path.read_text(encoding="utf-8")))
    return results


def summarize(out_dir: str | Path) -> list[dict]:
    """Aggregate cell results over seeds into one row per grid point."""
    results = load_cell_results(out_dir)
    groups: dict[tuple, list[dict]] = {}
    for r in results:
        if r["kind"] == "regime":
            key = (r["kind"], r["dataset"], r["fraction"], r["training"], r["method"])
        elif r["kind"] == "al":
            key = (r["kind"], r["dataset"], r["budget_percent"], r["training"],
                   r["method"], r["criterion"])
        else:
            key = (r["kind"], r["dataset"], r["split"], r["method"])
        groups.setdefault(key, []).append(r)

    rows = []
    for key, members in sorted(groups.items()):
        row = {"key": "_".join(str(k) for k in key)}
        for metric in ("intent_accuracy", "slot_f1"):
            stats = aggregate([m["metrics"][metric] for m in members
                               if metric in m["metrics"]])
            row[f"{metric}_mean"] = stats["mean"]
            row[f"{metric}_std"] = stats["std"]
            row["n"] = stats["n"]
        rows.append(row)
    return rows


def write_summary_csv(out_dir: str | Path) -> Path:
    rows = summarize(out_dir)
    path = Path(out_dir) / "summary.csv"
    if rows:
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
    else:
        path.write_text("", encoding="utf-8")
    return path


def write_plot_data(out_dir: str | Path) -> list[Path]:
    """One CSV per (dataset, kind, training, metric) panel for external plotting."""
    results = load_cell_results(out_dir)
    panels: dict[tuple, dict[tuple, list[float]]] = {}
    for r in results:
        if r["kind"] == "regime":
            x = r["fraction"]
            series = r["method"]
        elif r["kind"] == "al":
            x = r["budget_percent"]
            series = f"{r['method']}-{r['criterion']}"
        else:
            continue
        for metric in ("intent_accuracy", "slot_f1"):
            panel = panels.setdefault(
                (r["kind"], r["dataset"], r["training"], metric), {}
            )
            panel.setdefault((x, series), []).append(r["metrics"][metric])

    out_paths = []
    plot_dir = Path(out_dir) / "plots"
    plot_dir.mkdir(parents=True, exist_ok=True)
    for (kind, dataset, training, metric), series_map in sorted(panels.items()):
        path = plot_dir / f"{kind}_{dataset}_{training}_{metric}.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["x", "series", "mean", "std", "n"])
            for (x, series), values in sorted(series_map.items()):
                stats = aggregate(values)
                writer.writerow([x, series, stats["mean"], stats["std"], stats["n"]])
        out_paths.append(path)
    return out_paths

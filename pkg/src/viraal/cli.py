"""Command-line experiment driver and service launcher.

    viraal regime       --dataset atis --data-root data/atis --seeds 8 --out runs/regime
    viraal al           --dataset snips --data-root data/snips --budgets 2,4 --out runs/al
    viraal small-medium --dataset atis --data-root data/atis --split small --out runs/sm
    viraal aggregate    --out runs/regime
    viraal serve        --dataset atis --data-root data/atis --checkpoint model.pt ...

Exit code is nonzero iff any experiment cell failed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import yaml

from .harness import (
    AL_METHODS,
    SMALL_MEDIUM_METHODS,
    TRAININGS,
    TUNING_BATCH_SIZES,
    al_cells,
    load_dataset,
    regime_cells,
    run_cells,
    small_medium_cells,
    write_plot_data,
    write_summary_csv,
)
from .trainer import RunConfig


def _parse_list(text: str | None, cast=str) -> list | None:
    if not text:
        return None
    return [cast(part) for part in text.split(",") if part]


def _load_config(path: str | None) -> RunConfig:
    if not path:
        return RunConfig()
    with open(path, encoding="utf-8") as f:
        return RunConfig.from_dict(yaml.safe_load(f) or {})


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="dataset name (atis, snips, ...)")
    p.add_argument("--data-root", required=True, help="directory with train/dev/test splits")
    p.add_argument("--config", default=None, help="YAML file mirroring the run configuration")
    p.add_argument("--seeds", type=int, default=8, help="number of seeds (0..n-1)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=1, help="parallel cell processes")
    p.add_argument("--vectors", default=None, help="pretrained word-vector text file")


def _finish(out: str, outcome: dict) -> int:
    write_summary_csv(out)
    write_plot_data(out)
    print(f"done={len(outcome['done'])} skipped={len(outcome['skipped'])} "
          f"failed={len(outcome['failed'])}")
    for cell_id, error in outcome["failed"].items():
        print(f"FAILED {cell_id}: {error}", file=sys.stderr)
    return 1 if outcome["failed"] else 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="viraal", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_regime = sub.add_parser("regime", help="labeled-fraction sweep")
    _add_common(p_regime)
    p_regime.add_argument("--fractions", default=None, help="comma list, e.g. 5,10,50")
    p_regime.add_argument("--trainings", default=",".join(TRAININGS))
    p_regime.add_argument("--methods", default="ce,vat")

    p_al = sub.add_parser("al", help="two-round active learning")
    _add_common(p_al)
    p_al.add_argument("--budgets", default=None, help="total budget percents, e.g. 2,4,10")
    p_al.add_argument("--trainings", default=",".join(TRAININGS))

    p_sm = sub.add_parser("small-medium", help="fixed-subset comparison with tuning")
    _add_common(p_sm)
    p_sm.add_argument("--split", choices=("small", "medium"), required=True)
    p_sm.add_argument("--methods", default=",".join(SMALL_MEDIUM_METHODS))
    p_sm.add_argument("--batch-sizes", default=",".join(map(str, TUNING_BATCH_SIZES)))

    p_agg = sub.add_parser("aggregate", help="recompute summaries from cell files")
    p_agg.add_argument("--out", required=True)

    p_serve = sub.add_parser("serve", help="run the annotation service")
    p_serve.add_argument("--dataset", required=True)
    p_serve.add_argument("--data-root", required=True)
    p_serve.add_argument("--config", default=None)
    p_serve.add_argument("--checkpoint", default=None, help="initial model checkpoint")
    p_serve.add_argument("--labeled-ids", default=None,
                         help="JSON file with the initially labeled example ids")
    p_serve.add_argument("--service-dir", default="service-data")
    p_serve.add_argument("--host", default=os.environ.get("VIRAAL_HOST", "127.0.0.1"))
    p_serve.add_argument("--port", type=int,
                         default=int(os.environ.get("VIRAAL_PORT", "8000")))

    args = parser.parse_args(argv)
    if args.command == "aggregate":
        write_summary_csv(args.out)
        write_plot_data(args.out)
        print(f"summary written under {args.out}")
        return 0

    if args.command == "serve":
        return _serve(args)

    base = _load_config(args.config)
    seeds = tuple(range(args.seeds))
    if args.command == "regime":
        cells = regime_cells(
            args.dataset, args.data_root,
            fractions=_parse_list(args.fractions, float),
            trainings=tuple(_parse_list(args.trainings) or TRAININGS),
            methods=tuple(_parse_list(args.methods) or ("ce", "vat")),
            seeds=seeds, base_config=base, vectors=args.vectors,
        )
    elif args.command == "al":
        cells = al_cells(
            args.dataset, args.data_root,
            budgets=_parse_list(args.budgets, float),
            trainings=tuple(_parse_list(args.trainings) or TRAININGS),
            seeds=seeds, base_config=base, vectors=args.vectors,
        )
    else:
        cells = small_medium_cells(
            args.dataset, args.data_root, args.split,
            methods=tuple(_parse_list(args.methods) or SMALL_MEDIUM_METHODS),
            seeds=seeds, base_config=base, vectors=args.vectors,
            batch_sizes=tuple(_parse_list(args.batch_sizes, int) or TUNING_BATCH_SIZES),
        )

    outcome = run_cells(cells, args.out, jobs=args.jobs)
    return _finish(args.out, outcome)


def _serve(args) -> int:
    import uvicorn

    from .http_api import create_app
    from .model import load_checkpoint
    from .service import AnnotationService

    bundle = load_dataset(args.data_root, args.dataset)
    config = _load_config(args.config)
    model = None
    if args.checkpoint:
        model, _ = load_checkpoint(args.checkpoint)
    labeled = []
    if args.labeled_ids:
        labeled = json.loads(Path(args.labeled_ids).read_text(encoding="utf-8"))

    service = AnnotationService(
        bundle.train, bundle.vocab, config,
        data_dir=args.service_dir, labeled_ids=labeled,
        model=model, dev_examples=bundle.dev, resume=True,
    )
    uvicorn.run(create_app(service), host=args.host, port=args.port)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

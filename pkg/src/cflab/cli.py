"""Command-line entry point: ``cflab {prepare,train,diagnose,grid,report}``.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

from . import diagnostics as dg
from . import harness
from .dataset import SCENARIOS, InteractionDataset, prepare, split_train_test
from .factorization import LatentFactors, init_factors
from .models import LowRankModel, build_neural_model, save_model
from .neuralnet import ACTIVATIONS, INPUT_MODELINGS
from .training import TrainConfig, train_model

logger = logging.getLogger("cflab")

OUT_ENV = "CFLAB_OUT"


def _fraction(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError(f"split fraction must lie in (0, 1), got {value}")
    return value


def _alpha(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in [0, 1], got {value}")
    return value


def _existing_file(text: str) -> str:
    if not os.path.isfile(text):
        raise argparse.ArgumentTypeError(f"no such file: {text}")
    return text


def _out_dir(args, parser) -> Path:
    out = args.out or os.environ.get(OUT_ENV)
    if not out:
        parser.error(f"--out is required (or set {OUT_ENV})")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cflab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("prepare", help="binarize and split a MovieLens ratings.csv")
    p.add_argument("--ratings", required=True)
    p.add_argument("--scenario", choices=SCENARIOS, default="implicit")
    p.add_argument("--split", type=_fraction, default=0.8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")

    p = sub.add_parser("train", help="train one LRA or NCFN model")
    p.add_argument("--dataset", required=True, type=_existing_file)
    p.add_argument("--model", choices=("lra", "dnn"), default="lra")
    p.add_argument("--loss", choices=("bpr", "bce"))
    p.add_argument("--config", type=_existing_file, help="JSON with training/model fields")
    p.add_argument("--out")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--modeling", choices=INPUT_MODELINGS)
    p.add_argument("--layers", type=int, choices=range(4))
    p.add_argument("--activation", choices=ACTIVATIONS)
    p.add_argument("--pretrained", type=_existing_file, help="LRA factor file for pretrained embeddings")
    p.add_argument("--fixed", action="store_true", help="freeze pretrained embeddings")

    p = sub.add_parser("diagnose", help="covariance-correlation diagnostics")
    p.add_argument("--dataset", required=True, type=_existing_file)
    p.add_argument("--factors", type=_existing_file, help="fitted factors; fitted here when omitted")
    p.add_argument("--alpha", type=_alpha, default=dg.DEFAULT_ALPHA)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("grid", help="LRA search plus NCFN grid")
    p.add_argument("--dataset", type=_existing_file, help="prepared dataset (else the config's \"dataset\")")
    p.add_argument("--config", type=_existing_file)
    p.add_argument("--out")
    p.add_argument("--resume", action="store_true", help="skip runs already stored in --out")
    p.add_argument("--workers", type=int)

    p = sub.add_parser("report", help="rebuild report tables from stored results")
    p.add_argument("--results", help="grid output directory")
    p.add_argument("--stats", nargs="+", help="diagnose stats.csv files to merge into one table")
    p.add_argument("--svg", action="store_true")
    p.add_argument("--out")
    return parser


# -- verbs ---------------------------------------------------------------------

def cmd_prepare(args, parser) -> int:
    out = _out_dir(args, parser)
    ds = prepare(args.ratings, args.scenario, args.split, args.seed)
    ds.save(out / f"dataset-{args.scenario}.json")
    positives = int((ds.labels > 0).sum())
    print(f"ratings: {ds.n_ratings}")
    print(f"users: {ds.m}")
    print(f"items: {ds.n}")
    print(f"interactions: {len(ds)}")
    print(f"positives: {positives}")
    print(f"train: {len(ds.train_idx)}")
    print(f"test: {len(ds.test_idx)}")
    return 0


def _train_settings(args, parser) -> dict:
    settings = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            settings.update(json.load(fh))
    overrides = {
        "loss": args.loss, "epochs": args.epochs, "learning_rate": args.lr, "seed": args.seed,
        "p": args.p, "batch_size": args.batch_size, "modeling": args.modeling,
        "hidden_layers": args.layers, "activation": args.activation,
    }
    settings.update({k: v for k, v in overrides.items() if v is not None})
    return settings


def cmd_train(args, parser) -> int:
    if args.fixed and not args.pretrained:
        parser.error("--fixed needs --pretrained FILE")
    if args.pretrained and args.model != "dnn":
        parser.error("--pretrained only applies to --model dnn")
    out = _out_dir(args, parser)
    ds = InteractionDataset.load(args.dataset)
    settings = _train_settings(args, parser)
    modeling = settings.pop("modeling", "hadamard")
    layers = settings.pop("hidden_layers", 0)
    activation = settings.pop("activation", None)
    if layers and activation is None:
        activation = "relu"
    settings.setdefault("loss", "bpr" if ds.scenario == "implicit" else "bce")
    mode = "learned"
    if args.pretrained:
        mode = "pretrained_fixed" if args.fixed else "pretrained"
    try:
        config = TrainConfig(embedding_mode=mode, **settings)
    except TypeError as exc:
        parser.error(f"bad training config: {exc}")

    if args.model == "lra":
        factors = init_factors(ds.m, ds.n, config.p, _factor_rng(config.seed))
        factors.seed = config.seed
        model = LowRankModel(factors, config.use_bias)
        run_id = f"lra-p{config.p}-lr{config.learning_rate:g}-s{config.seed}-e{config.epochs}"
    else:
        pretrained = LatentFactors.load(args.pretrained) if args.pretrained else None
        if pretrained is not None and "p" not in settings:
            config.p = pretrained.p
        model = build_neural_model(ds.m, ds.n, config.p, modeling, layers, activation, mode, pretrained, config.seed)
        run_id = f"ncfn-{modeling}-{mode}-L{layers}-{activation or 'linear'}-lr{config.learning_rate:g}-s{config.seed}-e{config.epochs}"

    model, trace = train_model(model, ds, config)
    save_model(model, out / "checkpoint.json")
    if args.model == "lra":
        model.factors.save(out / "factors.json")
    with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["run_id", "epoch", "train_loss", "mrr", "map_at_10", "auc"])
        for r in trace:
            w.writerow([run_id, r.epoch, repr(r.train_loss), repr(r.mrr), repr(r.map_at_10), repr(r.auc)])
    report = {"run_id": run_id, "config": config.as_dict(), "final_train_loss": trace[-1].train_loss}
    if ds.is_split and len(ds.test_idx):
        best = max(trace, key=lambda r: (r.mrr, -r.epoch))
        report.update(best_epoch=best.epoch, mrr=best.mrr, map_at_10=best.map_at_10, auc=best.auc)
        print(f"best epoch {best.epoch}: MRR {best.mrr:.4f}  MAP@10 {best.map_at_10:.4f}  AUC {best.auc:.4f}")
    else:
        print(f"final train loss {trace[-1].train_loss:.5f} (no test split, no metrics)")
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    return 0


def _factor_rng(seed: int):
    import numpy as np

    return np.random.default_rng(np.random.SeedSequence([seed, 1]))


def cmd_diagnose(args, parser) -> int:
    out = _out_dir(args, parser)
    ds = InteractionDataset.load(args.dataset)
    if args.factors:
        factors = LatentFactors.load(args.factors)
    else:
        factors = dg.fit_factors(ds, seed=args.seed, epochs=args.epochs)
        factors.save(out / "factors.json")
    if (factors.m, factors.n) != (ds.m, ds.n):
        parser.error("factor shapes do not match the dataset")
    result = dg.run_diagnostics(factors, ds, args.alpha)
    dg.write_entities_csv(out / "entities.csv", [(v, ds.scenario, result[v][0]) for v in ("user", "item")])
    table = [result[v][1] for v in ("user", "item")]
    dg.write_stats_csv(out / "stats.csv", table)
    for view in ("user", "item"):
        edges, counts = dg.histogram(result[view][1].values)
        dg.write_histogram_csv(out / f"hist_{ds.scenario}_{view}.csv", edges, counts)
    if args.svg:
        for view in ("user", "item"):
            dg.render_histograms_svg(out / f"hist_{ds.scenario}_{view}.svg", {ds.scenario: result[view][1].values}, f"{view} view")
    for s in table:
        if s.empty:
            print(f"{s.scenario} {s.view}: no retained entities")
        else:
            print(f"{s.scenario} {s.view}: n={s.n} mean={s.mean:.4f} median={s.median:.4f}")
    return 0


def cmd_grid(args, parser) -> int:
    config = harness.GridConfig.load(args.config) if args.config else harness.GridConfig()
    if args.out is None and config.output_dir:
        args.out = config.output_dir
    out = _out_dir(args, parser)
    if not args.resume and any((out / "runs").glob("*.json")):
        parser.error(f"{out} already holds results; pass --resume to continue it")
    path = args.dataset or config.dataset
    if not path:
        parser.error("grid needs --dataset or a \"dataset\" entry in the config")
    ds = InteractionDataset.load(path)
    if config.split_fraction is not None or config.split_seed is not None:
        fraction = config.split_fraction if config.split_fraction is not None else (ds.fraction or 0.8)
        seed = config.split_seed if config.split_seed is not None else (ds.seed or 0)
        if not ds.is_split or (fraction, seed) != (ds.fraction, ds.seed):
            ds = split_train_test(ds.unsplit(), fraction, seed)
    if not ds.is_split:
        parser.error("grid needs a split dataset (cflab prepare)")
    workers = args.workers or config.workers
    factors, mf_best = harness.lra_search(ds, config.lra_grid, out_dir=out)
    factors.save(out / "mf_best.json")
    diag = dg.run_diagnostics(factors, ds, config.alpha)
    dg.write_stats_csv(out / "mf_best_stats.csv", [diag[v][1] for v in ("user", "item")])
    specs = config.ncfn_grid.specs(factors.p)
    results = harness.run_grid(ds, factors, specs, out_dir=out, resume=True, workers=workers)
    rows = harness.write_reports(out, results, mf_best, svg=config.svg)
    failed = sum(not r.ok for r in results)
    print(f"runs: {len(results)} ({failed} failed)")
    for r in rows:
        print(f"{r.label:32s} MRR {r.mrr:.4f}  MAP@10 {r.map_at_10:.4f}  AUC {r.auc:.4f}")
    return 0 if failed == 0 else 1


def cmd_report(args, parser) -> int:
    if not args.results and not args.stats:
        parser.error("report needs --results and/or --stats")
    if args.results:
        store = harness.ResultStore(args.results)
        records = store.all()
        lra = [r for r in records if r.kind == "lra"]
        ncfn = [r for r in records if r.kind == "ncfn"]
        if not ncfn:
            parser.error(f"no NCFN results under {args.results}")
        mf_best = harness.select_best_run(lra) if lra else None
        out = Path(args.out or args.results)
        rows = harness.write_reports(out, ncfn, mf_best, svg=args.svg)
        for r in rows:
            print(f"{r.label:32s} MRR {r.mrr:.4f}  MAP@10 {r.map_at_10:.4f}  AUC {r.auc:.4f}")
    if args.stats:
        out = _out_dir(args, parser)
        merged: dict[str, dict] = {}
        for path in args.stats:
            merged.update(dg.read_stats_csv(path))
        cols = sorted(merged)
        with open(out / "correlation_summary.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["statistic"] + cols)
            for stat in dg.STAT_ROWS:
                w.writerow([stat] + [merged[c][stat] if stat == "n" else repr(merged[c][stat]) for c in cols])
        print(f"wrote {out / 'correlation_summary.csv'}")
    return 0


COMMANDS = {
    "prepare": cmd_prepare,
    "train": cmd_train,
    "diagnose": cmd_diagnose,
    "grid": cmd_grid,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(name)s %(message)s")
    try:
        return COMMANDS[args.verb](args, parser)
    except SystemExit:
        raise
    except Exception as exc:
        print(f"cflab {args.verb}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

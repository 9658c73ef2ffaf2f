"""Experiment orchestration: LRA search, the NCFN grid, and result tables.

Every run is deterministic given its spec, and each finished run is stored
as ``runs/<run_id>.json``. A restarted grid skips the run ids it already has,
so an interrupted grid resumes to the same final result set.
"""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .dataset import InteractionDataset
from .evaluation import EvalReport
from .factorization import LatentFactors
from .models import EMBEDDING_MODES, build_neural_model
from .neuralnet import INPUT_MODELINGS, Architecture, enumerate_architectures
from .training import EpochRecord, TrainConfig, best_epoch, fit_lra, train_model

logger = logging.getLogger(__name__)

DEFAULT_SEEDS = (0, 1, 2, 3, 4)
DEFAULT_LEARNING_RATES = (0.001, 0.003, 0.01)
SETTINGS = tuple((mod, mode) for mod in INPUT_MODELINGS for mode in EMBEDDING_MODES)

SETTING_LABELS = {"learned": "DNN", "pretrained": "DNN_pretrained", "pretrained_fixed": "DNN_pretrained_fixed"}


def setting_label(modeling: str, mode: str) -> str:
    return f"{modeling}/{SETTING_LABELS[mode]}"


# -- specs ---------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentSpec:
    modeling: str
    embedding_mode: str
    hidden_layers: int
    activation: str | None
    learning_rate: float
    seed: int
    epochs: int = 20
    p: int = 32
    batch_size: int = 128

    @property
    def run_id(self) -> str:
        act = self.activation or "linear"
        return (
            f"ncfn-{self.modeling}-{self.embedding_mode}-L{self.hidden_layers}-{act}"
            f"-lr{self.learning_rate:g}-s{self.seed}-e{self.epochs}-p{self.p}-b{self.batch_size}"
        )

    @property
    def setting(self) -> tuple[str, str]:
        return self.modeling, self.embedding_mode

    @property
    def needs_pretrained(self) -> bool:
        return self.embedding_mode != "learned"


@dataclass(frozen=True)
class LraSpec:
    p: int
    learning_rate: float
    seed: int
    epochs: int = 20
    batch_size: int = 128
    use_bias: bool = True

    @property
    def run_id(self) -> str:
        bias = "" if self.use_bias else "-nobias"
        return f"lra-p{self.p}-lr{self.learning_rate:g}-s{self.seed}-e{self.epochs}-b{self.batch_size}{bias}"


@dataclass(frozen=True)
class LraGrid:
    p_values: tuple[int, ...] = (16, 32, 64)
    learning_rates: tuple[float, ...] = DEFAULT_LEARNING_RATES
    seeds: tuple[int, ...] = (0,)
    epochs: int = 20
    batch_size: int = 128
    use_bias: bool = True

    def specs(self) -> list[LraSpec]:
        return [
            LraSpec(p, lr, s, self.epochs, self.batch_size, self.use_bias)
            for p in self.p_values
            for lr in self.learning_rates
            for s in self.seeds
        ]


@dataclass(frozen=True)
class NcfnGrid:
    settings: tuple[tuple[str, str], ...] = SETTINGS
    architectures: tuple[Architecture, ...] = tuple(enumerate_architectures())
    learning_rates: tuple[float, ...] = DEFAULT_LEARNING_RATES
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    epochs: int = 20
    batch_size: int = 128
    p: int | None = None  # None: follow the winning LRA's latent dimension

    def specs(self, p: int | None = None) -> list[ExperimentSpec]:
        p = self.p if self.p is not None else p
        if p is None:
            raise ValueError("latent dimension unknown: set NcfnGrid.p or pass p")
        return [
            ExperimentSpec(mod, mode, arch.hidden_layers, arch.activation, lr, s, self.epochs, p, self.batch_size)
            for mod, mode in self.settings
            for arch in self.architectures
            for lr in self.learning_rates
            for s in self.seeds
        ]


def reduced_ncfn_grid(epochs: int = 20) -> NcfnGrid:
    """One seed, lr 0.003, depth 0-2 with ReLU and tanh: 5 architectures x 6 settings."""
    archs = tuple(a for a in enumerate_architectures() if a.hidden_layers <= 2 and a.activation in (None, "relu", "tanh"))
    return NcfnGrid(architectures=archs, learning_rates=(0.003,), seeds=(0,), epochs=epochs)


# -- results -------------------------------------------------------------------

@dataclass
class RunResult:
    run_id: str
    kind: str  # "lra" or "ncfn"
    spec: dict
    status: str = "ok"
    best_epoch: int = 0
    report: EvalReport | None = None
    trace: list[EpochRecord] = field(default_factory=list)
    pretrained_fingerprint: str | None = None
    error: str | None = None
    wall_time: float = 0.0  # kept out of the stored record

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    @property
    def setting(self) -> tuple[str, str] | None:
        if self.kind != "ncfn":
            return None
        return self.spec["modeling"], self.spec["embedding_mode"]

    def to_record(self) -> dict:
        return {
            "run_id": self.run_id,
            "kind": self.kind,
            "spec": self.spec,
            "status": self.status,
            "best_epoch": self.best_epoch,
            "report": None if self.report is None else self.report.as_dict(),
            "trace": [asdict(r) for r in self.trace],
            "pretrained_fingerprint": self.pretrained_fingerprint,
            "error": self.error,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RunResult":
        return cls(
            run_id=rec["run_id"],
            kind=rec["kind"],
            spec=rec["spec"],
            status=rec["status"],
            best_epoch=rec["best_epoch"],
            report=None if rec["report"] is None else EvalReport(**rec["report"]),
            trace=[EpochRecord(**r) for r in rec["trace"]],
            pretrained_fingerprint=rec.get("pretrained_fingerprint"),
            error=rec.get("error"),
        )


def _finish(run_id, kind, spec, trace, dataset, wall_time, fingerprint=None) -> RunResult:
    best = best_epoch(trace)
    rec = trace[best - 1]
    users = int(np.count_nonzero(np.diff(dataset.test_positives.indptr)))
    report = EvalReport(rec.mrr, rec.map_at_10, rec.auc, users, rec.mrr_first_hit)
    return RunResult(run_id, kind, spec, "ok", best, report, list(trace), fingerprint, None, wall_time)


def _require_split(dataset: InteractionDataset) -> None:
    if dataset.scenario != "implicit" or not dataset.is_split or len(dataset.test_idx) == 0:
        raise ValueError("experiments need an implicit dataset with a non-empty test split")


def run_lra(dataset: InteractionDataset, spec: LraSpec):
    """Train one LRA configuration with BPR; returns ``(factors, RunResult)``."""
    _require_split(dataset)
    config = TrainConfig(
        loss="bpr",
        batch_size=spec.batch_size,
        epochs=spec.epochs,
        learning_rate=spec.learning_rate,
        seed=spec.seed,
        p=spec.p,
        use_bias=spec.use_bias,
    )
    t0 = time.perf_counter()
    model, trace = fit_lra(dataset, config)
    return model.factors, _finish(spec.run_id, "lra", asdict(spec), trace, dataset, time.perf_counter() - t0)


def select_best_run(results: list[RunResult]) -> RunResult:
    """Highest MRR among successful runs; ties go to the smaller run id."""
    ok = [r for r in results if r.ok and r.report is not None]
    if not ok:
        raise ValueError("no successful runs to select from")
    return min(ok, key=lambda r: (-r.report.mrr, r.run_id))


def lra_search(dataset: InteractionDataset, grid: LraGrid | list[LraSpec] = LraGrid(), out_dir=None):
    """Grid-search LRA with BPR, selecting on test MRR; returns ``(factors, RunResult)``.

    With ``out_dir`` the winner is cached as ``mf_best.json`` next to the run
    records, and a repeated call reuses both.
    """
    specs = grid.specs() if isinstance(grid, LraGrid) else list(grid)
    if not specs:
        raise ValueError("empty LRA grid")
    store = ResultStore(out_dir) if out_dir is not None else None
    results, winners = [], {}
    for spec in specs:
        cached = store.load(spec.run_id) if store else None
        if cached is not None and cached.ok and store.has_factors(spec.run_id):
            results.append(cached)
            continue
        factors, result = run_lra(dataset, spec)
        logger.info("%s mrr=%.4f auc=%.4f (%.1fs)", spec.run_id, result.report.mrr, result.report.auc, result.wall_time)
        winners[spec.run_id] = factors
        if store:
            store.save(result)
            store.save_factors(spec.run_id, factors)
        results.append(result)
    best = select_best_run(results)
    factors = winners.get(best.run_id)
    if factors is None:
        factors = store.load_factors(best.run_id)
    return factors, best


def run_experiment(dataset: InteractionDataset, spec: ExperimentSpec, mf_best: LatentFactors | None = None) -> RunResult:
    _require_split(dataset)
    if spec.needs_pretrained:
        if mf_best is None:
            raise ValueError(f"{spec.run_id} needs pretrained factors")
        if mf_best.p != spec.p:
            raise ValueError(f"pretrained factors have p={mf_best.p}, spec wants p={spec.p}")
    model = build_neural_model(
        dataset.m, dataset.n, spec.p, spec.modeling, spec.hidden_layers, spec.activation,
        spec.embedding_mode, mf_best, seed=spec.seed,
    )
    config = TrainConfig(
        loss="bpr",
        batch_size=spec.batch_size,
        epochs=spec.epochs,
        learning_rate=spec.learning_rate,
        seed=spec.seed,
        embedding_mode=spec.embedding_mode,
        p=spec.p,
    )
    t0 = time.perf_counter()
    model, trace = train_model(model, dataset, config)
    fp = mf_best.fingerprint() if spec.needs_pretrained else None
    return _finish(spec.run_id, "ncfn", asdict(spec), trace, dataset, time.perf_counter() - t0, fp)


def _safe_run(args) -> RunResult:
    dataset, spec, mf_best = args
    t0 = time.perf_counter()
    try:
        return run_experiment(dataset, spec, mf_best)
    except Exception as exc:  # a failed run must not stop the grid
        logger.exception("run %s failed", spec.run_id)
        return RunResult(spec.run_id, "ncfn", asdict(spec), status="failed", error=f"{type(exc).__name__}: {exc}",
                         wall_time=time.perf_counter() - t0)


class ResultStore:
    """Append-only directory of per-run JSON records (single writer)."""

    def __init__(self, root):
        self.root = Path(root)
        self.runs = self.root / "runs"
        self.runs.mkdir(parents=True, exist_ok=True)

    def path(self, run_id: str) -> Path:
        return self.runs / f"{run_id}.json"

    def load(self, run_id: str) -> RunResult | None:
        path = self.path(run_id)
        if not path.exists():
            return None
        try:
            return RunResult.from_record(json.loads(path.read_text(encoding="utf-8")))
        except (ValueError, KeyError):
            logger.warning("ignoring unreadable record %s", path)
            return None

    def save(self, result: RunResult) -> None:
        path = self.path(result.run_id)
        tmp = path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(result.to_record(), sort_keys=True, indent=1), encoding="utf-8")
        os.replace(tmp, path)
        with open(self.root / "grid.log", "a", encoding="utf-8") as fh:
            fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} {result.run_id} {result.status} wall_time={result.wall_time:.2f}s\n")

    def has_factors(self, run_id: str) -> bool:
        return (self.runs / f"{run_id}.factors.json").exists()

    def save_factors(self, run_id: str, factors: LatentFactors) -> None:
        factors.save(self.runs / f"{run_id}.factors.json")

    def load_factors(self, run_id: str) -> LatentFactors:
        return LatentFactors.load(self.runs / f"{run_id}.factors.json")

    def all(self) -> list[RunResult]:
        out = []
        for path in sorted(self.runs.glob("*.json")):
            if path.name.endswith(".factors.json"):
                continue
            out.append(RunResult.from_record(json.loads(path.read_text(encoding="utf-8"))))
        return out


def run_grid(
    dataset: InteractionDataset,
    mf_best: LatentFactors | None,
    specs: list[ExperimentSpec],
    out_dir=None,
    resume: bool = True,
    workers: int = 1,
) -> list[RunResult]:
    """Execute every spec (skipping stored ones when resuming); results follow spec order."""
    ids = [s.run_id for s in specs]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate experiment specs")
    store = ResultStore(out_dir) if out_dir is not None else None
    results: dict[str, RunResult] = {}
    todo = []
    for spec in specs:
        cached = store.load(spec.run_id) if (store and resume) else None
        if cached is not None and cached.ok:
            results[spec.run_id] = cached
        else:
            todo.append(spec)
    logger.info("grid: %d runs, %d already stored, %d to execute", len(specs), len(specs) - len(todo), len(todo))

    def record(result: RunResult) -> None:
        if store:
            try:
                store.save(result)
            except OSError as exc:
                result.status, result.error = "failed", f"store: {exc}"
        results[result.run_id] = result

    jobs = [(dataset, spec, mf_best) for spec in todo]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for result in pool.map(_safe_run, jobs):
                record(result)
    else:
        for job in jobs:
            record(_safe_run(job))
    return [results[i] for i in ids]


# -- reporting -------------------------------------------------------------------

@dataclass(frozen=True)
class SettingRow:
    label: str
    modeling: str | None
    embedding_mode: str | None
    run_id: str | None
    mrr: float
    map_at_10: float
    auc: float
    mrr_gain: float  # relative MRR change vs the MF_best row

    @property
    def missing(self) -> bool:
        return self.run_id is None


def best_per_setting(results: list[RunResult], mf_best: RunResult | None = None) -> list[SettingRow]:
    """MF_best row followed by the best-MRR run of each of the six settings."""
    if not results:
        raise ValueError("no results to tabulate")
    base = mf_best.report.mrr if mf_best is not None else float("nan")
    rows = []
    if mf_best is not None:
        r = mf_best.report
        rows.append(SettingRow("MF_best", None, None, mf_best.run_id, r.mrr, r.map_at_10, r.auc, 0.0))
    for mod, mode in SETTINGS:
        group = [r for r in results if r.setting == (mod, mode)]
        try:
            best = select_best_run(group)
        except ValueError:
            nan = float("nan")
            rows.append(SettingRow(setting_label(mod, mode), mod, mode, None, nan, nan, nan, nan))
            continue
        r = best.report
        rows.append(SettingRow(setting_label(mod, mode), mod, mode, best.run_id, r.mrr, r.map_at_10, r.auc, (r.mrr - base) / base))
    return rows


def _fmt(x) -> str:
    return "" if x is None else (repr(float(x)) if isinstance(x, (float, np.floating)) else str(x))


def write_results_csv(path, results: list[RunResult]) -> None:
    cols = ["run_id", "kind", "status", "modeling", "embedding_mode", "hidden_layers", "activation",
            "p", "learning_rate", "seed", "epochs", "best_epoch", "mrr", "map_at_10", "auc"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in results:
            rep = r.report
            w.writerow([
                r.run_id, r.kind, r.status,
                _fmt(r.spec.get("modeling")), _fmt(r.spec.get("embedding_mode")), _fmt(r.spec.get("hidden_layers")),
                _fmt(r.spec.get("activation")), _fmt(r.spec.get("p")), _fmt(r.spec.get("learning_rate")),
                _fmt(r.spec.get("seed")), _fmt(r.spec.get("epochs")), r.best_epoch,
                _fmt(rep.mrr if rep else None), _fmt(rep.map_at_10 if rep else None), _fmt(rep.auc if rep else None),
            ])


def write_best_settings_csv(path, rows: list[SettingRow]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "run_id", "mrr", "map_at_10", "auc", "mrr_gain_vs_mf_best"])
        for r in rows:
            w.writerow([r.label, r.run_id or "missing", _fmt(r.mrr), _fmt(r.map_at_10), _fmt(r.auc), _fmt(r.mrr_gain)])


def write_mrr_by_setting_csv(path, rows: list[SettingRow]) -> None:
    base = next((r.mrr for r in rows if r.label == "MF_best"), float("nan"))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["modeling", "strategy", "mrr", "mf_best_mrr"])
        for r in rows:
            if r.modeling is None:
                continue
            w.writerow([r.modeling, SETTING_LABELS[r.embedding_mode], _fmt(r.mrr), _fmt(base)])


def render_mrr_by_setting_svg(path, rows: list[SettingRow]) -> None:
    """Grouped bars of best MRR per setting against the MF_best line; needs matplotlib."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    base = next((r.mrr for r in rows if r.label == "MF_best"), None)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.38
    for k, mod in enumerate(INPUT_MODELINGS):
        vals = [next((r.mrr for r in rows if (r.modeling, r.embedding_mode) == (mod, mode)), np.nan)
                for mode in EMBEDDING_MODES]
        xs = np.arange(len(EMBEDDING_MODES)) + (k - 0.5) * width
        ax.bar(xs, vals, width, label=mod)
    if base is not None:
        ax.axhline(base, color="k", linestyle="--", label="MF_best")
    ax.set_xticks(np.arange(len(EMBEDDING_MODES)), [SETTING_LABELS[m] for m in EMBEDDING_MODES])
    ax.set_ylabel("test MRR")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def write_reports(out_dir, results: list[RunResult], mf_best: RunResult | None, svg: bool = False) -> list[SettingRow]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_results_csv(out / "results.csv", results)
    rows = best_per_setting(results, mf_best)
    write_best_settings_csv(out / "table2.csv", rows)
    write_mrr_by_setting_csv(out / "figure3.csv", rows)
    if svg:
        render_mrr_by_setting_svg(out / "figure3.svg", rows)
    return rows


# -- config --------------------------------------------------------------------

@dataclass
class GridConfig:
    dataset: str | None = None  # prepared dataset JSON, used when --dataset is omitted
    split_fraction: float | None = None  # None: keep the dataset file's split
    split_seed: int | None = None
    alpha: float = 0.05  # significance threshold for the MF_best diagnostics
    lra_grid: LraGrid = LraGrid()
    ncfn_grid: NcfnGrid = NcfnGrid()
    output_dir: str | None = None
    workers: int = 1
    svg: bool = False

    @classmethod
    def from_dict(cls, payload: dict) -> "GridConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(payload)
        if "lra_grid" in kw:
            g = dict(kw["lra_grid"])
            for key in ("p_values", "learning_rates", "seeds"):
                if key in g:
                    g[key] = tuple(g[key])
            kw["lra_grid"] = LraGrid(**g)
        if "ncfn_grid" in kw:
            g = dict(kw["ncfn_grid"])
            if g.get("architectures") == "reduced":
                g["architectures"] = reduced_ncfn_grid().architectures
            elif "architectures" in g:
                g["architectures"] = tuple(Architecture(int(a[0]), a[1]) for a in g["architectures"])
            if "settings" in g:
                g["settings"] = tuple(tuple(s) for s in g["settings"])
            for key in ("learning_rates", "seeds"):
                if key in g:
                    g[key] = tuple(g[key])
            kw["ncfn_grid"] = NcfnGrid(**g)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "GridConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

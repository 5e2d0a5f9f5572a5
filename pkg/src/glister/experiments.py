"""Experiment orchestration: strategy x budget x seed cells, trace CSV and
summary JSON emission, and the benchmark harness.

All randomness flows from the per-run seed, derived as
``mix64(config_seed XOR strategy_hash XOR budget_index)`` so cells are
independent and reproducible in isolation.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .active import ACQUIRE_STRATEGIES, run_active
from .baselines import STRATEGIES, craig_subset, knn_submod_subset, random_subset
from .core import (
    EpochRecord,
    GlisterConfig,
    RunTrace,
    _SELECT_STREAM,
    glister_online_train,
    greedy_dss,
    init_model_params,
    subset_digest,
)
from .data import (
    Dataset,
    SplitSpec,
    SYNTHETIC_KINDS,
    gen_synthetic,
    inject_class_imbalance,
    inject_label_noise,
    parse_libsvm,
    split,
    standardize,
)
from .models import LossKind, ModelSpec, accuracy, loss_value, sgd_epoch
from .numerics import SeededRng
from .numerics import _mix64 as _mix

__all__ = [
    "ExperimentConfig",
    "ActiveConfig",
    "load_experiment_config",
    "load_active_config",
    "run_cell",
    "run_experiment",
    "run_active_experiment",
    "run_bench",
    "trace_to_csv",
    "trace_from_csv",
    "active_trace_to_csv",
    "derive_run_seed",
]

TRACE_HEADER = (
    "epoch,wall_s,sel_s,train_loss,full_train_loss,val_loss,test_acc,"
    "subset_digest,dot_vt,cos_theta,grad_norm_t,lr_bound"
)
ACTIVE_HEADER = "round,labeled_count,val_loss,test_acc,batch_digest"


def _fmt(x) -> str:
    if x is None:
        return ""
    return repr(float(x))


def trace_to_csv(trace: RunTrace) -> str:
    lines = [TRACE_HEADER]
    for r in trace.records:
        lines.append(
            ",".join(
                [
                    str(r.epoch),
                    _fmt(r.wall_s),
                    _fmt(r.sel_s),
                    _fmt(r.train_loss),
                    _fmt(r.full_train_loss),
                    _fmt(r.val_loss),
                    _fmt(r.test_acc),
                    r.subset_digest,
                    _fmt(r.dot_vt),
                    _fmt(r.cos_theta),
                    _fmt(r.grad_norm_t),
                    _fmt(r.lr_bound),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def trace_from_csv(text: str, lr: float = math.nan) -> RunTrace:
    reader = csv.DictReader(io.StringIO(text))
    trace = RunTrace(lr=lr)
    for row in reader:
        opt = lambda key: None if row[key] == "" else float(row[key])
        trace.records.append(
            EpochRecord(
                epoch=int(row["epoch"]),
                wall_s=float(row["wall_s"]),
                sel_s=float(row["sel_s"]),
                train_loss=float(row["train_loss"]),
                full_train_loss=float(row["full_train_loss"]),
                val_loss=float(row["val_loss"]),
                test_acc=float(row["test_acc"]),
                subset_digest=row["subset_digest"],
                dot_vt=opt("dot_vt"),
                cos_theta=opt("cos_theta"),
                grad_norm_t=opt("grad_norm_t"),
                lr_bound=opt("lr_bound"),
            )
        )
    return trace


def active_trace_to_csv(trace) -> str:
    lines = [ACTIVE_HEADER]
    for r in trace.rounds:
        lines.append(
            ",".join(
                [str(r.round), str(r.labeled_count), _fmt(r.val_loss), _fmt(r.test_acc), r.batch_digest]
            )
        )
    return "\n".join(lines) + "\n"


def derive_run_seed(config_seed: int, strategy: str, budget_index: int) -> int:
    strat_hash = int.from_bytes(strategy.encode()[:8].ljust(8, b"\0"), "little")
    return _mix((config_seed ^ strat_hash ^ budget_index) & 0xFFFFFFFFFFFFFFFF)


_CONFIG_KEYS = {
    "schema_version",
    "dataset",
    "split",
    "standardize",
    "model",
    "loss",
    "strategies",
    "budgets",
    "epochs",
    "select_every",
    "refreshes",
    "r_frac",
    "lr",
    "batch_size",
    "eta",
    "lambda",
    "regularizer",
    "greedy",
    "epsilon",
    "seeds",
    "corruption",
    "output_dir",
}

_ACTIVE_KEYS = {
    "schema_version",
    "dataset",
    "split",
    "standardize",
    "model",
    "loss",
    "strategies",
    "rounds",
    "batch",
    "epochs_per_round",
    "initial_labeled",
    "filter_mult",
    "select_every",
    "refreshes",
    "r_frac",
    "lr",
    "batch_size",
    "eta",
    "lambda",
    "regularizer",
    "greedy",
    "epsilon",
    "seeds",
    "corruption",
    "output_dir",
}


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    raw: dict

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])


@dataclass
class ActiveConfig:
    raw: dict

    @property
    def output_dir(self) -> Path:
        return Path(self.raw["output_dir"])


def _validate(raw: dict, allowed: set, active: bool) -> None:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if raw.get("schema_version") != 1:
        raise ConfigError("schema_version must be 1")
    for key in ("dataset", "seeds", "output_dir", "strategies"):
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")
    ds = raw["dataset"]
    if ds.get("kind") == "synthetic":
        if ds.get("name") not in SYNTHETIC_KINDS:
            raise ConfigError(f"unknown synthetic dataset {ds.get('name')!r}")
    elif ds.get("kind") == "libsvm":
        if "path" not in ds:
            raise ConfigError("libsvm dataset needs a path")
    else:
        raise ConfigError("dataset.kind must be 'synthetic' or 'libsvm'")
    if raw.get("loss", "cross_entropy") not in [k.value for k in LossKind]:
        raise ConfigError(f"unknown loss {raw.get('loss')!r}")
    strategies = raw["strategies"]
    valid = ACQUIRE_STRATEGIES if active else STRATEGIES
    bad = [s for s in strategies if s not in valid]
    if bad:
        raise ConfigError(f"unknown strategies: {bad}")
    if not active:
        budgets = raw.get("budgets", [])
        if not all(0.0 < b <= 1.0 for b in budgets):
            raise ConfigError("budget fractions must lie in (0, 1]")
        if any(s != "full" for s in strategies) and not budgets:
            raise ConfigError("non-full strategies need budgets")


def load_experiment_config(path) -> ExperimentConfig:
    raw = json.loads(Path(path).read_text())
    _validate(raw, _CONFIG_KEYS, active=False)
    return ExperimentConfig(raw)


def load_active_config(path) -> ActiveConfig:
    raw = json.loads(Path(path).read_text())
    _validate(raw, _ACTIVE_KEYS, active=True)
    return ActiveConfig(raw)


def build_datasets(raw: dict, seed: int):
    """Materialize (train, val, test) plus the achieved feature-norm bound
    for one run: generate or load, split, corrupt the train part, and
    standardize unless disabled."""
    ds_spec = raw["dataset"]
    split_spec = raw.get("split", {"train": 0.8, "val": 0.1, "test": 0.1, "seed": 1})
    if ds_spec["kind"] == "synthetic":
        kind = ds_spec["name"]
        n_per_class = int(ds_spec.get("n_per_class", 250))
        gen_seed = int(ds_spec.get("seed", seed))
        out = gen_synthetic(kind, n_per_class, gen_seed)
        if isinstance(out, tuple):
            # shifted-validation kinds: the full base set trains, and both
            # validation and test come from the shifted distribution
            train, val = out
            _, test = gen_synthetic(kind, max(n_per_class // 4, 2), gen_seed + 1)
        else:
            train, val, test = split(
                out,
                SplitSpec(
                    split_spec["train"], split_spec["val"], split_spec["test"],
                    split_spec.get("seed", 1),
                ),
            )
    else:
        base = parse_libsvm(Path(ds_spec["path"]).read_bytes())
        train, val, test = split(
            base,
            SplitSpec(
                split_spec["train"], split_spec["val"], split_spec["test"],
                split_spec.get("seed", 1),
            ),
        )
    corruption = raw.get("corruption") or {}
    if "noise_rate" in corruption:
        train = inject_label_noise(
            train, float(corruption["noise_rate"]), int(corruption.get("noise_seed", seed))
        )
    if "imbalance" in corruption:
        imb = corruption["imbalance"]
        train = inject_class_imbalance(
            train,
            float(imb.get("affected_frac", 0.3)),
            float(imb.get("keep_frac", 0.1)),
            int(imb.get("seed", seed)),
        )
    max_norm = float(np.sqrt((train.features**2).sum(axis=1)).max())
    if raw.get("standardize", True):
        train, (val, test), stats = standardize(train, (val, test))
        max_norm = stats.max_row_norm
    return train, val, test, max_norm


# documented defaults when the config leaves lambda unset
_LAMBDA_DEFAULTS = {"none": 0.0, "random": 0.9, "facility_location": 100.0, "diversity": 1.0}


def glister_config(raw: dict, seed: int, budget: float | None) -> GlisterConfig:
    regularizer = raw.get("regularizer", "none")
    lam = raw.get("lambda")
    if lam is None:
        lam = _LAMBDA_DEFAULTS[regularizer]
    return GlisterConfig(
        budget_frac=budget,
        select_every=int(raw.get("select_every", 20)),
        refreshes=raw.get("refreshes"),
        r_frac=raw.get("r_frac"),
        eta=raw.get("eta"),
        lr=float(raw.get("lr", 0.05)),
        batch_size=int(raw.get("batch_size", 32)),
        regularizer=regularizer,
        lam=float(lam),
        greedy=raw.get("greedy", "naive"),
        epsilon=float(raw.get("epsilon", 0.01)),
        loss=LossKind(raw.get("loss", "cross_entropy")),
        seed=seed,
    )


def _model_spec(raw: dict) -> ModelSpec:
    m = raw.get("model", {"arch": "mlp", "hidden": 100})
    return ModelSpec(m.get("arch", "mlp"), int(m.get("hidden", 100)))


def run_cell(
    strategy: str,
    train: Dataset,
    val: Dataset,
    test: Dataset,
    model_spec: ModelSpec,
    cfg: GlisterConfig,
    epochs: int,
):
    """One (strategy, budget, seed) training run; returns (params, subset,
    trace).  `glister` and `craig` reselect every L epochs, the one-shot
    strategies select at epoch 0 only, `full` trains on everything."""
    if strategy == "glister":
        return glister_online_train(train, val, test, model_spec, cfg, epochs)
    root = SeededRng(cfg.seed)
    params = init_model_params(train, model_spec, cfg)
    k = train.n if strategy == "full" else cfg.resolve_k(train.n)
    trace = RunTrace(lr=cfg.lr)
    start = time.perf_counter()
    subset: list[int] = []
    for t in range(epochs):
        sel_s = 0.0
        reselect = t == 0 if strategy != "craig" else t % cfg.select_every == 0
        if reselect:
            t0 = time.perf_counter()
            rng = root.split(_SELECT_STREAM + t)
            if strategy == "full":
                subset = list(range(train.n))
            elif strategy == "random":
                subset = random_subset(train, k, rng)
            elif strategy == "random_prior":
                subset = random_subset(train, k, rng, match_distribution=val)
            elif strategy == "craig":
                subset = sorted(craig_subset(train, params, k, cfg.loss))
            elif strategy == "knnsub_train":
                subset = sorted(knn_submod_subset(train, train, k))
            elif strategy == "knnsub_val":
                subset = sorted(knn_submod_subset(train, val, k))
            else:
                raise ValueError(f"unknown strategy {strategy!r}")
            sel_s = time.perf_counter() - t0
        params = sgd_epoch(params, train, subset, cfg.lr, cfg.batch_size, root.split(t), cfg.loss)
        trace.records.append(
            EpochRecord(
                epoch=t,
                wall_s=time.perf_counter() - start,
                sel_s=sel_s,
                train_loss=loss_value(params, train.features[subset], train.labels[subset], cfg.loss),
                full_train_loss=loss_value(params, train.features, train.labels, cfg.loss),
                val_loss=loss_value(params, val.features, val.labels, cfg.loss),
                test_acc=accuracy(params, test),
                subset_digest=subset_digest(subset),
            )
        )
    return params, subset, trace


def run_experiment(config: ExperimentConfig) -> dict:
    """Cross product of strategies x budgets x seeds; writes one trace CSV
    per cell plus summary.json.  Returns the summary object."""
    raw = config.raw
    out_dir = config.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    model_spec = _model_spec(raw)
    epochs = int(raw.get("epochs", 200))
    summary = []
    for strategy in raw["strategies"]:
        budgets = [None] if strategy == "full" else raw["budgets"]
        for b_idx, budget in enumerate(budgets):
            for seed in raw["seeds"]:
                run_seed = derive_run_seed(int(seed), strategy, b_idx)
                train, val, test, max_norm = build_datasets(raw, int(seed))
                cfg = glister_config(raw, run_seed, budget if budget is not None else 1.0)
                params, subset, trace = run_cell(
                    strategy, train, val, test, model_spec, cfg, epochs
                )
                tag = "full" if budget is None else f"b{int(round(budget * 100))}"
                trace_file = f"trace_{strategy}_{tag}_s{seed}.csv"
                (out_dir / trace_file).write_text(trace_to_csv(trace))
                last = trace.records[-1]
                summary.append(
                    {
                        "strategy": strategy,
                        "budget": budget,
                        "seed": int(seed),
                        "run_seed": run_seed,
                        "final_test_acc": last.test_acc,
                        "final_val_loss": last.val_loss,
                        "total_wall_s": last.wall_s,
                        "total_sel_s": sum(r.sel_s for r in trace.records),
                        "subset_digest": last.subset_digest,
                        "max_row_norm": max_norm,
                        "trace_file": trace_file,
                    }
                )
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def run_active_experiment(config: ActiveConfig) -> dict:
    raw = config.raw
    out_dir = config.output_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    model_spec = _model_spec(raw)
    rounds = int(raw.get("rounds", 10))
    batch = int(raw.get("batch", 50))
    epochs_per_round = int(raw.get("epochs_per_round", 200))
    n_initial = int(raw.get("initial_labeled", 20))
    summary = []
    for strategy in raw["strategies"]:
        for seed in raw["seeds"]:
            run_seed = derive_run_seed(int(seed), strategy, 0)
            pool, val, test, max_norm = build_datasets(raw, int(seed))
            regularizer = raw.get("regularizer", "none")
            lam = raw.get("lambda")
            if lam is None:
                lam = _LAMBDA_DEFAULTS[regularizer]
            cfg = GlisterConfig(
                k=batch,
                select_every=int(raw.get("select_every", 20)),
                refreshes=raw.get("refreshes"),
                r_frac=raw.get("r_frac"),
                eta=raw.get("eta"),
                lr=float(raw.get("lr", 0.05)),
                batch_size=int(raw.get("batch_size", 32)),
                regularizer=regularizer,
                lam=float(lam),
                greedy=raw.get("greedy", "naive"),
                epsilon=float(raw.get("epsilon", 0.01)),
                loss=LossKind(raw.get("loss", "cross_entropy")),
                seed=run_seed,
            )
            from .core import stratified_random_subset

            initial = stratified_random_subset(
                pool.labels, pool.num_classes, n_initial, SeededRng(run_seed).split(71)
            )
            params, state, trace = run_active(
                strategy, pool, val, test, initial, model_spec, cfg,
                rounds, batch, epochs_per_round,
                filter_mult=float(raw.get("filter_mult", 5.0)),
            )
            trace_file = f"active_{strategy}_s{seed}.csv"
            (out_dir / trace_file).write_text(active_trace_to_csv(trace))
            summary.append(
                {
                    "strategy": strategy,
                    "seed": int(seed),
                    "run_seed": run_seed,
                    "rounds": rounds,
                    "batch": batch,
                    "final_test_acc": trace.final_test_acc,
                    "final_val_loss": trace.final_val_loss,
                    "labeled_count": len(state.labeled),
                    "trace_file": trace_file,
                }
            )
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def make_bench_data(n: int, d: int, seed: int) -> tuple[Dataset, Dataset]:
    """Two-class d-dimensional Gaussian data for the benchmark harness."""
    rng = SeededRng(seed)
    half = n // 2
    x0 = rng.normals(half * d).reshape(half, d)
    x1 = rng.normals((n - half) * d).reshape(n - half, d)
    x0[:, 0] -= 2.0
    x1[:, 0] += 2.0
    feats = np.vstack([x0, x1])
    labels = np.array([0] * half + [1] * (n - half))
    train = Dataset(feats, labels, 2)
    m = max(n // 10, 10)
    vx = rng.normals(m * d).reshape(m, d)
    vx[: m // 2, 0] -= 2.0
    vx[m // 2:, 0] += 2.0
    vy = np.array([0] * (m // 2) + [1] * (m - m // 2))
    return train, Dataset(vx, vy, 2)


def run_bench(n: int, d: int, k: int, r_frac: float, seed: int = 0) -> dict:
    """Times r = k against r = ceil(r_frac * k) selection, and a full
    against a k-sized-subset training epoch."""
    train, val = make_bench_data(n, d, seed)
    model_spec = ModelSpec("logistic")
    base = GlisterConfig(k=k, lr=0.01, batch_size=32, seed=seed)
    params = init_model_params(train, model_spec, base)
    timings = []
    for r in (k, max(1, int(math.ceil(r_frac * k)))):
        cfg = GlisterConfig(k=k, refreshes=r, lr=0.01, batch_size=32, seed=seed)
        t0 = time.perf_counter()
        greedy_dss(train, val, params, cfg, k=k)
        timings.append({"r": r, "sel_s": time.perf_counter() - t0})
    rng = SeededRng(seed)
    t0 = time.perf_counter()
    sgd_epoch(params, train, list(range(train.n)), 0.01, 32, rng.split(0))
    full_epoch = time.perf_counter() - t0
    t0 = time.perf_counter()
    sgd_epoch(params, train, list(range(k)), 0.01, 32, rng.split(1))
    subset_epoch = time.perf_counter() - t0
    return {
        "n": n,
        "d": d,
        "k": k,
        "selection": timings,
        "train_full_epoch_s": full_epoch,
        "train_subset_epoch_s": subset_epoch,
        "selection_speedup": timings[0]["sel_s"] / max(timings[1]["sel_s"], 1e-12),
        "training_speedup": full_epoch / max(subset_epoch, 1e-12),
    }

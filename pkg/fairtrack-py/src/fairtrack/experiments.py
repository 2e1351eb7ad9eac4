"""Experiment harness behind the command line.

Single runs, λ-sweeps with Pareto extraction, and the three ablations
(prediction-set size, heterogeneity, convergence). Outputs are plain data:

* a run writes ``records.jsonl``, ``summary.csv``, ``model.bin``,
  ``config.resolved.json`` and ``timings.csv`` into
  ``<root>/<config-hash>-s<seed>``
* a sweep adds ``runs.csv``, ``table.csv`` (mean and standard error per λ)
  and ``pareto.csv``

``records.jsonl`` depends only on the config, so repeated runs produce
identical bytes; wall-clock timings go to ``timings.csv``.
"""

from __future__ import annotations

import json
import logging
import os
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from scipy.stats import norm

from .baselines import train_centralized, train_local_fair
from .config import RunConfigFile, Trainer
from .data import Federation, generate_synthetic, load_csv_with_groups, partition_by_column
from .errors import ConfigurationError
from .fairness import audit_epsilon_fairness
from .federation import FedRunConfig, SplitMetrics, evaluate, run_algorithm1, run_algorithm2, snapshot_id
from .models import Model, init_model, save_checkpoint

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "FAIRTRACK_OUTPUT_ROOT"
SET_SIZES = (20, 50, 100)
HETEROGENEITY_LAMBDA = 50.0
CONVERGENCE_LAMBDA = 0.5
DEFAULT_ALPHAS = (0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
Z_95 = float(norm.ppf(0.975))

SUMMARY_COLUMNS = [
    "trainer",
    "seed",
    "lam",
    "criterion",
    "kernel",
    "dp",
    "set_size",
    "heterogeneity",
    "n_clients",
    "rounds",
    "pseudo_stepsize",
    "snapshot",
    "train_loss",
    "test_loss",
    "train_mmd2",
    "test_mmd2",
    "train_objective",
    "test_objective",
    "train_mmd",
    "test_mmd",
    "train_accuracy",
    "test_accuracy",
    "train_sp_unfairness",
    "test_sp_unfairness",
    "empty_group_batches",
    "epsilon",
    "epsilon_fair",
    "config_hash",
]
CONVERGENCE_COLUMNS = [
    "round",
    "seed",
    "train_ce",
    "train_mmd",
    "test_ce",
    "test_mmd",
    "train_objective",
    "test_objective",
]


def default_output_root() -> Path:
    env = os.environ.get(OUTPUT_ROOT_ENV)
    if env:
        return Path(env)
    return Path.cwd() / "runs"


def build_federation(config: RunConfigFile) -> Federation:
    data = config.data
    split_seed = data.data_seed if data.data_seed is not None else config.seed
    if data.source == "csv":
        assert data.csv is not None
        csv = data.csv
        dataset, groups = load_csv_with_groups(
            csv.path,
            csv.feature_columns,
            csv.label_column,
            csv.protected_column,
            csv.group_column,
            csv.protected_threshold,
            label_threshold=csv.label_threshold,
        )
        shards = partition_by_column(dataset, groups, min_shard_size=csv.min_shard_size)
    else:
        shards = generate_synthetic(config.synthetic_spec())
    return Federation.from_shards(
        shards, test_fraction=data.test_fraction, seed=split_seed, standardize=data.standardize
    )


@dataclass
class RunOutcome:
    config: RunConfigFile
    model: Model
    records: list[dict[str, Any]]
    summary: dict[str, Any]
    round_seconds: list[float] = field(default_factory=list)


def _metrics_row(train: SplitMetrics, test: SplitMetrics) -> dict[str, Any]:
    row: dict[str, Any] = {}
    for prefix, metrics in (("train", train), ("test", test)):
        row[f"{prefix}_loss"] = metrics.loss
        row[f"{prefix}_mmd2"] = metrics.mmd2
        row[f"{prefix}_objective"] = metrics.objective
        row[f"{prefix}_mmd"] = metrics.mmd
        row[f"{prefix}_accuracy"] = metrics.accuracy
        row[f"{prefix}_sp_unfairness"] = metrics.sp_unfairness
    return row


def _summary(
    config: RunConfigFile,
    fed_config: FedRunConfig,
    federation: Federation,
    model: Model,
    rounds: int,
    pseudo_stepsize: float | None,
    empty_group_batches: int,
) -> dict[str, Any]:
    train, test = evaluate(model, federation, fed_config)
    epsilon = config.fairness.epsilon
    epsilon_fair = None
    if epsilon is not None:
        pooled, _ = federation.pooled("test")
        audit = audit_epsilon_fairness(model, pooled, fed_config.fairness, fed_config.kernel, epsilon)
        epsilon_fair = all(ok for _, ok in audit.values())
    summary = {
        "trainer": config.trainer.value,
        "seed": config.seed,
        "lam": config.fairness.lam,
        "criterion": config.fairness.criterion.value,
        "kernel": config.kernel.kind.value,
        "dp": config.dp.kind,
        "set_size": config.federation.set_size,
        "heterogeneity": config.data.heterogeneity,
        "n_clients": federation.n_clients,
        "rounds": rounds,
        "pseudo_stepsize": pseudo_stepsize,
        "snapshot": snapshot_id(model.params),
        **_metrics_row(train, test),
        "empty_group_batches": empty_group_batches,
        "epsilon": epsilon,
        "epsilon_fair": epsilon_fair,
        "config_hash": config.config_hash(),
    }
    return {key: summary[key] for key in SUMMARY_COLUMNS}


def execute(config: RunConfigFile, *, workers: int = 1) -> RunOutcome:
    """Run the configured trainer and collect records and the summary row."""
    federation = build_federation(config)
    fed_config = config.fed_run_config()
    trainer = config.trainer

    if trainer is Trainer.CENTRALIZED:
        pooled, _ = federation.pooled("train")
        start = init_model(fed_config.architecture, federation.dim, fed_config.hidden_units, seed=config.seed)
        result = train_centralized(
            pooled, start, fed_config.lam, fed_config.kernel, fed_config.fairness, config.centralized_config()
        )
        records = [
            {
                "trainer": trainer.value,
                "epoch": p.epoch,
                "train_loss": p.loss,
                "train_mmd2": p.mmd2,
                "train_objective": p.objective,
            }
            for p in result.history
        ]
        summary = _summary(config, fed_config, federation, result.model, config.centralized.epochs, None, 0)
        return RunOutcome(config=config, model=result.model, records=records, summary=summary)

    if trainer is Trainer.ALGORITHM1:
        fed_result = run_algorithm1(federation, fed_config, workers=workers)
    elif trainer is Trainer.ALGORITHM2:
        fed_result = run_algorithm2(federation, fed_config, workers=workers)
    else:
        fed_result = train_local_fair(federation, fed_config, workers=workers)

    records = [{"trainer": trainer.value, **r.to_dict()} for r in fed_result.records]
    summary = _summary(
        config,
        fed_config,
        federation,
        fed_result.model,
        fed_config.rounds,
        fed_result.pseudo_stepsize,
        sum(r.empty_group_batches for r in fed_result.records),
    )
    return RunOutcome(
        config=config,
        model=fed_result.model,
        records=records,
        summary=summary,
        round_seconds=fed_result.round_seconds,
    )


def run_directory(config: RunConfigFile, root: Path) -> Path:
    return root / f"{config.config_hash()}-s{config.seed}"


def write_run(outcome: RunOutcome, root: Path) -> Path:
    out = run_directory(outcome.config, root)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "records.jsonl").open("w", encoding="utf-8", newline="\n") as fh:
        for record in outcome.records:
            fh.write(json.dumps(record) + "\n")
    pd.DataFrame([outcome.summary], columns=SUMMARY_COLUMNS).to_csv(out / "summary.csv", index=False)
    save_checkpoint(outcome.model, out / "model.bin")
    (out / "config.resolved.json").write_text(outcome.config.resolved_json(), encoding="utf-8")
    timings = pd.DataFrame(
        {"round": range(1, len(outcome.round_seconds) + 1), "seconds": outcome.round_seconds},
        columns=["round", "seconds"],
    )
    timings.to_csv(out / "timings.csv", index=False)
    logger.info("path=<%s>, trainer=<%s> | wrote run outputs", out, outcome.config.trainer.value)
    return out


def run_and_write(config: RunConfigFile, root: Path | None = None, *, workers: int = 1) -> Path:
    return write_run(execute(config, workers=workers), root if root is not None else default_output_root())


# --- Sweeps ---------------------------------------------------------------


def lambda_grid(lo: float, hi: float, n: int) -> np.ndarray:
    """``n`` log-spaced values from ``lo`` to ``hi`` inclusive."""
    if not 0 < lo <= hi:
        raise ConfigurationError(f"lambda grid needs 0 < lo <= hi; got {lo}, {hi}", field="lambda_grid")
    if n < 1:
        raise ConfigurationError("lambda grid needs at least one point", field="lambda_grid")
    return np.geomspace(lo, hi, n)


def parse_lambda_grid(text: str) -> np.ndarray:
    """Parse ``lo:hi:n``."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigurationError(f"expected lo:hi:n; got {text!r}", field="lambda_grid")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ConfigurationError(f"expected lo:hi:n; got {text!r}", field="lambda_grid") from exc
    return lambda_grid(lo, hi, n)


def pareto_front(frame: pd.DataFrame, accuracy: str = "accuracy", unfairness: str = "sp_unfairness") -> pd.DataFrame:
    """Rows not dominated in (higher ``accuracy``, lower ``unfairness``), ordered by unfairness."""
    acc = frame[accuracy].to_numpy(dtype=np.float64)
    unf = frame[unfairness].to_numpy(dtype=np.float64)
    keep = []
    for i in range(len(frame)):
        no_worse = (acc >= acc[i]) & (unf <= unf[i])
        better = (acc > acc[i]) | (unf < unf[i])
        keep.append(not np.any(no_worse & better))
    return frame.loc[keep].sort_values(unfairness, kind="mergesort").reset_index(drop=True)


def _mean_se(values: pd.Series) -> tuple[float, float]:
    clean = values.dropna().to_numpy(dtype=np.float64)
    if clean.size == 0:
        return float("nan"), float("nan")
    se = float(clean.std(ddof=1) / np.sqrt(clean.size)) if clean.size > 1 else 0.0
    return float(clean.mean()), se


def aggregate_table(runs: pd.DataFrame, by: str = "lam") -> pd.DataFrame:
    """Mean and standard error over seeds of accuracy and unfairness per ``by`` value."""
    rows = []
    for key, group in runs.groupby(by, sort=True):
        acc_mean, acc_se = _mean_se(group["test_accuracy"])
        sp_mean, sp_se = _mean_se(group["test_sp_unfairness"])
        mmd_mean, mmd_se = _mean_se(group["test_mmd"])
        rows.append(
            {
                by: key,
                "n_seeds": len(group),
                "accuracy": acc_mean,
                "accuracy_se": acc_se,
                "sp_unfairness": sp_mean,
                "sp_unfairness_se": sp_se,
                "mmd": mmd_mean,
                "mmd_se": mmd_se,
            }
        )
    return pd.DataFrame(rows)


@dataclass
class JobResult:
    summary: dict[str, Any] | None
    records: list[dict[str, Any]]
    error: str | None = None


def _run_job(config_json: str, root: str) -> JobResult:
    config = RunConfigFile.model_validate_json(config_json)
    try:
        outcome = execute(config)
        write_run(outcome, Path(root))
    except Exception as exc:
        logger.exception("seed=<%d>, lam=<%s> | run failed", config.seed, config.fairness.lam)
        return JobResult(summary=None, records=[], error=str(exc))
    return JobResult(summary=outcome.summary, records=outcome.records)


def run_jobs(configs: Sequence[RunConfigFile], root: Path, *, workers: int = 1) -> list[JobResult]:
    """Run every config, in parallel processes when ``workers > 1``; results keep input order."""
    payloads = [c.model_dump_json() for c in configs]
    if workers <= 1 or len(configs) <= 1:
        return [_run_job(p, str(root)) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, payloads, [str(root)] * len(payloads)))


@dataclass
class SweepResult:
    runs: pd.DataFrame
    table: pd.DataFrame
    pareto: pd.DataFrame
    failures: int
    directory: Path


def sweep(
    config: RunConfigFile,
    lambdas: Sequence[float],
    seeds: Sequence[int],
    root: Path | None = None,
    *,
    workers: int = 1,
    name: str | None = None,
) -> SweepResult:
    """One run per ``(λ, seed)``; failed runs are counted and the sweep continues."""
    root = root if root is not None else default_output_root()
    out = root / (name or f"sweep-{config.config_hash()}")
    out.mkdir(parents=True, exist_ok=True)
    configs = [config.with_lambda(float(lam)).with_seed(seed) for lam in lambdas for seed in seeds]
    results = run_jobs(configs, out / "runs", workers=workers)
    failures = sum(1 for r in results if r.error is not None)
    if failures:
        logger.warning("failures=<%d>, total=<%d> | some sweep runs failed", failures, len(results))

    runs = pd.DataFrame([r.summary for r in results if r.summary is not None], columns=SUMMARY_COLUMNS)
    runs = runs.sort_values(["lam", "seed"], kind="mergesort").reset_index(drop=True)
    table = aggregate_table(runs) if not runs.empty else pd.DataFrame()
    pareto = pareto_front(table) if not table.empty else pd.DataFrame()
    runs.to_csv(out / "runs.csv", index=False)
    table.to_csv(out / "table.csv", index=False)
    pareto.to_csv(out / "pareto.csv", index=False)
    return SweepResult(runs=runs, table=table, pareto=pareto, failures=failures, directory=out)


# --- Ablations ------------------------------------------------------------


@dataclass
class AblationResult:
    tables: dict[str, pd.DataFrame]
    failures: int
    directory: Path


def ablate_set_size(
    config: RunConfigFile,
    lambdas: Sequence[float],
    seeds: Sequence[int],
    root: Path,
    *,
    workers: int = 1,
    sizes: Sequence[int] = SET_SIZES,
) -> AblationResult:
    out = root / f"ablate-set_size-{config.config_hash()}"
    tables: dict[str, pd.DataFrame] = {}
    failures = 0
    for size in sizes:
        result = sweep(config.with_set_size(size), lambdas, seeds, out, workers=workers, name=f"set_size-{size}")
        failures += result.failures
        tables[f"set_size-{size}"] = result.pareto
        result.table.assign(set_size=size).to_csv(out / f"table-{size}.csv", index=False)
        result.pareto.to_csv(out / f"pareto-{size}.csv", index=False)
    return AblationResult(tables=tables, failures=failures, directory=out)


def ablate_heterogeneity(
    config: RunConfigFile,
    seeds: Sequence[int],
    root: Path,
    *,
    workers: int = 1,
    alphas: Sequence[float] = DEFAULT_ALPHAS,
    lam: float = HETEROGENEITY_LAMBDA,
) -> AblationResult:
    """Mean ± 1.96·SE over seeds of accuracy and unfairness per heterogeneity level."""
    out = root / f"ablate-heterogeneity-{config.config_hash()}"
    out.mkdir(parents=True, exist_ok=True)
    base = config.with_lambda(lam)
    configs = [base.with_heterogeneity(a).with_seed(s) for a in alphas for s in seeds]
    results = run_jobs(configs, out / "runs", workers=workers)
    failures = sum(1 for r in results if r.error is not None)
    runs = pd.DataFrame([r.summary for r in results if r.summary is not None], columns=SUMMARY_COLUMNS)
    rows = []
    for alpha, group in runs.groupby("heterogeneity", sort=True):
        acc, acc_se = _mean_se(group["test_accuracy"])
        sp, sp_se = _mean_se(group["test_sp_unfairness"])
        rows.append(
            {
                "alpha": alpha,
                "n_seeds": len(group),
                "accuracy": acc,
                "accuracy_lo": acc - Z_95 * acc_se,
                "accuracy_hi": acc + Z_95 * acc_se,
                "sp_unfairness": sp,
                "sp_unfairness_lo": sp - Z_95 * sp_se,
                "sp_unfairness_hi": sp + Z_95 * sp_se,
            }
        )
    table = pd.DataFrame(rows)
    table.to_csv(out / "heterogeneity.csv", index=False)
    runs.to_csv(out / "runs.csv", index=False)
    return AblationResult(tables={"heterogeneity": table}, failures=failures, directory=out)


def ablate_convergence(
    config: RunConfigFile,
    seeds: Sequence[int],
    root: Path,
    *,
    workers: int = 1,
    lam: float = CONVERGENCE_LAMBDA,
) -> AblationResult:
    """Per-round loss curves split into cross-entropy and MMD² parts."""
    if config.trainer is Trainer.CENTRALIZED:
        raise ConfigurationError("convergence ablation needs a federated trainer", field="trainer")
    out = root / f"ablate-convergence-{config.config_hash()}"
    out.mkdir(parents=True, exist_ok=True)
    configs = [config.with_lambda(lam).with_seed(s) for s in seeds]
    results = run_jobs(configs, out / "runs", workers=workers)
    failures = sum(1 for r in results if r.error is not None)
    rows = [
        {
            "round": rec["round"],
            "seed": cfg.seed,
            "train_ce": rec["train_loss"],
            "train_mmd": rec["train_mmd2"],
            "test_ce": rec["test_loss"],
            "test_mmd": rec["test_mmd2"],
            "train_objective": rec["train_objective"],
            "test_objective": rec["test_objective"],
        }
        for cfg, result in zip(configs, results)
        for rec in result.records
    ]
    table = pd.DataFrame(rows, columns=CONVERGENCE_COLUMNS)
    table.to_csv(out / "convergence.csv", index=False)
    return AblationResult(tables={"convergence": table}, failures=failures, directory=out)

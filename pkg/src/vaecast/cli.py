"""Command-line entry points: generate, train, evaluate, rank, ablate.

Experiment configuration lives in a flat key = value file with dotted section
keys (diff-friendly), e.g.::

    dataset = mackey-glass
    model.backbone = tcn
    model.history_size = 120
    model.horizon = 60
    train.max_steps = 20000
    train.runs = 3

Exit codes: 0 success, 1 usage or configuration error, 2 runtime or data
error. Output files are written atomically (temp file + rename).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import (DataError, TimeSeries, aggregate_resample, impute_adjacent_mean,
                   impute_locf, load_csv, mackey_glass, split_and_window, write_csv)
from .forecasting import checkpoint_forecaster
from .metrics import build_report, evaluate_windows
from .model import ModelConfig
from .ranking import ScoreMatrix, ranking_json
from .training import (CheckpointError, TrainConfig, load_checkpoint,
                       save_checkpoint, train, write_log_csv)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class ConfigError(ValueError):
    """Invalid experiment configuration; all problems are listed at once."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    dataset: str = ""
    dataset_length: int = 20000            # synthetic generation only
    impute: str = "none"                   # none | adjacent | locf
    resample_factor: int = 1
    backbone: str = "rnn"
    history_size: int = 0
    horizon: int = 0
    sample_size: int = 8
    kl_weight: float = 1.0
    max_steps: int = 100_000
    patience_steps: int = 5_000
    batch_size: int = 32
    learning_rate: float = 1e-3
    eval_every: int = 100
    val_num_samples: int = 100
    clip_norm: float = 0.0                 # 0 disables clipping
    seed: int = 0
    runs: int = 3
    eval_num_samples: int = 1000
    eval_num_windows: int = 5
    eval_quantile_levels: int = 99
    eval_seed: int = 9000

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(max_steps=self.max_steps,
                           patience_steps=self.patience_steps,
                           batch_size=self.batch_size,
                           learning_rate=self.learning_rate,
                           eval_every=self.eval_every,
                           val_num_samples=self.val_num_samples,
                           clip_norm=self.clip_norm if self.clip_norm > 0 else None,
                           seed=seed)

    def model_config(self, sample_size: int | None = None) -> ModelConfig:
        return ModelConfig.create(self.backbone, self.history_size,
                                  sample_size=sample_size or self.sample_size,
                                  kl_weight=self.kl_weight)


_KEY_PARSERS = {
    "dataset": ("dataset", str),
    "dataset.length": ("dataset_length", int),
    "preprocess.impute": ("impute", str),
    "preprocess.resample_factor": ("resample_factor", int),
    "model.backbone": ("backbone", str),
    "model.history_size": ("history_size", int),
    "model.horizon": ("horizon", int),
    "model.sample_size": ("sample_size", int),
    "model.kl_weight": ("kl_weight", float),
    "train.max_steps": ("max_steps", int),
    "train.patience_steps": ("patience_steps", int),
    "train.batch_size": ("batch_size", int),
    "train.learning_rate": ("learning_rate", float),
    "train.eval_every": ("eval_every", int),
    "train.val_num_samples": ("val_num_samples", int),
    "train.clip_norm": ("clip_norm", float),
    "train.seed": ("seed", int),
    "train.runs": ("runs", int),
    "eval.num_samples": ("eval_num_samples", int),
    "eval.num_windows": ("eval_num_windows", int),
    "eval.quantile_levels": ("eval_quantile_levels", int),
    "eval.seed": ("eval_seed", int),
}


def parse_config(path) -> ExperimentConfig:
    """Parse and validate a config file; every problem is reported at once."""
    problems: list[str] = []
    cfg = ExperimentConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append(f"line {line_no}: expected key = value, got {raw!r}")
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _KEY_PARSERS:
            problems.append(f"line {line_no}: unknown key {key!r}")
            continue
        attr, caster = _KEY_PARSERS[key]
        try:
            setattr(cfg, attr, caster(value))
        except ValueError:
            problems.append(f"line {line_no}: cannot parse {key} value {value!r}")

    if not cfg.dataset:
        problems.append("dataset: missing (a CSV path or 'mackey-glass')")
    if cfg.impute not in ("none", "adjacent", "locf"):
        problems.append(f"preprocess.impute: must be none|adjacent|locf, "
                        f"got {cfg.impute!r}")
    if cfg.backbone not in ("rnn", "tcn"):
        problems.append(f"model.backbone: must be rnn|tcn, got {cfg.backbone!r}")
    for name in ("history_size", "horizon"):
        if getattr(cfg, name) <= 0:
            problems.append(f"model.{name}: must be a positive integer")
    for name in ("sample_size", "max_steps", "patience_steps", "batch_size",
                 "eval_every", "val_num_samples", "runs", "resample_factor",
                 "eval_num_samples", "eval_num_windows", "dataset_length"):
        if getattr(cfg, name) <= 0:
            problems.append(f"{name}: must be a positive integer")
    for name in ("kl_weight", "learning_rate"):
        if getattr(cfg, name) < 0:
            problems.append(f"{name}: must be >= 0")
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))
    return cfg


def load_dataset(cfg: ExperimentConfig) -> TimeSeries:
    if cfg.dataset == "mackey-glass":
        series = mackey_glass(cfg.dataset_length)
    else:
        series = load_csv(cfg.dataset)
    if cfg.impute == "adjacent":
        series = impute_adjacent_mean(series)
    elif cfg.impute == "locf":
        series = impute_locf(series)
    if cfg.resample_factor > 1:
        series = aggregate_resample(series, cfg.resample_factor)
    if series.has_missing():
        raise DataError("dataset has missing values; set preprocess.impute")
    return series


# ---------------------------------------------------------------------------
# atomic file helpers


def _atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_file(path: Path, write_fn) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _run_suffixed(path: Path, run: int) -> Path:
    return path.with_name(f"{path.stem}_run{run}{path.suffix}")


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    if args.kind != "mackey-glass":
        raise ConfigError(f"unknown generator kind {args.kind!r}")
    if args.length < 1:
        raise ConfigError("length must be a positive integer")
    series = mackey_glass(args.length)
    out = Path(args.out)
    _atomic_file(out, lambda tmp: write_csv(series, tmp))
    print(f"wrote {args.length} values to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = parse_config(args.config)
    series = load_dataset(cfg)
    split = split_and_window(series, cfg.history_size, cfg.horizon)
    out_ckpt = Path(args.out_checkpoint)
    out_log = Path(args.out_log)
    for run in range(cfg.runs):
        seed = cfg.seed + run
        ckpt, records = train(cfg.model_config(), split, cfg.train_config(seed))
        ckpt_path = _run_suffixed(out_ckpt, run)
        log_path = _run_suffixed(out_log, run)
        _atomic_file(ckpt_path, lambda tmp: save_checkpoint(ckpt, tmp))
        _atomic_file(log_path, lambda tmp: write_log_csv(records, tmp))
        print(f"run {run}: seed {seed}, best validation CRPS "
              f"{ckpt.best_val_crps:.6g} at step {ckpt.step} "
              f"-> {ckpt_path.name}, {log_path.name}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = parse_config(args.config)
    series = load_dataset(cfg)
    runs = []
    model_id = None
    for ckpt_path in args.checkpoint:
        ckpt = load_checkpoint(ckpt_path)
        if ckpt.history_size != cfg.history_size:
            raise CheckpointError(
                f"{ckpt_path}: checkpoint history size {ckpt.history_size} "
                f"does not match configured model.history_size {cfg.history_size}")
        model_id = ckpt.model_id
        # every run is scored with the same seeds (common random numbers)
        runs.append(evaluate_windows(checkpoint_forecaster(ckpt), series.values,
                                     cfg.history_size, cfg.horizon,
                                     num_windows=cfg.eval_num_windows,
                                     num_paths=cfg.eval_num_samples,
                                     seed=cfg.eval_seed))
        print(f"{ckpt_path}: mean CRPS {runs[-1].mean_crps:.6g}")
    dataset_name = series.name or cfg.dataset
    report = build_report(dataset_name, model_id or "model", runs,
                          reference_crps=args.reference)
    _atomic_write_text(Path(args.out),
                       json.dumps(report.to_json_dict(), indent=2) + "\n")
    cv = "n/a" if report.cv_percent is None else f"{report.cv_percent:.2f}%"
    print(f"mean CRPS {report.mean_crps:.6g} (CV {cv}) -> {args.out}")
    return EXIT_OK


def cmd_rank(args) -> int:
    report_dir = Path(args.reports)
    files = sorted(report_dir.glob("*.json"))
    if not files:
        raise DataError(f"no report files found in {report_dir}")
    cells: dict[str, dict[str, list[float]]] = {}
    for path in files:
        payload = json.loads(path.read_text(encoding="utf-8"))
        try:
            model = payload["model"]
            dataset = payload["dataset"]
            scores = [run["mean_crps"] for run in payload["runs"]]
        except (KeyError, TypeError) as exc:
            raise DataError(f"{path}: not a CRPS report ({exc})") from exc
        cells.setdefault(model, {})[dataset] = scores

    models = sorted(cells)
    datasets = sorted({ds for row in cells.values() for ds in row})
    if len(models) == 1:
        payload = {"models": models, "avg_ranks": {models[0]: 1.0},
                   "friedman": None, "bands": [models],
                   "warning": "single model: ranking is trivial, omnibus test "
                              "skipped"}
        _atomic_write_text(Path(args.out), json.dumps(payload, indent=2) + "\n")
        print(f"single model {models[0]}; trivial ranking -> {args.out}")
        return EXIT_OK

    run_counts = set()
    for model in models:
        for ds in datasets:
            if ds not in cells[model]:
                raise DataError(f"ragged score matrix: model {model!r} has no "
                                f"report for dataset {ds!r}")
            run_counts.add(len(cells[model][ds]))
    if len(run_counts) != 1:
        raise DataError(f"ragged score matrix: run counts {sorted(run_counts)}")
    scores = np.array([[cells[m][d] for d in datasets] for m in models])
    matrix = ScoreMatrix(models=models, datasets=datasets, scores=scores)
    payload = ranking_json(matrix, alpha=args.alpha)
    _atomic_write_text(Path(args.out), json.dumps(payload, indent=2) + "\n")
    print(f"ranked {len(models)} models over {len(datasets)} datasets "
          f"-> {args.out}")
    return EXIT_OK


ABLATION_HEADER = "sample_size,mean_crps,cv_percent,ms_per_step"


def cmd_ablate(args) -> int:
    cfg = parse_config(args.config)
    try:
        values = [int(v) for v in args.values.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse --values {args.values!r}") from None
    if not values or any(v < 1 for v in values):
        raise ConfigError("--values must be positive integers")
    series = load_dataset(cfg)
    split = split_and_window(series, cfg.history_size, cfg.horizon)
    lines = [ABLATION_HEADER]
    for sample_size in values:
        scores = []
        step_times = []
        for run in range(cfg.runs):
            seed = cfg.seed + run
            ckpt, records = train(cfg.model_config(sample_size=sample_size),
                                  split, cfg.train_config(seed))
            ev = evaluate_windows(checkpoint_forecaster(ckpt), series.values,
                                  cfg.history_size, cfg.horizon,
                                  num_windows=cfg.eval_num_windows,
                                  num_paths=cfg.eval_num_samples,
                                  seed=cfg.eval_seed)
            scores.append(ev.mean_crps)
            step_times.append(float(np.mean([r.ms_per_step for r in records])))
        mean_crps = float(np.mean(scores))
        cv = 0.0 if len(scores) < 2 else \
            float(np.std(scores) / np.mean(scores) * 100.0)
        ms = float(np.mean(step_times))
        lines.append(f"{sample_size},{mean_crps!r},{cv!r},{ms!r}")
        print(f"sample size {sample_size}: mean CRPS {mean_crps:.6g} "
              f"(CV {cv:.2f}%), {ms:.2f} ms/step")
    _atomic_write_text(Path(args.out), "\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vaecast",
        description="Probabilistic univariate forecasting with a CVAE trained "
                    "on a sampled CRPS objective.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic benchmark series")
    p.add_argument("--kind", default="mackey-glass")
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train one model per run seed")
    p.add_argument("--config", required=True)
    p.add_argument("--out-checkpoint", required=True,
                   help="checkpoint path; _run<i> is inserted before the suffix")
    p.add_argument("--out-log", required=True,
                   help="training log CSV path; _run<i> is inserted likewise")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("evaluate", help="score checkpoints on the test windows")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", action="append", required=True,
                   help="repeat once per run checkpoint")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--reference", type=float, default=None,
                   help="best-model CRPS for the relative-score field")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("rank", help="rank models from a directory of reports")
    p.add_argument("--reports", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(fn=cmd_rank)

    p = sub.add_parser("ablate", help="sweep the training sample size")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="ablation CSV path")
    p.add_argument("--values", default="1,2,4,8,16,32,64,128")
    p.set_defaults(fn=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, CheckpointError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

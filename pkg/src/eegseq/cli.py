"""Command-line interface: ``eegseq {synth,train,eval,inspect,count-params}``.

Exit codes: 0 success, 2 usage or configuration error, 1 runtime error.
Summaries go to stdout, diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import json
import platform
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    extract_windows,
    load_recordings,
    read_recording_csv,
    stratified_split,
    synth_generate,
    write_recordings,
)
from .errors import ConfigError, EegSeqError, UnsupportedOperationError
from .models import (
    BUDGET_TOLERANCE,
    DISPLAY_NAMES,
    FAMILIES,
    BUDGET_TARGETS,
    ModelConfig,
    build,
    count_parameters,
    export_qkv,
    normalize_family,
    shipped_config,
    validate,
)
from .report import (
    RunReport,
    SeedRun,
    dump_json,
    write_aggregate,
    write_confusion_csv,
    write_curves_csv,
    write_evaluation,
    write_roc_csv,
    write_scores_csv,
)
from .training import TrainConfig, evaluate, evaluate_scores, train

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

MODEL_FIELDS = {f.name for f in dataclasses.fields(ModelConfig)} - {"family", "window_length", "budget_matched"}


class UsageError(EegSeqError):
    pass


# ----------------------------------------------------------------------------
# session configuration


@dataclass
class SessionConfig:
    """Fully resolved settings of a ``train`` invocation.

    Config-file keys (flat JSON object) are the field names below, plus
    ``model.<field>`` for any ModelConfig field.  ``seeds`` is either a
    count (seeds 0..n-1) or an explicit list.  An unset ``patience`` is
    30, capped at ``epochs - 1`` so short smoke runs stay valid.
    """

    task: str = "custom"
    families: list[str] = field(default_factory=lambda: list(FAMILIES))
    manifest: str | None = None
    synth_per_class: int | None = None
    synth_channels: int = 4
    synth_samples: int = 4000
    synth_seed: int = 0
    synth_separation: float = 1.0
    out: str | None = None
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    epochs: int = 150
    batch_size: int = 128
    patience: int | None = None
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    val_fraction: float = 0.15
    test_fraction: float = 0.30
    split_seed: int = 0
    window_length: int = 2000
    offset: int = 0
    subject_split: bool = False
    jobs: int = 1
    dtype: str = "float32"
    model: dict[str, Any] = field(default_factory=dict)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            patience=self.patience if self.patience is not None else min(30, self.epochs - 1),
            lr=self.lr,
            beta1=self.beta1,
            beta2=self.beta2,
            eps=self.eps,
            val_fraction=self.val_fraction,
            seeds=tuple(self.seeds),
        )

    def model_config(self, family: str) -> ModelConfig:
        overrides = {k: tuple(v) if isinstance(v, list) else v for k, v in self.model.items()}
        return shipped_config(family, window_length=self.window_length, **overrides)

    def data_settings(self) -> dict[str, Any]:
        return {
            "task": self.task,
            "window_length": self.window_length,
            "offset": self.offset,
            "test_fraction": self.test_fraction,
            "split_seed": self.split_seed,
            "subject_split": self.subject_split,
            "val_fraction": self.val_fraction,
        }


SESSION_KEYS = {f.name for f in dataclasses.fields(SessionConfig)} - {"families", "model"} | {"family"}


def _seeds_value(v) -> list[int]:
    if isinstance(v, bool):
        raise ValueError("seeds must be an integer count or a list of integers")
    if isinstance(v, int):
        return list(range(v))
    if isinstance(v, list) and all(isinstance(s, int) and not isinstance(s, bool) for s in v):
        return list(v)
    raise ValueError("seeds must be an integer count or a list of integers")


def _families_value(v) -> list[str]:
    items = v if isinstance(v, list) else str(v).split(",")
    out = []
    for item in items:
        item = item.strip()
        if item == "all":
            out.extend(f for f in FAMILIES if f not in out)
        elif item:
            fam = normalize_family(item)
            if fam not in out:
                out.append(fam)
    return out


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_session(args: argparse.Namespace) -> SessionConfig:
    """Merge defaults < config file < flags and validate; raise ConfigError listing every problem."""
    errors: list[str] = []
    raw: dict[str, Any] = {}
    model: dict[str, Any] = {}
    if args.config:
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from None
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {path} must hold a JSON object")
        for key, value in loaded.items():
            if key.startswith("model."):
                name = key[len("model."):]
                if name in MODEL_FIELDS:
                    model[name] = value
                else:
                    errors.append(f"unknown model key in config file: {key}")
            elif key in SESSION_KEYS:
                raw[key] = value
            else:
                errors.append(f"unknown config key: {key}")
    for key in SESSION_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    if args.seed_list is not None:
        raw["seeds"] = [int(s) for s in args.seed_list.split(",") if s.strip()]
    for item in args.set or []:
        name, sep, value = item.partition("=")
        name = name.strip().removeprefix("model.")
        if not sep or name not in MODEL_FIELDS:
            errors.append(f"--set expects MODEL_FIELD=VALUE with a known field, got {item!r}")
            continue
        model[name] = _parse_value(value)

    cfg = SessionConfig()
    for key, value in raw.items():
        try:
            if key == "family":
                cfg.families = _families_value(value)
            elif key == "seeds":
                cfg.seeds = _seeds_value(value)
            else:
                default = getattr(SessionConfig(), key)
                if key == "patience":
                    default = 0
                if isinstance(default, bool):
                    if not isinstance(value, bool):
                        raise ValueError("expected true/false")
                elif isinstance(default, int) and not isinstance(default, bool):
                    if isinstance(value, bool) or int(value) != value:
                        raise ValueError("expected an integer")
                    value = int(value)
                elif isinstance(default, float):
                    value = float(value)
                setattr(cfg, key, value)
        except (ValueError, TypeError, EegSeqError) as exc:
            errors.append(f"{key}: {exc}")
    cfg.model = model

    if cfg.task not in ("depression", "responder", "custom"):
        errors.append(f"task must be depression, responder or custom, got {cfg.task!r}")
    if not cfg.families:
        errors.append("no model family selected")
    if cfg.out is None:
        errors.append("an output directory is required (--out)")
    if (cfg.manifest is None) == (cfg.synth_per_class is None):
        errors.append("choose exactly one data source: --manifest or --synth-per-class")
    if cfg.synth_per_class is not None and min(cfg.synth_per_class, cfg.synth_channels, cfg.synth_samples) < 1:
        errors.append("synthetic subjects per class, channels and samples must be positive")
    if cfg.synth_per_class is not None and cfg.synth_samples < cfg.offset + cfg.window_length:
        errors.append(
            f"synthetic recordings of {cfg.synth_samples} samples are shorter than "
            f"offset + window length ({cfg.offset} + {cfg.window_length})"
        )
    if not cfg.seeds:
        errors.append("at least one seed is required")
    if cfg.jobs < 1:
        errors.append("jobs must be positive")
    if cfg.dtype not in ("float32", "float64"):
        errors.append(f"dtype must be float32 or float64, got {cfg.dtype!r}")
    if not 0.0 < cfg.test_fraction < 1.0:
        errors.append(f"test_fraction must lie in (0, 1), got {cfg.test_fraction}")
    try:
        cfg.train_config().validate()
    except ConfigError as exc:
        errors.append(str(exc))
    for fam in cfg.families:
        try:
            validate(cfg.model_config(fam))
        except (ConfigError, TypeError) as exc:
            errors.append(f"{fam}: {exc}")
    if errors:
        raise ConfigError("invalid configuration:\n  - " + "\n  - ".join(errors))
    return cfg


# ----------------------------------------------------------------------------
# train


def _run_seed(job: tuple) -> dict:
    """Train and evaluate one (family, seed); write its files; return the report dict."""
    model_cfg, seed, dtype, train_cfg, ds, split, seed_dir, extra = job
    seed_dir = Path(seed_dir)
    seed_dir.mkdir(parents=True, exist_ok=True)
    model = build(model_cfg, seed=seed, dtype=np.dtype(dtype))
    history = train(model, ds, split, train_cfg, seed=seed)
    ev = evaluate(model, ds.windows[split.test], ds.labels[split.test])
    run = SeedRun(seed, ev, history)
    save_checkpoint(model, seed_dir / "model.ckpt", extra=dict(extra, seed=seed))
    dump_json(run.to_dict(), seed_dir / "report.json")
    write_curves_csv(history, seed_dir / "curves.csv")
    write_confusion_csv(ev, seed_dir / "confusion.csv")
    write_roc_csv(ev, seed_dir / "roc.csv")
    write_scores_csv(ev, seed_dir / "scores.csv")
    return {"seed": seed, "evaluation": ev, "history": history}


def cmd_train(args) -> int:
    cfg = resolve_session(args)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    if cfg.synth_per_class is not None:
        recordings = synth_generate(
            cfg.synth_per_class, cfg.synth_channels, cfg.synth_samples, cfg.synth_seed, cfg.synth_separation
        )
        manifest = write_recordings(recordings, out / "data")
    else:
        manifest = Path(cfg.manifest)
        recordings = load_recordings(manifest)
    ds = extract_windows(recordings, cfg.window_length, cfg.offset)
    split = stratified_split(ds, cfg.test_fraction, cfg.split_seed, by_subject=cfg.subject_split)
    resolved = dataclasses.asdict(cfg)
    resolved["manifest"] = str(manifest)
    resolved["model_configs"] = {f: cfg.model_config(f).to_dict() for f in cfg.families}
    dump_json(resolved, out / "resolved_config.json")
    dump_json(
        {
            "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "version": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
        out / "metadata.json",
    )
    print(f"dataset: {len(ds)} windows of {ds.window_length}; train {len(split.train)}, test {len(split.test)}")
    train_cfg = cfg.train_config()
    extra = cfg.data_settings()
    reports = []
    for fam in cfg.families:
        model_cfg = cfg.model_config(fam)
        jobs = [
            (model_cfg, s, cfg.dtype, train_cfg, ds, split, str(out / fam / str(s)), extra)
            for s in cfg.seeds
        ]
        if cfg.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
                results = list(pool.map(_run_seed, jobs))
        else:
            results = [_run_seed(j) for j in jobs]
        report = RunReport(fam, cfg.task, [SeedRun(r["seed"], r["evaluation"], r["history"]) for r in results])
        dump_json(report.to_dict(), out / fam / "report.json")
        reports.append(report)
        agg = report.aggregate
        print(
            f"{DISPLAY_NAMES[fam]}: {count_parameters(model_cfg)} params, {agg.n} seeds, "
            + ", ".join(f"{m} {agg.mean[m]:.4f}±{agg.std[m]:.4f}" for m in agg.mean)
        )
    write_aggregate(reports, out / "aggregate.csv", out / "aggregate.txt")
    print(f"wrote {out / 'aggregate.csv'}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# eval / inspect


def _read_scores(path) -> tuple[np.ndarray, np.ndarray]:
    import csv

    from .errors import MalformedRowError, MissingFileError

    path = Path(path)
    if not path.is_file():
        raise MissingFileError("score file not found", path)
    scores, labels = [], []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["score", "label"]:
            raise MalformedRowError("score file header must be score,label", path, 1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                s, y = float(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise MalformedRowError(f"bad row {row!r}", path, lineno) from None
            if y not in (0, 1):
                raise MalformedRowError(f"label must be 0 or 1, got {y}", path, lineno)
            scores.append(s)
            labels.append(y)
    return np.asarray(scores), np.asarray(labels)


def cmd_eval(args) -> int:
    out = Path(args.out)
    if args.scores:
        if args.checkpoint or args.manifest:
            raise UsageError("--scores cannot be combined with --checkpoint/--manifest")
        scores, labels = _read_scores(args.scores)
        ev = evaluate_scores(scores, labels)
    else:
        if not (args.checkpoint and args.manifest):
            raise UsageError("eval needs --checkpoint and --manifest (or --scores)")
        model, header = load_checkpoint(args.checkpoint)
        settings = header.get("extra", {})
        length = args.window_length or model.window_length
        if length != model.window_length:
            raise ConfigError(
                f"window length {length} does not match the checkpoint's window length {model.window_length}"
            )
        offset = args.offset if args.offset is not None else settings.get("offset", 0)
        ds = extract_windows(load_recordings(args.manifest), length, offset)
        if args.subset == "test":
            split = stratified_split(
                ds,
                settings.get("test_fraction", 0.30),
                settings.get("split_seed", 0),
                by_subject=settings.get("subject_split", False),
            )
            idx = split.test
        else:
            idx = np.arange(len(ds))
        ev = evaluate(model, ds.windows[idx], ds.labels[idx])
    write_evaluation(ev, out)
    m = ev.metrics
    print(
        f"tp={ev.confusion.tp} fp={ev.confusion.fp} tn={ev.confusion.tn} fn={ev.confusion.fn}  "
        + "  ".join(f"{k}={v:.5f}" for k, v in m.as_dict().items())
    )
    return EXIT_OK


def _write_matrix(path, mat: np.ndarray) -> None:
    rows = np.atleast_2d(mat)
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def cmd_inspect(args) -> int:
    model, header = load_checkpoint(args.checkpoint)
    if model.family != "transformer":
        raise UnsupportedOperationError(
            f"inspect needs a transformer checkpoint; {args.checkpoint} holds a {model.family} model"
        )
    if args.window:
        rows = read_recording_csv(args.window)
        window = rows[args.channel]
    elif args.manifest:
        settings = header.get("extra", {})
        ds = extract_windows(load_recordings(args.manifest), model.window_length, settings.get("offset", 0))
        if not 0 <= args.index < len(ds):
            raise UsageError(f"--index {args.index} is outside 0..{len(ds) - 1}")
        window = ds.windows[args.index]
    else:
        raise UsageError("inspect needs --window or --manifest")
    if window.shape[0] != model.window_length:
        raise ConfigError(
            f"window length {window.shape[0]} does not match the checkpoint's window length {model.window_length}"
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    heads = export_qkv(model, window)
    for hm in heads:
        stem = f"block{hm.block}_head{hm.head}"
        for name in ("Q", "K", "V", "A"):
            _write_matrix(out / f"{stem}_{name}.csv", getattr(hm, name))
        if hm.head == 0:
            _write_matrix(out / f"block{hm.block}_input.csv", hm.X)
    print(f"wrote Q/K/V/A for {len(heads)} heads to {out}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# synth / count-params


def cmd_synth(args) -> int:
    recordings = synth_generate(
        args.per_class, args.channels, args.samples, args.seed, args.separation, args.sampling_hz
    )
    manifest = write_recordings(recordings, args.out)
    print(
        f"wrote {len(recordings)} recordings ({args.per_class} per class, {args.channels} channels, "
        f"{args.samples} samples) and {manifest}"
    )
    return EXIT_OK


def cmd_count_params(args) -> int:
    if args.config:
        try:
            cfg = ModelConfig.from_dict(json.loads(Path(args.config).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ConfigError(f"cannot read model config {args.config}: {exc}") from None
        configs = [cfg]
    else:
        families = _families_value(args.family or "all")
        configs = [shipped_config(f, window_length=args.window_length) for f in families]
    print("model\tparams\ttarget\tdeviation\twithin_tolerance")
    for cfg in configs:
        n = count_parameters(cfg)
        target = BUDGET_TARGETS[cfg.family]
        dev = (n - target) / target
        ok = "yes" if abs(dev) <= BUDGET_TOLERANCE else "no"
        print(f"{DISPLAY_NAMES[cfg.family]}\t{n}\t{target}\t{dev:+.2%}\t{ok}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# parser


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eegseq", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write synthetic recordings and a manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--per-class", type=_positive_int, required=True)
    p.add_argument("--channels", type=_positive_int, default=4)
    p.add_argument("--samples", type=_positive_int, default=4000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--sampling-hz", type=float, default=250.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one or more families over several seeds")
    p.add_argument("--config", help="JSON file of session keys (flags take precedence)")
    p.add_argument("--family", help="comma-separated families or 'all'")
    p.add_argument("--task", choices=("depression", "responder", "custom"))
    p.add_argument("--manifest")
    p.add_argument("--synth-per-class", type=_positive_int)
    p.add_argument("--synth-channels", type=_positive_int)
    p.add_argument("--synth-samples", type=_positive_int)
    p.add_argument("--synth-seed", type=int)
    p.add_argument("--synth-separation", type=float)
    p.add_argument("--out")
    p.add_argument("--seeds", type=_positive_int, help="run seeds 0..N-1")
    p.add_argument("--seed-list", help="comma-separated explicit seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--test-fraction", type=float)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--window-length", type=int)
    p.add_argument("--offset", type=int)
    p.add_argument("--subject-split", action="store_const", const=True)
    p.add_argument("--jobs", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--set", action="append", metavar="FIELD=VALUE", help="override a model config field")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (or a score file)")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--scores", help="CSV with header score,label")
    p.add_argument("--subset", choices=("test", "all"), default="test")
    p.add_argument("--window-length", type=int)
    p.add_argument("--offset", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="export per-head Q/K/V/A matrices of a transformer")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--window", help="CSV whose row --channel is the window")
    p.add_argument("--channel", type=int, default=0)
    p.add_argument("--manifest")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("count-params", help="closed-form parameter counts vs. budget targets")
    p.add_argument("--family", help="comma-separated families or 'all'")
    p.add_argument("--window-length", type=int)
    p.add_argument("--config", help="JSON ModelConfig")
    p.set_defaults(func=cmd_count_params)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, UnsupportedOperationError) as exc:
        print(f"eegseq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EegSeqError, OSError) as exc:
        print(f"eegseq {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``drowsyrank <subcommand> [flags]``.

Exit codes: 0 success, 1 data or runtime error, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from drowsyrank.baselines import DEFAULT_L1_GRID, LogisticConfig
from drowsyrank.data import Dataset, parse_manifest
from drowsyrank.errors import DrowsyRankError, InsufficientData, NoValidPair
from drowsyrank.evaluation import (
    METHODS, CVConfig, auc1, auc2, cross_validate, export_report, export_roc_csv, roc_auc, score_trip,
    trip_max_scores,
)
from drowsyrank.features import FeatureConfig, FeaturePipeline, write_features_csv
from drowsyrank.ranker import (
    DEFAULT_LAMBDA_GRID, Adam, LinearModel, Sgd, TrainConfig, report_weights, select_lambda, train,
)
from drowsyrank.synth import SynthConfig, generate_dataset


class UsageError(Exception):
    """Bad flag combination detected after argparse (maps to exit 2)."""


# -- argument types ---------------------------------------------------------

def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {text}")
    return value


def _pos_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


def _nonneg_float(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a number >= 0, got {text}")
    return value


def _pos_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a number > 0, got {text}")
    return value


def _unit_open(text: str) -> float:
    value = float(text)
    if not 0 < value < 1:
        raise argparse.ArgumentTypeError(f"expected a number in (0, 1), got {text}")
    return value


def _grid(text: str) -> tuple[float, ...]:
    try:
        values = tuple(float(tok) for tok in text.split(",") if tok.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not values or any(not v >= 0 for v in values):
        raise argparse.ArgumentTypeError(f"expected one or more numbers >= 0, got {text!r}")
    return values


def _methods(text: str) -> tuple[str, ...]:
    names = tuple(tok.strip() for tok in text.split(",") if tok.strip())
    bad = [n for n in names if n not in METHODS]
    if not names or bad:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {','.join(METHODS)}, got {text!r}")
    return names


# -- parser -----------------------------------------------------------------

def _add_training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="training and fold seed (default 0)")
    p.add_argument("--lambda", dest="lam", type=_grid, default=DEFAULT_LAMBDA_GRID,
                   help="L2 strength, or a comma-separated grid chosen by inner cross-validation "
                        "(default 0,1e-4,1e-3,1e-2)")
    p.add_argument("--iterations", type=_pos_int, default=TrainConfig.iterations)
    p.add_argument("--optimizer", choices=("sgd", "adam"), default="sgd")
    p.add_argument("--learning-rate", type=_pos_float, default=None,
                   help="default 0.01 for both optimizers")
    p.add_argument("--decay", type=_nonneg_float, default=0.01, help="SGD step decay (default 0.01)")
    p.add_argument("--beta1", type=_unit_open, default=0.9)
    p.add_argument("--beta2", type=_unit_open, default=0.999)
    p.add_argument("--min-time-gap", type=_nonneg_float, default=0.0)
    p.add_argument("--inner-k", type=_pos_int, default=3, help="folds for the lambda search (default 3)")


def _add_feature_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-lag", action="store_true", help="drop the raw channels at t and t-1")
    p.add_argument("--no-derivatives", action="store_true")
    p.add_argument("--no-anomaly", action="store_true")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--anomaly-alpha", type=_nonneg_float, default=0.1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drowsyrank", description="Drowsiness ranking from trip sensor logs.")
    parser.add_argument("--config", type=Path, help="key=value file; its values act as defaults beneath flags")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--drowsy", type=_nonneg_int, default=SynthConfig.n_drowsy)
    p.add_argument("--normal", type=_nonneg_int, default=SynthConfig.n_normal)
    p.add_argument("--seed", type=int, default=SynthConfig.seed)
    p.add_argument("--min-len", type=_pos_int, default=SynthConfig.trip_len_range[0])
    p.add_argument("--max-len", type=_pos_int, default=SynthConfig.trip_len_range[1])
    p.add_argument("--drift-amplitude", type=_nonneg_float, default=SynthConfig.drift_amplitude)
    p.add_argument("--swerve-rate", type=_nonneg_float, default=SynthConfig.swerve_rate_max)
    p.add_argument("--truth-threshold", type=_unit_open, default=SynthConfig.truth_threshold)

    p = sub.add_parser("train", help="train the ranker on the drowsy trips of a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="model file; <out>.pipeline.json and <out>.log.csv are written beside it")
    p.add_argument("--loss-report-every", type=_pos_int, default=TrainConfig.loss_report_every)
    _add_training_flags(p)
    _add_feature_flags(p)

    p = sub.add_parser("score", help="per-sample scores for every trip of a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--pipeline", type=Path, help="default <model>.pipeline.json")
    p.add_argument("--out", type=Path, required=True, help="CSV trip_id,t,score")

    p = sub.add_parser("eval", help="AUC1 (and AUC2) of a trained model on a held-out manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--pipeline", type=Path, help="default <model>.pipeline.json")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--auc2", action="store_true", help="also compute sample-level AUC2 (needs a truth column)")

    p = sub.add_parser("cv", help="stratified k-fold cross-validation")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--k", type=_pos_int, default=11)
    p.add_argument("--methods", type=_methods, default=METHODS)
    p.add_argument("--jobs", type=_pos_int, default=1)
    p.add_argument("--l1", type=_grid, default=DEFAULT_L1_GRID, help="logistic L1 strength or grid")
    _add_training_flags(p)
    _add_feature_flags(p)

    p = sub.add_parser("report", help="feature weights of a model, largest |weight| first")
    p.add_argument("model", type=Path)
    p.add_argument("--top", type=_pos_int, default=None)
    p.add_argument("--out", type=Path, help="write CSV rank,feature,weight instead of printing")

    p = sub.add_parser("features", help="export the feature matrix of a manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--pipeline", type=Path, help="fitted pipeline JSON; otherwise fitted on the manifest")
    _add_feature_flags(p)
    return parser


def read_config_file(path: Path) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values: dict[str, str] = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        values[key.strip().lstrip("-").replace("-", "_")] = value.strip()
    return values


def _subparsers(parser: argparse.ArgumentParser) -> argparse._SubParsersAction:
    return next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))


def _subparser_names(parser: argparse.ArgumentParser) -> set[str]:
    return set(_subparsers(parser).choices)


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    return _subparsers(parser).choices[command]


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    # read --config before the full parse so the file can satisfy required options
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, rest = pre.parse_known_args(argv)
    command = rest[0] if rest else None
    if known.config is None or command not in _subparser_names(parser):
        return parser.parse_args(argv)
    if not known.config.is_file():
        parser.error(f"config file not found: {known.config}")
    try:
        values = read_config_file(known.config)
    except UsageError as exc:
        parser.error(str(exc))
    sub = _subparser(parser, command)
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for key, text in values.items():
        dest = "lam" if key == "lambda" else key
        action = actions.get(dest)
        if action is None or dest == "help":
            parser.error(f"config key {key!r} is not an option of '{command}'")
        if action.nargs == 0:
            defaults[dest] = text.lower() in ("1", "true", "yes", "on")
            continue
        try:
            value = action.type(text) if action.type else text
        except (argparse.ArgumentTypeError, ValueError) as exc:
            parser.error(f"config key {key!r}: {exc}")
        if action.choices is not None and value not in action.choices:
            parser.error(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
        defaults[dest] = value
    # required options satisfied by the file must not be demanded again
    for dest in defaults:
        if actions[dest].required:
            actions[dest].required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- helpers ----------------------------------------------------------------

def _feature_config(args) -> FeatureConfig:
    try:
        return FeatureConfig(not args.no_lag, not args.no_derivatives, not args.no_anomaly, not args.no_standardize)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _train_config(args) -> TrainConfig:
    lr = args.learning_rate if args.learning_rate is not None else 0.01
    opt = Sgd(lr, args.decay) if args.optimizer == "sgd" else Adam(lr, args.beta1, args.beta2)
    every = getattr(args, "loss_report_every", TrainConfig.loss_report_every)
    return TrainConfig(args.iterations, args.seed, opt, args.min_time_gap, every)


def _load_model(model_path: Path, pipeline_path: Path | None) -> tuple[LinearModel, FeaturePipeline]:
    model = LinearModel.load(model_path)
    pipeline_path = pipeline_path or _sidecar(model_path)
    if not pipeline_path.is_file():
        raise DrowsyRankError(f"pipeline file not found: {pipeline_path}")
    pipeline = FeaturePipeline.load(pipeline_path)
    if tuple(pipeline.names) != tuple(model.feature_names):
        raise DrowsyRankError(f"{model_path} and {pipeline_path} describe different feature layouts")
    return model, pipeline


def _sidecar(model_path: Path) -> Path:
    return model_path.with_name(model_path.name + ".pipeline.json")


def _fit_pipeline(dataset: Dataset, args) -> FeaturePipeline:
    config = _feature_config(args)
    if config.include_anomaly and not dataset.normal:
        raise InsufficientData("the anomaly features are fitted on normal trips, but the manifest has none "
                               "(use --no-anomaly to train without them)")
    return FeaturePipeline(config, anomaly_alpha=args.anomaly_alpha).fit(dataset.normal, list(dataset))


# -- subcommands ------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.min_len < 2 or args.min_len > args.max_len:
        raise UsageError(f"need 2 <= --min-len <= --max-len, got {args.min_len} and {args.max_len}")
    config = SynthConfig(n_drowsy=args.drowsy, n_normal=args.normal, trip_len_range=(args.min_len, args.max_len),
                         seed=args.seed, drift_amplitude=args.drift_amplitude,
                         swerve_rate_max=args.swerve_rate, truth_threshold=args.truth_threshold)
    dataset = generate_dataset(config, args.out)
    print(f"wrote {len(dataset)} trips ({dataset.n_drowsy} drowsy, {dataset.n_normal} normal) "
          f"to {args.out / 'manifest.csv'}")
    return 0


def cmd_train(args) -> int:
    dataset = parse_manifest(args.manifest)
    if dataset.n_drowsy == 0:
        raise NoValidPair("training uses drowsy trips only, and the manifest lists none")
    pipeline = _fit_pipeline(dataset, args)
    drowsy = [pipeline.transform(t) for t in dataset.drowsy]
    config = _train_config(args)
    lam, errors = select_lambda(drowsy, args.lam, config, args.inner_k)
    for cand, err in errors.items():
        print(f"lambda={cand!r} held-out loss={err:.6f}")
    result = train(drowsy, config, lam, return_log=True)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    result.model.save(args.out)
    pipeline.save(_sidecar(args.out))
    log_path = args.out.with_name(args.out.name + ".log.csv")
    result.write_log(log_path)
    first, last = result.log[0][1], result.log[-1][1]
    print(f"trained on {len(drowsy)} drowsy trips, lambda={lam!r}; loss {first:.4f} -> {last:.4f}")
    print(f"wrote {args.out}, {_sidecar(args.out)} and {log_path}")
    return 0


def cmd_score(args) -> int:
    model, pipeline = _load_model(args.model, args.pipeline)
    dataset = parse_manifest(args.manifest)
    lines = ["trip_id,t,score"]
    for trip in dataset:
        feats, scores = score_trip(trip, pipeline, model)
        lines += [f"{trip.id},{float(t)!r},{float(s)!r}" for t, s in zip(feats.t, scores)]
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"scored {len(dataset)} trips -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, pipeline = _load_model(args.model, args.pipeline)
    dataset = parse_manifest(args.manifest)
    scored = [score_trip(trip, pipeline, model) for trip in dataset]
    scores = [s for _, s in scored]
    labels = [f.is_drowsy for f, _ in scored]
    args.out.mkdir(parents=True, exist_ok=True)
    a1 = auc1(scores, labels)
    curve, _ = roc_auc(trip_max_scores(scores), np.asarray(labels))
    export_roc_csv(curve, args.out / "roc_trip.csv")
    lines = ["metric,value", f"auc1,{a1!r}"]
    print(f"AUC1 = {a1:.4f}")
    if args.auc2:
        truths = [f.truth for f, _ in scored]
        a2 = auc2(scores, truths)
        curve, _ = roc_auc(np.concatenate(scores), np.concatenate(truths))
        export_roc_csv(curve, args.out / "roc_sample.csv")
        lines.append(f"auc2,{a2!r}")
        print(f"AUC2 = {a2:.4f}")
    (args.out / "eval.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_cv(args) -> int:
    dataset = parse_manifest(args.manifest)
    config = CVConfig(train=_train_config(args), lambda_grid=args.lam, features=_feature_config(args),
                      anomaly_alpha=args.anomaly_alpha, logistic=LogisticConfig(seed=args.seed),
                      l1_grid=args.l1, inner_k=args.inner_k)
    has_truth = dataset.has_truth
    args.out.mkdir(parents=True, exist_ok=True)
    reports = []
    for method in args.methods:
        report = cross_validate(dataset, method, args.k, args.seed, config, jobs=args.jobs)
        reports.append(report)
        curve, _ = roc_auc(*report.pooled("trip"))
        export_roc_csv(curve, args.out / f"roc_{method}_trip.csv")
        if has_truth:
            curve, _ = roc_auc(*report.pooled("sample"))
            export_roc_csv(curve, args.out / f"roc_{method}_sample.csv")
        print(f"{method:>9}: mean AUC1 = {report.mean_auc1:.4f}  mean AUC2 = {report.mean_auc2:.4f}")
    export_report(reports, args.out / "report.csv")
    print(f"wrote {args.out / 'report.csv'}")
    return 0


def cmd_report(args) -> int:
    model = LinearModel.load(args.model)
    rows = report_weights(model)
    if args.top is not None:
        rows = rows[:args.top]
    lines = ["rank,feature,weight"] + [f"{i},{name},{w!r}" for i, (name, w) in enumerate(rows, start=1)]
    if args.out is not None:
        args.out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        width = max((len(name) for name, _ in rows), default=7)
        for i, (name, w) in enumerate(rows, start=1):
            print(f"{i:>3}  {name:<{width}}  {w:+.6f}")
    return 0


def cmd_features(args) -> int:
    dataset = parse_manifest(args.manifest)
    if args.pipeline is not None:
        pipeline = FeaturePipeline.load(args.pipeline)
    else:
        pipeline = _fit_pipeline(dataset, args)
    feats = [pipeline.transform(trip) for trip in dataset]
    write_features_csv(feats, args.out)
    print(f"wrote {sum(len(f) for f in feats)} feature vectors of dimension {len(pipeline.names)} to {args.out}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "score": cmd_score, "eval": cmd_eval,
            "cv": cmd_cv, "report": cmd_report, "features": cmd_features}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"drowsyrank {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (DrowsyRankError, OSError, ValueError) as exc:
        print(f"drowsyrank {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

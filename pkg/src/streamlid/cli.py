"""Command line interface.

Exit codes: 0 success, 2 invalid input, 3 model error.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

import numpy as np

from .adaptation import AdaptObjectiveConfig, DomainRegistry, adapt_posterior, train_adaptation
from .classifier import LanguageTable
from .confidence import (ConfidenceModel, ConfidenceTrainConfig, FeatureConfig, calibrate_threshold,
                         confidence_scores, correctness_labels, feature_stream, train_confidence)
from .encoder import STANDARD_SIZES, ConformerConfig
from .errors import InvalidInputError, ModelFormatError, StreamLidError
from .evaluation import (TransformerDescriptor, estimate_baseline_flops, estimate_flops,
                         lstm_descriptor, make_record, results_csv)
from .frontend import FrontendConfig, extract_features, feature_timestamps_ms, load_audio
from .model_io import ModelContainer, build_dataclass, read_config_file
from .pipeline import LangIdModel, init_random_model, run_pipeline
from .pooling import PoolingMode
from .trainer import LabeledUtterance, TrainConfig, train_head

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_MODEL = 3

BASELINES = {
    "lstm-small": lstm_descriptor(1024, 256, 4),
    "lstm-medium": lstm_descriptor(2048, 512, 4),
    "lstm-large": lstm_descriptor(4096, 1024, 8),
    "transformer-small": TransformerDescriptor(model_dim=144),
    "transformer-medium": TransformerDescriptor(model_dim=256),
    "transformer-large": TransformerDescriptor(model_dim=1024),
}


# ---------------------------------------------------------------------------
# helpers

def _write(path, text):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _require_output(args, *fallbacks):
    path = args.output or next((f for f in fallbacks if f), None)
    if not path or path == "-":
        raise InvalidInputError(f"{args.command} needs --output")
    return path


def _load_configs(path):
    """Split a key-value config file into conformer / frontend / other keys."""
    if path is None:
        return ConformerConfig(), FrontendConfig(), {}
    values = read_config_file(path)
    conf_keys = set(ConformerConfig.__dataclass_fields__)
    front_keys = set(FrontendConfig.__dataclass_fields__)
    base = ConformerConfig()
    size = values.pop("size", None)
    if size is not None:
        base = STANDARD_SIZES[size]
    conf_vals = {k: v for k, v in values.items() if k in conf_keys}
    merged = {k: str(getattr(base, k)) for k in conf_keys}
    merged.update(conf_vals)
    conformer = build_dataclass(ConformerConfig, merged)
    frontend = build_dataclass(FrontendConfig, {k: v for k, v in values.items() if k in front_keys})
    rest = {k: v for k, v in values.items() if k not in conf_keys | front_keys}
    return conformer, frontend, rest


def read_manifest(path):
    """``(tensor_path, language_code)`` records, one per line; relative paths
    resolve against the manifest directory."""
    base = Path(path).parent
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidInputError(f"{path}:{lineno}: expected '<path> <language>'")
        p = Path(parts[0])
        out.append((p if p.is_absolute() else base / p, parts[1]))
    return out


def utterance_posteriors(model: LangIdModel, container: ModelContainer) -> np.ndarray:
    """Unadapted per-step posteriors from a features, embeddings or posteriors tensor."""
    if "posteriors" in container:
        return container.get("posteriors").astype(np.float64)
    if "embeddings" in container:
        return model.posteriors_from_embeddings(container.get("embeddings"))
    return model.posteriors(container.get("features"))


def utterance_embeddings(model: LangIdModel, container: ModelContainer) -> np.ndarray:
    if "embeddings" in container:
        return container.get("embeddings").astype(np.float64)
    return model.embeddings(container.get("features"))


def _registry(args, model):
    if getattr(args, "registry", None) and Path(args.registry).exists():
        return DomainRegistry.load(args.registry, model.languages)
    return DomainRegistry(model.languages)


def _dev_confidence_data(args, model):
    """Raw confidence features and correctness labels over every step of every dev utterance."""
    registry = _registry(args, model)
    adaptation = registry.lookup(args.domain)
    feats, labels = [], []
    for path, code in read_manifest(args.dev):
        probs = utterance_posteriors(model, ModelContainer.load(path))
        if not args.unadapted_confidence:
            probs = adapt_posterior(probs, adaptation)
        feats.append(feature_stream(probs))
        labels.append(correctness_labels(probs, model.languages.index(code)))
    return np.concatenate(feats), np.concatenate(labels)


# ---------------------------------------------------------------------------
# subcommands

def cmd_featurize(args):
    if not args.output:
        raise InvalidInputError("featurize needs --output (.csv or container path)")
    _, frontend, _ = _load_configs(args.config)
    audio = load_audio(args.audio, args.raw_rate)
    feats = extract_features(audio, frontend, agc=not args.no_agc)
    if args.output.endswith(".csv"):
        ts = feature_timestamps_ms(len(feats), frontend)
        rows = [f"{t}," + ",".join(repr(float(v)) for v in row) for t, row in zip(ts, feats)]
        _write(args.output, "".join(r + "\n" for r in rows))
    else:
        ModelContainer({"features": feats}, {"frontend_step_ms": frontend.output_step_ms}).save(args.output)
    print(f"{len(feats)} frames x {frontend.feature_dim} dims", file=sys.stderr)


def cmd_init_model(args):
    out = _require_output(args)
    conformer, frontend, rest = _load_configs(args.config)
    languages = LanguageTable.read(args.languages)
    mode = PoolingMode(rest.get("pooling_mode", "weighted_mean"))
    model = init_random_model(languages, conformer, args.seed, mode, frontend)
    model.save(out)


def cmd_infer(args):
    model = LangIdModel.load(args.model)
    registry = _registry(args, model)
    confidence = ConfidenceModel.load(args.confidence) if args.confidence else None
    audios = [load_audio(a, args.raw_rate) for a in args.audio]
    out = run_pipeline(audios, model, args.domain, registry, confidence, args.tau, agc=not args.no_agc,
                       feature_config=FeatureConfig(use_adapted=not args.unadapted_confidence))
    _write(args.output, out.text())
    if args.latency and out.latencies_s:
        lat = np.array(out.latencies_s) * 1e3
        print(f"per-step latency ms: mean={lat.mean():.3f} p50={np.median(lat):.3f} "
              f"p95={np.percentile(lat, 95):.3f} max={lat.max():.3f}", file=sys.stderr)


def cmd_train_head(args):
    out = _require_output(args)
    model = LangIdModel.load(args.model)
    _, _, rest = _load_configs(args.config)
    rest.setdefault("seed", str(args.seed))
    rest.setdefault("mode", model.pooling_mode.value)
    cfg = build_dataclass(TrainConfig, rest)
    if cfg.mode != model.pooling_mode:
        raise InvalidInputError("train config pooling mode differs from the model's")
    data = [LabeledUtterance(utterance_embeddings(model, ModelContainer.load(p)),
                             model.languages.index(code), str(p))
            for p, code in read_manifest(args.manifest)]
    result = train_head(data, cfg, len(model.languages), model.attention, model.head)
    model.with_trained(result.attention, result.head).save(out)
    if args.loss_csv:
        _write(args.loss_csv, result.loss_csv())
    print(f"loss {result.loss_curve[0]:.6f} -> {result.loss_curve[-1]:.6f}", file=sys.stderr)


def cmd_train_adaptation(args):
    out = _require_output(args, args.registry)
    model = LangIdModel.load(args.model)
    registry = _registry(args, model)
    dev = []
    for path, code in read_manifest(args.dev):
        probs = utterance_posteriors(model, ModelContainer.load(path))
        dev.append((probs[-1], model.languages.index(code)))
    cfg = AdaptObjectiveConfig(w_reg=args.w_reg, seed=args.seed, norm=args.norm)
    params = train_adaptation(dev, cfg, args.domain)
    registry.register(params)
    registry.save(out)


def cmd_train_confidence(args):
    out = _require_output(args)
    model = LangIdModel.load(args.model)
    feats, labels = _dev_confidence_data(args, model)
    conf = train_confidence(feats, labels, ConfidenceTrainConfig(seed=args.seed))
    conf.save(out)


def _scores(args):
    model = LangIdModel.load(args.model)
    conf = ConfidenceModel.load(args.confidence)
    feats, labels = _dev_confidence_data(args, model)
    return conf, confidence_scores(feats, conf), labels


def cmd_calibrate(args):
    conf, scores, labels = _scores(args)
    tau, _ = calibrate_threshold(scores, labels, args.rule.replace("-", "_"), args.target_fa)
    if not np.isfinite(tau):
        tau = 1.0
    conf.threshold = tau
    _write(args.output or args.confidence, conf.to_text())


def cmd_det_csv(args):
    _, scores, labels = _scores(args)
    _, curve = calibrate_threshold(scores, labels)
    _write(args.output, curve.to_csv())


def cmd_eval(args):
    model = LangIdModel.load(args.model)
    registry = _registry(args, model)
    adaptation = registry.lookup(args.domain)
    records = []
    for path, code in read_manifest(args.manifest):
        probs = adapt_posterior(utterance_posteriors(model, ModelContainer.load(path)), adaptation)
        records.append(make_record(str(path), model.languages.index(code), probs, args.majority_vote))
    _write(args.output, results_csv(records, model.languages))


def cmd_flops(args):
    if args.baseline:
        est = estimate_baseline_flops(BASELINES[args.baseline])
    else:
        conformer, frontend, _ = _load_configs(args.config)
        if args.size:
            conformer = STANDARD_SIZES[args.size]
        est = estimate_flops(conformer, frontend)
    _write(args.output, est.to_json() + "\n")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamlid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--output", help="output path ('-' or omitted: stdout where applicable)")
        return p

    def model_args(p, domain=True):
        p.add_argument("--model", required=True)
        if domain:
            p.add_argument("--domain", default=None)
            p.add_argument("--registry", help="domain registry JSON")

    def confidence_args(p):
        p.add_argument("--unadapted-confidence", action="store_true",
                       help="confidence features from unadapted posteriors")

    p = add("featurize", cmd_featurize, "audio -> stacked LFBE features (container or .csv)")
    p.add_argument("audio")
    p.add_argument("--raw-rate", type=int, help="read raw float32 samples at this rate")
    p.add_argument("--no-agc", action="store_true")

    p = add("init-model", cmd_init_model, "write a randomly initialized model")
    p.add_argument("--languages", required=True, help="text file, one language code per line")

    p = add("infer", cmd_infer, "streaming inference, JSON lines per step")
    p.add_argument("audio", nargs="+", help="one or more audio files, run as independent streams")
    model_args(p)
    p.add_argument("--confidence", help="confidence model record")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--raw-rate", type=int)
    p.add_argument("--no-agc", action="store_true")
    p.add_argument("--latency", action="store_true", help="print per-step latency summary to stderr")
    confidence_args(p)

    p = add("train-head", cmd_train_head, "train pooling attention + classifier head")
    model_args(p, domain=False)
    p.add_argument("--manifest", required=True)
    p.add_argument("--loss-csv")

    p = add("train-adaptation", cmd_train_adaptation, "fit per-domain adaptation params")
    model_args(p)
    p.add_argument("--dev", required=True)
    p.add_argument("--w-reg", type=float, default=0.1)
    p.add_argument("--norm", choices=("l2", "l1"), default="l2")

    p = add("train-confidence", cmd_train_confidence, "fit the confidence model")
    model_args(p)
    p.add_argument("--dev", required=True)
    confidence_args(p)

    for name, func, text in (("calibrate", cmd_calibrate, "set tau from the dev-set DET curve"),
                             ("det-csv", cmd_det_csv, "write the dev-set DET curve as CSV")):
        p = add(name, func, text)
        model_args(p)
        p.add_argument("--dev", required=True)
        p.add_argument("--confidence", required=True)
        p.add_argument("--rule", choices=("eer", "max-fa"), default="eer")
        p.add_argument("--target-fa", type=float, default=0.01)
        confidence_args(p)

    p = add("eval", cmd_eval, "per-language / average / total accuracy")
    model_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--majority-vote", action="store_true")

    p = add("flops", cmd_flops, "analytic FLOPs per second of audio")
    p.add_argument("--size", choices=sorted(STANDARD_SIZES))
    p.add_argument("--baseline", choices=sorted(BASELINES))
    return parser


def _origin(exc) -> str:
    tb = traceback.extract_tb(exc.__traceback__)
    for frame in reversed(tb):
        if "streamlid" in frame.filename:
            return "streamlid." + Path(frame.filename).stem
    return "streamlid"


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except ModelFormatError as exc:
        print(f"{_origin(exc)}: model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (StreamLidError, ValueError, OSError) as exc:
        print(f"{_origin(exc)}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

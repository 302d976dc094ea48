"""Command-line entry point: ``wvad <command> ...``.

Commands
--------
synth-data      write a synthetic corpus (clean/, noisy/, labels/, manifest.txt)
train           train a WVAD model
train-ensemble  two-stage WEVAD training over an attribute tree
eval            per-condition ACC/AUC table (summary.csv)
predict         frame labels (and optionally scores) for one WAV file
plot            histogram / ROC data for decoder-block outputs
"""
import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from wvad import __version__
from wvad.audio_io import LabelTrack, read_wav, write_labels
from wvad.core import ConfigurationError, FormatError, InputError
from wvad.dataset import CorpusSpec, load_corpus, synthesize_corpus, tree_from_string, write_corpus
from wvad.evaluation import (
    STAGES,
    histogram_csv,
    roc_csv,
    rows_to_csv,
    run_model,
    stage_histogram,
    summarize,
)
from wvad.metrics import FILTERS, UndefinedROCError, roc_curve
from wvad.model import EnsembleModel, WvadConfig, WvadModel, load_model, predict_labels, save_model
from wvad.training import parse_keyvalue, train_config_from_dict, train_wevad, train_wvad

log = logging.getLogger("wvad")


class UsageError(Exception):
    """Bad invocation; exits with status 2."""


def _read_text(path, what):
    if not os.path.isfile(path):
        raise UsageError(f"{what} file not found: {path}")
    with open(path) as f:
        return f.read()


def _write_text(path, text):
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as f:
        f.write(text)


def write_manifest(path, command, config, seed, inputs, outputs):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": inputs,
        "outputs": outputs,
        "version": __version__,
    }
    _write_text(path, json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")


# ------------------------------------------------------------ corpus specs

_LIST_FIELDS = {"snr_grid": float, "speaker_classes": str, "noise_types": str,
                "burst_range": float}


def corpus_spec_from_text(text):
    values = parse_keyvalue(text)
    fields = {f.name: f for f in dataclasses.fields(CorpusSpec)}
    kwargs = {}
    for key, raw in values.items():
        if key not in fields:
            raise ConfigurationError(f"unknown corpus spec key {key!r}")
        try:
            if key in _LIST_FIELDS:
                kwargs[key] = tuple(_LIST_FIELDS[key](v.strip()) for v in raw.split(",") if v.strip())
            elif key in ("n_utterances", "sample_rate", "frame_len", "hop"):
                kwargs[key] = int(raw)
            else:
                kwargs[key] = float(raw)
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
    spec = CorpusSpec(**kwargs)
    spec.validate()
    return spec


def _model_config(rate, extra):
    overrides = {}
    for key in ("encoder_channels", "decoder_kernels"):
        if key in extra:
            overrides[key] = tuple(int(v) for v in extra.pop(key).split(","))
    if "encoder_kernel" in extra:
        overrides["encoder_kernel"] = int(extra.pop("encoder_kernel"))
    if "leaky_slope" in extra:
        overrides["leaky_slope"] = float(extra.pop("leaky_slope"))
    return WvadConfig.for_sample_rate(rate, **overrides)


def _load_training_inputs(args):
    cfg, extra = train_config_from_dict(parse_keyvalue(_read_text(args.config, "config")))
    corpus = load_corpus(args.corpus_dir)
    rate = corpus[0].noisy.sample_rate
    model_cfg = _model_config(rate, extra)
    return cfg, extra, corpus, model_cfg


def _progress(stats):
    log.info("epoch %d loss %.5f acc %.2f (%.1fs)", stats.epoch, stats.loss, stats.acc, stats.seconds)


# ---------------------------------------------------------------- commands

def cmd_synth_data(args):
    spec = corpus_spec_from_text(_read_text(args.spec, "spec")) if args.spec else CorpusSpec()
    utts = synthesize_corpus(spec, args.seed)
    write_corpus(args.out_dir, utts, spec, args.seed)
    write_manifest(os.path.join(args.out_dir, "run_manifest.json"), "synth-data",
                   dataclasses.asdict(spec), args.seed, {"spec": args.spec},
                   {"corpus": args.out_dir, "utterances": len(utts)})
    print(f"wrote {len(utts)} utterances to {args.out_dir}")


def cmd_train(args):
    cfg, extra, corpus, model_cfg = _load_training_inputs(args)
    if extra:
        raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
    model = WvadModel.init(model_cfg, seed=cfg.seed)
    report = train_wvad(model, corpus, cfg, on_epoch=_progress)
    save_model(args.out, model)
    report_path = args.report or args.out + ".train.csv"
    _write_text(report_path, report.to_csv())
    write_manifest(args.out + ".manifest.json", "train",
                   {**dataclasses.asdict(cfg), "model": dataclasses.asdict(model_cfg)},
                   cfg.seed, {"corpus": args.corpus_dir, "config": args.config},
                   {"model": args.out, "report": report_path})
    print(f"trained WVAD on {len(corpus)} utterances; final train ACC {report.final_acc:.2f}%")


def cmd_train_ensemble(args):
    cfg, extra, corpus, model_cfg = _load_training_inputs(args)
    tree_spec = extra.pop("tree", None)
    if tree_spec is None:
        raise ConfigurationError("ensemble config needs a 'tree' key")
    threshold = float(extra.pop("snr_threshold", 10.0))
    if extra:
        raise ConfigurationError(f"unknown config keys: {sorted(extra)}")
    tree = tree_from_string(tree_spec, threshold)
    ensemble, report = train_wevad(corpus, tree, cfg, model_cfg, on_epoch=_progress)
    save_model(args.out, ensemble)
    report_path = args.report or args.out + ".train.csv"
    _write_text(report_path, report.to_csv())
    for name, sub in report.stage1.items():
        _write_text(f"{args.out}.stage1.{name.replace('/', '_')}.csv", sub.to_csv())
    write_manifest(args.out + ".manifest.json", "train-ensemble",
                   {**dataclasses.asdict(cfg), "model": dataclasses.asdict(model_cfg),
                    "tree": tree_spec, "snr_threshold": threshold},
                   cfg.seed, {"corpus": args.corpus_dir, "config": args.config},
                   {"model": args.out, "report": report_path})
    print(f"trained WEVAD with n={ensemble.n_encoders} encoders ({', '.join(ensemble.names)})")


def cmd_eval(args):
    model = load_model(args.model)
    corpus = load_corpus(args.corpus_dir)
    by = [k.strip() for k in args.by.split(",") if k.strip()] if args.by else []
    results = run_model(model, corpus)
    rows = summarize(results, by)
    out = args.out or os.path.join(args.corpus_dir, "summary.csv")
    _write_text(out, rows_to_csv(rows))
    write_manifest(out + ".manifest.json", "eval", {"by": by}, None,
                   {"model": args.model, "corpus": args.corpus_dir}, {"summary": out})
    avg = rows[-1]
    auc_text = "NA" if avg["auc"] is None else f"{avg['auc']:.4f}"
    print(f"ACC {avg['acc']:.2f}%  AUC {auc_text}  ({len(rows) - 1} groups) -> {out}")


def cmd_predict(args):
    model = load_model(args.model)
    wav = read_wav(args.wav_in)
    scores = model.forward(wav)
    cfg = model.config
    track = LabelTrack.from_binary(predict_labels(scores), cfg.frame_len, cfg.hop, cfg.sample_rate)
    write_labels(args.labels_out, track)
    if args.scores:
        lines = ["y_ns,y_s"] + [f"{a:.7f},{b:.7f}" for a, b in zip(scores.nonspeech, scores.speech)]
        _write_text(args.scores, "\n".join(lines) + "\n")
    print(f"{len(track)} frames, {int(track.speech.sum())} speech")


def cmd_plot(args):
    model = load_model(args.model)
    corpus = load_corpus(args.corpus_dir)
    results = run_model(model, corpus, keep_taps=True)
    hist = stage_histogram(results, args.stage, args.filter, args.bins)
    os.makedirs(args.out_dir, exist_ok=True)
    hist_path = os.path.join(args.out_dir, "hist.csv")
    _write_text(hist_path, histogram_csv(hist))
    outputs = {"hist": hist_path}
    score = np.concatenate([r.score for r in results])
    truth = np.concatenate([r.truth for r in results])
    try:
        roc_path = os.path.join(args.out_dir, "roc.csv")
        _write_text(roc_path, roc_csv(roc_curve(score, truth)))
        outputs["roc"] = roc_path
    except UndefinedROCError:
        log.warning("single-class corpus; roc.csv not written")
    write_manifest(os.path.join(args.out_dir, "plot_manifest.json"), "plot",
                   {"stage": args.stage, "filter": args.filter, "bins": args.bins}, None,
                   {"model": args.model, "corpus": args.corpus_dir}, outputs)
    print(f"{args.stage}/{args.filter}: {hist.total} frames -> {hist_path}")


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="wvad", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a synthetic corpus")
    s.add_argument("out_dir")
    s.add_argument("--spec", help="corpus spec (key = value lines); defaults built in")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth_data)

    for name, func in (("train", cmd_train), ("train-ensemble", cmd_train_ensemble)):
        s = sub.add_parser(name)
        s.add_argument("corpus_dir")
        s.add_argument("--config", required=True)
        s.add_argument("--out", required=True, help="model file to write")
        s.add_argument("--report", help="per-epoch CSV (default: <out>.train.csv)")
        s.set_defaults(func=func)

    s = sub.add_parser("eval")
    s.add_argument("model")
    s.add_argument("corpus_dir")
    s.add_argument("--by", default="", help="comma-separated: snr, noise_type, speaker_class")
    s.add_argument("--out", help="summary CSV (default: <corpus_dir>/summary.csv)")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict")
    s.add_argument("model")
    s.add_argument("wav_in")
    s.add_argument("labels_out")
    s.add_argument("--scores", help="also write per-frame (y_ns, y_s) CSV")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("plot")
    s.add_argument("model")
    s.add_argument("corpus_dir")
    s.add_argument("--stage", choices=STAGES, default="final")
    s.add_argument("--filter", choices=FILTERS, default="all")
    s.add_argument("--bins", type=int, default=10)
    s.add_argument("--out-dir", default=".")
    s.set_defaults(func=cmd_plot)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        print(f"wvad: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, InputError, FormatError, OSError) as exc:
        print(f"wvad: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

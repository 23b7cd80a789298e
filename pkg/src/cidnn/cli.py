"""Command line interface: ``cidnn <command> ...``.

Commands: synth, mix, stats, train, enhance, evaluate.  Every command
accepts ``--seed`` and ``--threads``; with ``--threads 1`` all file
outputs are bit-reproducible.
"""

import argparse
import os
import sys

import numpy as np

from . import dsp, levels, metrics, modelfile, pipeline
from .audio_io import (MixtureEntry, read_manifest, read_mixture_list, read_wav,
                       write_mixture_list, write_wav)


class CliError(Exception):
    pass


def _entries(manifest, split=None):
    entries = read_manifest(manifest)
    if split:
        entries = [e for e in entries if e.split == split]
        if not entries:
            raise CliError("manifest %s has no %s entries" % (manifest, split))
    return entries


def _snr_tag(snr):
    return ("m%g" % -snr if snr < 0 else "%g" % snr).replace(".", "p")


def cmd_synth(args):
    from .synth import make_corpus
    path = make_corpus(args.out, minutes=args.minutes, seed=args.seed)
    print(path)


def cmd_mix(args):
    os.makedirs(args.out, exist_ok=True)
    out = []
    cache = {}
    for e in _entries(args.manifest, args.split):
        speech = read_wav(e.speech)
        if e.noise not in cache:
            cache[e.noise] = read_wav(e.noise)
        stem = os.path.splitext(os.path.basename(e.speech))[0]
        for snr in args.snr:
            mix, scaled = levels.mix_at_snr(speech, cache[e.noise], snr,
                                            offset=e.offset_samples())
            name = "%s_snr%s" % (stem, _snr_tag(snr))
            files = [name + suffix for suffix in ("_mix.wav", "_speech.wav", "_noise.wav")]
            for fname, x in zip(files, (mix, speech, scaled)):
                write_wav(os.path.join(args.out, fname), x)
            out.append(MixtureEntry(name, *files, snr_db=snr, label=e.label))
    write_mixture_list(os.path.join(args.out, "mixtures.tsv"), out)
    print("wrote %d mixtures to %s" % (len(out), args.out))


def _config(args):
    text = ""
    base = os.getcwd()
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            text = f.read()
        base = os.path.dirname(os.path.abspath(args.config))
    overrides = {"manifest": args.manifest, "epochs": getattr(args, "epochs", None)}
    if args.seed is not None:
        overrides["seed"] = args.seed
    cfg = pipeline.TrainingConfig.from_text(text, **overrides)
    if not cfg.manifest:
        raise CliError("no manifest given (config key 'manifest' or --manifest)")
    manifest = os.path.join(base, cfg.manifest) if args.manifest is None else args.manifest
    return cfg, manifest


def cmd_stats(args):
    cfg, manifest = _config(args)
    train, _ = pipeline.split_entries(read_manifest(manifest), cfg)
    data = pipeline.build_training_set(train, cfg, shuffle=False)
    stats = pipeline.compute_norm_stats(data.inputs)
    modelfile.save_stats(args.out, stats)
    print("normalisation statistics over %d frames written to %s" % (len(data.inputs), args.out))


def cmd_train(args):
    cfg, manifest = _config(args)
    stats = modelfile.load_stats(args.stats) if args.stats else None
    log_file = open(args.log, "w", encoding="utf-8") if args.log else None

    def progress(line):
        if log_file:
            log_file.write(line + "\n")
            log_file.flush()
        if not args.quiet:
            print(line, flush=True)

    try:
        net, stats, lines = pipeline.train(cfg, read_manifest(manifest), stats, progress)
    finally:
        if log_file:
            log_file.close()
    if log_file and not any(l.startswith("epoch=") for l in lines):
        with open(args.log, "a", encoding="utf-8") as f:
            f.write("\n".join(lines) + "\n")
    modelfile.save_model(args.out, net, stats, cfg.digest())
    print("model written to %s" % args.out)


def cmd_enhance(args):
    if (args.rule is None) == (args.model is None):
        raise CliError("give exactly one of --model or --rule")
    x = read_wav(args.input)
    if args.rule:
        from .classical import enhance_classical
        y = enhance_classical(x, args.rule)[0]
    else:
        from .ci import ci_enhance
        net, stats, _ = modelfile.load_model(args.model)
        y = dsp.synthesize(ci_enhance(net, stats, dsp.analyze(x), args.stages)[0])
    # OLA output may be a few samples short of the input; pad with silence
    out = np.zeros(len(x))
    out[:len(y)] = y
    write_wav(args.output, out)


def _mixtures_from_dir(path):
    items = []
    for e in read_mixture_list(os.path.join(path, "mixtures.tsv")):
        items.append(metrics.Mixture(e.name, e.label, e.snr_db,
                                     read_wav(e.speech), read_wav(e.noise)))
    return items


def _mixtures_from_manifest(path, split, snrs):
    items = []
    cache = {}
    for e in _entries(path, split):
        speech = read_wav(e.speech)
        if e.noise not in cache:
            cache[e.noise] = read_wav(e.noise)
        for snr in snrs:
            _, scaled = levels.mix_at_snr(speech, cache[e.noise], snr, offset=e.offset_samples())
            name = "%s@%g" % (os.path.basename(e.speech), snr)
            items.append(metrics.Mixture(name, e.label, snr, speech, scaled))
    return items


def cmd_evaluate(args):
    if (args.mixtures is None) == (args.manifest is None):
        raise CliError("give exactly one of --mixtures or --manifest")
    methods = [metrics.Method.parse(m) for m in args.methods.split(",") if m.strip()]
    model = None
    if any(m.name == "ci" for m in methods):
        if not args.model:
            raise CliError("ci methods need --model")
        net, stats, _ = modelfile.load_model(args.model)
        model = (net, stats)
    if args.mixtures:
        items = _mixtures_from_dir(args.mixtures)
    else:
        items = _mixtures_from_manifest(args.manifest, args.split, args.snr)
    report = metrics.evaluate(items, methods, model)
    report.write_csv(args.out)
    for name, method, err in report.failures:
        print("failed: %s [%s]: %s" % (name, method, err), file=sys.stderr)
    for note in report.notes:
        print("# " + note)
    print("%d rows written to %s" % (len(report.rows), args.out))


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--threads", type=int, default=None,
                        help="cap on BLAS/worker threads (1 for bit-reproducible runs)")

    p = argparse.ArgumentParser(prog="cidnn", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="write a synthetic speech/noise corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--minutes", type=float, default=20.0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("mix", parents=[common], help="write mixtures and their components")
    s.add_argument("--manifest", required=True)
    s.add_argument("--snr", type=float, action="append", required=True,
                   help="input SNR in dB (repeatable)")
    s.add_argument("--out", required=True)
    s.add_argument("--split", default="test", choices=("train", "validation", "test"))
    s.set_defaults(func=cmd_mix)

    for name, func, help_text in (("stats", cmd_stats, "compute normalisation statistics"),
                                  ("train", cmd_train, "train a mask network")):
        s = sub.add_parser(name, parents=[common], help=help_text)
        s.add_argument("--config", help="key = value training config")
        s.add_argument("--manifest", help="overrides the config's manifest")
        s.add_argument("--out", required=True)
        s.set_defaults(func=func)
    s.add_argument("--epochs", type=int, help="overrides the config's epoch count")
    s.add_argument("--stats", help="precomputed normalisation statistics")
    s.add_argument("--log", help="write training log lines here")
    s.add_argument("--quiet", action="store_true")

    s = sub.add_parser("enhance", parents=[common], help="enhance one WAV file")
    s.add_argument("--model")
    s.add_argument("--stages", type=int, default=1)
    s.add_argument("--rule", choices=("wf", "lsa", "sg"))
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("evaluate", parents=[common], help="score methods and write a CSV table")
    s.add_argument("--mixtures", help="directory written by 'mix'")
    s.add_argument("--manifest", help="mix test entries in memory instead")
    s.add_argument("--split", default="test", choices=("train", "validation", "test"))
    s.add_argument("--snr", type=float, action="append",
                   help="input SNR in dB for --manifest (repeatable)")
    s.add_argument("--methods", default="identity,wf,lsa,sg",
                   help="comma list of identity, wf, lsa, sg, ci:R")
    s.add_argument("--model")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_evaluate)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "snr", None) is None and args.command == "evaluate":
        args.snr = list(levels.TRAINING_SNRS)
    if args.command == "synth" and args.seed is None:
        args.seed = 0
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be positive")
    try:
        if args.threads is not None:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                args.func(args)
        else:
            args.func(args)
    except (CliError, ValueError, OSError, pipeline.TrainingDiverged) as exc:
        print("cidnn %s: error: %s" % (args.command, exc), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

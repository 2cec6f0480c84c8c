"""``hpac`` command line: segment, train, eval, attack, sweep, toy.

Machine-readable output (JSON / JSONL) goes to stdout, logs to stderr.
Exit codes: 0 success, 2 input error, 3 configuration or checkpoint error.
"""

import argparse
import json
import logging
import os
import sys

from . import __version__
from .adversarial import AttackConfig, attack_dataset
from .config import SEED_ENV, load_run_config, parse_override
from .errors import HPACError, IncompatibleCheckpointError, RunConfigError
from .pipeline import load_inputs, load_packets, resegment, sweep, train_run
from .segmenter import read_segments_jsonl, segment_all, write_segments_jsonl
from .toy import write_toy_dataset
from .trainer import evaluate, load_checkpoint, save_checkpoint

log = logging.getLogger("hpac")

EXIT_OK, EXIT_INPUT, EXIT_CONFIG = 0, 2, 3


def _emit(obj, out=None):
    out = out or sys.stdout
    out.write(json.dumps(obj, sort_keys=True) + "\n")
    out.flush()


def _seed_arg(value):
    if value is not None:
        return value
    env = os.environ.get(SEED_ENV, "").strip()
    return int(env) if env else None


def _overrides(args):
    return dict(parse_override(s) for s in (args.set or []))


def _labeled_segments(path, labels, k):
    if os.fspath(path).endswith(".jsonl") and labels is None:
        packets = resegment(read_segments_jsonl(path), k)
    else:
        packets = segment_all(load_packets(path, labels), k)
    if any(p.label is None for p in packets):
        raise RunConfigError(f"{path}: every packet needs a label (pass --labels)")
    return packets


# -- subcommands -------------------------------------------------------------

def cmd_segment(args):
    packets = load_packets(args.input, args.labels)
    segmented = segment_all(packets, args.segment_size)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            write_segments_jsonl(fh, segmented)
        log.info("wrote %d segmented packets to %s", len(segmented), args.out)
    else:
        write_segments_jsonl(sys.stdout, segmented)
    return EXIT_OK


def cmd_train(args):
    overrides = _overrides(args)
    if args.out:
        overrides["train.checkpoint_path"] = args.out
    cfg = load_run_config(args.config, overrides, seed=args.seed)
    if not cfg.train.checkpoint_path:
        raise RunConfigError("no checkpoint destination: pass --out or set train.checkpoint_path")
    packets = load_inputs(cfg.data.inputs, cfg.data.labels)
    history_path = args.history or cfg.train.checkpoint_path + ".history.jsonl"
    with open(history_path, "w", encoding="utf-8") as hist:
        def on_epoch(entry):
            _emit(entry)
            _emit(entry, hist)

        model, history, test = train_run(packets, cfg, on_epoch=on_epoch)
    if not history:  # zero epochs: still leave a loadable checkpoint behind
        save_checkpoint(model, cfg.train.checkpoint_path)
    if args.test_out:
        with open(args.test_out, "w", encoding="utf-8") as fh:
            write_segments_jsonl(fh, test)
    log.info("best checkpoint at %s", cfg.train.checkpoint_path)
    return EXIT_OK


def _load_model(args):
    expect = None
    if getattr(args, "config", None):
        expect = load_run_config(args.config, _overrides(args)).model
    return load_checkpoint(args.model, expect=expect)


def cmd_eval(args):
    model = _load_model(args)
    packets = _labeled_segments(args.data, args.labels, model.config.k)
    report = evaluate(model, packets, threshold=args.threshold)
    _emit(report.to_dict())
    return EXIT_OK


def cmd_attack(args):
    model = _load_model(args)
    packets = _labeled_segments(args.data, args.labels, model.config.k)
    cfg = AttackConfig(method=args.method, eps=args.eps, alpha=args.alpha, iterations=args.iters,
                       seed=_seed_arg(args.seed) or 0, threshold=args.threshold,
                       focal_alpha=args.focal_alpha, focal_gamma=args.focal_gamma)
    try:
        cfg.validate()
    except HPACError as exc:
        raise RunConfigError(str(exc)) from None
    report = attack_dataset(model, packets, cfg, batch_size=args.batch_size)
    _emit(report.to_dict(per_sample=args.per_sample))
    return EXIT_OK


def cmd_sweep(args):
    try:
        sizes = [int(s) for s in args.segment_sizes.split(",") if s.strip()]
    except ValueError:
        raise RunConfigError(f"bad --segment-sizes {args.segment_sizes!r}") from None
    cfg = load_run_config(args.config, _overrides(args), seed=args.seed)
    packets = load_inputs(cfg.data.inputs, cfg.data.labels)
    for row in sweep(packets, cfg, sizes, workers=args.workers):
        _emit(row)
    return EXIT_OK


def cmd_toy(args):
    pcap, labels = write_toy_dataset(args.out_dir, n=args.n, malicious_fraction=args.malicious_fraction,
                                     seed=_seed_arg(args.seed) or 0)
    _emit({"pcap": pcap, "labels": labels, "n": args.n})
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="hpac", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"hpac {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0, help="more logging on stderr")
    p.add_argument("-q", "--quiet", action="store_true", help="errors only on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("segment", help="cut packets into k-byte segments (JSONL)")
    s.add_argument("--input", required=True, help="classic PCAP or hex text file (one packet per line)")
    s.add_argument("--segment-size", type=int, default=20)
    s.add_argument("--labels", help="CSV manifest source_id,frame_index,label")
    s.add_argument("--out", help="JSONL destination (default stdout)")
    s.set_defaults(func=cmd_segment)

    def add_config(q, required):
        q.add_argument("--config", required=required, help="JSON run config with flat dotted keys")
        q.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        q.add_argument("--seed", type=int, default=None, help=f"all seeds (fallback: ${SEED_ENV})")

    t = sub.add_parser("train", help="train and keep the best-validation-F1 checkpoint")
    add_config(t, required=True)
    t.add_argument("--out", help="checkpoint path (overrides train.checkpoint_path)")
    t.add_argument("--history", help="history JSONL path (default <out>.history.jsonl)")
    t.add_argument("--test-out", help="write the held-out test split as segment JSONL")
    t.set_defaults(func=cmd_train)

    def add_data(q):
        q.add_argument("--model", required=True, help="checkpoint file")
        q.add_argument("--data", required=True, help="segment JSONL, PCAP or hex file")
        q.add_argument("--labels", help="label manifest for PCAP / hex inputs")
        q.add_argument("--threshold", type=float, default=0.5, help="malicious-probability cut")
        q.add_argument("--config", help="optional run config; its model section must match the checkpoint")
        q.add_argument("--set", action="append", metavar="KEY=VALUE")

    e = sub.add_parser("eval", help="metrics report for a checkpoint on labeled data")
    add_data(e)
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("attack", help="FGSM / PGD robustness report")
    add_data(a)
    a.add_argument("--method", choices=("fgsm", "pgd"), default="pgd")
    a.add_argument("--eps", type=float, default=0.3)
    a.add_argument("--alpha", type=float, default=0.4)
    a.add_argument("--iters", type=int, default=20)
    a.add_argument("--seed", type=int, default=None)
    a.add_argument("--focal-alpha", type=float, default=0.25)
    a.add_argument("--focal-gamma", type=float, default=2.0)
    a.add_argument("--batch-size", type=int, default=128)
    a.add_argument("--per-sample", action="store_true", help="include every cosine similarity")
    a.set_defaults(func=cmd_attack)

    w = sub.add_parser("sweep", help="retrain and test per segment size")
    add_config(w, required=True)
    w.add_argument("--segment-sizes", default="8,20,32,39")
    w.add_argument("--workers", type=int, default=1)
    w.set_defaults(func=cmd_sweep)

    y = sub.add_parser("toy", help="write the synthetic toy corpus (PCAP + labels)")
    y.add_argument("--out-dir", required=True)
    y.add_argument("--n", type=int, default=2000)
    y.add_argument("--malicious-fraction", type=float, default=0.3)
    y.add_argument("--seed", type=int, default=None)
    y.set_defaults(func=cmd_toy)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.DEBUG if args.verbose > 1 else logging.INFO)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (RunConfigError, IncompatibleCheckpointError) as exc:
        log.error("%s", exc)
        return EXIT_CONFIG
    except (HPACError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

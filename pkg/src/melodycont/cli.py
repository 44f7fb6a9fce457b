"""Command-line entry point.  ``melodycont <command> --config run.cfg --key value``."""

import argparse
import sys

from . import gradcheck, pipeline
from .predictor import Variant


def _add_config_flags(p):
    p.add_argument("--config", help="key = value config file")
    for key in pipeline.config_keys():
        p.add_argument(f"--{key}", dest=key, metavar="VALUE", default=None)


def build_parser():
    parser = argparse.ArgumentParser(prog="melodycont", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    variants = [v.value for v in Variant]

    for name, hlp in (("prepare", "normalize, split and augment the corpus"),
                      ("train-vae", "train the segment VAE"),
                      ("evaluate", "score generations and write reports"),
                      ("run-all", "every stage in order")):
        _add_config_flags(sub.add_parser(name, help=hlp))
    p = sub.add_parser("train-predictor", help="train one latent predictor")
    p.add_argument("--variant", choices=variants, required=True)
    _add_config_flags(p)
    p = sub.add_parser("generate", help="continue test songs")
    p.add_argument("--variant", choices=variants, required=True)
    p.add_argument("--song", default=None, help="song id (default: every eligible test song)")
    _add_config_flags(p)
    p = sub.add_parser("show-config", help="print the effective configuration")
    _add_config_flags(p)

    p = sub.add_parser("synth-corpus", help="write a synthetic corpus file")
    p.add_argument("--out", required=True)
    p.add_argument("--songs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--seeds", type=int, default=20)
    return parser


def _config(args):
    keys = pipeline.config_keys()
    overrides = {k: getattr(args, k) for k in keys if getattr(args, k, None) is not None}
    return pipeline.load_config(args.config, overrides)


def run(argv):
    args = build_parser().parse_args(argv)
    cmd = args.command
    if cmd == "synth-corpus":
        pipeline.cmd_synth_corpus(args.out, args.songs, args.seed)
        print(f"synth-corpus: {args.songs} songs -> {args.out}")
        return 0
    if cmd == "gradcheck":
        print("check,seed,rel_error,tol,status")
        rows = gradcheck.run_all(range(args.seeds))
        bad = [r for r in rows if not r[4]]
        if bad:
            print(f"error: {len(bad)} of {len(rows)} gradient checks failed", file=sys.stderr)
            return 1
        return 0
    cfg = _config(args)
    if cmd == "show-config":
        sys.stdout.write(pipeline.dumps_config(cfg))
    elif cmd == "prepare":
        pipeline.cmd_prepare(cfg)
    elif cmd == "train-vae":
        pipeline.cmd_train_vae(cfg)
    elif cmd == "train-predictor":
        pipeline.cmd_train_predictor(cfg, args.variant)
    elif cmd == "generate":
        pipeline.cmd_generate(cfg, args.variant, args.song)
    elif cmd == "evaluate":
        pipeline.cmd_evaluate(cfg)
    elif cmd == "run-all":
        pipeline.run_all(cfg)
    return 0


def main(argv=None):
    try:
        return run(sys.argv[1:] if argv is None else argv)
    except (pipeline.PipelineError, ValueError, OSError, KeyError) as e:
        msg = str(e).splitlines()[0] if str(e) else type(e).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

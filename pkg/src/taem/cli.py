"""Command-line surface.

Subcommands cover the full pipeline: `make-synthetic` (desk-scale corpus),
`prepare` (wav + alignment -> mel, durations, oracle targets, speaker
blobs), `train`, `infer` (text -> feature blob + predicted durations),
`gradcheck`, and `eval` (metrics report).  Configuration is a flat
key=value file plus `--set key=value` overrides; unknown keys are errors.
Human-readable progress goes to stderr; stdout and output files carry
only machine-readable results.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .blob import write_blobs
from .checkpoint import (
    check_resume_config,
    load_checkpoint,
    restore_optimizer,
    restore_params,
    save_checkpoint,
)
from .config import (
    DEFAULT_ORACLE_SEED,
    DEFAULT_STUB_SEED,
    ConfigError,
    load_options,
    mel_config,
    model_config,
    train_config,
)
from .gradcheck import TOLERANCE, run_gradcheck, tiny_config
from .losses import OracleEncoderSpec
from .manifest import load_manifest
from .metrics import eval_report
from .network import init_params, round_durations, taem_forward
from .prepare import prepare_corpus
from .speaker import load_speaker_embedding, stub_embedding
from .synthetic import make_synthetic
from .textalign import load_lexicon, load_vocab, tokenize
from .training import TrainingDiverged, load_prepared, train


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="key=value config file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override a config key (repeatable)",
    )
    p.add_argument("--seed", type=int, default=None, help="master seed override")


def _options(args) -> dict:
    options = load_options(args.config, args.overrides)
    if args.seed is not None:
        options["seed"] = args.seed
    return options


def cmd_make_synthetic(args) -> int:
    options = _options(args)
    seed = options.get("seed", 2024)
    manifest = make_synthetic(
        args.out, n_utterances=args.count, seed=seed, mel=mel_config(options)
    )
    print(f"make-synthetic: wrote {args.count} utterances, manifest {manifest}", file=sys.stderr)
    return 0


def cmd_prepare(args) -> int:
    options = _options(args)
    records = load_manifest(args.manifest)
    oracle = OracleEncoderSpec(
        seed=options.get("oracle_seed", DEFAULT_ORACLE_SEED),
        n_mels=options.get("n_mels", 80),
        out_dim=options.get("hidden", 512),
    )
    manifest, failures = prepare_corpus(
        records,
        args.out,
        mel_cfg=mel_config(options),
        oracle=oracle,
        vocab=load_vocab(),
        stub_seed=options.get("stub_seed", DEFAULT_STUB_SEED),
    )
    print(
        f"prepare: {len(records) - failures}/{len(records)} records -> {manifest}",
        file=sys.stderr,
    )
    return 1 if failures else 0


def cmd_train(args) -> int:
    options = _options(args)
    vocab = load_vocab()
    tcfg = train_config(options)
    mcfg = model_config(options, vocab_size=vocab.size, vocab_version=vocab.version)
    records = load_manifest(args.manifest)
    examples = load_prepared(records, vocab)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = out / "checkpoint.taem"
    log_path = out / "metrics.csv"

    if args.resume:
        ckpt = load_checkpoint(args.resume)
        check_resume_config(ckpt, {"model": mcfg.to_dict(), "train": tcfg.to_dict()})
        params = restore_params(ckpt)
        optimizer = restore_optimizer(
            ckpt,
            params,
            lr=tcfg.lr,
            beta1=tcfg.beta1,
            beta2=tcfg.beta2,
            eps=tcfg.eps,
            weight_decay=tcfg.weight_decay,
        )
        start_step = ckpt.step
        master_seed = ckpt.master_seed
        print(f"train: resuming from step {start_step}", file=sys.stderr)
    else:
        params = init_params(mcfg, master_seed=tcfg.seed)
        optimizer = None
        start_step = 0
        master_seed = tcfg.seed
        save_checkpoint(
            ckpt_path, params, None, master_seed=master_seed, step=0,
            train_config=tcfg.to_dict(),
        )
    try:
        train(
            examples,
            params,
            tcfg,
            checkpoint_path=ckpt_path,
            log_path=log_path,
            optimizer=optimizer,
            start_step=start_step,
            master_seed=master_seed,
        )
    except TrainingDiverged as e:
        print(f"train: diverged: {e}", file=sys.stderr)
        return 1
    print(f"train: finished at step {tcfg.max_steps}; checkpoint {ckpt_path}", file=sys.stderr)
    return 0


def cmd_infer(args) -> int:
    options = _options(args)
    ckpt = load_checkpoint(args.checkpoint)
    params = restore_params(ckpt)
    cfg = params.config
    vocab = load_vocab()
    if vocab.version != cfg.vocab_version:
        print(
            f"infer: checkpoint was trained with vocab {cfg.vocab_version!r}, "
            f"loaded vocab is {vocab.version!r}",
            file=sys.stderr,
        )
        return 1
    lexicon = load_lexicon(args.lexicon)
    seq = tokenize(args.text, lexicon, vocab)
    if args.speaker is not None:
        speaker = load_speaker_embedding(args.speaker, dim=cfg.hidden)
    elif args.speaker_stub_id is not None:
        speaker = stub_embedding(
            args.speaker_stub_id,
            options.get("stub_seed", DEFAULT_STUB_SEED),
            dim=cfg.hidden,
        )
    else:
        print("infer: need --speaker or --speaker-stub-id", file=sys.stderr)
        return 1
    z_t, pred = taem_forward(seq, speaker, params)
    raw = pred.data.reshape(-1)
    rounded = round_durations(raw)
    out_prefix = Path(args.out)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    write_blobs(Path(f"{out_prefix}.zt.blob"), {"z_t": z_t.data})
    with open(f"{out_prefix}.durations.tsv", "w") as f:
        for r_int, r_raw in zip(rounded, raw):
            f.write(f"{int(r_int)}\t{r_raw:.9e}\n")
    print(
        f"infer: {len(seq)} phonemes -> {z_t.shape[0]} feature rows "
        f"({out_prefix}.zt.blob)",
        file=sys.stderr,
    )
    return 0


def cmd_gradcheck(args) -> int:
    options = _options(args)
    cfg_overrides = {
        k: options[k]
        for k in ("hidden", "heads", "g_blocks", "h_blocks", "ffn_kernel",
                  "ffn_width", "dp_kernel", "dp_channels", "subsample_kernel")
        if k in options
    }
    cfg = tiny_config(**cfg_overrides)
    err = run_gradcheck(options.get("seed", 1234), epsilon=args.epsilon, cfg=cfg)
    print(f"{err:.6e}")
    if err < args.tolerance:
        print(f"gradcheck: PASS ({err:.3e} < {args.tolerance:.0e})", file=sys.stderr)
        return 0
    print(f"gradcheck: FAIL ({err:.3e} >= {args.tolerance:.0e})", file=sys.stderr)
    return 1


def cmd_eval(args) -> int:
    records = load_manifest(args.manifest)
    failures = eval_report(records, args.outputs, args.report)
    print(f"eval: report written to {args.report}", file=sys.stderr)
    return 1 if failures else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="taem",
        description="Text-to-audio-feature pipeline: prepare, train, infer, evaluate.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate a desk-scale synthetic corpus")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--count", type=int, default=8)
    _add_common(p)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("prepare", help="wav + alignment -> mel, durations, targets")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train on a prepared manifest")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to resume from")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="text + speaker -> feature blob + durations")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--text", type=str, required=True)
    p.add_argument("--lexicon", type=Path, required=True)
    p.add_argument("--speaker", type=Path, default=None, help="speaker embedding blob")
    p.add_argument("--speaker-stub-id", type=int, default=None)
    p.add_argument("--out", type=Path, required=True, help="output path prefix")
    _add_common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="verify gradients on the tiny model")
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=TOLERANCE)
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("eval", help="PSNR/SSIM/LMD report for generated outputs")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--outputs", type=Path, required=True)
    p.add_argument("--report", type=Path, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as e:
        print(f"taem {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

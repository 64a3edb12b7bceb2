"""Command-line front end: feature extraction, training, evaluation,
single-file inference, gradient checking, and kernel benchmarks.

Machine-readable results (JSON, CSV) go to standard output or files;
human-readable progress goes to standard error. Exit codes: 0 success,
1 usage error, 2 input parse failure, 3 numeric fault, 4 invalid config.

Package imports happen inside the command dispatch so that --threads can
pin the BLAS thread pools before the numeric stack loads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3
EXIT_CONFIG = 4

DEFAULT_SEED = 1337


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this tool reserves 2 for input
    parse failures, so usage errors are remapped to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _say(msg: str) -> None:
    print(msg, file=sys.stderr)


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run config with dsp/model/train sections")
    common.add_argument("--seed", type=int, default=None, metavar="N",
                        help=f"override the run seed (default {DEFAULT_SEED})")
    common.add_argument("--threads", type=int, default=None, metavar="N",
                        help="cap BLAS/OpenMP thread pools")
    common.add_argument("--out", metavar="DIR", help="output directory (default: current)")

    parser = _Parser(prog="mfcm", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", parents=[common], help="wav -> mel CSV/PGM, MFCC CSV, model input tensor")
    p.add_argument("wav", help="input .wav file")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("train", parents=[common], help="train a detector on a dataset manifest")
    p.add_argument("manifest", help="dataset root directory, or a path,split,label CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score one manifest split with a checkpoint")
    p.add_argument("checkpoint", help="trained .mfck checkpoint")
    p.add_argument("manifest", help="dataset root directory, or a path,split,label CSV")
    p.add_argument("--split", default="testing", choices=["training", "validation", "testing"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", parents=[common], help="score one wav file")
    p.add_argument("checkpoint", help="trained .mfck checkpoint")
    p.add_argument("wav", help="input .wav file")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every op and the micro model")
    p.add_argument("--skip-network", action="store_true", help="check individual ops only")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", parents=[common], help="kernel throughput benchmarks")
    p.add_argument("--op", default="conv2d", choices=["conv2d", "depthwise", "fft", "dct"])
    p.add_argument("--shape", default=None, metavar="A,B,...",
                   help="conv2d/depthwise: N,C,H,W; fft: BATCH,LENGTH; dct: BATCH,SIZE")
    p.add_argument("--repeats", type=int, default=5)
    p.set_defaults(func=cmd_bench)

    return parser


# ---------------------------------------------------------------------------
# config plumbing
# ---------------------------------------------------------------------------


def _load_configs(args):
    """(dsp_cfg, model_cfg, train_cfg, explicit_hw) from the config file
    and flags. Unknown sections or keys are rejected."""
    from mfcmnet import dsp
    from mfcmnet.model import ConfigError, MfcmNetConfig, micro_config
    from mfcmnet.training import TrainConfig

    raw = {}
    if args.config:
        with open(args.config) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ConfigError("run config must be a JSON object")
        unknown = set(raw) - {"dsp", "model", "train"}
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")

    dsp_section = dict(raw.get("dsp", {}))
    allowed = {"sample_rate", "frame_len", "hop", "window", "n_mels", "fmin", "fmax", "top_db", "mfcc_coeffs"}
    bad = set(dsp_section) - allowed
    if bad:
        raise ConfigError(f"unknown dsp keys: {sorted(bad)}")
    try:
        dsp_cfg = dsp.DspConfig(**dsp_section)
        dsp_cfg.framing()
    except ValueError as exc:
        raise ConfigError(f"bad dsp section: {exc}") from exc

    train_section = dict(raw.get("train", {}))
    allowed = {"batch_size", "epochs", "learning_rate", "seed", "img_height", "img_width", "checkpoint"}
    bad = set(train_section) - allowed
    if bad:
        raise ConfigError(f"unknown train keys: {sorted(bad)}")
    explicit_hw = "img_height" in train_section or "img_width" in train_section
    try:
        train_cfg = TrainConfig(**train_section)
    except TypeError as exc:
        raise ConfigError(f"bad train section: {exc}") from exc
    if args.seed is not None:
        train_cfg = replace(train_cfg, seed=args.seed)
    train_cfg.validate()

    model_section = raw.get("model")
    if model_section is None:
        model_cfg = micro_config(train_cfg.img_height, train_cfg.img_width)
    else:
        model_section = dict(model_section)
        model_section.setdefault("input_shape", [3, train_cfg.img_height, train_cfg.img_width])
        try:
            model_cfg = MfcmNetConfig.from_dict(model_section)
        except TypeError as exc:
            raise ConfigError(f"bad model section: {exc}") from exc
    model_cfg.validate()
    return dsp_cfg, model_cfg, train_cfg, explicit_hw


def _out_dir(args) -> str:
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    return out


def _load_manifest(path):
    from mfcmnet.data import load_manifest, load_manifest_csv

    if os.path.isfile(path) and path.lower().endswith(".csv"):
        return load_manifest_csv(path)
    return load_manifest(path)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_extract(args) -> int:
    from mfcmnet import dsp, tensorio, wavio

    dsp_cfg, _, train_cfg, _ = _load_configs(args)
    clip = wavio.read_wav(args.wav)
    clip = wavio.resample_linear(clip, dsp_cfg.sample_rate)
    bank = dsp.build_mel_filterbank(
        dsp_cfg.n_mels, dsp_cfg.frame_len, dsp_cfg.sample_rate, dsp_cfg.fmin, dsp_cfg.effective_fmax()
    )
    power = dsp.mel_spectrogram(clip, dsp_cfg.framing(), bank)
    db = dsp.to_db(power, dsp_cfg.top_db)
    coeffs = dsp.mfcc(power, dsp_cfg.mfcc_coeffs)
    model_input = dsp.to_model_input(db, train_cfg.img_height, train_cfg.img_width)

    prefix = os.path.join(_out_dir(args), os.path.splitext(os.path.basename(args.wav))[0])
    files = {
        "mel_csv": f"{prefix}.mel.csv",
        "mel_pgm": f"{prefix}.mel.pgm",
        "mfcc_csv": f"{prefix}.mfcc.csv",
        "input_mfct": f"{prefix}.input.mfct",
    }
    dsp.write_spectrogram_csv(files["mel_csv"], db)
    dsp.write_spectrogram_pgm(files["mel_pgm"], db)
    dsp.write_mfcc_csv(files["mfcc_csv"], coeffs)
    tensorio.write_tensor(files["input_mfct"], model_input)
    _say(f"{args.wav}: {power.n_frames} frames x {power.n_mels} mel bands -> 4 files")
    _emit({"frames": power.n_frames, "n_mels": power.n_mels, "files": files})
    return EXIT_OK


def cmd_train(args) -> int:
    from mfcmnet.training import train

    dsp_cfg, model_cfg, train_cfg, _ = _load_configs(args)
    manifest = _load_manifest(args.manifest)
    out = _out_dir(args)
    if not os.path.isabs(train_cfg.checkpoint):
        train_cfg = replace(train_cfg, checkpoint=os.path.join(out, train_cfg.checkpoint))
    log_path = os.path.join(out, "train_log.csv")
    result = train(
        manifest,
        model_cfg,
        train_cfg,
        dsp_cfg,
        log_path=log_path,
        cache_dir=os.path.join(out, "feature_cache"),
        progress=_say,
    )
    _emit(
        {
            "checkpoint": result.checkpoint_path,
            "log": log_path,
            "epochs": train_cfg.epochs,
            "best_epoch": result.best_epoch,
            "best_val_accuracy": result.best_val_accuracy,
            "final_train_loss": result.history[-1]["train_loss"],
        }
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    from mfcmnet.training import evaluate, write_score_csv

    dsp_cfg, _, train_cfg, explicit_hw = _load_configs(args)
    manifest = _load_manifest(args.manifest)
    expected = (train_cfg.img_height, train_cfg.img_width) if explicit_hw else None
    metrics, rows = evaluate(
        args.checkpoint, manifest, args.split, dsp_cfg, batch_size=train_cfg.batch_size,
        expected_input_hw=expected,
    )
    if args.out:
        score_path = os.path.join(_out_dir(args), f"scores_{args.split}.csv")
        with open(score_path, "w", newline="") as fh:
            write_score_csv(rows, fh)
        _say(f"wrote {len(rows)} per-file scores to {score_path}")
    _emit({"split": args.split, "count": len(rows), **metrics.to_dict()})
    return EXIT_OK


def cmd_infer(args) -> int:
    from mfcmnet.training import infer_file

    dsp_cfg, _, _, _ = _load_configs(args)
    _emit(infer_file(args.checkpoint, args.wav, dsp_cfg))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from mfcmnet.gradcheck import THRESHOLD, run_all

    results = run_all(include_network=not args.skip_network)
    worst = max(err for _, err in results)
    for name, err in results:
        _say(f"{'ok ' if err < THRESHOLD else 'FAIL'} {name:<20s} {err:.3e}")
    _emit(
        {
            "threshold": THRESHOLD,
            "max_relative_error": worst,
            "ops": {name: err for name, err in results},
        }
    )
    if worst >= THRESHOLD:
        _say(f"gradient check failed: max relative error {worst:.3e} >= {THRESHOLD}")
        return EXIT_NUMERIC
    return EXIT_OK


def _shape_ints(text: str | None, count: int, what: str) -> list[int] | None:
    if text is None:
        return None
    try:
        parts = [int(p) for p in text.split(",")]
    except ValueError as exc:
        raise ValueError(f"--shape must be comma-separated integers: {exc}") from exc
    if len(parts) != count:
        raise ValueError(f"{what} expects {count} comma-separated dims, got {len(parts)}")
    return parts


def cmd_bench(args) -> int:
    from mfcmnet import kernels
    from mfcmnet.bench import run_bench

    kw = {}
    try:
        if args.op in ("conv2d", "depthwise"):
            dims = _shape_ints(args.shape, 4, args.op)
            if dims:
                n, c, h, w = dims
                kw = {"n": n, "h": h, "w": w}
                kw.update({"c_in": c} if args.op == "conv2d" else {"c": c})
        elif args.op == "fft":
            dims = _shape_ints(args.shape, 2, "fft")
            if dims:
                kw = {"batch": dims[0], "length": dims[1]}
        else:
            dims = _shape_ints(args.shape, 2, "dct")
            if dims:
                kw = {"batch": dims[0], "size": dims[1]}
        rows = run_bench(args.op, repeats=args.repeats, **kw)
    except ValueError as exc:
        _say(f"error: {exc}")
        return EXIT_USAGE
    for r in rows:
        _say(
            f"{r['op']:<16s} {r['backend']:<10s} {r['shape']:<28s} "
            f"{r['seconds'] * 1e3:8.2f} ms  {r['gflops_per_sec']:7.2f} GFLOP/s  x{r['speedup_vs_reference']:.2f}"
        )
    _emit({"active_backend": kernels.ACTIVE_BACKEND, "results": rows})
    return EXIT_OK


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def _dispatch(args) -> int:
    from mfcmnet import autograd, data, dsp, model, tensorio, wavio

    try:
        return args.func(args)
    except wavio.WavError as exc:
        _say(f"error: cannot parse wav: {exc}")
        return EXIT_INPUT
    except data.ManifestError as exc:
        _say(f"error: bad manifest: {exc}")
        return EXIT_INPUT
    except model.CheckpointMismatch as exc:
        _say(f"error: checkpoint: {exc}")
        return EXIT_INPUT
    except tensorio.TensorFormatError as exc:
        _say(f"error: bad tensor file: {exc}")
        return EXIT_INPUT
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        _say(f"error: {exc}")
        return EXIT_INPUT
    except autograd.NumericalFault as exc:
        _say(f"error: numeric fault: {exc}")
        return EXIT_NUMERIC
    except dsp.DspError as exc:
        _say(f"error: signal processing: {exc}")
        return EXIT_NUMERIC
    except model.BandTooThin as exc:
        _say(f"error: config: {exc}")
        return EXIT_CONFIG
    except model.ConfigError as exc:
        _say(f"error: config: {exc}")
        return EXIT_CONFIG
    except json.JSONDecodeError as exc:
        _say(f"error: config is not valid JSON: {exc}")
        return EXIT_CONFIG


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads is not None:
        if args.threads < 1:
            _say("error: --threads must be >= 1")
            return EXIT_USAGE
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    return _dispatch(args)


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()

"""Command-line surface: train, infer, eval, synth.

A thin shell over the library: every command's behavior is fully determined by
the module contracts plus the parsed flags, with no state carried between
invocations. Map images default to binary PGM so exports stay bit-exact with
no imaging dependency; PNG export needs Pillow.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .errors import GadsError
from .features import read_feature_file, read_prototype_file
from .inference import build_prompt_banks, infer_set
from .metrics import aggregate_reports, evaluate
from .synth import SynthConfig, write_synth
from .training import TrainConfig, load_checkpoint, save_checkpoint, train


def _parse_layers(text):
    if text is None:
        return None
    return tuple(int(x) for x in text.split(",") if x.strip() != "")


def _train_config(args, seed: int) -> TrainConfig:
    # infer/eval share the fusion flags but not the optimizer ones
    return TrainConfig(
        alpha=args.alpha,
        beta=args.beta,
        tau=args.tau,
        lr=getattr(args, "lr", 1e-3),
        epochs=getattr(args, "epochs", 10),
        batch=getattr(args, "batch", 48),
        shots=args.shots,
        layers=_parse_layers(args.layers),
        seed=seed,
    )


def write_pgm(amap: np.ndarray, path) -> None:
    """8-bit grayscale PGM; pixel value = round(255 * map value)."""
    gray = np.rint(255.0 * np.asarray(amap, dtype=np.float64)).astype(np.uint8)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def write_png(amap: np.ndarray, path) -> None:
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover
        raise GadsError("PNG export requires Pillow (pip install gads[png])") from exc
    gray = np.rint(255.0 * np.asarray(amap, dtype=np.float64)).astype(np.uint8)
    Image.fromarray(gray, mode="L").save(path)


def write_scores_csv(outputs, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id,score\n")
        for o in outputs:
            fh.write(f"{o.id},{o.score:.9g}\n")


def _write_outputs(outputs, out_dir: Path, map_format: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_scores_csv(outputs, out_dir / "scores.csv")
    maps_dir = out_dir / "maps"
    maps_dir.mkdir(exist_ok=True)
    writer = write_png if map_format == "png" else write_pgm
    ext = "png" if map_format == "png" else "pgm"
    for o in outputs:
        safe = o.id.replace("/", "_")
        writer(o.amap, maps_dir / f"{safe}.{ext}")


def cmd_train(args) -> int:
    trainset = read_feature_file(args.features)
    protos = read_prototype_file(args.protos)
    cfg = _train_config(args, args.seed[0] if args.seed else 0)

    losses = {}

    def track(epoch, step, dasl_loss, oasl_loss):
        losses["dasl"], losses["oasl"] = dasl_loss, oasl_loss
        if args.verbose:
            print(f"epoch {epoch} step {step}: dasl={dasl_loss:.6f} oasl={oasl_loss:.6f}")

    params = train(trainset, protos, cfg, log_fn=track)
    Path(args.ckpt).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(params, args.ckpt)
    if losses:
        print(f"final losses: dasl={losses['dasl']:.6f} oasl={losses['oasl']:.6f}")
    else:
        print("final losses: no steps run (epochs=0)")
    print(f"checkpoint written to {args.ckpt}")
    return 0


def _run_inference(args, seed: int):
    params = load_checkpoint(args.ckpt)
    testset = read_feature_file(args.test_features)
    protos = read_prototype_file(args.protos)
    cfg = _train_config(args, seed)
    pool = testset
    if args.prompt_features:
        pool = read_feature_file(args.prompt_features)
    prompt_ids = args.prompt_ids.split(",") if args.prompt_ids else None
    banks, fallback = build_prompt_banks(pool, args.shots, seed, prompt_ids=prompt_ids)
    outputs = infer_set(testset, banks, fallback, params, protos, cfg)
    return outputs, testset


def cmd_infer(args) -> int:
    seed = args.seed[0] if args.seed else 0
    outputs, _ = _run_inference(args, seed)
    _write_outputs(outputs, Path(args.out), args.map_format)
    print(f"wrote {len(outputs)} scores and maps to {args.out}")
    return 0


def cmd_eval(args) -> int:
    seeds = args.seed if args.seed else [0]
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    reports = []
    config_echo = {
        "shots": args.shots,
        "alpha": args.alpha,
        "beta": args.beta,
        "tau": args.tau,
        "layers": args.layers,
        "seeds": seeds,
    }
    for seed in seeds:
        outputs, testset = _run_inference(args, seed)
        seed_dir = out_dir / f"seed_{seed}"
        _write_outputs(outputs, seed_dir, args.map_format)
        report = evaluate(outputs, testset.records)
        reports.append(report)
        (seed_dir / "report.json").write_text(
            report.to_json(config_echo={**config_echo, "seed": seed})
        )
        print(f"seed {seed}:")
        print(report.to_text())

    agg = aggregate_reports(reports)
    agg["config"] = config_echo
    (out_dir / "report.json").write_text(json.dumps(agg, indent=2))
    lines = ["metric           mean    std"]
    for key in ("image_auroc", "image_ap", "pixel_auroc", "pixel_pro"):
        m, s = agg["mean"][key], agg["std"][key]
        cell = "n/a" if m is None else f"{m:.4f} ±{s:.4f}"
        lines.append(f"{key:<16}{cell}")
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def cmd_synth(args) -> int:
    cfg = SynthConfig(
        classes=args.classes,
        train_normal=args.train_normal,
        train_abnormal=args.train_abnormal,
        test_normal=args.test_normal,
        test_abnormal=args.test_abnormal,
        magnitude=args.magnitude,
        seed=args.seed[0] if args.seed else 0,
    )
    paths = write_synth(cfg, args.out)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gads",
        description="Few-shot anomaly detection and segmentation over extracted features",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--shots", type=int, default=2, help="prompt bank size K")
        p.add_argument("--seed", type=int, action="append", help="random seed (repeatable)")
        p.add_argument("--alpha", type=float, default=0.5)
        p.add_argument("--beta", type=float, default=0.75)
        p.add_argument("--tau", type=float, default=1.0)
        p.add_argument("--layers", type=str, default=None, help="comma-separated layer indices")

    p_train = sub.add_parser("train", help="train the adapters on a feature file")
    common(p_train)
    p_train.add_argument("--features", required=True)
    p_train.add_argument("--protos", required=True)
    p_train.add_argument("--ckpt", required=True, help="output checkpoint path")
    p_train.add_argument("--epochs", type=int, default=10)
    p_train.add_argument("--lr", type=float, default=1e-3)
    p_train.add_argument("--batch", type=int, default=48)
    p_train.add_argument("--verbose", action="store_true")
    p_train.set_defaults(func=cmd_train)

    p_infer = sub.add_parser("infer", help="score a test feature file with a checkpoint")
    common(p_infer)
    p_infer.add_argument("--ckpt", required=True)
    p_infer.add_argument("--test-features", required=True)
    p_infer.add_argument("--protos", required=True)
    p_infer.add_argument("--out", required=True, help="output directory")
    p_infer.add_argument("--prompt-features", default=None,
                         help="normal pool for prompt sampling (default: test features)")
    p_infer.add_argument("--prompt-ids", default=None,
                         help="comma-separated record ids to use as the prompt bank")
    p_infer.add_argument("--map-format", choices=("pgm", "png"), default="pgm")
    p_infer.set_defaults(func=cmd_infer)

    p_eval = sub.add_parser("eval", help="inference plus metrics, per seed with aggregation")
    common(p_eval)
    p_eval.add_argument("--ckpt", required=True)
    p_eval.add_argument("--test-features", required=True)
    p_eval.add_argument("--protos", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--prompt-features", default=None)
    p_eval.add_argument("--prompt-ids", default=None)
    p_eval.add_argument("--map-format", choices=("pgm", "png"), default="pgm")
    p_eval.set_defaults(func=cmd_eval)

    p_synth = sub.add_parser("synth", help="generate a synthetic feature + prototype fileset")
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, action="append")
    p_synth.add_argument("--classes", type=int, default=3)
    p_synth.add_argument("--train-normal", type=int, default=200)
    p_synth.add_argument("--train-abnormal", type=int, default=50)
    p_synth.add_argument("--test-normal", type=int, default=100)
    p_synth.add_argument("--test-abnormal", type=int, default=50)
    p_synth.add_argument("--magnitude", type=float, default=1.0)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GadsError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""``voxbag`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .cnn.cost import CostParams
from .config import PipelineConfig
from .errors import ConfigError, VoxbagError
from .synth import SynthConfig

log = logging.getLogger("voxbag")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, help="JSON pipeline config")
    p.add_argument("--seed", type=int, help="master seed (overrides config)")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--preset", type=int, choices=range(1, 6), help="network preset")
    p.add_argument("--mode", choices=("2d", "3d"), help="network dimensionality")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="voxbag", description="CNN features + bagged trees for two-class sMRI volumes")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic two-class dataset")
    p.add_argument("--per-class", type=int, default=100)
    p.add_argument("--extent", type=int, default=16)
    p.add_argument("--noise-sigma", type=float, default=1.0)
    p.add_argument("--amplitude", type=float, default=2.0)
    p.add_argument("--radius", type=float, default=3.0)

    p = sub.add_parser("train-cnn", parents=[common], help="train the CNN feature extractor")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--input-size", type=int)
    p.add_argument("--epochs", type=int)

    p = sub.add_parser("extract", parents=[common], help="write FC-layer features for a manifest")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("train-ensemble", parents=[common], help="fit bagging and baselines on features")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--features", type=Path, required=True)

    p = sub.add_parser("evaluate", parents=[common], help="score classifiers on the held-out split")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--manifest", type=Path, required=True)

    p = sub.add_parser("predict", parents=[common], help="classify one volume")
    p.add_argument("--bundle", type=Path, required=True)
    p.add_argument("--volume", type=Path, required=True)
    p.add_argument("--classifier", default=None)

    p = sub.add_parser("cost", parents=[common], help="operation-count estimate")
    for name in ("M", "N", "K", "n", "t", "c", "W", "B", "D"):
        p.add_argument(f"-{name}", type=int, dest=f"cost_{name}")
    return parser


def _config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    return config.with_overrides(
        seed=args.seed, preset=args.preset, mode=args.mode,
        input_size=getattr(args, "input_size", None), epochs=getattr(args, "epochs", None),
    )


def _reject_model_flags(args) -> None:
    # these stages take the network and seed from the bundle
    given = [f"--{k}" for k in ("config", "seed", "preset", "mode") if getattr(args, k) is not None]
    if given:
        raise ConfigError(f"{args.command} reads its configuration from the bundle; drop {', '.join(given)}")


def run(args) -> None:
    cmd = args.command
    if cmd == "synth":
        seed = args.seed if args.seed is not None else (_config(args).seed if args.config else 0)
        synth = SynthConfig(per_class=args.per_class, extent=args.extent, noise_sigma=args.noise_sigma,
                            amplitude=args.amplitude, radius=args.radius, seed=seed)
        manifest = pipeline.cmd_synth(synth, args.out)
        print(f"wrote {len(manifest)} volumes and {args.out / 'manifest.csv'}")
    elif cmd == "train-cnn":
        path = pipeline.cmd_train_cnn(_config(args), args.manifest, args.out)
        print(f"wrote {path}")
    elif cmd == "extract":
        _reject_model_flags(args)
        print(f"wrote {pipeline.cmd_extract(args.bundle, args.manifest, args.out)}")
    elif cmd == "train-ensemble":
        _reject_model_flags(args)
        print(f"wrote {pipeline.cmd_train_ensemble(args.bundle, args.features, args.out)}")
    elif cmd == "evaluate":
        _reject_model_flags(args)
        result = pipeline.cmd_evaluate(args.bundle, args.manifest, args.out)
        sys.stdout.write(result["text"])
    elif cmd == "predict":
        _reject_model_flags(args)
        print(json.dumps(pipeline.cmd_predict(args.bundle, args.volume, args.classifier), sort_keys=True))
    elif cmd == "cost":
        given = {k[5:]: v for k, v in vars(args).items() if k.startswith("cost_") and v is not None}
        if given:
            result = pipeline.cmd_cost(CostParams(**given))
        else:
            result = pipeline.cmd_cost(config=_config(args))
        print(json.dumps(result, indent=2, sort_keys=True))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except VoxbagError as exc:
        print(f"voxbag {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

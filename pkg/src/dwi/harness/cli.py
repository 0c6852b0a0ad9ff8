"""Command line entry point: ``dwi <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from ..errors import DWIError
from ..synthdata import gen_dataset, stack
from .config import DEFAULTS, load_config
from .pipeline import (all_methods, domain_spec, report_filename, run_all, run_eval, run_finetune,
                       run_fit_proto, run_pretrain, run_report, run_sweep_lambda)


def _domains(arg: str | None):
    return [d.strip() for d in arg.split(",") if d.strip()] if arg else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dwi", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", type=Path, help="key = value run configuration")
        p.add_argument("--out", type=Path, default=Path("runs/reference"), help="artifact directory")
        p.add_argument("--seed", type=int, help="override data_seed and train_seed")
        p.add_argument("--domains", help="comma-separated domain list")
        return p

    p = add("gen-data", "dump synthetic splits to .npz files")
    p.add_argument("--split", choices=("train", "val", "test"), default="train")
    p.add_argument("-n", type=int, help="samples per domain (default: n_train / n_val)")
    add("pretrain", "train the pre-trained decoder and domain-0 prototypes")
    p = add("finetune", "fine-tune on one domain and append its prototypes")
    p.add_argument("--init", default="pretrain", help="checkpoint to start from")
    p = add("fit-proto", "fit prototypes of one kind for all seen domains")
    p.add_argument("--kind", choices=("mvn", "kmeans", "kde"), default="mvn")
    p = add("eval", "evaluate one method")
    p.add_argument("--method", help="pretrained, finetuned:<domain>, dwi, dwi-argmax, ...")
    p = add("sweep-lambda", "manual interpolation sweep for one fine-tuned domain")
    p.add_argument("--steps", type=int)
    p = add("report", "merge eval reports into report.md / report.csv")
    p.add_argument("reports", nargs="*", type=Path, help="report files (default: all in --out)")
    add("run-all", "run every stage of the reference experiment")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config) if args.config else DEFAULTS
        if args.seed is not None:
            cfg = cfg.with_overrides(data_seed=args.seed, train_seed=args.seed)
        domains = _domains(args.domains)
        out = args.out

        if args.command == "gen-data":
            out.mkdir(parents=True, exist_ok=True)
            for name in domains or cfg.all_domains:
                spec = domain_spec(name)
                n = args.n or (cfg.n_train if args.split == "train" else cfg.n_val)
                images, labels = stack(gen_dataset(spec, n, cfg.data_seed, args.split))
                path = out / f"{name}-{args.split}.npz"
                np.savez(path, images=images, labels=labels, class_names=np.array(spec.class_names))
                print(path)
        elif args.command == "pretrain":
            print(run_pretrain(cfg, out))
        elif args.command == "finetune":
            for name in domains or cfg.finetune_domains:
                print(run_finetune(cfg, out, name, init=args.init))
        elif args.command == "fit-proto":
            print(run_fit_proto(cfg, out, args.kind))
        elif args.command == "eval":
            methods = [args.method] if args.method else [cfg.method]
            for m in methods:
                rep = run_eval(cfg, out, m, domains)
                for d, v in rep["domains"].items():
                    print(f"{m}\t{d}\tmIoU={v['miou']:.4f}")
        elif args.command == "sweep-lambda":
            for name in domains or cfg.finetune_domains[:1]:
                print(run_sweep_lambda(cfg, out, name, args.steps))
        elif args.command == "report":
            paths = args.reports or sorted(p for p in out.glob("eval-*.json")
                                           if not p.name.endswith(".timing.json"))
            md, _ = run_report(paths, out)
            print(md, end="")
        elif args.command == "run-all":
            run_all(cfg, out)
            paths = [out / report_filename(m) for m in all_methods(cfg)]
            print(run_report(paths, out)[0], end="")
    except DWIError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

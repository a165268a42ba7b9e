"""``mulprobe`` command line.

Exit codes: 0 success, 2 validation error, 3 backend capability error,
4 partial-failure threshold exceeded.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, pipeline
from .backend import CapabilityError
from .config import ConfigError, load_config
from .dataset import BucketExhausted
from .geometry import AdapterFormatError

EXIT_OK, EXIT_VALIDATION, EXIT_CAPABILITY, EXIT_PARTIAL = 0, 2, 3, 4


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run config")
    p.add_argument("--out", dest="output_dir", help="output directory (overrides config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--parallelism", type=int, help="max concurrent backend requests")
    p.add_argument("--max-retries", dest="max_retries", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mulprobe", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"mulprobe {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate suite, HDS, traps, perturbations, traces")
    _common(p)
    p.add_argument("--suite-count", dest="suite_count", type=int)
    p.add_argument("--hds-count", dest="hds_count", type=int)
    p.add_argument("--trap-count", dest="trap_count", type=int)
    p.add_argument("--trace-count", dest="trace_count", type=int)

    p = sub.add_parser("render", help="write text/image/audio renderings of the suite")
    _common(p)
    p.add_argument("--clips", help="clip library directory for audio")

    p = sub.add_parser("eval", help="generate answers and fit accuracy-vs-load curves")
    _common(p)
    p.add_argument("--clips", help="clip library directory for audio")

    for name, helptext in (("probe", "forced-completion loss probe on the HDS split and traps"),
                           ("contrast", "contrastive correct/incorrect step probe"),
                           ("ablate", "balanced vs style-mismatch template banks")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        if name == "probe":
            p.add_argument("--bank", dest="bank_profile", choices=("balanced", "style_mismatch"))
            p.add_argument("--limit", dest="probe_limit", type=int)

    p = sub.add_parser("stats", help="refit statistics from an accuracy-records file")
    _common(p)
    p.add_argument("--records", help="records JSONL (default: <out>/eval/records.jsonl)")
    p.add_argument("--stats-out", help="directory for fit reports (default: <out>/stats)")

    p = sub.add_parser("geometry", help="cosine geometry of low-rank adapter updates")
    _common(p)
    p.add_argument("adapters", nargs="*", help="adapter directories")
    p.add_argument("--synthetic", help="write synthetic adapters here and include them")
    p.add_argument("--geometry-out", help="directory for the report (default: <out>/geometry)")

    p = sub.add_parser("verify", help="re-check content hashes and provenance headers")
    _common(p)

    p = sub.add_parser("report", help="collect stage outputs into report/summary.{json,md}")
    _common(p)

    p = sub.add_parser("pipeline", help="gen, render, eval, probe, contrast, ablate, report")
    _common(p)
    p.add_argument("--clips", help="clip library directory for audio")
    return ap


_OVERRIDES = ("output_dir", "seed", "parallelism", "max_retries", "suite_count", "hds_count", "trap_count",
              "trace_count", "bank_profile", "probe_limit")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    overrides = {k: getattr(args, k) for k in _OVERRIDES if getattr(args, k, None) is not None}
    try:
        cfg_path = args.config
        if cfg_path is None and args.command != "gen" and args.output_dir:
            # Reuse the config saved by ``gen`` in the run directory.
            saved = Path(args.output_dir) / "config.json"
            cfg_path = saved if saved.exists() else None
        cfg = load_config(cfg_path, overrides)
        cmd = args.command
        if cmd == "gen":
            result = pipeline.cmd_gen(cfg)["counts"]
        elif cmd == "render":
            result = pipeline.cmd_render(cfg, args.clips)
        elif cmd == "eval":
            result = pipeline.cmd_eval(cfg, args.clips)
        elif cmd == "probe":
            result = pipeline.cmd_probe(cfg)
        elif cmd == "contrast":
            result = pipeline.cmd_contrast(cfg)
        elif cmd == "ablate":
            result = pipeline.cmd_ablate(cfg)
        elif cmd == "stats":
            result = pipeline.cmd_stats(cfg, args.records, args.stats_out)
        elif cmd == "geometry":
            result = pipeline.cmd_geometry(cfg, args.adapters, args.synthetic, args.geometry_out)
        elif cmd == "verify":
            problems = pipeline.cmd_verify(cfg)
            for line in problems:
                print(line, file=sys.stderr)
            print("verify: ok" if not problems else f"verify: {len(problems)} problem(s)")
            return EXIT_OK if not problems else EXIT_VALIDATION
        elif cmd == "report":
            pipeline.cmd_report(cfg)
            result = {"report": str(cfg.out / "report" / "summary.md")}
        else:
            result = pipeline.cmd_pipeline(cfg, args.clips)
    except (ConfigError, AdapterFormatError, BucketExhausted, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except CapabilityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPABILITY
    except pipeline.PartialFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARTIAL
    print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

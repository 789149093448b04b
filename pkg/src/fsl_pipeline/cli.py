"""Command-line driver: one subcommand per pipeline stage.

    build         backbone flags -> graph.json, complexity.csv [, weights.pefw]
    compile       graph.json + arch.json -> program.json, cycles.csv
    run           program.json + weights (+ input) -> features.json [, trace.csv]
    quantize      float PEFW -> q8.8 PEFW
    fewshot-eval  PEFF + protocol flags -> eval.json
    dse           sweep flags [+ accuracy table] -> sweep.csv, pareto.csv

Exit codes: 0 success, 1 validation error (including bad flags), 2 I/O error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import dse as dse_mod
from . import sim
from .compiler import DEMONSTRATOR, DataFormat, Program, estimate_cycles, lower, parse_arch
from .errors import FormatError, PipelineError
from .fewshot import EpisodeProtocol, evaluate, load_features
from .nn_ir import (BackboneSpec, Graph, LayerKind, build_backbone, complexity, fold_batchnorm,
                    init_weights, quantize_weights, read_weights, write_weights)
from .numerics import QTensor

log = logging.getLogger("fsl_pipeline")

EXIT_OK, EXIT_VALIDATION, EXIT_IO = 0, 1, 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _csv_ints(text: str) -> List[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _csv_strs(text: str) -> List[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _load_arch(path: Optional[str]):
    if path is None:
        return DEMONSTRATOR
    return parse_arch(Path(path).read_text())


def cmd_build(args) -> int:
    spec = BackboneSpec(args.depth, args.feature_maps, args.downsampling, args.resolution, args.input_channels)
    graph = build_backbone(spec)
    weights = init_weights(graph, seed=args.seed) if (args.weights or args.fold) else None
    if args.fold:
        graph, weights = fold_batchnorm(graph, weights)
    out = Path(args.output)
    _write(out / "graph.json", graph.to_json())
    _write(out / "complexity.csv", complexity(graph).to_csv())
    if args.weights:
        write_weights(out / "weights.pefw", weights)
    print(f"{spec.name}: output_dim={graph.output_dim} macs={complexity(graph).mac_count}")
    return EXIT_OK


def cmd_compile(args) -> int:
    graph = Graph.from_json(Path(args.graph).read_text())
    if graph.has_kind(LayerKind.BATCHNORM):
        raise PipelineError("graph still has BatchNorm layers; rebuild with --fold")
    arch = _load_arch(args.arch)
    program = lower(graph, arch)
    report = estimate_cycles(program, arch)
    out = Path(args.output)
    _write(out / "program.json", program.to_json(include_instructions=not args.no_instructions))
    _write(out / "cycles.csv", report.to_csv())
    print(f"cycles={report.total_cycles} latency_ms={report.latency_ms:.6f} @ {arch.clock_mhz:g} MHz")
    return EXIT_OK


def _load_input(args, program: Program, fixed: bool):
    shape = program.graph.input_shape
    if args.input:
        tensors = read_weights(args.input)
        if "input" not in tensors:
            raise PipelineError(f"{args.input} has no tensor named 'input'")
        x = tensors["input"]
    else:
        x = np.random.default_rng(args.seed).uniform(0.0, 1.0, shape).astype(np.float32)
    if fixed and not isinstance(x, QTensor):
        x = QTensor.from_float(x)
    elif not fixed and isinstance(x, QTensor):
        x = x.to_float()
    return x


def cmd_run(args) -> int:
    program = Program.from_json(Path(args.program).read_text())
    arch = program.arch
    fixed = arch.data_format is DataFormat.Q8_8
    weights = read_weights(args.weights)
    x = _load_input(args, program, fixed)
    result = sim.run(program, weights, x, arch, trace=args.trace)
    feats = result.features
    doc = {"cycles": result.cycles, "latency_ms": arch.latency_ms(result.cycles),
           "data_format": arch.data_format.value}
    if fixed:
        doc["raw"] = [int(v) for v in feats.raw.reshape(-1)]
        doc["features"] = [float(v) for v in feats.to_float().reshape(-1)]
    else:
        doc["features"] = [float(v) for v in np.asarray(feats).reshape(-1)]
    out = Path(args.output)
    _write(out / "features.json", json.dumps(doc, indent=1, sort_keys=True) + "\n")
    if args.trace:
        _write(out / "trace.csv", result.trace_csv())
    print(f"features={len(doc['features'])} cycles={result.cycles}")
    return EXIT_OK


def cmd_quantize(args) -> int:
    src = Path(args.weights)
    dst = Path(args.dest) if args.dest else Path(args.output) / f"{src.stem}.q88.pefw"
    dst.parent.mkdir(parents=True, exist_ok=True)
    write_weights(dst, quantize_weights(read_weights(src)))
    print(dst)
    return EXIT_OK


def cmd_fewshot_eval(args) -> int:
    fs = load_features(args.features)
    proto = EpisodeProtocol(args.ways, args.shots, args.queries, args.episodes, args.seed)
    res = evaluate(fs, proto, threads=args.threads)
    text = res.to_json()
    _write(Path(args.output) / "eval.json", text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_dse(args) -> int:
    space = dse_mod.SweepSpace(
        depths=tuple(args.depths), feature_maps=tuple(args.feature_maps),
        downsampling=tuple(args.downsampling), train_resolutions=tuple(args.train_res),
        test_resolutions=tuple(args.test_res), arch=_load_arch(args.arch))
    source = None
    if args.accuracy_table and not args.latency_only:
        source = dse_mod.read_accuracy_table(args.accuracy_table)
    proto = EpisodeProtocol(args.ways, args.shots, args.queries, args.episodes, args.seed)
    rows = dse_mod.run_sweep(space, source, proto, threads=args.threads)
    scored = [r for r in rows if r.accuracy is not None and r.latency_ms is not None]
    out = Path(args.output)
    _write(out / "sweep.csv", dse_mod.rows_to_csv(rows))
    _write(out / "pareto.csv", dse_mod.rows_to_csv(dse_mod.pareto_front(scored)))
    failed = sum(1 for r in rows if r.error)
    print(f"configs={len(rows)} scored={len(scored)} failed={failed}")
    return EXIT_OK


def _threads_default() -> int:
    try:
        return max(1, int(os.environ.get("PEFSL_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    common.add_argument("--threads", type=int, default=_threads_default(),
                        help="worker threads (default $PEFSL_THREADS or 1)")
    common.add_argument("--output", default=".", help="output directory (default .)")
    common.add_argument("-v", "--verbose", action="store_true")

    protocol = _Parser(add_help=False)
    protocol.add_argument("--ways", type=int, default=5)
    protocol.add_argument("--shots", type=int, default=1)
    protocol.add_argument("--queries", type=int, default=15)
    protocol.add_argument("--episodes", type=int, default=10_000)

    parser = _Parser(prog="fsl-pipeline", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", parents=[common], help="build a backbone graph")
    p.add_argument("--depth", type=int, choices=(9, 12), required=True)
    p.add_argument("--feature-maps", type=int, required=True)
    p.add_argument("--downsampling", choices=("strided", "maxpool"), required=True)
    p.add_argument("--resolution", type=int, required=True)
    p.add_argument("--input-channels", type=int, default=3)
    p.add_argument("--weights", action="store_true", help="also write seeded random weights.pefw")
    p.add_argument("--fold", action="store_true", help="fold batch norms into convs (implies weights)")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("compile", parents=[common], help="lower a folded graph for an array")
    p.add_argument("graph")
    p.add_argument("--arch", help="architecture JSON (default: 12x12 q8.8 @ 125 MHz)")
    p.add_argument("--no-instructions", action="store_true", help="omit the flat instruction list")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("run", parents=[common], help="simulate a compiled program")
    p.add_argument("program")
    p.add_argument("--weights", required=True)
    p.add_argument("--input", help="PEFW file with an 'input' tensor (default: seeded uniform noise)")
    p.add_argument("--trace", action="store_true", help="write per-instruction trace.csv")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("quantize", parents=[common], help="convert float weights to q8.8")
    p.add_argument("weights")
    p.add_argument("dest", nargs="?")
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("fewshot-eval", parents=[common, protocol], help="episodic NCM evaluation")
    p.add_argument("features")
    p.set_defaults(func=cmd_fewshot_eval)

    p = sub.add_parser("dse", parents=[common, protocol], help="sweep the backbone design space")
    p.add_argument("--arch")
    p.add_argument("--depths", type=_csv_ints, default=[9, 12])
    p.add_argument("--feature-maps", type=_csv_ints, default=[8, 16, 32, 64])
    p.add_argument("--downsampling", type=_csv_strs, default=["strided", "maxpool"])
    p.add_argument("--train-res", type=_csv_ints, default=[32])
    p.add_argument("--test-res", type=_csv_ints, default=[32, 84])
    p.add_argument("--accuracy-table", help="CSV of accuracies or feature files per config")
    p.add_argument("--latency-only", action="store_true", help="ignore any accuracy source")
    p.set_defaults(func=cmd_dse)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as e:
        print(e, file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except FormatError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO
    except PipelineError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_IO if isinstance(e, OSError) else EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

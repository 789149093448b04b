"""Exhaustive hyperparameter sweep: compile every backbone, join accuracies, find the front."""

from __future__ import annotations

import csv
import io
import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from .compiler.arch import DEMONSTRATOR, ArchConfig
from .compiler.cost import estimate_cycles
from .compiler.program import lower
from .errors import PipelineError
from .fewshot.episodes import EpisodeProtocol, evaluate
from .fewshot.features import load_features
from .nn_ir.analysis import complexity
from .nn_ir.backbone import BackboneSpec, Depth, Downsampling, build_backbone
from .nn_ir.fold import strip_batchnorm

SWEEP_HEADER = ["depth", "feature_maps", "downsampling", "train_res", "test_res",
                "mac_count", "cycles", "latency_ms", "accuracy", "ci95", "error"]

ConfigKey = Tuple[int, int, str, int, int]


class SweepError(PipelineError, ValueError):
    pass


@dataclass(frozen=True)
class SweepSpace:
    depths: Tuple[int, ...] = (9, 12)
    feature_maps: Tuple[int, ...] = (8, 16, 32, 64)
    downsampling: Tuple[str, ...] = ("strided", "maxpool")
    train_resolutions: Tuple[int, ...] = (32,)
    test_resolutions: Tuple[int, ...] = (32, 84)
    arch: ArchConfig = DEMONSTRATOR
    cap: int = 10_000

    def __post_init__(self):
        for name in ("depths", "feature_maps", "downsampling", "train_resolutions", "test_resolutions"):
            axis = tuple(getattr(self, name))
            if not axis:
                raise SweepError(f"empty sweep axis {name!r}")
            object.__setattr__(self, name, axis)
        object.__setattr__(self, "depths", tuple(int(Depth.parse(d)) for d in self.depths))
        object.__setattr__(self, "downsampling",
                           tuple(Downsampling.parse(d).value for d in self.downsampling))


@dataclass(frozen=True)
class SweepConfig:
    depth: int
    feature_maps: int
    downsampling: str
    train_res: int
    test_res: int

    @property
    def key(self) -> ConfigKey:
        return (self.depth, self.feature_maps, self.downsampling, self.train_res, self.test_res)

    def backbone(self) -> BackboneSpec:
        return BackboneSpec(self.depth, self.feature_maps, self.downsampling, self.test_res)


@dataclass(frozen=True)
class SweepRow:
    config: SweepConfig
    mac_count: Optional[int] = None
    total_cycles: Optional[int] = None
    latency_ms: Optional[float] = None
    accuracy: Optional[float] = None
    ci95: Optional[float] = None
    error: str = ""

    def csv_fields(self) -> List[str]:
        c = self.config

        def fmt(v, spec=""):
            return "" if v is None else format(v, spec)

        return [str(c.depth), str(c.feature_maps), c.downsampling, str(c.train_res), str(c.test_res),
                fmt(self.mac_count), fmt(self.total_cycles), fmt(self.latency_ms, ".6f"),
                fmt(self.accuracy, ".6f"), fmt(self.ci95, ".6f"), self.error]


def enumerate_configs(space: SweepSpace) -> List[SweepConfig]:
    axes = [sorted(space.depths), sorted(space.feature_maps), sorted(space.downsampling),
            sorted(space.train_resolutions), sorted(space.test_resolutions)]
    total = 1
    for a in axes:
        total *= len(a)
    if total > space.cap:
        raise SweepError(f"sweep of {total} configs exceeds cap {space.cap}")
    return [SweepConfig(*combo) for combo in itertools.product(*axes)]


# An accuracy source maps a config key to either a PEFF path or an (accuracy, ci95) pair.
AccuracyEntry = Union[str, Path, Tuple[float, Optional[float]]]


def _compile_row(cfg: SweepConfig, arch: ArchConfig) -> SweepRow:
    try:
        graph = build_backbone(cfg.backbone())
        folded = strip_batchnorm(graph)
        report = estimate_cycles(lower(folded, arch), arch)
        return SweepRow(cfg, complexity(folded).mac_count, report.total_cycles, report.latency_ms)
    except PipelineError as e:
        return SweepRow(cfg, error=f"{type(e).__name__}: {e}")


def _join_accuracy(row: SweepRow, entry: Optional[AccuracyEntry], protocol: EpisodeProtocol) -> SweepRow:
    if entry is None:
        return row
    try:
        if isinstance(entry, (str, Path)):
            res = evaluate(load_features(entry), protocol)
            return replace(row, accuracy=res.mean_accuracy, ci95=res.ci95_halfwidth)
        acc, ci = entry
        return replace(row, accuracy=float(acc), ci95=None if ci is None else float(ci))
    except (PipelineError, OSError) as e:
        msg = f"{type(e).__name__}: {e}"
        return replace(row, error=f"{row.error}; {msg}" if row.error else msg)


def run_sweep(space: SweepSpace, accuracy_source: Optional[Mapping[ConfigKey, AccuracyEntry]] = None,
              protocol: Optional[EpisodeProtocol] = None, threads: int = 1) -> List[SweepRow]:
    """Compile every config; rows come back sorted by latency (failed rows last)."""
    configs = enumerate_configs(space)
    protocol = protocol or EpisodeProtocol()
    source = dict(accuracy_source or {})

    def work(cfg: SweepConfig) -> SweepRow:
        return _join_accuracy(_compile_row(cfg, space.arch), source.get(cfg.key), protocol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(work, configs))
    else:
        rows = [work(c) for c in configs]
    order = {c.key: i for i, c in enumerate(configs)}
    return sorted(rows, key=lambda r: (r.latency_ms is None, r.latency_ms or 0.0, order[r.config.key]))


def pareto_front(rows: Sequence[SweepRow]) -> List[SweepRow]:
    """Non-dominated rows under (min latency, max accuracy), ordered by latency.

    Rows with identical (latency, accuracy) keep only the first in input order.
    """
    for r in rows:
        if r.accuracy is None or r.latency_ms is None:
            raise SweepError(f"row {r.config.key} is missing accuracy or latency")
    indexed = sorted(enumerate(rows), key=lambda ir: (ir[1].latency_ms, -ir[1].accuracy, ir[0]))
    front: List[SweepRow] = []
    best = float("-inf")
    for _, r in indexed:
        # sorted by latency then accuracy desc: a row survives iff it beats every faster row
        if r.accuracy > best:
            front.append(r)
            best = r.accuracy
    return front


def rows_to_csv(rows: Iterable[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_HEADER)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def read_accuracy_table(path: Union[str, Path]) -> Dict[ConfigKey, AccuracyEntry]:
    """CSV keyed on the five config axes, with either ``accuracy[,ci95]`` or ``feature_file``."""
    out: Dict[ConfigKey, AccuracyEntry] = {}
    base = Path(path).parent
    with open(path, newline="") as f:
        for line, rec in enumerate(csv.DictReader(f), start=2):
            try:
                key = (int(Depth.parse(rec["depth"])), int(rec["feature_maps"]),
                       Downsampling.parse(rec["downsampling"]).value,
                       int(rec["train_res"]), int(rec["test_res"]))
            except (KeyError, ValueError, TypeError) as e:
                raise SweepError(f"{path}:{line}: bad config key ({e})") from None
            if key in out:
                raise SweepError(f"{path}:{line}: duplicate entry for {key}")
            feat = (rec.get("feature_file") or "").strip()
            if feat:
                out[key] = base / feat
            else:
                try:
                    ci = (rec.get("ci95") or "").strip()
                    out[key] = (float(rec["accuracy"]), float(ci) if ci else None)
                except (KeyError, ValueError, TypeError):
                    raise SweepError(f"{path}:{line}: needs accuracy or feature_file") from None
    return out

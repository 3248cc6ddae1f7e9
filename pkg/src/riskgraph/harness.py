"""Experiment plumbing: persistence, metrics, splits, and full pipeline runs."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .dpag import GRAPH_FORMAT_VERSION, Dpag
from .encoder import LABEL_DIM, RISK_WINDOW, IntersectionGeometry, SceneFrame, encode_scene, feature_matrix
from .errors import ConfigInvalid, EmptySet, FormatError
from .gradients import Batch, SupervisedPattern, finite_difference_gradient, s_gradients
from .network import (
    CHECKPOINT_FORMAT_VERSION,
    Architecture,
    NetworkParams,
    _atomic_write,
    check_version,
    init_params,
)
from .optimizers import LineSearchConfig, TrainReport, bpts_train, qnts_train
from .scenario import GeneratedPattern, PatternSet, ScenarioConfig, default_scenario_config, generate_pattern_set

log = logging.getLogger(__name__)

PATTERNSET_FORMAT_VERSION = "1.0"
SCENE_FORMAT_VERSION = "1.0"
REPORT_FORMAT_VERSION = "1.0"

# acceptable training error per pattern; stopping there curbs overfitting
REPRO_ERROR_PER_PATTERN = 0.012

# reference rows of the published experiment, for side-by-side reports
PUBLISHED_RESULTS = (
    {"architecture": "23x160x1", "epochs": 500, "collision_pct": 99.4, "overall_pct": 97.9},
    {"architecture": "20x150x1", "epochs": 500, "collision_pct": 100.0, "overall_pct": 94.2},
)


# -- line-delimited records ----------------------------------------------------

def write_jsonl(path, records: Iterable[Mapping[str, Any]]) -> None:
    _atomic_write(path, "".join(json.dumps(r) + "\n" for r in records))


def read_jsonl(path) -> list[dict]:
    out = []
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise FormatError(f"{path}:{n}: {exc}") from exc
    return out


def read_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigInvalid(f"{path}: invalid JSON ({exc})") from exc


def write_json(path, obj) -> None:
    _atomic_write(path, json.dumps(obj, indent=2) + "\n")


# -- pattern sets --------------------------------------------------------------

def save_pattern_set(path, ps: PatternSet) -> None:
    header = {
        "format_version": PATTERNSET_FORMAT_VERSION,
        "kind": "pattern_set",
        "count": len(ps),
        "seed": ps.seed,
        "collision_fraction": ps.collision_fraction,
        "geometry": ps.geometry.to_dict(),
        "config": ps.config,
    }
    write_jsonl(path, [header] + [p.to_record() for p in ps.patterns])


def load_pattern_set(path) -> PatternSet:
    records = read_jsonl(path)
    if not records:
        raise FormatError(f"{path}: empty file")
    header = records[0]
    check_version(header.get("format_version"), PATTERNSET_FORMAT_VERSION, path)
    if header.get("kind") != "pattern_set":
        raise FormatError(f"{path}: not a pattern set")
    patterns = [GeneratedPattern.from_record(r) for r in records[1:]]
    if header.get("count") is not None and header["count"] != len(patterns):
        raise FormatError(f"{path}: header announces {header['count']} patterns, found {len(patterns)}")
    return PatternSet(patterns, IntersectionGeometry.from_dict(header.get("geometry")),
                      header.get("seed"), header.get("config"))


def save_scene(path, frames, geometry: IntersectionGeometry, risk_window_s: float = RISK_WINDOW,
               k: int = 2) -> None:
    write_json(path, {
        "format_version": SCENE_FORMAT_VERSION,
        "kind": "scene",
        "geometry": geometry.to_dict(),
        "risk_window_s": risk_window_s,
        "k": k,
        "frames": [f.to_dict() for f in frames],
    })


def encode_scene_file(path) -> Dpag:
    """Read a scene document and encode it into its DPAG."""
    doc = read_json(path)
    check_version(doc.get("format_version"), SCENE_FORMAT_VERSION, path)
    try:
        frames = [SceneFrame.from_dict(f) for f in doc["frames"]]
        geometry = IntersectionGeometry.from_dict(doc.get("geometry"))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{path}: malformed scene ({exc})") from exc
    return encode_scene(frames, geometry, float(doc.get("risk_window_s", RISK_WINDOW)),
                        int(doc.get("k", 2)))


def load_scenario_config(path) -> ScenarioConfig:
    if path is None:
        return default_scenario_config()
    return ScenarioConfig.from_dict(read_json(path))


def graph_document(graph: Dpag) -> dict:
    return {"format_version": GRAPH_FORMAT_VERSION, **graph.to_record()}


def training_patterns(ps: PatternSet) -> list[SupervisedPattern]:
    return [SupervisedPattern(p.graph, p.target, feature_matrix(p.graph, ps.geometry)) for p in ps]


# -- metrics and splits --------------------------------------------------------

@dataclass
class EvalMetrics:
    overall_generalization_pct: float
    collision_generalization_pct: float | None
    tp: int
    fp: int
    tn: int
    fn: int
    threshold: float

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return {**asdict(self), "n": self.n}


def classify(outputs, targets, threshold: float = 0.5) -> EvalMetrics:
    """Threshold outputs and targets alike (>= threshold is class 1)."""
    y = np.asarray(outputs, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if y.size == 0:
        raise EmptySet("nothing to evaluate")
    pred, true = y >= threshold, t >= threshold
    tp = int(np.sum(pred & true))
    tn = int(np.sum(~pred & ~true))
    fp = int(np.sum(pred & ~true))
    fn = int(np.sum(~pred & true))
    overall = 100.0 * (tp + tn) / y.size
    positives = tp + fn
    collision = 100.0 * tp / positives if positives else None
    return EvalMetrics(overall, collision, tp, fp, tn, fn, threshold)


def evaluate(patterns, params: NetworkParams, threshold: float = 0.5) -> EvalMetrics:
    if isinstance(patterns, PatternSet):
        patterns = training_patterns(patterns)
    if not patterns:
        raise EmptySet("nothing to evaluate")
    outputs = Batch(patterns, params.arch).root_outputs(params.vector)
    return classify(outputs, [p.target for p in patterns], threshold)


def split(items: Sequence, train_fraction: float, seed: int):
    """Seeded shuffle into disjoint (train, validation) lists; train size floored."""
    if not 0 < train_fraction < 1:
        raise ConfigInvalid("train_fraction must lie in (0, 1)")
    if len(items) == 0:
        raise EmptySet("cannot split an empty set")
    order = np.random.default_rng(seed).permutation(len(items))
    n_train = int(math.floor(train_fraction * len(items) + 1e-9))
    train = [items[i] for i in order[:n_train]]
    val = [items[i] for i in order[n_train:]]
    return train, val


# -- training ------------------------------------------------------------------

@dataclass
class TrainConfig:
    optimizer: str = "qnts"
    max_epochs: int = 200
    tolerance: float = 0.0
    learning_rate: float = 0.01
    c_armijo: float = 1e-4
    rho: float = 0.5
    max_backtracks: int = 30
    seed: int = 0
    deterministic_reduction: bool = True

    def __post_init__(self):
        if self.optimizer not in ("qnts", "bpts"):
            raise ConfigInvalid(f"optimizer must be qnts or bpts, got {self.optimizer!r}")
        if self.max_epochs < 0:
            raise ConfigInvalid("max_epochs must be non-negative")
        try:
            LineSearchConfig(self.c_armijo, self.rho, self.max_backtracks)
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from exc

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigInvalid(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    @property
    def line_search(self) -> LineSearchConfig:
        return LineSearchConfig(self.c_armijo, self.rho, self.max_backtracks)


def train(patterns: Sequence[SupervisedPattern], arch: Architecture,
          config: TrainConfig) -> tuple[NetworkParams, TrainReport]:
    params = init_params(arch, config.seed)
    if config.optimizer == "qnts":
        return qnts_train(patterns, params, config.max_epochs, config.tolerance, config.line_search)
    return bpts_train(patterns, params, config.max_epochs, config.learning_rate, config.tolerance)


def report_records(report: TrainReport, extra: Mapping[str, Any] | None = None) -> list[dict]:
    head = {"format_version": REPORT_FORMAT_VERSION, "kind": "train_report", **(extra or {})}
    return [head] + report.to_records()


# -- gradient check ------------------------------------------------------------

def random_case(rng: np.random.Generator, max_nodes: int = 6, max_k: int = 3,
                max_m: int = 6, max_n: int = 5, max_h: int = 5):
    """A random single-rooted DPAG with numeric labels and matching parameters."""
    k = int(rng.integers(1, max_k + 1))
    m = int(rng.integers(1, max_m + 1))
    n = int(rng.integers(1, max_n + 1))
    h = int(rng.integers(1, max_h + 1))
    n_nodes = int(rng.integers(1, max_nodes + 1))
    free = {0: list(range(1, k + 1))}
    edges = []
    for child in range(1, n_nodes):
        parents = [p for p in range(child) if free[p]]
        if not parents:
            n_nodes = child
            break
        p = int(rng.choice(parents))
        edges.append((p, child, free[p].pop(int(rng.integers(len(free[p]))))))
        free[child] = list(range(1, k + 1))
        # occasional second parent turns the tree into a DAG
        extra = [q for q in range(child) if q != p and free[q]]
        if extra and rng.random() < 0.3:
            q = int(rng.choice(extra))
            edges.append((q, child, free[q].pop(int(rng.integers(len(free[q]))))))
    nodes = [(v, rng.uniform(-1, 1, size=n)) for v in range(n_nodes)]
    graph = Dpag.build(nodes, edges, k=k, i=2)
    arch = Architecture(m, n, k, h)
    vec = init_params(arch, int(rng.integers(2**31))).vector.copy()
    vec += rng.uniform(-0.3, 0.3, size=vec.size)
    pattern = SupervisedPattern(graph, float(rng.uniform(0, 1)))
    return pattern, NetworkParams(arch, vec)


# below this magnitude central differences at h=1e-5 cannot resolve a relative
# 1e-6 (their round-off is ~eps*E/h); such components are compared absolutely
GRADCHECK_FLOOR = 1e-6


def relative_error(a, b, floor: float = GRADCHECK_FLOOR) -> np.ndarray:
    """Componentwise ``|a - b| / max(|a|, |b|, floor)``."""
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))


def gradcheck(seed: int, trials: int, h: float = 1e-5) -> dict:
    rng = np.random.default_rng(seed)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(trials):
        pattern, params = random_case(rng)
        analytic = s_gradients(pattern, params).flat
        numeric = finite_difference_gradient(pattern, params, h).flat
        worst = max(worst, float(relative_error(analytic, numeric).max()))
    return {"trials": trials, "seed": seed, "step": h, "max_relative_error": worst,
            "seconds": time.perf_counter() - start}


# -- full pipeline -------------------------------------------------------------

@dataclass
class RunManifest:
    config_hash: str
    seeds: dict
    files: dict = field(default_factory=dict)
    format_versions: dict = field(default_factory=dict)
    timings_s: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()[:16]


def repro_table3(seed: int, out_dir=None, count: int = 1000, train_fraction: float = 0.5,
                 state_dim: int = 10, hidden_dim: int = 40, epochs: int = 200,
                 threshold: float = 0.5, error_per_pattern: float = REPRO_ERROR_PER_PATTERN,
                 scenario: ScenarioConfig | None = None,
                 workers: int | None = None, figures: bool = True) -> dict:
    """Generate, split, train with QNTS, and evaluate at desk scale.

    Training stops after ``epochs`` or once the summed squared error falls to
    ``error_per_pattern`` times the training-set size, whichever comes first.
    """
    scenario = scenario or default_scenario_config()
    timings = {}
    t0 = time.perf_counter()
    ps = generate_pattern_set(scenario, count, seed, workers=workers)
    timings["generate"] = time.perf_counter() - t0

    train_set, val_set = split(training_patterns(ps), train_fraction, seed)
    arch = Architecture(state_dim, LABEL_DIM, scenario.k, hidden_dim)
    config = TrainConfig(optimizer="qnts", max_epochs=epochs, seed=seed,
                         tolerance=error_per_pattern * len(train_set))
    t0 = time.perf_counter()
    params, report = train(train_set, arch, config)
    timings["train"] = time.perf_counter() - t0
    val = evaluate(val_set, params, threshold)
    tr = evaluate(train_set, params, threshold)

    row = {
        "architecture": f"{state_dim}x{hidden_dim}x1",
        "epochs": report.epochs,
        "collision_pct": val.collision_generalization_pct,
        "overall_pct": val.overall_generalization_pct,
    }
    result = {
        "format_version": REPORT_FORMAT_VERSION,
        "kind": "table3",
        "seed": seed,
        "patterns": count,
        "train": len(train_set),
        "validation": len(val_set),
        "collision_fraction": ps.collision_fraction,
        "row": row,
        "published": list(PUBLISHED_RESULTS),
        "validation_metrics": val.to_dict(),
        "training_metrics": tr.to_dict(),
        "final_error": report.final_error,
        "stop_reason": report.stop_reason,
        "timings_s": timings,
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "patterns": out / "patterns.jsonl",
            "checkpoint": out / "model.ckpt",
            "train_report": out / "train_report.jsonl",
            "table": out / "table3.tsv",
            "report": out / "table3.json",
        }
        from .network import save_checkpoint

        save_pattern_set(files["patterns"], ps)
        save_checkpoint(files["checkpoint"], params, seed=seed, epoch=report.epochs)
        write_jsonl(files["train_report"], report_records(report, {"seed": seed}))
        write_table(files["table"], [dict(r, source="published") for r in PUBLISHED_RESULTS]
                    + [dict(row, source="this run")])
        if figures:
            from .plotting import plot_generalization, plot_training_curve

            files["training_curve"] = out / "training_curve.png"
            files["generalization"] = out / "generalization.png"
            plot_training_curve(report.to_records(), files["training_curve"])
            plot_generalization(list(PUBLISHED_RESULTS) + [row], files["generalization"])
        manifest = RunManifest(
            config_hash=config_hash({"scenario": scenario.to_dict(), "train": asdict(config)}),
            seeds={"generate": seed, "split": seed, "init": seed},
            files={k: str(v) for k, v in files.items()},
            format_versions={"pattern_set": PATTERNSET_FORMAT_VERSION,
                             "checkpoint": CHECKPOINT_FORMAT_VERSION,
                             "report": REPORT_FORMAT_VERSION},
            timings_s=timings,
        )
        result["manifest"] = manifest.to_dict()
        write_json(files["report"], result)
        write_json(out / "manifest.json", manifest.to_dict())
    return result


TABLE_COLUMNS = ("source", "architecture", "epochs", "collision_pct", "overall_pct")


def write_table(path, rows: Sequence[Mapping[str, Any]]) -> None:
    lines = ["\t".join(TABLE_COLUMNS)]
    for r in rows:
        cells = []
        for c in TABLE_COLUMNS:
            v = r.get(c)
            cells.append(f"{v:.1f}" if isinstance(v, float) else str(v))
        lines.append("\t".join(cells))
    _atomic_write(path, "\n".join(lines) + "\n")

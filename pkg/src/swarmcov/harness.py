"""Experiment plumbing: configs, seeded runs, reports and the benchmark tables."""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .planners import (
    WAVEFRONT,
    HuberAdaptive,
    HuberFixed,
    L1,
    LogCosh,
    LossKind,
    MSE,
    OrderStream,
    PlannerConfig,
    run_coverage,
)
from .policies import DEFAULT_DIMS, TABLE1_PARAMETERS, PolicyNetwork, PolicyVariant, count_parameters, encode_input
from .reinforce import TrainConfig, evaluate, train, train_config_from_dict
from .world import ConfigError, WorldConfig, WorldState, reset_world

log = logging.getLogger(__name__)

CSV_COLUMNS = ("loss_kind", "alpha", "beta", "seed", "ticks", "collisions")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def _strict(doc, allowed, path):
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected an object")
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{path}.{key}: unknown key")


def loss_from_dict(doc: dict, path: str = "planner.loss") -> LossKind:
    _strict(doc, {"kind", "delta", "alpha", "beta"}, path)
    if "kind" not in doc:
        raise ConfigError(f"{path}.kind: missing")
    try:
        return LossKind(**doc)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


@dataclass(frozen=True)
class PlannerSpec:
    """Which planner to run; ``config`` is ignored for Wavefront."""

    kind: str = "potential_field"
    config: PlannerConfig = field(default_factory=PlannerConfig)

    def build(self):
        return WAVEFRONT if self.kind == WAVEFRONT else self.config

    def to_dict(self) -> dict:
        cfg = {f.name: getattr(self.config, f.name) for f in fields(PlannerConfig)}
        cfg["loss"] = self.config.loss.to_dict()
        return {"kind": self.kind, "config": cfg}

    @classmethod
    def from_dict(cls, doc: dict, path: str = "planner") -> "PlannerSpec":
        _strict(doc, {"kind", "config"}, path)
        kind = doc.get("kind", "potential_field")
        if kind not in ("potential_field", WAVEFRONT):
            raise ConfigError(f"{path}.kind: expected 'potential_field' or 'wavefront'")
        raw = dict(doc.get("config", {}))
        _strict(raw, {f.name for f in fields(PlannerConfig)}, f"{path}.config")
        if "loss" in raw:
            raw["loss"] = loss_from_dict(raw["loss"], f"{path}.config.loss")
        try:
            return cls(kind, PlannerConfig(**raw))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{path}.config: {exc}") from exc


@dataclass(frozen=True)
class ExperimentConfig:
    world: WorldConfig = field(default_factory=lambda: WorldConfig(n_drones=2, continuous=True))
    assignment: str = "random"  # "random", "train", or a checkpoint path
    variant: str = PolicyVariant.POINTER.value
    planner: PlannerSpec = field(default_factory=PlannerSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    train_world: WorldConfig = field(default_factory=WorldConfig)
    n_seeds: int = 10
    seed: int = 0
    max_ticks: int = 2000
    out_dir: str | None = None

    def validate(self) -> "ExperimentConfig":
        if self.n_seeds < 1:
            raise ConfigError("n_seeds must be >= 1")
        if self.max_ticks < 0:
            raise ConfigError("max_ticks must be >= 0")
        try:
            PolicyVariant(self.variant)
        except ValueError:
            raise ConfigError(f"variant: unknown policy {self.variant!r}") from None
        if self.assignment not in ("random", "train") and not Path(self.assignment).is_file():
            raise ConfigError(f"assignment: checkpoint {self.assignment!r} not found")
        if self.planner.kind == WAVEFRONT and self.world.dims != 2:
            raise ConfigError("planner.kind: Wavefront planning is 2D only")
        self.world.validate()
        self.train.validate()
        return self

    def to_dict(self) -> dict:
        return {
            "world": self.world.to_dict(),
            "assignment": self.assignment,
            "variant": self.variant,
            "planner": self.planner.to_dict(),
            "train": asdict(self.train),
            "train_world": self.train_world.to_dict(),
            "n_seeds": self.n_seeds,
            "seed": self.seed,
            "max_ticks": self.max_ticks,
            "out_dir": self.out_dir,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        _strict(doc, {f.name for f in fields(cls)}, "config")
        base = cls()
        kw = {k: v for k, v in doc.items() if k not in ("world", "planner", "train", "train_world")}
        world = {**base.world.to_dict(), **doc.get("world", {})}
        _strict(doc.get("world", {}), set(world), "world")
        try:
            cfg = cls(
                world=WorldConfig.from_dict(world, "world"),
                planner=PlannerSpec.from_dict(doc.get("planner", {})),
                train=train_config_from_dict(doc.get("train", {})),
                train_world=WorldConfig.from_dict(doc.get("train_world", {}), "train_world"),
                **kw,
            )
        except TypeError as exc:
            raise ConfigError(f"config: {exc}") from exc
        return cfg.validate()


def load_config(path) -> ExperimentConfig:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return ExperimentConfig.from_dict(doc)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2)


# ---------------------------------------------------------------------------
# assignment streams
# ---------------------------------------------------------------------------


class PolicyStream:
    """Greedy decoding that re-masks PoI mapped since the last decision."""

    def __init__(self, policy: PolicyNetwork, w: WorldState, drone_id: int):
        self.sess = policy.session(encode_input(w, drone_id))
        self.chosen = np.zeros(w.n_poi, dtype=bool)

    def next_target(self, w: WorldState, drone_id: int):
        allowed = ~(w.mapped | self.chosen)
        if not allowed.any():
            return None
        pick = int(np.argmax(self.sess.distribution(allowed)))
        self.sess.feed(pick)
        self.chosen[pick] = True
        return pick


def _seed_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def make_streams(source, w: WorldState, seed: int):
    if source == "random":
        rng = _seed_rng(seed, 11)
        return [OrderStream(rng.permutation(w.n_poi)) for _ in range(w.n_drones)]
    return [PolicyStream(p, w, i) for i, p in enumerate(source)]


# ---------------------------------------------------------------------------
# runs and reports
# ---------------------------------------------------------------------------


@dataclass
class SeedResult:
    seed: int
    ticks: int
    completed: bool
    collisions: int
    mapped_timeline: list
    path_lengths: list


@dataclass
class ExperimentReport:
    loss_kind: str
    alpha: float | None
    beta: float | None
    results: list = field(default_factory=list)
    traces: list = field(default_factory=list)
    header: dict = field(default_factory=dict)

    @property
    def ticks(self) -> list[int]:
        return [r.ticks for r in self.results]

    @property
    def median(self) -> float:
        return float(np.median(self.ticks))

    @property
    def mean(self) -> float:
        return float(np.mean(self.ticks))

    @property
    def best(self) -> int:
        return int(min(self.ticks))

    def best_of(self, k: int) -> list[int]:
        """Best tick count of each consecutive group of ``k`` seeds."""
        t = self.ticks
        return [min(t[i : i + k]) for i in range(0, len(t) - k + 1, k)]

    def summary(self) -> dict:
        return {
            "loss_kind": self.loss_kind,
            "alpha": self.alpha,
            "beta": self.beta,
            "n_seeds": len(self.results),
            "median": self.median,
            "mean": self.mean,
            "best": self.best,
            "best_of_3": self.best_of(3),
            "timeouts": sum(not r.completed for r in self.results),
            "collisions": sum(r.collisions for r in self.results),
        }


def loss_columns(spec: PlannerSpec) -> tuple[str, float | None, float | None]:
    if spec.kind == WAVEFRONT:
        return WAVEFRONT, None, None
    loss = spec.config.loss
    name = f"huber_delta={loss.delta:g}" if loss.kind == "huber" else loss.kind
    return name, loss.alpha, loss.beta


def resolve_policies(cfg: ExperimentConfig):
    """Policy handles (one per drone) for the configured assignment source."""
    if cfg.assignment == "random":
        return "random"
    if cfg.assignment == "train":
        policy = PolicyNetwork.build(cfg.variant, seed=cfg.train.seed)
        train(policy, cfg.train_world, cfg.train)
    else:
        policy = PolicyNetwork.load(cfg.assignment)
        if policy.variant.value != cfg.variant:
            raise ConfigError(f"checkpoint holds {policy.variant.value}, config asks for {cfg.variant}")
    return [policy.copy() for _ in range(cfg.world.n_drones)]


def run_experiment(cfg: ExperimentConfig, record_trace: bool = True, policies=None) -> ExperimentReport:
    """Run every seed; world seed ``k`` is ``cfg.seed + k``."""
    cfg.validate()
    policies = resolve_policies(cfg) if policies is None else policies
    name, alpha, beta = loss_columns(cfg.planner)
    report = ExperimentReport(name, alpha, beta, header={"type": "header", "config": cfg.to_dict()})
    planner = cfg.planner.build()
    for k in range(cfg.n_seeds):
        seed = cfg.seed + k
        t0 = time.perf_counter()
        w = reset_world(cfg.world, seed)
        streams = make_streams(policies, w, seed)
        cov = run_coverage(w, streams, planner, cfg.max_ticks, _seed_rng(seed, 13), record_trace)
        report.results.append(
            SeedResult(seed, cov.ticks, cov.completed, cov.collisions, cov.mapped_timeline, cov.path_lengths)
        )
        report.traces += [{"seed": seed, **row} for row in cov.trace]
        log.info("seed %d: %d ticks (%.2fs wall)", seed, cov.ticks, time.perf_counter() - t0)
    return report


def _fmt(v) -> str:
    return "" if v is None else f"{v:g}" if isinstance(v, float) else str(v)


def csv_text(reports) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for rep in reports:
        for r in rep.results:
            writer.writerow([rep.loss_kind, _fmt(rep.alpha), _fmt(rep.beta), r.seed, r.ticks, r.collisions])
    return buf.getvalue()


def trace_text(report: ExperimentReport) -> str:
    lines = [json.dumps(report.header, sort_keys=True)]
    lines += [json.dumps(row, sort_keys=True) for row in report.traces]
    return "\n".join(lines) + "\n"


def emit_report(reports, out_dir, fmt: str = "csv", stem: str = "report") -> list[Path]:
    """Write ``<stem>.csv`` or ``<stem>.jsonl`` plus a ``<stem>.summary.json``."""
    if isinstance(reports, ExperimentReport):
        reports = [reports]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "csv":
        path = out / f"{stem}.csv"
        path.write_text(csv_text(reports))
    elif fmt == "jsonl":
        if len(reports) != 1:
            raise ValueError("JSONL traces are written one experiment at a time")
        path = out / f"{stem}.jsonl"
        path.write_text(trace_text(reports[0]))
    else:
        raise ValueError(f"unknown format {fmt!r}")
    written.append(path)
    summary = out / f"{stem}.summary.json"
    summary.write_text(json.dumps([r.summary() for r in reports], indent=2, sort_keys=True) + "\n")
    written.append(summary)
    return written


def read_csv_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# training entry point
# ---------------------------------------------------------------------------


def train_policy(cfg: ExperimentConfig, out_dir, eval_seeds: int = 20) -> dict:
    """Train ``cfg.variant`` on ``cfg.train_world``; save checkpoint, log and eval."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    policy = PolicyNetwork.build(cfg.variant, seed=cfg.train.seed)
    ckpt, log_path = out / "checkpoint.json", out / "train_log.jsonl"
    try:
        train(policy, cfg.train_world, cfg.train, log_path, ckpt, checkpoint_every=50)
    except FloatingPointError:
        log.error("training diverged; partial log at %s", log_path)
        raise
    lengths = evaluate(policy, cfg.train_world, eval_seeds)
    result = {
        "variant": cfg.variant,
        "checkpoint": str(ckpt),
        "log": str(log_path),
        "eval_lengths": lengths,
        "eval_median": float(np.median(lengths)),
    }
    (out / "eval.json").write_text(json.dumps(result, indent=2) + "\n")
    return result


# ---------------------------------------------------------------------------
# benchmark tables
# ---------------------------------------------------------------------------

TABLE2_LOSSES = [
    L1(),
    MSE(),
    LogCosh(),
    HuberFixed(0.5),
    HuberFixed(1.0),
    HuberAdaptive(1, 1),
    HuberAdaptive(2, 1),
    HuberAdaptive(4, 1),
    HuberAdaptive(1, 2),
]
TABLE3_LOSSES = [L1(), HuberAdaptive(1, 1), HuberAdaptive(2, 1), HuberAdaptive(4, 1), HuberAdaptive(1, 2)]

BENCH_OBSTACLE_DENSITY = 0.15


def bench_world(dims: int) -> WorldConfig:
    return WorldConfig(
        dims=dims, extent=5, n_drones=2, n_poi=25, obstacle_density=BENCH_OBSTACLE_DENSITY, continuous=True
    )


def _bench(losses, dims, n_seeds, seed, max_ticks, record_trace=False):
    reports = []
    for loss in losses:
        cfg = ExperimentConfig(
            world=bench_world(dims),
            planner=PlannerSpec(config=PlannerConfig(loss=loss)),
            n_seeds=n_seeds,
            seed=seed,
            max_ticks=max_ticks,
        )
        reports.append(run_experiment(cfg, record_trace=record_trace))
    return reports


def bench_table2(n_seeds: int = 10, seed: int = 0, max_ticks: int = 2000):
    return _bench(TABLE2_LOSSES, 2, n_seeds, seed, max_ticks)


def bench_table3(n_seeds: int = 10, seed: int = 0, max_ticks: int = 2000):
    return _bench(TABLE3_LOSSES, 3, n_seeds, seed, max_ticks)


def table2_orderings(reports) -> dict:
    med = {(r.loss_kind, r.alpha, r.beta): r.median for r in reports}
    h05, h1 = med[("huber_delta=0.5", None, None)], med[("huber_delta=1", None, None)]
    mse = med[("mse", None, None)]
    ranked = sorted(med.values(), reverse=True)
    return {
        "huber1_vs_huber05": h1 <= 0.7 * h05,
        "mse_worst_or_second": mse >= ranked[1],
        "adaptive11_vs_41": med[("huber_adaptive", 1.0, 1.0)] < med[("huber_adaptive", 4.0, 1.0)],
        "medians": {f"{k[0]}({_fmt(k[1])},{_fmt(k[2])})": v for k, v in med.items()},
    }


def table3_orderings(reports) -> dict:
    med = {(r.loss_kind, r.alpha, r.beta): r.median for r in reports}
    a11, a21, a41 = (med[("huber_adaptive", a, 1.0)] for a in (1.0, 2.0, 4.0))
    return {
        "adaptive_monotone": a11 < a21 < a41,
        "adaptive11_vs_l1": a11 <= 0.8 * med[("l1", None, None)],
        "medians": {f"{k[0]}({_fmt(k[1])},{_fmt(k[2])})": v for k, v in med.items()},
    }


# Assignment benchmark fixture: small enough for desk-scale training.
TABLE1_FIXTURE = WorldConfig(extent=4, n_poi=6, high_priority_count=2)
TABLE1_TRAIN = TrainConfig(
    learning_rate=3e-3,
    baseline="shared",
    optimizer="adam",
    samples_per_world=8,
    episodes_per_update=16,
    n_episodes=5000,
)


def bench_table1(train_episodes: int = 0, eval_seeds: int = 20) -> list[dict]:
    """Parameter counts per variant; optional training comparison on the small fixture."""
    rows = []
    for variant in PolicyVariant:
        n = count_parameters(variant)
        ref = TABLE1_PARAMETERS[variant]
        row = {
            "variant": variant.value,
            "dims": DEFAULT_DIMS[variant],
            "parameters": n,
            "reference": ref,
            "rel_diff": round((n - ref) / ref, 4),
        }
        if train_episodes:
            policy = PolicyNetwork.build(variant, seed=0)
            cfg = TrainConfig(**{**asdict(TABLE1_TRAIN), "n_episodes": train_episodes})
            train(policy, TABLE1_FIXTURE, cfg)
            lengths = evaluate(policy, TABLE1_FIXTURE, eval_seeds)
            row["eval_median"] = float(np.median(lengths))
            row["eval_mean"] = float(np.mean(lengths))
        rows.append(row)
    return rows

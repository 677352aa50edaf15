"""Benchmark campaigns over the analytical testbed.

A campaign runs MLIO for every (function, D, repetition, UQ operator)
combination, stores each run's files, and aggregates the IA/SO traces into
quantiles across repetitions.
"""

import json
import logging
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Literal, Optional, Tuple

import numpy as np
import scipy
import yaml
from pydantic import BaseModel, Field, field_validator

from mlio import __version__
from mlio.config import settings
from mlio.driver import TracePoint, problem_from_testbed, run_mlio
from mlio.export import (
    AGGREGATE_COLUMNS,
    CONVERGENCE_COLUMNS,
    RunExporter,
    write_campaign_readme,
    write_rows,
)
from mlio.testbed import FunctionId, ReferencePool, TestProblem, UqOperator, build_reference_pool, make_problem
from mlio.trainer import TrainerConfig

logger = logging.getLogger(__name__)

QUANTILES = (("min", 0.0), ("q25", 0.25), ("median", 0.5), ("q75", 0.75), ("max", 1.0))
METRICS = ("IA", "SO")
TESTBED = "testbed"


class TrainerOverrides(BaseModel):
    """Trainer settings a campaign file may override."""

    v_ratio: Optional[float] = None
    g_ratio: Optional[float] = None
    tau_val: Optional[float] = None
    tau_ci: Optional[float] = None
    n_ss_max: Optional[int] = None
    v_min: Optional[int] = None
    n_windows: Optional[int] = None
    ga_population: Optional[int] = None
    ga_generations: Optional[int] = None


class CampaignConfig(BaseModel):
    functions: List[FunctionId] = Field(default_factory=lambda: list(FunctionId))
    dims: List[int] = Field(default_factory=lambda: [2])
    repetitions: int = Field(default=5, ge=1)
    budget: int = Field(default=1000, gt=0)
    n_u: int = Field(default=100, ge=2)
    n_p: int = Field(default=100, ge=1)
    uq: List[UqOperator] = Field(default_factory=lambda: list(UqOperator))
    setting: Literal[1, 2] = 1
    seed: int = 0
    out_dir: Path = Field(default_factory=lambda: settings.results_dir / "campaign")
    jobs: int = Field(default_factory=lambda: settings.jobs, ge=1)
    trace_interval: int = Field(default=25, ge=1)
    variograms: bool = False
    use_cache: bool = True
    trainer: TrainerOverrides = Field(default_factory=TrainerOverrides)

    @field_validator("functions", mode="before")
    @classmethod
    def _parse_functions(cls, value):
        return [FunctionId.parse(v) for v in value]

    @field_validator("dims")
    @classmethod
    def _even_dims(cls, dims):
        if not dims:
            raise ValueError("At least one dimensionality is required")
        for d in dims:
            if d < 2 or d % 2:
                raise ValueError(f"D must be even and at least 2, got {d}")
        return dims

    @classmethod
    def from_yaml(cls, path: Path, **overrides) -> "CampaignConfig":
        with open(path) as f:
            data = yaml.safe_load(f) or {}
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.model_validate(data)

    def trainer_config(self, seed: int) -> TrainerConfig:
        extra = self.trainer.model_dump(exclude_none=True)
        return TrainerConfig(n_tot_max=self.budget, seed=seed, **extra)


@dataclass(frozen=True)
class RunSpec:
    function: FunctionId
    dim: int
    uq: UqOperator
    rep: int
    seed: int

    @property
    def name(self) -> str:
        return f"{self.function.value}_D{self.dim}_{self.uq.value}_r{self.rep}"

    @property
    def key(self) -> Tuple[str, int, str, int]:
        return self.function.value, self.dim, self.uq.value, self.rep


@dataclass
class RunOutcome:
    spec: RunSpec
    trace: List[TracePoint] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    error: Optional[str] = None
    wall_time: float = 0.0

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class CampaignSummary:
    config: CampaignConfig
    outcomes: List[RunOutcome]
    rows: List[Dict[str, Any]]

    @property
    def n_failed(self) -> int:
        return sum(not o.ok for o in self.outcomes)


def plan_runs(cfg: CampaignConfig) -> List[RunSpec]:
    return [
        RunSpec(function, dim, uq, rep, cfg.seed + rep)
        for function in cfg.functions
        for dim in cfg.dims
        for rep in range(cfg.repetitions)
        for uq in cfg.uq
    ]


def _run_one(spec: RunSpec, cfg: CampaignConfig, prob: TestProblem, pool: ReferencePool) -> RunOutcome:
    start = time.perf_counter()
    try:
        problem = problem_from_testbed(prob, pool, spec.uq, seed=spec.seed)
        trainer_cfg = cfg.trainer_config(spec.seed)
        result = run_mlio(problem, trainer_cfg, cfg.setting, cfg.trace_interval)
        wall_time = time.perf_counter() - start
        config_echo = {
            "run": spec.name,
            "seed": spec.seed,
            "setting": cfg.setting,
            "n_u": cfg.n_u,
            "n_p": cfg.n_p,
            "problem": prob.describe(),
            "trainer": trainer_cfg.model_dump(),
        }
        summary = RunExporter(cfg.out_dir / "runs" / spec.name).export_run(
            result,
            config_echo,
            {"function": spec.function.value, "D": spec.dim, "uq": spec.uq.value, "rep": spec.rep,
             "seed": spec.seed, "wall_time": wall_time},
            variograms=cfg.variograms,
        )
        return RunOutcome(spec, list(result.trace), summary, None, wall_time)
    except Exception as e:
        logger.warning(f"Run {spec.name} failed: {type(e).__name__}: {e}")
        return RunOutcome(spec, error=f"{type(e).__name__}: {e}", wall_time=time.perf_counter() - start)


def _build_pools(cfg: CampaignConfig, specs: Iterable[RunSpec]) -> Dict[Tuple[str, int, int], Tuple[TestProblem, ReferencePool]]:
    pools = {}
    for spec in specs:
        key = (spec.function.value, spec.dim, spec.rep)
        if key not in pools:
            prob = make_problem(spec.function, spec.dim, spec.seed)
            pools[key] = (prob, build_reference_pool(prob, cfg.n_u, cfg.n_p, spec.seed, cfg.use_cache))
    return pools


def run_campaign(cfg: CampaignConfig) -> CampaignSummary:
    """Run every planned combination; failures are recorded, never raised."""
    started = time.perf_counter()
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    specs = plan_runs(cfg)
    logger.info(f"Campaign: {len(specs)} runs into {cfg.out_dir} with {cfg.jobs} job(s)")
    pools = _build_pools(cfg, specs)

    def inputs(spec: RunSpec):
        return pools[(spec.function.value, spec.dim, spec.rep)]

    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as executor:
            futures = [executor.submit(_run_one, spec, cfg, *inputs(spec)) for spec in specs]
            outcomes = [f.result() for f in futures]
    else:
        outcomes = []
        for spec in specs:
            outcomes.append(_run_one(spec, cfg, *inputs(spec)))
            logger.info(f"Finished {spec.name} ({len(outcomes)}/{len(specs)})")

    rows = aggregate(outcomes)
    summary = CampaignSummary(cfg, outcomes, rows)
    write_rows(rows, AGGREGATE_COLUMNS, cfg.out_dir / "aggregate.csv")
    emit_convergence(summary, cfg.out_dir / "convergence.csv")
    _write_manifest(summary, time.perf_counter() - started)
    write_campaign_readme(cfg.out_dir, cfg.model_dump(mode="json"), len(outcomes), summary.n_failed)

    if summary.n_failed:
        logger.warning(f"{summary.n_failed} of {len(outcomes)} runs failed")
    logger.info(f"Campaign complete: {len(outcomes) - summary.n_failed} runs succeeded")
    return summary


def _write_manifest(summary: CampaignSummary, wall_time: float) -> Path:
    manifest = {
        "config": summary.config.model_dump(mode="json"),
        "versions": {
            "mlio": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
        "wall_time": wall_time,
        "runs": [
            {
                "name": o.spec.name,
                "seed": o.spec.seed,
                "wall_time": o.wall_time,
                "status": "ok" if o.ok else "failed",
                "error": o.error,
            }
            for o in summary.outcomes
        ],
    }
    path = summary.config.out_dir / "campaign.json"
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


# -- aggregation -----------------------------------------------------------------


def step_values(trace: List[TracePoint], samples: np.ndarray, metric: str) -> np.ndarray:
    """Trace value in force at each sample count (1 before the first row)."""
    xs = np.array([t.samples for t in trace])
    ys = np.array([t.ia if metric == "IA" else t.so for t in trace], dtype=float)
    idx = np.searchsorted(xs, samples, side="right") - 1
    return np.where(idx >= 0, ys[np.maximum(idx, 0)], 1.0)


def _quantile_row(base: Dict[str, Any], values: np.ndarray) -> Dict[str, Any]:
    row = dict(base)
    for name, q in QUANTILES:
        row[name] = float(np.quantile(values, q))
    return row


def aggregate(outcomes: Iterable[RunOutcome]) -> List[Dict[str, Any]]:
    """Quantiles across repetitions on the union of sample counts, plus testbed rows."""
    groups: Dict[Tuple[str, int, str], List[RunOutcome]] = {}
    for o in sorted((o for o in outcomes if o.ok and o.trace), key=lambda o: o.spec.key):
        groups.setdefault((o.spec.function.value, o.spec.dim, o.spec.uq.value), []).append(o)

    rows: List[Dict[str, Any]] = []
    for (function, dim, uq), runs in sorted(groups.items()):
        grid = np.unique(np.concatenate([[t.samples for t in o.trace] for o in runs]))
        for metric in METRICS:
            stacked = np.vstack([step_values(o.trace, grid, metric) for o in runs])
            for j, s in enumerate(grid):
                base = {"function": function, "D": dim, "uq": uq, "metric": metric, "samples": int(s)}
                rows.append(_quantile_row(base, stacked[:, j]))
    return rows + _testbed_rows(rows)


def _testbed_rows(rows: List[Dict[str, Any]]) -> List[Dict[str, Any]]:
    """Median over functions of each function's median curve."""
    curves: Dict[Tuple[int, str, str], Dict[str, List[Tuple[int, float]]]] = {}
    for r in rows:
        per_function = curves.setdefault((r["D"], r["uq"], r["metric"]), {})
        per_function.setdefault(r["function"], []).append((r["samples"], r["median"]))

    out = []
    for (dim, uq, metric), per_function in sorted(curves.items()):
        grid = np.unique([s for curve in per_function.values() for s, _ in curve])
        medians = []
        for curve in per_function.values():
            trace = [TracePoint(samples=s, ia=v, so=v) for s, v in curve]
            medians.append(step_values(trace, grid, "IA"))
        stacked = np.vstack(medians)
        for j, s in enumerate(grid):
            base = {"function": TESTBED, "D": dim, "uq": uq, "metric": metric, "samples": int(s)}
            out.append(_quantile_row(base, stacked[:, j]))
    return out


def emit_convergence(summary: CampaignSummary, path: Path) -> Path:
    """Long-format plot data: one row per (aggregate row, quantile)."""
    long_rows = [
        {"samples": r["samples"], "metric": r["metric"], "uq": r["uq"], "function": r["function"],
         "D": r["D"], "quantile": name, "value": r[name]}
        for r in summary.rows
        for name, _ in QUANTILES
    ]
    return write_rows(long_rows, CONVERGENCE_COLUMNS, Path(path))


def samples_to_reach(
    rows: Iterable[Dict[str, Any]],
    threshold: float,
    *,
    function: str = TESTBED,
    dim: Optional[int] = None,
    uq: Optional[str] = None,
    metric: str = "IA",
    quantile: str = "median",
) -> Optional[int]:
    """First sample count at which the selected aggregate drops below ``threshold``."""
    hits = [
        r["samples"]
        for r in rows
        if r["function"] == function
        and r["metric"] == metric
        and (dim is None or r["D"] == dim)
        and (uq is None or r["uq"] == uq)
        and r[quantile] < threshold
    ]
    return min(hits) if hits else None

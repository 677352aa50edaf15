"""Export utilities for run results."""

import csv
import json
import logging
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence

from mlio.driver import MlioResult, TracePoint
from mlio.store import sha256_file
from mlio.trainer import IterationSnapshot, LedgerEntry

logger = logging.getLogger(__name__)

ERROR_COLUMNS = ["eps_val_sym", "eps_val_sep", "eps_val_free", "eps_ci_sym", "eps_ci_sep", "eps_ci_free"]
TRACE_COLUMNS = ["samples", "ia", "so", "uq_estimate", "design_index"]
AGGREGATE_COLUMNS = ["function", "D", "uq", "metric", "samples", "min", "q25", "median", "q75", "max"]
CONVERGENCE_COLUMNS = ["samples", "metric", "uq", "function", "D", "quantile", "value"]
RUN_FILES = ["config.json", "ledger.csv", "trace.csv", "history.jsonl", "surrogate.json", "summary.json"]


def _num(value: Optional[float]) -> str:
    """Round-trip exact text for a float; blank for missing values."""
    if value is None:
        return ""
    value = float(value)
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return repr(value)


def _json_safe(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def write_ledger(entries: Sequence[LedgerEntry], path: Path) -> Path:
    dim = len(entries[0].point) if entries else 0
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iter", "layer", "kind", *[f"x{i + 1}" for i in range(dim)], "value", *ERROR_COLUMNS, "n_tot"])
        for e in entries:
            writer.writerow(
                [e.iter, e.layer, e.kind.value, *[_num(v) for v in e.point], _num(e.value),
                 *[_num(v) for v in e.errors.as_row()], e.n_tot]
            )
    return path


def write_trace(trace: Sequence[TracePoint], path: Path) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(TRACE_COLUMNS)
        for t in trace:
            index = "" if t.design_index is None else t.design_index
            writer.writerow([t.samples, _num(t.ia), _num(t.so), _num(t.uq_estimate), index])
    return path


def write_history(history: Sequence[IterationSnapshot], path: Path) -> Path:
    """One JSON object per training iteration."""
    with open(path, "w") as f:
        for snapshot in history:
            f.write(json.dumps(_json_safe(snapshot.to_dict())) + "\n")
    return path


def read_history(path: Path) -> List[Dict[str, Any]]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def read_trace(path: Path) -> List[TracePoint]:
    trace = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            trace.append(
                TracePoint(
                    samples=int(row["samples"]),
                    ia=float(row["ia"]),
                    so=float(row["so"]),
                    uq_estimate=float(row["uq_estimate"]) if row["uq_estimate"] else None,
                    design_index=int(row["design_index"]) if row["design_index"] else None,
                )
            )
    return trace


def write_rows(rows: Iterable[Dict[str, Any]], columns: Sequence[str], path: Path) -> Path:
    """CSV with a fixed header; floats are written round-trip exact."""
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_num(row[c]) if isinstance(row[c], float) else row[c] for c in columns])
    return path


class RunExporter:
    """Write the files of one run and a checksummed manifest."""

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.run_dir.mkdir(parents=True, exist_ok=True)

    def export_run(
        self,
        result: MlioResult,
        config: Dict[str, Any],
        summary: Dict[str, Any],
        variograms: bool = False,
    ) -> Dict[str, Any]:
        """
        Export a finished run.

        Args:
            result: The optimization result
            config: Configuration echo (problem, trainer settings, seeds)
            summary: Extra summary fields (identifiers, wall time)
            variograms: Also dump the variogram diagnostics of every system

        Returns:
            The summary document that was written
        """
        with open(self.run_dir / "config.json", "w") as f:
            json.dump(_json_safe(config), f, indent=2)
        write_ledger(result.ledger, self.run_dir / "ledger.csv")
        write_trace(result.trace, self.run_dir / "trace.csv")
        write_history(result.state.history, self.run_dir / "history.jsonl")
        result.surrogate.save(self.run_dir / "surrogate.json")

        last = result.trace[-1] if result.trace else None
        document = dict(
            summary,
            u_opt=[float(v) for v in result.u_opt],
            design_index=result.design_index,
            uq_estimate=result.uq_estimate,
            termination=result.termination,
            n_tot=result.n_tot,
            iterations=result.state.iter,
            greedy_count=result.state.greedy_count,
            final_ia=last.ia if last else None,
            final_so=last.so if last else None,
            active_mix={int(k): v.value for k, v in result.surrogate.active_mix.items()},
        )
        with open(self.run_dir / "summary.json", "w") as f:
            json.dump(_json_safe(document), f, indent=2)

        files = list(RUN_FILES)
        if variograms:
            dumps = result.surrogate.variogram_dumps(self.run_dir / "variograms")
            files += [str(p.relative_to(self.run_dir)) for p in dumps]
        self.write_manifest(files)

        logger.info(f"Export complete: {self.run_dir} ({result.n_tot} samples)")
        return document

    def write_manifest(self, files: Sequence[str]) -> Path:
        manifest = {
            "files": {name: sha256_file(self.run_dir / name) for name in files},
            "exported_at": datetime.now(timezone.utc).isoformat(),
        }
        path = self.run_dir / "manifest.json"
        with open(path, "w") as f:
            json.dump(manifest, f, indent=2)
        return path

    def verify(self) -> bool:
        """True when every file listed in the manifest matches its checksum."""
        path = self.run_dir / "manifest.json"
        if not path.exists():
            return False
        with open(path) as f:
            manifest = json.load(f)
        for name, digest in manifest["files"].items():
            target = self.run_dir / name
            if not target.exists() or sha256_file(target) != digest:
                logger.warning(f"Checksum mismatch for {target}")
                return False
        return True


def write_campaign_readme(out_dir: Path, config: Dict[str, Any], n_runs: int, n_failed: int) -> Path:
    """Generate README for a campaign directory."""
    functions = ", ".join(config.get("functions", []))
    dims = ", ".join(str(d) for d in config.get("dims", []))
    readme = f"""# MLIO benchmark campaign

**Functions:** {functions}
**Dimensions:** {dims}
**Repetitions:** {config.get('repetitions')}
**Budget:** {config.get('budget')} samples
**Runs:** {n_runs} ({n_failed} failed)

## Structure

```
.
├── runs/<function>_D<D>_<uq>_r<rep>/
│   ├── config.json      # Configuration echo
│   ├── ledger.csv       # Every black-box evaluation
│   ├── trace.csv        # IA/SO against samples consumed
│   ├── history.jsonl    # Per-iteration surrogate snapshots
│   ├── surrogate.json   # Trained decomposed surrogate
│   ├── summary.json     # Optimum, termination, totals
│   └── manifest.json    # SHA-256 of the files above
├── aggregate.csv        # Quantiles across repetitions
├── convergence.csv      # Long-format plot data
├── campaign.json        # Config echo, versions, seeds, wall times, failures
└── README.md            # This file
```

## Columns

**ledger.csv**
- `iter`: training iteration (0 for the initial design)
- `layer`: layer that requested the sample (1 symmetric, 2 separable, 3 assumption-free)
- `kind`: `train`, `val` or `greedy`
- `x1..xD`: normalized coordinates, designs first, then parameters
- `value`: normalized response
- `eps_val_*`, `eps_ci_*`: validation and confidence errors per layer when the sample was requested
- `n_tot`: evaluations consumed including this one

**trace.csv**
- `samples`: evaluations consumed
- `ia`, `so`: inaccuracy and suboptimality (1 before the first estimate, floored at 1e-5)
- `uq_estimate`: surrogate UQ at the chosen design
- `design_index`: row of the chosen design in the reference designs

**history.jsonl** (one object per iteration)
- `iter`, `visited` (layer sampled, 0 for none), `n_tot`
- `counts`: training and validation pool sizes per layer
- `layers`: per layer the active variant, validation errors and variogram fits (`kind`, `a`, `b`, `c`) of every system
- `eps_val`, `eps_ci`: errors after the iteration
- `greedy_design`: point sampled by the greedy operator in this iteration, if any

**aggregate.csv**
- `function`, `D`, `uq`, `metric` (`IA` or `SO`), `samples`
- `min`, `q25`, `median`, `q75`, `max`: statistics across repetitions; `function = testbed` rows hold the median over functions

**convergence.csv**
- `samples`, `metric`, `uq`, `function`, `D`, `quantile`, `value`
"""
    path = Path(out_dir) / "README.md"
    path.write_text(readme)
    return path

"""Per-layer granularity autotuner.

For every convolution unit the tuner enumerates the valid granularities,
runs each one warm-up pass plus ``repeats`` timed passes on the unit's real
input tensor, records the median, and selects the fastest (and the slowest,
for optimal-vs-pessimal reporting).  Outputs are cross-checked during
tuning: in strict mode every granularity must produce bit-identical
results, so a plan can never change what the network computes.

Tables persist as plain text, one ``<node_id> <g> <median_micros>`` line
per measurement plus ``plan <node_id> <g_opt>`` lines (grammar documented
in docs/tune_table.md).
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kernels import (
    ArithMode,
    WeightBank,
    conv_granular,
    valid_granularities,
)
from .network import Engine, NetworkDef, WeightsMap, conv_unit_ids
from .tensor import Tensor3


@dataclass
class LayerTuning:
    """Measured (g, median microseconds) pairs for one convolution unit."""

    node_id: str
    timings: list[tuple[int, float]]

    def __post_init__(self) -> None:
        if not self.timings:
            raise ValueError(f"{self.node_id}: no timings")
        if any(t <= 0 for _, t in self.timings):
            raise ValueError(f"{self.node_id}: non-positive timing")

    @property
    def g_opt(self) -> int:
        return min(self.timings, key=lambda p: p[1])[0]

    @property
    def g_pess(self) -> int:
        return max(self.timings, key=lambda p: p[1])[0]

    @property
    def opt_micros(self) -> float:
        return min(t for _, t in self.timings)

    @property
    def pess_micros(self) -> float:
        return max(t for _, t in self.timings)


@dataclass
class TuneTable:
    """Per-unit tuning rows plus the selected plan."""

    rows: dict[str, LayerTuning] = field(default_factory=dict)
    plan: dict[str, int] = field(default_factory=dict)

    def optimal_vs_pessimal_ratio(self) -> float:
        """Whole-network ratio: total pessimal time over total optimal time."""
        opt = sum(r.opt_micros for r in self.rows.values())
        pess = sum(r.pess_micros for r in self.rows.values())
        return pess / opt if opt > 0 else float("nan")


def tune_layer(
    node_id: str,
    weights: WeightBank,
    sample_input: Tensor3,
    repeats: int = 10,
    mode: ArithMode = ArithMode.STRICT,
) -> LayerTuning:
    """Time every valid granularity of one convolution on its sample input.

    One warm-up run per granularity is discarded (it also absorbs JIT and
    first-touch costs), then the median of ``repeats`` runs is recorded.
    """
    if repeats < 3:
        raise ValueError(f"repeats must be >= 3, got {repeats}")
    valid = valid_granularities(weights.spec.out_layers)
    if not valid:
        raise ValueError(
            f"{node_id}: no valid granularities for "
            f"{weights.spec.out_layers} output layers"
        )
    baseline = None
    timings: list[tuple[int, float]] = []
    for g in valid:
        out = conv_granular(sample_input, weights, g, mode)  # warm-up
        if baseline is None:
            baseline = out.data
        elif mode is ArithMode.STRICT and not np.array_equal(out.data, baseline):
            raise AssertionError(
                f"{node_id}: granularity {g} changed the output values"
            )
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            conv_granular(sample_input, weights, g, mode)
            samples.append(time.perf_counter() - t0)
        timings.append((g, statistics.median(samples) * 1e6))
    return LayerTuning(node_id, timings)


def tune_network(
    net: NetworkDef,
    weights: WeightsMap,
    image: Tensor3,
    repeats: int = 10,
    threads: int | None = None,
    mode: ArithMode = ArithMode.STRICT,
) -> TuneTable:
    """Tune every convolution unit of the network on real intermediate
    tensors and return the table with its optimal plan.

    Measurements run strictly one at a time; each timed launch uses the
    engine's full worker pool.
    """
    engine = Engine(threads)
    inputs = engine.trace_conv_inputs(net, weights, image, mode)
    table = TuneTable()
    for node_id in conv_unit_ids(net):
        if "." in node_id:
            fire_name, sub = node_id.split(".", 1)
            bank = getattr(weights[fire_name], sub)
        else:
            bank = weights[node_id]
        row = tune_layer(node_id, bank, inputs[node_id], repeats, mode)
        table.rows[node_id] = row
        table.plan[node_id] = row.g_opt
    return table


def save_table(table: TuneTable, path: str | Path) -> None:
    lines = ["# vcnn tune table"]
    for node_id in sorted(table.rows):
        for g, micros in table.rows[node_id].timings:
            lines.append(f"{node_id} {g} {micros!r}")
    for node_id in sorted(table.plan):
        lines.append(f"plan {node_id} {table.plan[node_id]}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_table(path: str | Path) -> TuneTable:
    raw: dict[str, list[tuple[int, float]]] = {}
    plan: dict[str, int] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "plan":
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: malformed plan line")
            plan[parts[1]] = int(parts[2])
        elif len(parts) == 3:
            raw.setdefault(parts[0], []).append((int(parts[1]), float(parts[2])))
        else:
            raise ValueError(f"{path}:{lineno}: malformed line {line!r}")
    table = TuneTable(plan=plan)
    for node_id, timings in raw.items():
        table.rows[node_id] = LayerTuning(node_id, timings)
    return table

"""Command-line entry point: inference, granularity tuning, benchmarking.

Exit codes: 0 success, 2 usage error, 3 I/O error (missing or unreadable
files), 4 validation error (malformed model, shape mismatch, bad plan).
"""

from __future__ import annotations

import argparse
import os
import platform
import statistics
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kernels import ArithMode
from .modelio import (
    ImageFormatError,
    LoadedModel,
    ModelFormatError,
    load_image,
    load_model,
)
from .network import Engine, ShapeError, conv_unit_ids
from .tensor import Layout, Tensor3
from .tuner import load_table, save_table, tune_network

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_INVALID = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


@dataclass
class BenchRow:
    node: str
    sequential_ms: float
    parallel_ms: float
    relaxed_ms: float

    @property
    def speedup_parallel(self) -> float:
        return self.sequential_ms / self.parallel_ms if self.parallel_ms > 0 else float("nan")

    @property
    def speedup_relaxed(self) -> float:
        return self.sequential_ms / self.relaxed_ms if self.relaxed_ms > 0 else float("nan")


@dataclass
class BenchReport:
    """Per-node times of the sequential, strict-parallel and relaxed-parallel
    paths; speedup columns are always recomputed from the row values."""

    machine: str
    rows: list[BenchRow]
    wall_seconds: float = 0.0

    def totals(self) -> BenchRow:
        return BenchRow(
            "total",
            sum(r.sequential_ms for r in self.rows),
            sum(r.parallel_ms for r in self.rows),
            sum(r.relaxed_ms for r in self.rows),
        )

    def to_csv(self) -> str:
        lines = [f"#machine={self.machine}"]
        lines.append("node,sequential_ms,parallel_ms,relaxed_ms,speedup_parallel,speedup_relaxed")
        for r in [*self.rows, self.totals()]:
            lines.append(
                f"{r.node},{r.sequential_ms!r},{r.parallel_ms!r},{r.relaxed_ms!r},"
                f"{r.speedup_parallel:.4f},{r.speedup_relaxed:.4f}"
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_csv(cls, text: str) -> "BenchReport":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("#machine="):
            raise ValueError("missing machine descriptor line")
        machine = lines[0][len("#machine="):]
        rows = []
        for ln in lines[2:]:
            node, seq, par, rel = ln.split(",")[:4]
            if node == "total":
                continue
            rows.append(BenchRow(node, float(seq), float(par), float(rel)))
        return cls(machine, rows)

    def to_table(self) -> str:
        width = max(12, max((len(r.node) for r in self.rows), default=0) + 2)
        head = (
            f"{'node':<{width}}{'sequential':>12}{'parallel':>12}{'relaxed':>12}"
            f"{'speedup':>10}{'relaxed x':>10}"
        )
        sep = "-" * len(head)
        out = [f"machine: {self.machine}", head, sep]
        for r in [*self.rows, self.totals()]:
            out.append(
                f"{r.node:<{width}}{r.sequential_ms:>10.2f}ms{r.parallel_ms:>10.2f}ms"
                f"{r.relaxed_ms:>10.2f}ms{r.speedup_parallel:>9.2f}X{r.speedup_relaxed:>9.2f}X"
            )
        out.append(sep)
        out.append(f"wall time: {self.wall_seconds:.2f}s (model load and input decode excluded from rows)")
        return "\n".join(out) + "\n"


def _machine_descriptor(threads: int) -> str:
    return (
        f"{platform.system()}-{platform.machine()} "
        f"cores={os.cpu_count()} threads={threads} python={platform.python_version()}"
    )


def _load_model_checked(path: str) -> LoadedModel:
    if not Path(path).is_file():
        raise CliError(EXIT_IO, f"model file not found: {path}")
    try:
        return load_model(path)
    except ModelFormatError as e:
        raise CliError(EXIT_INVALID, f"invalid model: {e}") from e
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read model: {e}") from e


def _load_image_checked(path: str, model: LoadedModel) -> Tensor3:
    if not Path(path).is_file():
        raise CliError(EXIT_IO, f"image file not found: {path}")
    _, h, w = model.net.input_shape
    try:
        return load_image(path, model.mean_rgb, expected_size=(h, w))
    except ImageFormatError as e:
        raise CliError(EXIT_INVALID, f"invalid image: {e}") from e
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot read image: {e}") from e


def _load_plan_checked(path: str | None) -> dict[str, int] | None:
    if path is None:
        return None
    if not Path(path).is_file():
        raise CliError(EXIT_IO, f"plan file not found: {path}")
    try:
        return load_table(path).plan
    except ValueError as e:
        raise CliError(EXIT_INVALID, f"invalid plan file: {e}") from e


def _synthetic_input(model: LoadedModel, seed: int = 0) -> Tensor3:
    """Deterministic pseudo-image shaped like the declared input."""
    layers, h, w = model.net.input_shape
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=(layers, h, w)).astype(np.float32)
    data = pixels - model.mean_rgb[:layers, None, None] if layers == 3 else pixels
    return Tensor3(layers, h, w, Layout.ROW_MAJOR, data.reshape(-1).astype(np.float32))


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_infer(args) -> int:
    model = _load_model_checked(args.model)
    image = _load_image_checked(args.image, model)
    plan = _load_plan_checked(args.plan)
    engine = Engine(args.threads)
    mode = ArithMode.RELAXED if args.relaxed else ArithMode.STRICT
    try:
        result = engine.forward(model.net, model.weights, image, plan, mode)
    except (ShapeError, ValueError) as e:
        raise CliError(EXIT_INVALID, f"forward pass failed: {e}") from e
    top = np.argsort(result.probabilities)[::-1][: args.top]
    for rank, idx in enumerate(top, 1):
        print(f"{rank} class={idx} p={result.probabilities[idx]:.6f}")
    if args.logits_out:
        Path(args.logits_out).write_text(
            "\n".join(f"{v!r}" for v in result.logits.tolist()) + "\n"
        )
    return EXIT_OK


def _cmd_tune(args) -> int:
    model = _load_model_checked(args.model)
    out = Path(args.out)
    if out.is_file() and not args.force:
        try:
            table = load_table(out)
        except ValueError:
            table = None
        if table is not None and set(table.plan) >= set(conv_unit_ids(model.net)):
            print(f"plan {args.out} already covers every convolution; skipping "
                  f"measurement (use --force to retune)")
            return EXIT_OK
    if args.repeats < 3:
        raise CliError(EXIT_USAGE, "--repeats must be >= 3")
    image = _synthetic_input(model)
    try:
        table = tune_network(
            model.net, model.weights, image, repeats=args.repeats, threads=args.threads
        )
    except (ShapeError, ValueError) as e:
        raise CliError(EXIT_INVALID, f"tuning failed: {e}") from e
    save_table(table, out)
    for node_id in conv_unit_ids(model.net):
        row = table.rows[node_id]
        print(f"{node_id}: g_opt={row.g_opt} g_pess={row.g_pess} "
              f"opt={row.opt_micros:.0f}us pess={row.pess_micros:.0f}us")
    print(f"optimal-vs-pessimal whole-network ratio: "
          f"{table.optimal_vs_pessimal_ratio():.2f}X")
    print(f"wrote {args.out}")
    return EXIT_OK


def _median_node_times(results) -> dict[str, float]:
    acc: dict[str, list[float]] = {}
    for res in results:
        for name, seconds in res.node_times:
            acc.setdefault(name, []).append(seconds)
    return {name: statistics.median(v) for name, v in acc.items()}


def _cmd_bench(args) -> int:
    model = _load_model_checked(args.model)
    plan = _load_plan_checked(args.plan)
    if args.image:
        image = _load_image_checked(args.image, model)
    else:
        image = _synthetic_input(model)
    engine = Engine(args.threads)
    wall0 = time.perf_counter()
    try:
        # One warm-up per path (JIT compilation and first-touch costs).
        engine.forward_sequential(model.net, model.weights, image)
        engine.forward(model.net, model.weights, image, plan, ArithMode.STRICT)
        engine.forward(model.net, model.weights, image, plan, ArithMode.RELAXED)
        seq = [engine.forward_sequential(model.net, model.weights, image)
               for _ in range(args.repeats)]
        par = [engine.forward(model.net, model.weights, image, plan, ArithMode.STRICT)
               for _ in range(args.repeats)]
        rel = [engine.forward(model.net, model.weights, image, plan, ArithMode.RELAXED)
               for _ in range(args.repeats)]
    except (ShapeError, ValueError) as e:
        raise CliError(EXIT_INVALID, f"benchmark failed: {e}") from e
    wall = time.perf_counter() - wall0
    seq_t, par_t, rel_t = map(_median_node_times, (seq, par, rel))
    rows = [
        BenchRow(node.name, seq_t[node.name] * 1e3, par_t[node.name] * 1e3,
                 rel_t[node.name] * 1e3)
        for node in model.net.nodes
    ]
    report = BenchReport(_machine_descriptor(engine.threads), rows, wall)
    text = report.to_csv() if args.format == "csv" else report.to_table()
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vcnn",
        description="Data-parallel CPU CNN inference engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="classify one image")
    p.add_argument("model")
    p.add_argument("image")
    p.add_argument("--plan", help="granularity plan file from `vcnn tune`")
    p.add_argument("--relaxed", action="store_true",
                   help="relaxed arithmetic (permits FMA contraction)")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--top", type=int, default=5)
    p.add_argument("--logits-out", help="also write raw logits to this file")
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("tune", help="measure per-layer granularities")
    p.add_argument("model")
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--out", required=True, help="tune table / plan output file")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--force", action="store_true",
                   help="retune even if --out already covers the model")
    p.set_defaults(fn=_cmd_tune)

    p = sub.add_parser("bench", help="per-layer sequential vs parallel report")
    p.add_argument("model")
    p.add_argument("--plan")
    p.add_argument("--image", help="PPM input (default: synthetic)")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.add_argument("--out")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(fn=_cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.fn(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())

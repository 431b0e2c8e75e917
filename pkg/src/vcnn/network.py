"""Declarative network definition and the forward-pass executor.

A network is an ordered list of nodes (conv, fire, pool, softmax) plus a
declared input shape.  ``shape_check`` statically propagates shapes through
the chain; ``Engine.forward`` runs the data-parallel path over chunked-4
tensors, while ``Engine.forward_sequential`` runs the plain sequential
kernels end-to-end as the benchmark baseline.  Both record per-node wall
time on a monotonic clock.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field
from typing import Mapping, Union

import numba
import numpy as np

from .kernels import (
    ArithMode,
    ConvSpec,
    WeightBank,
    conv_granular,
    conv_sequential,
    valid_granularities,
    weights_to_plain,
)
from .layers import (
    FireSpec,
    FireWeights,
    PoolKind,
    PoolSpec,
    fire_forward,
    max_pool,
    avg_pool,
    pool_rowmajor,
    relu,
    softmax,
)
from .tensor import Layout, Tensor3, reorder_from_chunked4, reorder_to_chunked4


@dataclass(frozen=True)
class ConvNode:
    name: str
    spec: ConvSpec
    relu: bool = False


@dataclass(frozen=True)
class FireNode:
    name: str
    spec: FireSpec


@dataclass(frozen=True)
class PoolNode:
    name: str
    spec: PoolSpec


@dataclass(frozen=True)
class SoftmaxNode:
    name: str


Node = Union[ConvNode, FireNode, PoolNode, SoftmaxNode]

FIRE_SUB_CONVS = ("squeeze1x1", "expand1x1", "expand3x3")


@dataclass(frozen=True)
class NetworkDef:
    """Ordered layer graph plus the declared input shape (layers, h, w)."""

    input_shape: tuple[int, int, int]
    nodes: tuple[Node, ...]

    def __post_init__(self) -> None:
        names = [n.name for n in self.nodes]
        if len(set(names)) != len(names):
            raise ValueError("node names must be unique")


class ShapeError(ValueError):
    """Shape chain broken at a node; carries the offending node id."""

    def __init__(self, node_id: str, message: str):
        super().__init__(f"{node_id}: {message}")
        self.node_id = node_id


def _node_out_shape(node: Node, shape: tuple[int, int, int]) -> tuple[int, int, int]:
    layers, h, w = shape
    if isinstance(node, ConvNode):
        if node.spec.in_layers != layers:
            raise ShapeError(
                node.name, f"expects {node.spec.in_layers} input layers, got {layers}"
            )
        oh, ow = node.spec.out_shape(h, w)
        return (node.spec.out_layers, oh, ow)
    if isinstance(node, FireNode):
        if node.spec.in_layers != layers:
            raise ShapeError(
                node.name, f"expects {node.spec.in_layers} input layers, got {layers}"
            )
        sh, sw = node.spec.squeeze1x1.out_shape(h, w)
        e1 = node.spec.expand1x1.out_shape(sh, sw)
        e3 = node.spec.expand3x3.out_shape(sh, sw)
        if e1 != e3:
            raise ShapeError(node.name, f"expand branches disagree: {e1} vs {e3}")
        return (node.spec.out_layers, e1[0], e1[1])
    if isinstance(node, PoolNode):
        oh, ow = node.spec.out_shape(h, w)
        return (layers, oh, ow)
    if isinstance(node, SoftmaxNode):
        if (h, w) != (1, 1):
            raise ShapeError(node.name, f"softmax needs a {layers}x1x1 input, got {shape}")
        return shape
    raise ShapeError(node.name, f"unknown node type {type(node).__name__}")


def shape_check(net: NetworkDef) -> list[tuple[str, tuple[int, int, int]]]:
    """Propagate shapes through the chain; raises ShapeError at the first
    mismatching node.  Returns (node id, output shape) per node."""
    out: list[tuple[str, tuple[int, int, int]]] = []
    shape = net.input_shape
    for node in net.nodes:
        try:
            shape = _node_out_shape(node, shape)
        except ShapeError:
            raise
        except ValueError as e:
            raise ShapeError(node.name, str(e)) from e
        out.append((node.name, shape))
    return out


def conv_unit_ids(net: NetworkDef) -> list[str]:
    """Ids of every tunable convolution: conv nodes plus fire sub-convs
    (named ``<fire>.squeeze1x1`` etc.)."""
    ids: list[str] = []
    for node in net.nodes:
        if isinstance(node, ConvNode):
            ids.append(node.name)
        elif isinstance(node, FireNode):
            ids.extend(f"{node.name}.{sub}" for sub in FIRE_SUB_CONVS)
    return ids


def _conv_unit_specs(net: NetworkDef) -> dict[str, ConvSpec]:
    specs: dict[str, ConvSpec] = {}
    for node in net.nodes:
        if isinstance(node, ConvNode):
            specs[node.name] = node.spec
        elif isinstance(node, FireNode):
            for sub in FIRE_SUB_CONVS:
                specs[f"{node.name}.{sub}"] = getattr(node.spec, sub)
    return specs


def validate_plan(net: NetworkDef, plan: Mapping[str, int]) -> None:
    """Every granularity in the plan must be valid for its convolution."""
    specs = _conv_unit_specs(net)
    for node_id, g in plan.items():
        if node_id not in specs:
            raise ValueError(f"plan names unknown convolution {node_id!r}")
        if g != 1 and g not in valid_granularities(specs[node_id].out_layers):
            raise ValueError(
                f"plan granularity {g} invalid for {node_id} "
                f"({specs[node_id].out_layers} output layers)"
            )


WeightsMap = Mapping[str, Union[WeightBank, FireWeights]]


def _check_weights(net: NetworkDef, weights: WeightsMap) -> None:
    for node in net.nodes:
        if isinstance(node, ConvNode):
            bank = weights.get(node.name)
            if not isinstance(bank, WeightBank) or bank.spec != node.spec:
                raise ValueError(f"missing or mismatched weights for {node.name}")
        elif isinstance(node, FireNode):
            fw = weights.get(node.name)
            if not isinstance(fw, FireWeights):
                raise ValueError(f"missing fire weights for {node.name}")
            for sub in FIRE_SUB_CONVS:
                if getattr(fw, sub).spec != getattr(node.spec, sub):
                    raise ValueError(f"mismatched weights for {node.name}.{sub}")


@dataclass
class ForwardResult:
    """Output probabilities plus the per-node timing record of one pass."""

    probabilities: np.ndarray
    logits: np.ndarray
    node_times: list[tuple[str, float]] = field(repr=False)
    total_seconds: float = 0.0


class Engine:
    """Owns the worker-pool size and runs forward passes.

    One forward pass at a time per instance; kernels partition the flat
    output index space across the pool, so results are independent of the
    thread count.
    """

    def __init__(self, threads: int | None = None):
        limit = numba.config.NUMBA_NUM_THREADS
        if threads is None:
            threads = os.cpu_count() or 1
        if threads < 1:
            raise ValueError(f"threads must be >= 1, got {threads}")
        self.threads = min(threads, limit)

    # -- shared traversal -------------------------------------------------

    def _run_parallel(
        self,
        net: NetworkDef,
        weights: WeightsMap,
        image: Tensor3,
        plan: Mapping[str, int] | None,
        mode: ArithMode,
        collect: dict[str, Tensor3] | None = None,
    ) -> ForwardResult:
        plan = dict(plan or {})
        validate_plan(net, plan)
        numba.set_num_threads(self.threads)

        t = image
        logits = None
        probs = None
        times: list[tuple[str, float]] = []
        start_total = time.perf_counter()
        for node in net.nodes:
            t0 = time.perf_counter()
            if isinstance(node, ConvNode):
                if t.layout is Layout.ROW_MAJOR:
                    # Entry point: the first convolution reorders its input
                    # once; everything downstream stays chunked.
                    t = reorder_to_chunked4(t)
                if collect is not None:
                    collect[node.name] = t
                bank = weights[node.name]
                t = conv_granular(t, bank, plan.get(node.name, 1), mode)
                if node.relu:
                    t = relu(t)
            elif isinstance(node, FireNode):
                if t.layout is Layout.ROW_MAJOR:
                    t = reorder_to_chunked4(t)
                fw = weights[node.name]
                if collect is not None:
                    squeezed = relu(conv_granular(
                        t, fw.squeeze1x1, plan.get(f"{node.name}.squeeze1x1", 1), mode
                    ))
                    collect[f"{node.name}.squeeze1x1"] = t
                    collect[f"{node.name}.expand1x1"] = squeezed
                    collect[f"{node.name}.expand3x3"] = squeezed
                g3 = (
                    plan.get(f"{node.name}.squeeze1x1", 1),
                    plan.get(f"{node.name}.expand1x1", 1),
                    plan.get(f"{node.name}.expand3x3", 1),
                )
                t = fire_forward(t, node.spec, fw, g3, mode)
            elif isinstance(node, PoolNode):
                pool = max_pool if node.spec.kind is PoolKind.MAX else avg_pool
                t = pool(t, node.spec, mode)
            elif isinstance(node, SoftmaxNode):
                if t.layout is Layout.CHUNKED4:
                    t = reorder_from_chunked4(t)
                if (t.height, t.width) != (1, 1):
                    raise ShapeError(node.name, "softmax needs a Lx1x1 input")
                logits = t.data.copy()
                probs = softmax(logits)
            times.append((node.name, time.perf_counter() - t0))
        total = time.perf_counter() - start_total
        if probs is None or logits is None:
            raise ValueError("network must end with a softmax node")
        return ForwardResult(probs, logits, times, total)

    # -- public entry points ----------------------------------------------

    def forward(
        self,
        net: NetworkDef,
        weights: WeightsMap,
        image: Tensor3,
        plan: Mapping[str, int] | None = None,
        mode: ArithMode = ArithMode.STRICT,
    ) -> ForwardResult:
        """Run the data-parallel path.  Deterministic in strict mode:
        identical bits across runs and worker-pool sizes."""
        if image.shape != net.input_shape:
            raise ShapeError("input", f"image {image.shape} != declared {net.input_shape}")
        shape_check(net)
        _check_weights(net, weights)
        return self._run_parallel(net, weights, image, plan, mode)

    def forward_sequential(
        self, net: NetworkDef, weights: WeightsMap, image: Tensor3
    ) -> ForwardResult:
        """Run the sequential reference kernels end-to-end (bench baseline).

        Weight de-reordering happens up front and is excluded from the
        per-node times, mirroring the exclusion of model-load time.
        """
        if image.shape != net.input_shape:
            raise ShapeError("input", f"image {image.shape} != declared {net.input_shape}")
        shape_check(net)
        _check_weights(net, weights)
        plains: dict[str, object] = {}
        for node in net.nodes:
            if isinstance(node, ConvNode):
                plains[node.name] = weights_to_plain(weights[node.name])
            elif isinstance(node, FireNode):
                fw = weights[node.name]
                plains[node.name] = tuple(
                    weights_to_plain(getattr(fw, sub)) for sub in FIRE_SUB_CONVS
                )

        t = image
        logits = None
        probs = None
        times: list[tuple[str, float]] = []
        start_total = time.perf_counter()
        for node in net.nodes:
            t0 = time.perf_counter()
            if isinstance(node, ConvNode):
                t = conv_sequential(t, plains[node.name])
                if node.relu:
                    t = relu(t)
            elif isinstance(node, FireNode):
                ps, p1, p3 = plains[node.name]
                squeezed = relu(conv_sequential(t, ps))
                e1 = relu(conv_sequential(squeezed, p1))
                e3 = relu(conv_sequential(squeezed, p3))
                t = Tensor3(
                    e1.num_layers + e3.num_layers, e1.height, e1.width,
                    Layout.ROW_MAJOR, np.concatenate([e1.data, e3.data]),
                )
            elif isinstance(node, PoolNode):
                t = pool_rowmajor(t, node.spec)
            elif isinstance(node, SoftmaxNode):
                if (t.height, t.width) != (1, 1):
                    raise ShapeError(node.name, "softmax needs a Lx1x1 input")
                logits = t.data.copy()
                probs = softmax(logits)
            times.append((node.name, time.perf_counter() - t0))
        total = time.perf_counter() - start_total
        if probs is None or logits is None:
            raise ValueError("network must end with a softmax node")
        return ForwardResult(probs, logits, times, total)

    def trace_conv_inputs(
        self,
        net: NetworkDef,
        weights: WeightsMap,
        image: Tensor3,
        mode: ArithMode = ArithMode.STRICT,
    ) -> dict[str, Tensor3]:
        """Forward pass that records the input tensor of every convolution
        unit (conv nodes and fire sub-convs); used by the autotuner."""
        if image.shape != net.input_shape:
            raise ShapeError("input", f"image {image.shape} != declared {net.input_shape}")
        shape_check(net)
        _check_weights(net, weights)
        collect: dict[str, Tensor3] = {}
        self._run_parallel(net, weights, image, None, mode, collect=collect)
        return collect

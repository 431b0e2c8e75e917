"""TorchScript graph extraction.

Loads a serialized TorchScript module, freezes it (inlining weights as
constants and dropping eval-mode no-ops like dropout), and walks the flat
op chain into a NetDescription.  Fire blocks are recognized structurally:
a convolution whose activation feeds two convolutions that meet again in a
channel concatenation.  Any operator outside the supported set aborts with
a diagnostic naming it.
"""

from __future__ import annotations

import numpy as np
import torch

from .modelfile import (
    ConvDesc,
    ConvUnit,
    FireDesc,
    NetDescription,
    PoolDesc,
    SoftmaxDesc,
)


class ConversionError(ValueError):
    pass


class UnsupportedOperatorError(ConversionError):
    def __init__(self, op: str, detail: str = ""):
        suffix = f" ({detail})" if detail else ""
        super().__init__(f"unsupported operator in source graph: {op}{suffix}")
        self.op = op


_SKIPPED = ("prim::Constant", "prim::ListConstruct")
_RELU = ("aten::relu", "aten::relu_")


def _const(value):
    node = value.node()
    if node.kind() != "prim::Constant":
        raise UnsupportedOperatorError(node.kind(), "expected a constant argument")
    kind = value.type().kind()
    if kind == "TensorType":
        return node.t("value")
    if kind == "NoneType":
        return None
    if kind == "BoolType":
        return bool(node.i("value"))
    if kind == "IntType":
        return node.i("value")
    if kind == "FloatType":
        return node.f("value")
    return node.ival("value")


def _square(pair, what: str) -> int:
    if len(pair) != 2 or pair[0] != pair[1]:
        raise ConversionError(f"non-square {what} {list(pair)} is not supported")
    return int(pair[0])


def _consumers(graph, value):
    out = []
    for node in graph.nodes():
        if node.kind() in _SKIPPED:
            continue
        if any(v is value for v in node.inputs()):
            out.append(node)
    return out


def _cat_consumer(graph, value):
    """The aten::cat node fed (via ListConstruct) by this value, if any."""
    for node in graph.nodes():
        if node.kind() != "prim::ListConstruct":
            continue
        if any(v is value for v in node.inputs()):
            for user in _consumers(graph, node.output()):
                if user.kind() == "aten::cat":
                    return node, user
    return None, None


def _parse_conv(node) -> ConvUnit:
    ins = list(node.inputs())
    weight = _const(ins[1])
    bias = _const(ins[2])
    stride = _square(_const(ins[3]), "stride")
    pad = _square(_const(ins[4]), "padding")
    dilation = _square(_const(ins[5]), "dilation")
    if dilation != 1:
        raise UnsupportedOperatorError(node.kind(), f"dilation {dilation}")
    if node.kind() == "aten::_convolution":
        if bool(_const(ins[6])):
            raise UnsupportedOperatorError(node.kind(), "transposed convolution")
        groups = int(_const(ins[8]))
    else:
        groups = int(_const(ins[6]))
    if groups != 1:
        raise UnsupportedOperatorError(node.kind(), f"groups {groups}")
    kernel = weight.detach().numpy().astype(np.float32)
    if kernel.ndim != 4 or kernel.shape[2] != kernel.shape[3]:
        raise ConversionError(f"non-square kernel {kernel.shape}")
    if bias is None:
        bias_arr = np.zeros(kernel.shape[0], np.float32)
    else:
        bias_arr = bias.detach().numpy().astype(np.float32)
    return ConvUnit(kernel, bias_arr, stride, pad)


def _follow_relu(graph, node):
    """If the node's single consumer is a relu, step over it."""
    out = node.output()
    cons = _consumers(graph, out)
    if len(cons) == 1 and cons[0].kind() in _RELU:
        return cons[0].output(), True
    return out, False


def _conv_out_hw(unit: ConvUnit, h: int, w: int, name: str) -> tuple[int, int]:
    oh, ow = unit.out_hw(h, w)
    if oh < 1 or ow < 1:
        raise ConversionError(f"{name}: convolution does not fit a {h}x{w} input")
    return oh, ow


def extract_network(
    module: torch.jit.ScriptModule,
    input_shape: tuple[int, int, int] = (3, 224, 224),
) -> NetDescription:
    module = module.eval()
    frozen = torch.jit.freeze(module)
    graph = frozen.graph
    cursor = list(graph.inputs())[-1]

    net = NetDescription(input_shape)
    channels, h, w = input_shape
    n_conv = n_fire = n_pool = 0
    saw_softmax = False

    while True:
        cons = _consumers(graph, cursor)
        if not cons:
            break
        if saw_softmax:
            raise ConversionError("operators found after the softmax head")
        if len(cons) > 1:
            raise ConversionError(
                f"unsupported branching at {cursor.debugName()}: "
                f"{[n.kind() for n in cons]}"
            )
        node = cons[0]
        kind = node.kind()

        if kind in ("aten::_convolution", "aten::conv2d"):
            unit = _parse_conv(node)
            if unit.in_channels != channels:
                raise ConversionError(
                    f"convolution expects {unit.in_channels} channels, "
                    f"graph carries {channels}"
                )
            after, has_relu = _follow_relu(graph, node)
            branches = _consumers(graph, after)
            if len(branches) == 2 and all(
                b.kind() in ("aten::_convolution", "aten::conv2d") for b in branches
            ):
                # Fire block: squeeze conv feeding two expand convs that
                # concatenate along channels.
                if not has_relu:
                    raise ConversionError("squeeze convolution lacks an activation")
                layer = n_conv + n_fire + 1
                n_fire += 1
                name = f"fire{layer}"
                sq_h, sq_w = _conv_out_hw(unit, h, w, name)
                ends = {}
                for b in branches:
                    eu = _parse_conv(b)
                    e_after, e_relu = _follow_relu(graph, b)
                    if not e_relu:
                        raise ConversionError("expand convolution lacks an activation")
                    ends[e_after] = eu
                found = [_cat_consumer(graph, v) for v in ends]
                if any(cat is None for _, cat in found) or found[0][1] is not found[1][1]:
                    raise ConversionError("expand branches do not meet in one concat")
                list_node, cat_node = found[0]
                if int(_const(list(cat_node.inputs())[1])) != 1:
                    raise UnsupportedOperatorError("aten::cat", "dim != 1")
                cat_ins = list(list_node.inputs())
                if len(cat_ins) != 2 or any(v not in ends for v in cat_ins):
                    raise ConversionError(
                        "concat must join exactly the two expand branches"
                    )
                e1, e3 = ends[cat_ins[0]], ends[cat_ins[1]]
                if (e1.kernel_size, e3.kernel_size) != (1, 3):
                    raise ConversionError(
                        "expected a 1x1 then 3x3 expand pair, got "
                        f"{e1.kernel_size}x{e1.kernel_size} and "
                        f"{e3.kernel_size}x{e3.kernel_size}"
                    )
                for eu, en in ((e1, "expand1x1"), (e3, "expand3x3")):
                    if eu.in_channels != unit.out_channels:
                        raise ConversionError(f"{en} input does not match squeeze")
                    eh, ew = _conv_out_hw(eu, sq_h, sq_w, en)
                    if (eh, ew) != (sq_h, sq_w):
                        raise ConversionError(f"{en} changes the spatial dims")
                net.nodes.append(FireDesc(name, unit, e1, e3))
                channels = e1.out_channels + e3.out_channels
                h, w = sq_h, sq_w
                cursor = cat_node.output()
            else:
                name = f"conv{n_conv + n_fire + 1}"
                n_conv += 1
                net.nodes.append(ConvDesc(name, unit, has_relu))
                channels = unit.out_channels
                h, w = _conv_out_hw(unit, h, w, name)
                cursor = after
        elif kind == "aten::max_pool2d":
            ins = list(node.inputs())
            window = _square(_const(ins[1]), "pool window")
            stride = _square(_const(ins[2]), "pool stride")
            if _square(_const(ins[3]), "pool padding") != 0:
                raise UnsupportedOperatorError(kind, "padded pooling")
            if _square(_const(ins[4]), "pool dilation") != 1:
                raise UnsupportedOperatorError(kind, "dilated pooling")
            ceil_mode = bool(_const(ins[5]))
            if ceil_mode and ((h - window) % stride or (w - window) % stride):
                raise UnsupportedOperatorError(
                    kind, f"ceil_mode pooling over a {h}x{w} input is inexact"
                )
            n_pool += 1
            net.nodes.append(PoolDesc(f"pool{n_pool}", window, stride, "max"))
            h = (h - window) // stride + 1
            w = (w - window) // stride + 1
            cursor = node.output()
        elif kind in ("aten::adaptive_avg_pool2d", "aten::avg_pool2d"):
            if kind == "aten::adaptive_avg_pool2d":
                out_size = list(_const(list(node.inputs())[1]))
                if out_size != [1, 1]:
                    raise UnsupportedOperatorError(kind, f"output size {out_size}")
                if h != w:
                    raise ConversionError(
                        f"global average pool over a non-square {h}x{w} input"
                    )
                window, stride = h, 1
            else:
                ins = list(node.inputs())
                window = _square(_const(ins[1]), "pool window")
                stride = _square(_const(ins[2]), "pool stride")
                if _square(_const(ins[3]), "pool padding") != 0:
                    raise UnsupportedOperatorError(kind, "padded pooling")
            n_pool += 1
            net.nodes.append(PoolDesc(f"pool{n_pool}", window, stride, "avg"))
            h = (h - window) // stride + 1
            w = (w - window) // stride + 1
            cursor = node.output()
        elif kind == "aten::flatten":
            if (h, w) != (1, 1):
                raise UnsupportedOperatorError(kind, f"flatten of a {h}x{w} map")
            cursor = node.output()
        elif kind == "aten::softmax":
            if int(_const(list(node.inputs())[1])) != 1:
                raise UnsupportedOperatorError(kind, "dim != 1")
            if (h, w) != (1, 1):
                raise ConversionError("softmax applied before spatial reduction")
            net.nodes.append(SoftmaxDesc("softmax"))
            saw_softmax = True
            cursor = node.output()
        elif kind == "aten::dropout":
            if bool(_const(list(node.inputs())[2])):
                raise UnsupportedOperatorError(kind, "training-mode dropout")
            cursor = node.output()
        else:
            raise UnsupportedOperatorError(kind)

    if not saw_softmax:
        # Classifier sources usually end at the logits; the engine expects a
        # softmax head, so append one.
        if (h, w) != (1, 1):
            raise ConversionError(
                f"source graph ends with a {channels}x{h}x{w} map, not logits"
            )
        net.nodes.append(SoftmaxDesc("softmax"))
    return net

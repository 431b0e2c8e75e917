"""vcnn: a data-parallel CPU inference engine for convolutional networks.

Convolutions are computed by a ladder of kernels that all evaluate the same
math: a sequential baseline, a per-output-element parallel kernel, a
vectorized kernel that reduces over input channels in chunks of four, a
fused kernel that emits its output directly in the chunked layout, and a
granular kernel where each work item produces g outputs.  A per-layer
autotuner picks the best g for the host machine.
"""

import os as _os

# The worker pool is created once per process when numba initializes its
# threading layer.  Size it to at least 8 so small machines can still honor
# explicit --threads requests up to 8 (work partitioning stays identical;
# results are independent of thread count by construction).
_os.environ.setdefault("NUMBA_NUM_THREADS", str(max(_os.cpu_count() or 1, 8)))

from .tensor import (  # noqa: E402
    Layout,
    ElemCoord,
    Tensor3,
    index_to_coord_row_major,
    index_to_coord_chunked4,
    reorder_to_chunked4,
    reorder_from_chunked4,
)
from .kernels import (  # noqa: E402
    ArithMode,
    ConvSpec,
    PlainWeightBank,
    WeightBank,
    conv_sequential,
    conv_parallel_scalar,
    conv_vectorized,
    conv_vectorized_fused,
    conv_granular,
    valid_granularities,
)
from .layers import (  # noqa: E402
    PoolKind,
    PoolSpec,
    FireSpec,
    FireWeights,
    max_pool,
    avg_pool,
    relu,
    softmax,
    fire_forward,
)
from .network import (  # noqa: E402
    ConvNode,
    FireNode,
    PoolNode,
    SoftmaxNode,
    NetworkDef,
    ShapeError,
    shape_check,
    conv_unit_ids,
    Engine,
    ForwardResult,
)
from .modelio import (  # noqa: E402
    LoadedModel,
    load_model,
    save_model,
    reorder_kernels_offline,
    load_image,
)

__version__ = "0.1.0"

__all__ = [
    "Layout",
    "ElemCoord",
    "Tensor3",
    "index_to_coord_row_major",
    "index_to_coord_chunked4",
    "reorder_to_chunked4",
    "reorder_from_chunked4",
    "ArithMode",
    "ConvSpec",
    "PlainWeightBank",
    "WeightBank",
    "conv_sequential",
    "conv_parallel_scalar",
    "conv_vectorized",
    "conv_vectorized_fused",
    "conv_granular",
    "valid_granularities",
    "PoolKind",
    "PoolSpec",
    "FireSpec",
    "FireWeights",
    "max_pool",
    "avg_pool",
    "relu",
    "softmax",
    "fire_forward",
    "ConvNode",
    "FireNode",
    "PoolNode",
    "SoftmaxNode",
    "NetworkDef",
    "ShapeError",
    "shape_check",
    "conv_unit_ids",
    "Engine",
    "ForwardResult",
    "LoadedModel",
    "load_model",
    "save_model",
    "reorder_kernels_offline",
    "load_image",
]

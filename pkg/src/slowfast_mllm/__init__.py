"""Slow/fast dual-token video-LLM stack at CPU scale.

Compressed "fast" visual tokens ride the decoder sequence next to text
embeddings; uncompressed "slow" tokens are reached through gated
cross-attention inside hybrid decoder layers. The package also carries an
analytic FLOPs/parameter cost model and the verification harness
(finite-difference gradient checks, invariant suites, deterministic CLI).
"""

from .configs import RunConfig, load_run_config, toy_model_config, toy_run_config
from .hybrid_decoder import (
    GateMode,
    GateParams,
    HiddenState,
    HybridLayerParams,
    InitMode,
    Integration,
    ModelConfig,
    ModelParams,
    QueryMode,
    Segment,
    SequenceLayout,
    StandaloneLayerParams,
    build_sequence,
    cross_attention,
    decoder_stack_backward,
    decoder_stack_forward,
    gate_values,
    hybrid_layer_backward,
    hybrid_layer_forward,
    init_cross_attn,
    init_model_params,
    standalone_xattn_layer_forward,
    standard_layer_forward,
)
from .numerics import (
    AttentionParams,
    NumericsError,
    ShapeError,
    UsageError,
    finite_diff_grad,
    matmul,
    mha_backward,
    mha_forward,
    mha_forward_with_cache,
    rms_norm,
    softmax_rows,
)
from .token_pipeline import (
    CompressionConfig,
    FrameFeatures,
    TokenSequences,
    compress_fast,
    pad_and_sample,
    parse_frame_config,
    spatial_pool_2x2,
    temporal_adaptive_pool,
    tokenize_frames,
)

__version__ = "0.1.0"

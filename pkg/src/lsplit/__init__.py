"""lsplit: desk-scale triadic split computing testbed.

Toy generative models (a decoder-only transformer and a latent-diffusion
pipeline) are split into head/body/tail sub-models; only hidden-layer
tensors cross a simulated network as bit-exact binary frames, with traffic
metering, latency modeling, an eavesdropper tap, and quantized transport.
"""

from .bench import plan_partition, run_benchmark, run_ldm_sweep
from .ldm import (
    LdmConfig,
    LdmPipeline,
    decode_image,
    denoise_step,
    encode_text,
    generate_monolithic_ldm,
    predict_noise,
    sample_initial_latent,
)
from .llm import (
    LlmConfig,
    PartitionPlan,
    build_toy_llm,
    body_forward,
    generate_monolithic,
    head_forward,
    partition,
    tail_forward,
)
from .metrics import psnr, ssim
from .netsim import (
    CaptureLog,
    ChannelConfig,
    TrafficReport,
    analytic_llm_traffic,
    deliver,
    detect_plaintext_leak,
    tap_record,
)
from .quant import QuantParams, dequantize_affine, from_fp16, quantize_affine, to_fp16
from .runtime import generate_split, generate_split_ldm
from .tensor import KvCache, causal_attention_step, gelu, layer_norm, matmul, softmax
from .wire import Frame, decode_frame, encode_frame

__version__ = "0.1.0"

__all__ = [
    "CaptureLog", "ChannelConfig", "Frame", "KvCache", "LdmConfig", "LdmPipeline",
    "LlmConfig", "PartitionPlan", "QuantParams", "TrafficReport",
    "analytic_llm_traffic", "body_forward", "build_toy_llm", "causal_attention_step",
    "decode_frame", "decode_image", "deliver", "denoise_step", "dequantize_affine",
    "detect_plaintext_leak", "encode_frame", "encode_text", "from_fp16", "gelu",
    "generate_monolithic", "generate_monolithic_ldm", "generate_split",
    "generate_split_ldm", "head_forward", "layer_norm", "matmul", "partition",
    "plan_partition", "predict_noise", "psnr", "quantize_affine", "run_benchmark",
    "run_ldm_sweep", "sample_initial_latent", "softmax", "ssim", "tail_forward",
    "tap_record", "to_fp16",
]

from .config import ModelConfig
from .network import (
    EnhanceResult,
    align_and_fuse,
    cwq,
    cwq_sequence,
    decode,
    dpr_forward,
    encode,
    enhance_from_frames,
    enhance_waveforms,
)
from .weights import WeightError, WeightManifest, random_manifest, required_tensors

__all__ = [
    "ModelConfig",
    "WeightManifest",
    "WeightError",
    "random_manifest",
    "required_tensors",
    "encode",
    "dpr_forward",
    "cwq",
    "cwq_sequence",
    "align_and_fuse",
    "decode",
    "enhance_waveforms",
    "enhance_from_frames",
    "EnhanceResult",
]

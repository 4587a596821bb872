"""streamtag: streaming audio tagging with single-chunk KV recurrence."""

from .frontend import (
    AudioBuffer,
    AudioError,
    MelFrontendConfig,
    MelSpectrogram,
    NormalizerParams,
    compute_mel,
    load_wav,
    normalize,
)
from .model import (
    LayerKV,
    ModelConfig,
    TokenGrid,
    WeightSet,
    add_pos_embed,
    attention,
    classify,
    forward,
    forward_logits,
    patchify,
    transformer_block,
)
from .streaming import (
    ClipScores,
    StreamState,
    new_stream,
    process_chunk,
    run_clip,
    run_clip_stateless,
)
from .weights import WeightFormatError, load, save, seeded_init

__version__ = "0.1.0"

__all__ = [
    "AudioBuffer", "AudioError", "MelFrontendConfig", "MelSpectrogram",
    "NormalizerParams", "compute_mel", "load_wav", "normalize",
    "LayerKV", "ModelConfig", "TokenGrid", "WeightSet", "add_pos_embed",
    "attention", "classify", "forward", "forward_logits", "patchify",
    "transformer_block",
    "ClipScores", "StreamState", "new_stream", "process_chunk",
    "run_clip", "run_clip_stateless",
    "WeightFormatError", "load", "save", "seeded_init",
]

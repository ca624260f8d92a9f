from .config import (DEFAULT_DECODER, DEFAULT_ENCODER, ModelConfig,
                     ParamLayout, init_params, param_count, unpack_ops)
from .network import (LOGIT_CLAMP, StreamingScorer, SvdfLayerParams,
                      frame_bce_loss, init_stream_state, model_backward,
                      model_forward, scores_from_logits, svdf_forward)

__all__ = [
    "DEFAULT_DECODER", "DEFAULT_ENCODER", "LOGIT_CLAMP", "ModelConfig",
    "ParamLayout", "StreamingScorer", "SvdfLayerParams", "frame_bce_loss",
    "init_params", "init_stream_state", "model_backward", "model_forward",
    "param_count", "scores_from_logits", "svdf_forward", "unpack_ops",
]

from retrieval_nle.model.checkpoint import MAGIC, ModelBundle, load_checkpoint, save_checkpoint
from retrieval_nle.model.generation import GenerationConfig, generate, generate_batch
from retrieval_nle.model.network import (
    ModelConfig,
    block_forward,
    block_params,
    forward,
    init_params,
    param_shapes,
    zero_params,
)
from retrieval_nle.model.template import format_target, parse_prediction, template_violation
from retrieval_nle.model.tokenizer import Tokenizer

__all__ = [
    "MAGIC",
    "GenerationConfig",
    "ModelBundle",
    "ModelConfig",
    "Tokenizer",
    "block_forward",
    "block_params",
    "format_target",
    "forward",
    "generate",
    "generate_batch",
    "init_params",
    "load_checkpoint",
    "param_shapes",
    "parse_prediction",
    "save_checkpoint",
    "template_violation",
    "zero_params",
]

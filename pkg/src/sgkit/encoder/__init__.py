"""Reference scene-graph encoder and its noise-prediction loss."""

from .assemble import SgEmbedding, assemble, prepare, refine_triples, render_triple
from .backends import EmbeddingBackend, HashEmbeddingBackend, HttpEmbeddingBackend, embed_text
from .checkpoint import CheckpointError, load_params, save_params
from .diffusion import (LossConfig, NoiseSchedule, ToyLinearDenoiser, loss_and_grad,
                        noisy_latent, sg_loss)
from .gnn import EncoderParams, GnnOutput, LayerParams, gnn_backward, gnn_forward, init_params, zero_params
from .gradcheck import GradCheckResult, grad_check, grad_check_report, relative_error
from .lowering import ATTRIBUTE_EDGE_TEXT, EdgeSource, LoweredGraph, lower, permute_nodes

__all__ = [
    "ATTRIBUTE_EDGE_TEXT", "CheckpointError", "EdgeSource", "EmbeddingBackend", "EncoderParams",
    "GnnOutput", "GradCheckResult", "HashEmbeddingBackend", "HttpEmbeddingBackend", "LayerParams",
    "LossConfig", "LoweredGraph", "NoiseSchedule", "SgEmbedding", "ToyLinearDenoiser", "assemble",
    "embed_text", "gnn_backward", "gnn_forward", "grad_check", "grad_check_report", "init_params",
    "load_params", "loss_and_grad", "lower", "noisy_latent", "permute_nodes", "prepare",
    "refine_triples", "relative_error", "render_triple", "save_params", "sg_loss", "zero_params",
]

"""Retrieval-then-optimization synthesis of pseudo image-text feature pairs."""

from .clo import AlignmentMatrix, CloConfig, alignment, clo_gradient, clo_refine
from .embeddings import (
    FeatureMatrix,
    TopKResult,
    cosine_sim,
    load_embeddings,
    normalize,
    save_embeddings,
    top_k,
)
from .errors import PseudoPairError
from .perturb import (
    MixingSchedule,
    PerturbConfig,
    PseudoPair,
    gaussian_pseudo_feature,
    sample_pair,
)
from .pipeline import PipelineConfig, run_pipeline
from .providers import BatchedEncoder, EncoderProvider, SyntheticEncoder
from .retrieval import (
    RetrievalConfig,
    image_to_prompts,
    image_to_words,
    two_stage_synthesis,
)
from .theory import TheoremReport, ToyGenerator, proof_identity_check, theorem_check
from .vocab import PromptTemplate, PseudoCaption, Vocabulary, compose_prompts

__version__ = "0.1.0"

__all__ = [
    "AlignmentMatrix",
    "BatchedEncoder",
    "CloConfig",
    "EncoderProvider",
    "FeatureMatrix",
    "MixingSchedule",
    "PerturbConfig",
    "PipelineConfig",
    "PromptTemplate",
    "PseudoCaption",
    "PseudoPair",
    "PseudoPairError",
    "RetrievalConfig",
    "SyntheticEncoder",
    "TheoremReport",
    "TopKResult",
    "ToyGenerator",
    "Vocabulary",
    "alignment",
    "clo_gradient",
    "clo_refine",
    "compose_prompts",
    "cosine_sim",
    "gaussian_pseudo_feature",
    "image_to_prompts",
    "image_to_words",
    "load_embeddings",
    "normalize",
    "proof_identity_check",
    "run_pipeline",
    "sample_pair",
    "save_embeddings",
    "theorem_check",
    "top_k",
    "two_stage_synthesis",
]

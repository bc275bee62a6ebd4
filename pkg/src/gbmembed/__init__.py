"""Skorokhod embeddings into geometric Brownian motion, their time changes
into Brownian motion, and numerical minimality diagnostics."""

__version__ = "0.1.0"

from .chain_embedding import ChainNode, ChainSpec, dyadic_coarsen, embed_chain, verify_joint_law
from .distributions import BarrierPair, TargetDistribution, barrier_pair, build_g_calculus
from .gbm_paths import PathConfig, first_exit, simulate_bm, simulate_gbm
from .single_embedding import sample_embedding, sample_embedding_pathwise, verify_conditional_mean, verify_law
from .timechange import TimeChangeConfig, dds_construct, embed_and_bound, qv_clock

__all__ = [
    "__version__",
    "ChainNode",
    "ChainSpec",
    "dyadic_coarsen",
    "embed_chain",
    "verify_joint_law",
    "BarrierPair",
    "TargetDistribution",
    "barrier_pair",
    "build_g_calculus",
    "PathConfig",
    "first_exit",
    "simulate_bm",
    "simulate_gbm",
    "sample_embedding",
    "sample_embedding_pathwise",
    "verify_conditional_mean",
    "verify_law",
    "TimeChangeConfig",
    "dds_construct",
    "embed_and_bound",
    "qv_clock",
]

"""Differentiable architecture search for token-level sequence labeling."""

from .autodiff import (Tensor, Tape, backward, conv1d, cross_entropy_masked,
                       grad_check, matmul, record, scaled_dot_product_attention,
                       softmax)
from .cell import Cell, CellConfig, cell_forward, mixed_op
from .data import (MetaFeatures, TaggedSentence, Vocabulary, align, gen_synthetic,
                   gen_synthetic_long_range, normalize, parse_corpus, train_subword)
from .metrics import ClassCounts, MetricsReport, count, report
from .model import BatchInput, Model, ModelConfig, load_checkpoint, save_checkpoint
from .primitives import PRIMITIVE_NAMES, PrimitiveInstance, apply, default_primitive_set
from .search import (ArchParameters, EpochStats, Genotype, build_discrete_model,
                     derive_genotype, evaluate, init_arch_parameters, run_search,
                     search_epoch, split_search_data, train_final)

__version__ = "0.1.0"

"""Coherence-regularized knowledge-graph embeddings (entity model) and their evaluation."""

from .errors import (CohKGEError, CompatibilityError, ConfigError, DataError, DivergenceError,
                     FormatError, ParseError, SamplingError, ValidationError, VocabularyError)
from .kg_data import CooccurrenceRecord, Dataset, Triple, Vocab, build_dataset, load_dataset
from .model import Model, TrainConfig, train
from .pmi import PmiMatrix, compute_pmi, load_pmi, save_pmi

__version__ = "0.1.0"

"""Aspect performance-aware hypergraph recommender in plain numpy."""
from .corpus import DatasetSplit, Lexicon, ParsedSentence, ReviewRecord, SynonymTable
from .extraction import ExtractionConfig, Quadruple, build_quadruples
from .hypergraph import Hypergraph, build_hypergraph
from .model import APHModel, HyperParams
from .train_eval import MetricsReport, TrainConfig, evaluate, run_experiment, train

__version__ = "0.1.0"

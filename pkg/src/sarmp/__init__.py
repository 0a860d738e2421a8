"""Knowledge-graph completion by semantic-aware relational message passing."""
from .data import KnowledgeGraph, load_dataset
from .model import HyperParams, MessageGraph, init_params
from .training import TrainConfig, train
from .evaluation import evaluate

__all__ = ["KnowledgeGraph", "load_dataset", "HyperParams", "MessageGraph", "init_params",
           "TrainConfig", "train", "evaluate"]

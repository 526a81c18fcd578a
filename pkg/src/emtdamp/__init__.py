"""EM-TDAMP: Bayesian training of group-sparse ReLU networks by turbo deep approximate message passing."""
from .em import SparsityPolicy, TrainConfig, predict, predict_labels, run_em
from .federated import FedConfig, run_federated
from .network import NetHyper, init_hyper

__all__ = ["FedConfig", "NetHyper", "SparsityPolicy", "TrainConfig", "init_hyper", "predict", "predict_labels", "run_em", "run_federated"]
__version__ = "0.1.0"

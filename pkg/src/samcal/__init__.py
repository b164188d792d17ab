"""Training and calibration lab for SGD, SAM and CSAM on small MLPs."""
from .losses import LossKind, binary_entropy, cross_entropy, csam_outer_loss, focal_loss
from .metrics import PredictionSet, ada_ece, auroc, classwise_ece, ece, nll
from .mlp import MlpSpec, ModelParams
from .optim import TrainConfig, sam_step, sgd_step, train, train_ensemble

__version__ = "0.1.0"

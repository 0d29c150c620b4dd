"""U-Net masker, its gradients, ADAM and the training loop."""

from .adam import Adam
from .train import TrainConfig, TrainResult, train, train_source, validation_loss
from .unet import (ModelParams, UNetConfig, backward, forward, init_params, l1_masked_loss,
                   loss_and_grads)

__all__ = ["Adam", "TrainConfig", "TrainResult", "train", "train_source", "validation_loss",
           "ModelParams", "UNetConfig", "backward", "forward", "init_params", "l1_masked_loss",
           "loss_and_grads"]

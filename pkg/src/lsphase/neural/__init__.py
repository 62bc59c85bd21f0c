from .loss import LOSSES, mae_loss, mse_loss, npcc_loss
from .network import (
    NetworkSpec,
    NetworkState,
    backward,
    forward,
    init_state,
    layer_defs,
    load_network,
    parameter_count,
    predict,
    save_network,
)
from .optim import TrainConfig, optimizer_step
from .train import train, write_history_csv

__all__ = [
    "LOSSES", "NetworkSpec", "NetworkState", "TrainConfig", "backward",
    "forward", "init_state", "layer_defs", "load_network", "mae_loss",
    "mse_loss", "npcc_loss", "optimizer_step", "parameter_count", "predict",
    "save_network", "train", "write_history_csv",
]

"""Multi-context attention networks for human pose estimation, in numpy."""

from .network import NetworkConfig, ablation_matrix, build_network, total_loss, train_step
from .tensor import Tensor

__version__ = "0.1.0"

__all__ = ["NetworkConfig", "Tensor", "ablation_matrix", "build_network", "total_loss", "train_step"]

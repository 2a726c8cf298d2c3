"""Deep multiple access: jointly trained encoder/decoder pairs sharing one channel."""

from .autodiff import Tensor, gradcheck
from .channel import ChannelRealization, ScenarioKind, equalize, sample_csi, transmit
from .checkpoint import load_checkpoint, save_checkpoint
from .data import ImageSet, synthetic_set
from .detection import GateConfig, ReferenceBank, aacd, calibrate_threshold
from .metrics import bandwidth_metrics, correlation_matrix, psnr
from .model import ArchConfig, DmaNet, Ssv, decode, encode, power_normalize
from .scenarios import detection_trials, run_scenario
from .training import TrainConfig, evaluate, train_loop

__version__ = "0.1.0"

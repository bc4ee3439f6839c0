"""Small model configurations shared by the tests"""
import numpy as np

from yoloret.config import ModelConfig
from yoloret.rfcr import RfcrConfig
from yoloret.tensor import Tensor

# Boxes of the synthetic shapes set are 16-40 px on a 64 px canvas
MICRO_ANCHORS = (
    ((10, 10), (14, 20), (20, 14)),
    ((18, 18), (24, 32), (32, 24)),
    ((28, 28), (36, 36), (44, 44)),
)


def micro_config(**changes):
    """alpha 0.35 backbone on 64x64 inputs with a slim RFCR and neck"""
    cfg = ModelConfig(
        input_resolution=64,
        width_multiplier=0.35,
        num_classes=2,
        rfcr=RfcrConfig(fusion_channels=16, refine_expansion=3),
        panet_widths=(16, 24, 32),
        panet_expansion=2,
        anchors=MICRO_ANCHORS,
    )
    return cfg.replace(**changes) if changes else cfg


def random_image(size=64, batch=1, seed=0, dtype=np.float32):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(0, 1, size=(batch, 3, size, size)).astype(dtype))

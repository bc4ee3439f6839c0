"""Real-time object detection with raw feature collection and redistribution

Everything runs on numpy: the kernels, reverse-mode gradients, the detection
network, evaluation and the toy training loop.
"""
__version__ = "0.3.0"

"""Differentiable kernel constants."""

KERNEL_SIZE = 3

# Toy base classifier
TOY_CHANNELS = (16, 32, 64)
TOY_HEAD_GRID = (4, 4)

# Canonicalizer networks
DEC_CHANNELS = (64, 128)
ENERGY_CHANNELS = (16, 32, 32)

# Optimizers
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

# Checkpoints
CHECKPOINT_MAGIC = b"MCAN"
CHECKPOINT_VERSION = 1
CHECKPOINT_HEADER = "<4sHI"

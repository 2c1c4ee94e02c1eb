"""Global RNG seeding for reproducible runs."""

import random

import numpy as np
import torch


def seed_everything(seed):
    """Seed python/numpy/torch and pin torch to one CPU thread.

    Single-threaded math keeps reductions bitwise stable, which the
    byte-identical checkpoint guarantee relies on.
    """
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    torch.set_num_threads(1)

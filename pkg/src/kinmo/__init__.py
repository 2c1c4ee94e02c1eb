"""kinmo: kinematic-group motion representation, hierarchical text-motion
alignment, coarse-to-fine masked motion generation, editing, and trajectory
control, with a self-contained evaluation suite and synthetic-data harness."""

from . import (alignment, annotation, config, control, datasets, errors,
               evaluation, generation, motion, representation, rotations,
               skeleton, templates, textembed, toydata)
from .pipeline import PipelineCheckpoints

__version__ = "0.1.0"

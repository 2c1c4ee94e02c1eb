"""Bundle of trained checkpoints threaded through generation and control."""

from dataclasses import dataclass


@dataclass
class PipelineCheckpoints:
    alignment: object = None
    rqvae: object = None
    generator: object = None
    control: object = None

from .conditioning import ConditionTokens, condition_tokens_from_annotation
from .masked import (GenerationResult, GeneratorCheckpoint, MaskedTransformer,
                     ResidualTransformer, coarse_to_fine_fill, edit_infill,
                     generate, guided_logits, load_generator_checkpoint,
                     mask_schedule, predict_residual_layers,
                     save_generator_checkpoint, train_generator)
from .reasoner import TemplateReasonerStub
from .rqvae import (MotionTokenGrid, ResidualCodebooks, RqvaeCheckpoint, RqvaeModel,
                    load_rqvae_checkpoint, reconstruction_mse, rqvae_decode,
                    rqvae_encode, save_rqvae_checkpoint, train_rqvae)

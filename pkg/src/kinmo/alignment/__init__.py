from .models import AlignmentModel, TinyTextBackbone, LEVELS
from .ops import (cross_attention_fuse, embedding_similarity_loss, gaussian_kl,
                  infonce, kl_regularizers, progressive_fuse, reconstruction_loss,
                  similarity_matrix)
from .training import (AlignmentCheckpoint, embed_motion, embed_text,
                       load_alignment_checkpoint, negative_filter_mask,
                       save_alignment_checkpoint, train_alignment)

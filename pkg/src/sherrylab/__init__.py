"""Adapter-based zero-shot sketch-to-photo retrieval, desk scale.

A frozen teacher and a tunable student share one initialization; the student
gains residual bottleneck adapters and is trained to align image features
with a frozen bank of per-class text embeddings while distilling the
teacher's source-class predictions. Retrieval ranks photo galleries by
cosine similarity of student features alone.
"""

from .adapter import (AdapterState, TunabilityMode, adapter_forward,
                      bottleneck_width, count_parameters, insert_adapters,
                      set_tunability)
from .backbone import (EncoderSpec, EncoderState, Family, build_encoder,
                       forward, insertion_points, load_encoder, save_encoder)
from .datamodel import (Domain, Sample, Split, SplitManifest, ToySpec,
                        generate_toy_dataset, ingest_directory, load_manifest,
                        save_manifest, validate_manifest)
from .errors import SherryError
from .losses import (LossConfig, alignment_loss, classification_loss,
                     distillation_loss, softmax, total_loss)
from .retrieval import (FeatureIndex, MetricReport, average_precision,
                        evaluate, extract_index, make_index, rank,
                        zero_shot_evaluate, zs_sbsr_evaluate)
from .textbank import (PromptTemplate, TextBank, StubTextProvider,
                       bank_from_prototypes, classifier_matrix, embed_classes,
                       fill_template, load_bank, save_bank)
from .trainer import (Checkpoint, Optimizer, PromptMode, TrainConfig,
                      init_teacher_student, load_checkpoint, save_checkpoint,
                      toy_student, train)

__version__ = "0.1.0"

__all__ = [
    "AdapterState", "TunabilityMode", "adapter_forward", "bottleneck_width",
    "count_parameters", "insert_adapters", "set_tunability",
    "EncoderSpec", "EncoderState", "Family", "build_encoder", "forward",
    "insertion_points", "load_encoder", "save_encoder",
    "Domain", "Sample", "Split", "SplitManifest", "ToySpec",
    "generate_toy_dataset", "ingest_directory", "load_manifest",
    "save_manifest", "validate_manifest",
    "SherryError",
    "LossConfig", "alignment_loss", "classification_loss",
    "distillation_loss", "softmax", "total_loss",
    "FeatureIndex", "MetricReport", "average_precision", "evaluate",
    "extract_index", "make_index", "rank", "zero_shot_evaluate",
    "zs_sbsr_evaluate",
    "PromptTemplate", "TextBank", "StubTextProvider", "bank_from_prototypes",
    "classifier_matrix", "embed_classes", "fill_template", "load_bank",
    "save_bank",
    "Checkpoint", "Optimizer", "PromptMode", "TrainConfig",
    "init_teacher_student", "load_checkpoint", "save_checkpoint",
    "toy_student", "train",
]

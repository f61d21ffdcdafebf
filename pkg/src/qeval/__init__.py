"""qeval: scoring and annotation QC for text-to-vision generation.

Library surface:
  types    validated domain records and JSONL codecs
  rating   MOS binning, rating-token fusion, loss terms
  prompts  context prompts, yes/no probe, SFT record builder
  backend  LMM query contracts (HTTP + deterministic mock), frame sampling
  v2s      Vague-to-Specific long-prompt alignment
  scorer   per-instance and ordered batch scoring
  metrics  SRCC/PLCC at instance and model level
  qc       Sample & Scrutinize protocol, event-log store, HTTP service
"""

from .types import (
    Annotation,
    AnnotationBatch,
    BatchStatus,
    Dimension,
    DimensionScore,
    GoldenRecord,
    InstanceRecord,
    MediaKind,
    Message,
    MosValue,
    ProbabilityVector5,
    RatingLevel,
    ScoreReport,
    SftRecord,
    V2sBreakdown,
)
from .rating import (
    LossWeights,
    RatingWeights,
    ce_loss,
    combined_loss,
    denormalize,
    fuse,
    mos_to_rating,
    mse_grad,
    mse_loss,
    normalize_mos,
)
from .metrics import instance_level, model_level, plcc, srcc

__version__ = "0.1.0"

__all__ = [
    "Annotation",
    "AnnotationBatch",
    "BatchStatus",
    "Dimension",
    "DimensionScore",
    "GoldenRecord",
    "InstanceRecord",
    "LossWeights",
    "MediaKind",
    "Message",
    "MosValue",
    "ProbabilityVector5",
    "RatingLevel",
    "RatingWeights",
    "ScoreReport",
    "SftRecord",
    "V2sBreakdown",
    "ce_loss",
    "combined_loss",
    "denormalize",
    "fuse",
    "instance_level",
    "model_level",
    "mos_to_rating",
    "mse_grad",
    "mse_loss",
    "normalize_mos",
    "plcc",
    "srcc",
]

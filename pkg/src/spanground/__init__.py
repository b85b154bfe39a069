"""Joint entity-span extraction and query grounding over sentence-image pairs."""

from .core import (
    ENTITY_TYPES,
    FRAME_SIZE,
    SPLITS,
    BBox,
    EntitySpan,
    ExamplePair,
    QueryInstance,
    build_instances,
    iou,
    spans_to_bio,
    whole_image_box,
)
from .config import RunConfig, load_config, parse_config, save_config
from .encoders import (
    ImageEncoder,
    PyramidGeometry,
    TextEncoder,
    TextEncoding,
    VisualPyramid,
    build_pretrained_encoders,
    build_reference_encoders,
)
from .grounding import AnchorSet, GroundingPrediction, decode_box, estimate_anchors, qg_loss
from .heads import DecodeThresholds, SentenceLayout, extract_spans
from .metrics import EvalReport, fleiss_kappa, grounding_scores, span_prf
from .model import JointModel, build_model, load_image_tensor
from .objective import BalanceState, LossBundle, balance_factor, floor_log10, total_loss
from .querybank import QueryBank, QuerySpec, make_query
from .synthetic import generate_synthetic
from .training import load_checkpoint, save_checkpoint, train
from .weaksup import PhraseSample, build_corpus, filter_by_similarity, merge_and_split

__version__ = "0.1.0"

__all__ = [
    "AnchorSet",
    "BBox",
    "BalanceState",
    "DecodeThresholds",
    "ENTITY_TYPES",
    "EntitySpan",
    "EvalReport",
    "ExamplePair",
    "FRAME_SIZE",
    "GroundingPrediction",
    "ImageEncoder",
    "JointModel",
    "LossBundle",
    "PhraseSample",
    "PyramidGeometry",
    "QueryBank",
    "QueryInstance",
    "QuerySpec",
    "RunConfig",
    "SPLITS",
    "SentenceLayout",
    "TextEncoder",
    "TextEncoding",
    "VisualPyramid",
    "balance_factor",
    "build_corpus",
    "build_instances",
    "build_model",
    "build_pretrained_encoders",
    "build_reference_encoders",
    "decode_box",
    "estimate_anchors",
    "extract_spans",
    "filter_by_similarity",
    "fleiss_kappa",
    "floor_log10",
    "generate_synthetic",
    "grounding_scores",
    "iou",
    "load_checkpoint",
    "load_config",
    "load_image_tensor",
    "make_query",
    "merge_and_split",
    "parse_config",
    "qg_loss",
    "save_checkpoint",
    "save_config",
    "span_prf",
    "spans_to_bio",
    "total_loss",
    "train",
    "whole_image_box",
]

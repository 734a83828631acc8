"""Toy-scale encoder plus attention-GRU tree-number decoder, trained with
hand-written gradients."""

from .network import (
    BatchResult,
    DecodeResult,
    DecoderState,
    EncoderConfig,
    EncoderOutput,
    Network,
    NonFiniteActivation,
    Sample,
    SequenceTooLong,
    batch_loss,
    grad_check,
    multi_task_loss,
    multi_task_loss_grads,
    overlap_flags,
    prepare_sample,
)
from .textvocab import TextVocab, build_text_vocab
from .training import (
    DivergedLoss,
    TrainConfig,
    Trainer,
    decoded_is_well_formed,
    embed_descriptors,
    evaluate_loss,
    greedy_tree_numbers,
    load_model,
    predict_pairs,
    save_model,
    train,
)

__all__ = [
    "BatchResult",
    "DecodeResult",
    "DecoderState",
    "DivergedLoss",
    "EncoderConfig",
    "EncoderOutput",
    "Network",
    "NonFiniteActivation",
    "Sample",
    "SequenceTooLong",
    "TextVocab",
    "TrainConfig",
    "Trainer",
    "batch_loss",
    "build_text_vocab",
    "decoded_is_well_formed",
    "embed_descriptors",
    "evaluate_loss",
    "grad_check",
    "greedy_tree_numbers",
    "load_model",
    "multi_task_loss",
    "multi_task_loss_grads",
    "overlap_flags",
    "predict_pairs",
    "prepare_sample",
    "save_model",
    "train",
]

"""Context-aware neuron attribution and editing for toy transformers."""

from ._ircan import (
    IrcanError,
    Model,
    Tokenizer,
    apply_edit,
    attribute,
    check_reference_logits,
    evaluate,
    expected_tensors,
    gen_synthetic,
    revert,
    select,
    sha256_file,
)

__all__ = [
    "IrcanError",
    "Model",
    "Tokenizer",
    "apply_edit",
    "attribute",
    "check_reference_logits",
    "evaluate",
    "expected_tensors",
    "gen_synthetic",
    "revert",
    "select",
    "sha256_file",
]

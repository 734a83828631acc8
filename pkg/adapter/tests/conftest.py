from __future__ import annotations

import pytest


@pytest.fixture(scope="session")
def tiny_checkpoint(tmp_path_factory) -> str:
    """A minimal saved transformer checkpoint, resolvable by local path."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizer

    path = tmp_path_factory.mktemp("ckpt")
    words = [
        "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
        "infection", "viral", "respiratory", "treatment", "study",
        "of", "the", "host", "organism", "a", ":",
    ]
    vocab_file = path / "vocab.txt"
    vocab_file.write_text("\n".join(words) + "\n", encoding="utf-8")
    config = BertConfig(
        vocab_size=len(words),
        hidden_size=16,
        num_hidden_layers=1,
        num_attention_heads=2,
        intermediate_size=32,
        max_position_embeddings=64,
    )
    torch.manual_seed(0)
    model = BertModel(config)
    model.save_pretrained(path)
    tokenizer = BertTokenizer(str(vocab_file))
    tokenizer.save_pretrained(path)
    return str(path)

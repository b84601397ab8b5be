"""Build a tiny local seq2seq checkpoint for tests and smoke runs.

The model is a randomly initialized two-layer T5 with a word-level
tokenizer over a small fixed vocabulary; saved weights make greedy
decoding reproducible across loads. Not a trained model: answers are
arbitrary but deterministic.
"""

from __future__ import annotations

import torch
from tokenizers import Tokenizer, models, pre_tokenizers
from transformers import PreTrainedTokenizerFast, T5Config, T5ForConditionalGeneration

VOCAB_WORDS = (
    "question title context the a an of and to in on for what who when where "
    "which record entry passage gold answer entity part covers says about "
    "archive ledger survey column digest report register journal city year "
    "first second third red blue green north south probe test alpha beta gamma"
).split()


def build_tiny_checkpoint(path, seed: int = 0, d_model: int = 64) -> str:
    vocab = {"<pad>": 0, "</s>": 1, "<unk>": 2}
    for word in VOCAB_WORDS:
        vocab.setdefault(word, len(vocab))
    tok = Tokenizer(models.WordLevel(vocab, unk_token="<unk>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    fast = PreTrainedTokenizerFast(
        tokenizer_object=tok,
        pad_token="<pad>",
        eos_token="</s>",
        unk_token="<unk>",
        model_max_length=512,
    )

    config = T5Config(
        vocab_size=len(vocab),
        d_model=d_model,
        d_kv=d_model // 4,
        d_ff=d_model * 2,
        num_layers=2,
        num_decoder_layers=2,
        num_heads=4,
        decoder_start_token_id=0,
        pad_token_id=0,
        eos_token_id=1,
    )
    torch.manual_seed(seed)
    model = T5ForConditionalGeneration(config)
    model.save_pretrained(path)
    fast.save_pretrained(path)
    return str(path)


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(description="write a tiny random seq2seq checkpoint")
    parser.add_argument("path")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    print(build_tiny_checkpoint(args.path, seed=args.seed))
    return 0


if __name__ == "__main__":
    import sys

    sys.exit(main())

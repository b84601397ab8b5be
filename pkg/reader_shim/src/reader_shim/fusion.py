"""Fusion-style reading over a pretrained seq2seq encoder-decoder.

Each (question, passage) pair is encoded independently; the encoded states
are concatenated and the decoder generates greedily over the fused
sequence. Because the decoder's cross-attention carries no positional
information across passages, the answer depends on the passage multiset
rather than its order (up to floating-point summation effects).

Per-passage attention scores average the cross-attention weights over all
decoder layers, all heads, and the passage's input tokens, taken at the
first generated output token. Weights are averaged raw per token and then
meaned over the passage's tokens; no per-passage length normalization is
applied.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import torch
from transformers import AutoModelForSeq2SeqLM, AutoTokenizer
from transformers.modeling_outputs import BaseModelOutput


@dataclass
class ShimConfig:
    checkpoint: str
    device: str = "cpu"
    max_passages: int = 100
    max_new_tokens: int = 16
    max_passage_tokens: int = 256

    @classmethod
    def from_file(cls, path) -> "ShimConfig":
        with open(path, "r", encoding="utf-8") as f:
            return cls(**json.load(f))


class FusionReader:
    """Greedy, deterministic reader with fused per-passage encoding."""

    def __init__(self, config: ShimConfig):
        self.config = config
        self.tokenizer = AutoTokenizer.from_pretrained(config.checkpoint)
        self.model = AutoModelForSeq2SeqLM.from_pretrained(config.checkpoint)
        self.model.to(config.device)
        self.model.eval()
        self.model_name = Path(config.checkpoint).name or "seq2seq-reader"
        self.model_version = self._version()

    def _version(self) -> str:
        cfg = Path(self.config.checkpoint) / "config.json"
        payload = cfg.read_bytes() if cfg.exists() else self.model.config.to_json_string().encode()
        return hashlib.sha256(payload).hexdigest()[:12]

    def _format(self, question: str, title: str, text: str) -> str:
        return f"question: {question} title: {title} context: {text}"

    def _encode_passage(self, question: str, passage: dict) -> torch.Tensor:
        ids = self.tokenizer(
            self._format(question, passage.get("title", ""), passage.get("text", "")),
            return_tensors="pt",
            truncation=True,
            max_length=self.config.max_passage_tokens,
        ).input_ids.to(self.config.device)
        if ids.shape[1] == 0:  # degenerate input; give the encoder one token
            ids = torch.tensor([[self.tokenizer.unk_token_id or 0]], device=self.config.device)
        return self.model.encoder(input_ids=ids).last_hidden_state

    @torch.no_grad()
    def answer(
        self, question: str, passages: list[dict], want_attention: bool = False
    ) -> tuple[str, list[float] | None]:
        if not passages:
            raise ValueError("passages must be non-empty")
        states = []
        spans = []
        offset = 0
        for p in passages:
            hidden = self._encode_passage(question, p)
            states.append(hidden)
            spans.append((offset, offset + hidden.shape[1]))
            offset += hidden.shape[1]
        fused = torch.cat(states, dim=1)
        mask = torch.ones(fused.shape[:2], dtype=torch.long, device=self.config.device)
        encoder_outputs = BaseModelOutput(last_hidden_state=fused)

        start = self.model.config.decoder_start_token_id
        eos = self.model.config.eos_token_id
        generated = [start]
        attention: list[float] | None = None
        for step in range(self.config.max_new_tokens):
            decoder_ids = torch.tensor([generated], device=self.config.device)
            out = self.model(
                encoder_outputs=encoder_outputs,
                attention_mask=mask,
                decoder_input_ids=decoder_ids,
                output_attentions=want_attention and step == 0,
                use_cache=False,
            )
            if step == 0 and want_attention:
                # layers x [1, heads, tgt, src] -> mean over layers+heads at
                # the first output position, then mean per passage span
                per_layer = torch.stack([a[0, :, 0, :] for a in out.cross_attentions])
                token_weights = per_layer.mean(dim=(0, 1))
                attention = [float(token_weights[lo:hi].mean()) for lo, hi in spans]
            next_id = int(out.logits[0, -1].argmax())
            if next_id == eos:
                break
            generated.append(next_id)
        text = self.tokenizer.decode(generated[1:], skip_special_tokens=True)
        return text, attention

"""Sample responses from a causal LM and export hidden-state features.

For each prompt the instruction feature is the selected layer's hidden
state at the prompt's final token, captured before generation.  Each
sampled response is then re-run through the model and its feature is the
hidden state at the response's final token (the terminating EOS when
generation stopped early).  Hidden states are taken from the layer's
post-block output (embedding output is layer 0, block i outputs layer i)
in the model's compute precision and down-cast to float32 at export;
that convention is stamped into the metadata sidecar.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from .labelers import get_labeler
from .lrfd import ExportMeta, ExportRecord, write_lrfd
from .templates import render_prompt

logger = logging.getLogger(__name__)

HIDDEN_STATE_CONVENTION = "post-block output of the selected layer (embeddings are layer 0)"


@dataclass
class ExtractionConfig:
    model: str  # local path or hub name
    layer_fraction: float = 0.6
    layer_index: int | None = None  # explicit index wins over the fraction
    temperature: float = 1.5
    max_new_tokens: int = 1024
    num_samples: int = 100
    template: str = "plain"
    labeler: str = "boxed"
    seed: int = 0
    allow_code_execution: bool = False

    def validate(self) -> None:
        if self.temperature < 0.0:
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if self.num_samples < 1:
            raise ValueError("num_samples must be >= 1")
        if self.layer_index is None and not (0.0 < self.layer_fraction <= 1.0):
            raise ValueError(f"layer_fraction must lie in (0, 1], got {self.layer_fraction}")


@dataclass
class PromptSpec:
    id: str
    instruction: str
    reference: str


@dataclass
class ExtractionSummary:
    prompts: int = 0
    exported: int = 0
    dropped_prompts: int = 0
    skipped_samples: int = 0
    positive_labels: int = 0
    total_labels: int = 0
    d_model: int = 0
    layer_index: int = 0
    layer_fraction: float = 0.0


def read_prompts(path) -> list[PromptSpec]:
    """JSON-lines file with ``id``, ``instruction`` and ``reference`` fields."""
    prompts = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                data = json.loads(line)
                prompts.append(
                    PromptSpec(
                        id=str(data["id"]),
                        instruction=str(data["instruction"]),
                        reference=str(data.get("reference", "")),
                    )
                )
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{line_no}: malformed prompt line: {exc}") from exc
    if not prompts:
        raise ValueError(f"{path}: no prompts found")
    return prompts


def resolve_layer(config: ExtractionConfig, num_layers: int) -> tuple[int, float]:
    """(layer_index, layer_fraction) with index = floor(fraction * layers)."""
    if config.layer_index is not None:
        index = config.layer_index
        if not 0 <= index <= num_layers:
            raise ValueError(f"layer_index {index} outside [0, {num_layers}]")
        # a fraction that floors back to the explicit index
        fraction = 1.0 if index == num_layers else (index + 0.5) / num_layers
        return index, fraction
    # guard: 0.6 * 5 must floor to 3, not 2, despite binary rounding
    index = int(math.floor(config.layer_fraction * num_layers + 1e-9))
    return min(index, num_layers), config.layer_fraction


def query_id_for(prompt_id: str) -> int:
    """Numeric ids pass through; anything else hashes to a stable u64."""
    try:
        value = int(prompt_id)
        if 0 <= value < 2**64:
            return value
    except ValueError:
        pass
    return int.from_bytes(hashlib.sha256(prompt_id.encode("utf-8")).digest()[:8], "little")


def _final_token_state(model, input_ids: torch.Tensor, layer_index: int) -> np.ndarray:
    with torch.no_grad():
        out = model(
            input_ids,
            attention_mask=torch.ones_like(input_ids),
            output_hidden_states=True,
        )
    return out.hidden_states[layer_index][0, -1].to(torch.float32).cpu().numpy()


def _response_span(generated: torch.Tensor, prompt_len: int, eos_id: int | None) -> torch.Tensor:
    """Generated tokens up to and including the first EOS; pads dropped."""
    tail = generated[prompt_len:]
    if eos_id is not None:
        hits = (tail == eos_id).nonzero()
        if len(hits) > 0:
            tail = tail[: int(hits[0, 0]) + 1]
    return tail


def extract(config: ExtractionConfig, prompts: list[PromptSpec], out_path) -> ExtractionSummary:
    """Run the full sampling + capture + labeling loop and write LRFD."""
    from transformers import AutoModelForCausalLM, AutoTokenizer

    config.validate()
    labeler = get_labeler(config.labeler, config.allow_code_execution)
    tokenizer = AutoTokenizer.from_pretrained(config.model)
    model = AutoModelForCausalLM.from_pretrained(config.model)
    model.eval()
    if tokenizer.pad_token_id is None:
        tokenizer.pad_token = tokenizer.eos_token

    num_layers = int(model.config.num_hidden_layers)
    d_model = int(model.config.hidden_size)
    layer_index, layer_fraction = resolve_layer(config, num_layers)
    summary = ExtractionSummary(
        prompts=len(prompts), d_model=d_model, layer_index=layer_index,
        layer_fraction=layer_fraction,
    )

    records: list[ExportRecord] = []
    rendered_prompts: dict[str, str] = {}
    greedy = config.temperature == 0.0
    for prompt_index, prompt in enumerate(prompts):
        text = render_prompt(config.template, prompt.instruction, tokenizer)
        rendered_prompts[prompt.id] = text
        encoded = tokenizer(text, return_tensors="pt")
        prompt_ids = encoded.input_ids
        prompt_len = prompt_ids.shape[1]

        instruction_feature = _final_token_state(model, prompt_ids, layer_index)

        torch.manual_seed((config.seed * 1_000_003 + prompt_index) % 2**63)
        with torch.no_grad():
            generated = model.generate(
                prompt_ids,
                attention_mask=encoded.attention_mask,
                do_sample=not greedy,
                temperature=None if greedy else config.temperature,
                top_k=0 if not greedy else None,
                max_new_tokens=config.max_new_tokens,
                num_return_sequences=1 if greedy else config.num_samples,
                pad_token_id=tokenizer.pad_token_id,
            )
        if greedy and config.num_samples > 1:
            # greedy samples are all identical; replicate the single decode
            generated = generated.repeat(config.num_samples, 1)

        features, labels = [], []
        for row in generated:
            try:
                span = _response_span(row, prompt_len, tokenizer.eos_token_id)
                if span.numel() == 0:
                    raise ValueError("empty generation")
                response_text = tokenizer.decode(span, skip_special_tokens=True)
                label = labeler(response_text, prompt.reference)
                full = torch.cat([prompt_ids[0], span]).unsqueeze(0)
                feature = _final_token_state(model, full, layer_index)
                if not np.isfinite(feature).all():
                    raise ValueError("non-finite hidden state")
            except Exception as exc:  # noqa: BLE001 - count, skip, continue
                summary.skipped_samples += 1
                logger.warning("prompt %s: sample skipped (%s)", prompt.id, exc)
                continue
            features.append(feature)
            labels.append(float(label))
        if not features:
            summary.dropped_prompts += 1
            logger.warning("prompt %s: all samples failed; prompt dropped", prompt.id)
            continue

        assert instruction_feature.shape == (d_model,)  # model config is the contract
        records.append(
            ExportRecord(
                query_id=query_id_for(prompt.id),
                instruction=instruction_feature,
                features=np.vstack(features),
                labels=np.asarray(labels, dtype=np.float32),
            )
        )
        summary.exported += 1
        summary.positive_labels += int(sum(labels))
        summary.total_labels += len(labels)

    meta = ExportMeta(
        d_model=d_model,
        label_mode="classification",
        layer_index=layer_index,
        layer_fraction=layer_fraction,
        source_model=str(config.model),
        temperature=config.temperature,
        max_new_tokens=config.max_new_tokens,
        num_samples=config.num_samples,
        extra={
            "hidden_state_convention": HIDDEN_STATE_CONVENTION,
            "template": config.template,
            "labeler": config.labeler,
            "seed": config.seed,
            "rendered_prompts": rendered_prompts,
        },
    )
    write_lrfd(records, meta, out_path)
    return summary

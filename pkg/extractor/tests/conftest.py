"""Shared fixture: a tiny local causal LM (GPT-2 architecture, random
weights, <100M parameters) with a word-level tokenizer built in-process.
The hub is not reachable from the test environment, so the model lives
at a local path; extraction treats paths and hub names identically."""

import json
import os

import pytest
import torch

os.environ.setdefault("HF_HUB_DISABLE_PROGRESS_BARS", "1")
os.environ.setdefault("TRANSFORMERS_VERBOSITY", "error")

VOCAB = {"<pad>": 0, "<eos>": 1, "a": 2, "b": 3, "solve": 4, "count": 5}
NUM_LAYERS = 5
HIDDEN = 32


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    from tokenizers import Tokenizer, models, pre_tokenizers
    from transformers import GPT2Config, GPT2LMHeadModel, PreTrainedTokenizerFast

    path = tmp_path_factory.mktemp("tiny-causal-lm")
    tok = Tokenizer(models.WordLevel(VOCAB, unk_token="<pad>"))
    tok.pre_tokenizer = pre_tokenizers.Whitespace()
    PreTrainedTokenizerFast(
        tokenizer_object=tok, pad_token="<pad>", eos_token="<eos>", unk_token="<pad>"
    ).save_pretrained(path)
    config = GPT2Config(
        vocab_size=len(VOCAB),
        n_positions=128,
        n_embd=HIDDEN,
        n_layer=NUM_LAYERS,
        n_head=2,
        bos_token_id=1,
        eos_token_id=1,
        pad_token_id=0,
    )
    torch.manual_seed(3)
    model = GPT2LMHeadModel(config)
    assert sum(p.numel() for p in model.parameters()) < 100_000_000
    model.save_pretrained(path)
    return str(path)


@pytest.fixture(scope="session")
def prompts_path(tiny_model_dir, tmp_path_factory):
    """Two prompts whose references are the model's own greedy next token,
    so temperature sampling produces a natural mix of 0/1 labels."""
    from transformers import AutoModelForCausalLM, AutoTokenizer

    tokenizer = AutoTokenizer.from_pretrained(tiny_model_dir)
    model = AutoModelForCausalLM.from_pretrained(tiny_model_dir)
    path = tmp_path_factory.mktemp("prompts") / "prompts.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        for pid, instruction in ((1, "solve a b"), (2, "count b a")):
            ids = tokenizer(instruction, return_tensors="pt").input_ids
            with torch.no_grad():
                logits = model(ids).logits[0, -1]
            reference = tokenizer.decode([int(logits.argmax())], skip_special_tokens=True)
            fh.write(
                json.dumps({"id": pid, "instruction": instruction, "reference": reference}) + "\n"
            )
    return str(path)

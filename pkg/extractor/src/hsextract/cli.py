"""Command line for the feature extractor."""

from __future__ import annotations

import argparse
import sys

from .extract import ExtractionConfig, extract, read_prompts


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hsrank-extract",
        description="Sample candidate responses from a causal LM, capture the "
        "selected layer's final-token hidden states, label each response, and "
        "write an LRFD feature dataset.",
    )
    parser.add_argument("--model", required=True, help="local path or hub name")
    parser.add_argument("--prompts", required=True, help="JSONL of id/instruction/reference")
    parser.add_argument("--out", required=True, help="output .lrfd path")
    parser.add_argument("--layer-frac", type=float, default=0.6, dest="layer_fraction")
    parser.add_argument("--layer-index", type=int, default=None)
    parser.add_argument("--samples", type=int, default=100)
    parser.add_argument("--temperature", type=float, default=1.5)
    parser.add_argument("--max-new-tokens", type=int, default=1024)
    parser.add_argument("--labeler", default="boxed",
                        choices=("boxed", "exact", "function_call", "code"))
    parser.add_argument("--template", default="plain", choices=("plain", "math"))
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--allow-code-exec", action="store_true",
                        help="enable the code labeler (runs generated code)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    config = ExtractionConfig(
        model=args.model,
        layer_fraction=args.layer_fraction,
        layer_index=args.layer_index,
        temperature=args.temperature,
        max_new_tokens=args.max_new_tokens,
        num_samples=args.samples,
        template=args.template,
        labeler=args.labeler,
        seed=args.seed,
        allow_code_execution=args.allow_code_exec,
    )
    try:
        prompts = read_prompts(args.prompts)
        summary = extract(config, prompts, args.out)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rate = summary.positive_labels / summary.total_labels if summary.total_labels else 0.0
    print(
        f"exported {summary.exported}/{summary.prompts} prompts to {args.out} "
        f"(d_model={summary.d_model}, layer {summary.layer_index} of fraction "
        f"{summary.layer_fraction:.2f}, positive rate {rate:.3f}, "
        f"skipped samples {summary.skipped_samples}, dropped prompts {summary.dropped_prompts})"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())

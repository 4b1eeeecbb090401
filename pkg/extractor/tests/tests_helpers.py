"""Helpers for the extraction tests."""


from hsextract import ExtractionConfig, extract, read_prompts


def first_mixed_label_extraction(model_dir: str, prompts_path: str, tmp_path) -> str:
    """Run 2-prompt x 4-sample extractions over a few seeds and return the
    first dataset where every query carries both label values (a random
    tiny model needs a lucky-but-common draw for that; the search is
    deterministic, so the chosen dataset is reproducible)."""
    import hsrank

    for seed in range(15):
        out = str(tmp_path / f"mixed-{seed}.lrfd")
        config = ExtractionConfig(
            model=model_dir,
            num_samples=4,
            max_new_tokens=1,
            temperature=1.5,
            labeler="exact",
            seed=seed,
        )
        extract(config, read_prompts(prompts_path), out)
        records, _ = hsrank.read_dataset(out)
        if all(
            r.response_labels.min() == 0.0 and r.response_labels.max() == 1.0 for r in records
        ):
            return out
    raise AssertionError("no seed in range produced mixed labels for every query")

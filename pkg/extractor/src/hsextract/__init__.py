"""Feature extraction: from a causal LM to LRFD ranker datasets."""

__version__ = "0.1.0"

from .extract import (
    ExtractionConfig,
    ExtractionSummary,
    PromptSpec,
    extract,
    read_prompts,
    resolve_layer,
)
from .labelers import (
    extract_boxed,
    get_labeler,
    label_boxed_match,
    label_code_execution,
    label_exact_match,
    label_function_call,
)
from .lrfd import ExportMeta, ExportRecord, write_lrfd
from .templates import TEMPLATES, render_prompt

"""Prompt templates, rendered through the model's chat template when one
exists (the rendered text is recorded for reproducibility)."""

from __future__ import annotations

MATH_SYSTEM = "You are a math expert."
MATH_USER = (
    'Please solve the given math problem step by step and present the answer '
    'in the following format: "\\boxed{X}", where X is the answer.\n\n{question}'
)

CODE_SYSTEM = "You are an expert Python programmer."

TEMPLATES = {
    "plain": {"system": None, "user": "{question}"},
    "math": {"system": MATH_SYSTEM, "user": MATH_USER},
}


def render_prompt(template_name: str, instruction: str, tokenizer) -> str:
    """Fill the template and wrap it in the tokenizer's chat template when
    the model defines one; otherwise join system and user text plainly."""
    try:
        template = TEMPLATES[template_name]
    except KeyError:
        raise ValueError(f"unknown template {template_name!r}; choose from {sorted(TEMPLATES)}")
    user_text = template["user"].format(question=instruction)
    system_text = template["system"]
    if getattr(tokenizer, "chat_template", None):
        messages = []
        if system_text:
            messages.append({"role": "system", "content": system_text})
        messages.append({"role": "user", "content": user_text})
        return tokenizer.apply_chat_template(
            messages, tokenize=False, add_generation_prompt=True
        )
    if system_text:
        return f"{system_text}\n\n{user_text}"
    return user_text

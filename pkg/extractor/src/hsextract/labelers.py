"""Response labelers: pluggable checkers that map text to a 0/1 label.

The default checkers are pure string matching.  Code execution and
function-call checking exist as opt-in plug-ins; executing generated
code runs arbitrary programs, so the code labeler refuses to run unless
explicitly enabled.
"""

from __future__ import annotations

import json
import re
import subprocess
import sys


def normalize_whitespace(text: str) -> str:
    """Trim and collapse runs of whitespace; the only normalization used."""
    return " ".join(text.split())


def extract_boxed(text: str) -> str | None:
    r"""The content of the last complete ``\boxed{...}`` span, braces balanced."""
    marker = r"\boxed{"
    result = None
    start = text.find(marker)
    while start != -1:
        depth = 1
        i = start + len(marker)
        while i < len(text) and depth > 0:
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
            i += 1
        if depth == 0:
            result = text[start + len(marker) : i - 1]
        start = text.find(marker, start + 1)
    return result


def label_boxed_match(response: str, reference: str) -> int:
    r"""1 iff the last ``\boxed{...}`` span equals the reference exactly.

    Whitespace is normalized on both sides; a response with no
    extractable span is incorrect by definition.
    """
    if not reference:
        raise ValueError("reference answer must be non-empty")
    extracted = extract_boxed(response)
    if extracted is None:
        return 0
    return int(normalize_whitespace(extracted) == normalize_whitespace(reference))


def label_exact_match(response: str, reference: str) -> int:
    """1 iff the whole response equals the reference after whitespace
    normalization (case-sensitive)."""
    return int(normalize_whitespace(response) == normalize_whitespace(reference))


_CODE_FENCE = re.compile(r"```(?:python)?\n(.*?)```", re.DOTALL)
_CODE_MARKERS = re.compile(r"#START OF CODE\n(.*?)#END OF CODE", re.DOTALL)


def extract_code(response: str) -> str | None:
    """Code between START/END markers, or the first fenced block."""
    for pattern in (_CODE_MARKERS, _CODE_FENCE):
        match = pattern.search(response)
        if match:
            return match.group(1)
    return None


def label_code_execution(
    response: str, reference: str, *, enabled: bool = False, timeout: float = 10.0
) -> int:
    """1 iff the extracted code passes every test statement in ``reference``.

    ``reference`` is a newline-separated list of assert statements.
    Refuses to run unless ``enabled`` is set: this executes generated
    code in a subprocess with no sandboxing beyond a timeout.
    """
    if not enabled:
        raise RuntimeError(
            "code execution labeling is disabled; pass enabled=True only in an "
            "environment where running generated code is acceptable"
        )
    code = extract_code(response)
    if code is None:
        return 0
    program = code + "\n\n" + reference + "\n"
    try:
        proc = subprocess.run(
            [sys.executable, "-c", program],
            capture_output=True,
            timeout=timeout,
        )
    except subprocess.TimeoutExpired:
        return 0
    return int(proc.returncode == 0)


def _normalize_call(call) -> tuple:
    if not isinstance(call, dict):
        raise ValueError("function call must be an object")
    name = call.get("name")
    arguments = call.get("arguments", {})
    return (str(name), json.dumps(arguments, sort_keys=True))


def label_function_call(response: str, reference: str) -> int:
    """1 iff the response's function calls match the reference exactly.

    Both sides are JSON arrays of ``{"name": ..., "arguments": {...}}``;
    the response may wrap its array in prose.  Order matters.
    """
    match = re.search(r"\[.*\]", response, re.DOTALL)
    if match is None:
        return 0
    try:
        calls = json.loads(match.group(0))
        expected = json.loads(reference)
        return int([_normalize_call(c) for c in calls] == [_normalize_call(c) for c in expected])
    except (json.JSONDecodeError, ValueError):
        return 0


LABELERS = {
    "boxed": label_boxed_match,
    "exact": label_exact_match,
    "function_call": label_function_call,
}


def get_labeler(name: str, allow_code_execution: bool = False):
    if name == "code":
        if not allow_code_execution:
            raise RuntimeError(
                "the 'code' labeler executes generated code; pass "
                "--allow-code-exec to acknowledge the risk"
            )
        return lambda response, reference: label_code_execution(
            response, reference, enabled=True
        )
    try:
        return LABELERS[name]
    except KeyError:
        raise ValueError(f"unknown labeler {name!r}; choose from {sorted(LABELERS) + ['code']}")

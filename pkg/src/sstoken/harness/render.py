"""Token-selection visualization.

Marker A (blue) marks a selected response token that the pure-REL (gamma=1)
mask also selects. Marker B (orange) marks an attention-dominant token:
selected by the fused score but not by the pure-REL mask. Unselected
response tokens and the prompt are left plain. The text form writes A tokens
as ``[x]`` and B tokens as ``{x}``.
"""

from __future__ import annotations

import html

import numpy as np

from ..corpus import TokenizedSample, token_repr
from ..selection import SelectionMask, TokenScores

_STYLE = """body { font-family: monospace; white-space: pre-wrap; }
.prompt { color: #777; }
.a { background: #9cc3ff; }
.b { background: #ffb65c; }
.legend span { padding: 0 4px; margin-right: 8px; }"""


def marker_classes(mask: SelectionMask, rel_only: SelectionMask) -> list[str]:
    """Per response token: "A", "B", or "" (not selected)."""
    if mask.bits.size != rel_only.bits.size:
        raise ValueError("masks cover different samples")
    out = []
    for sel, rel in zip(mask.bits, rel_only.bits):
        out.append("" if not sel else ("A" if rel else "B"))
    return out


def render_text(sample: TokenizedSample, mask: SelectionMask, rel_only: SelectionMask) -> str:
    prompt = "".join(token_repr(t) for t in sample.ids[: sample.prompt_len])
    parts = []
    for tok, m in zip(sample.ids[sample.prompt_len :], marker_classes(mask, rel_only)):
        ch = token_repr(tok)
        parts.append(f"[{ch}]" if m == "A" else f"{{{ch}}}" if m == "B" else ch)
    return prompt + "".join(parts)


def render_selection(
    sample: TokenizedSample,
    scores: TokenScores | None,
    mask: SelectionMask,
    rel_only: SelectionMask,
    fmt: str = "html",
    title: str = "token selection",
) -> str:
    """Render one sample's selection as a standalone HTML page or plain text."""
    if fmt == "text":
        return render_text(sample, mask, rel_only)
    classes = marker_classes(mask, rel_only)
    fused = scores.fused if scores is not None else np.full(mask.bits.size, np.nan)
    spans = [f'<span class="prompt">{html.escape(token_repr(t))}</span>' for t in sample.ids[: sample.prompt_len]]
    for i, (tok, cls) in enumerate(zip(sample.ids[sample.prompt_len :], classes)):
        text = html.escape(token_repr(tok))
        tip = f"score={fused[i]:.4f}"
        if cls:
            spans.append(f'<span class="{cls.lower()}" title="{tip}">{text}</span>')
        else:
            spans.append(f'<span title="{tip}">{text}</span>')
    n_a, n_b = classes.count("A"), classes.count("B")
    return (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>{html.escape(title)}</title><style>{_STYLE}</style></head><body>\n"
        f'<div class="legend"><span class="a">selected ({n_a})</span>'
        f'<span class="b">attention-dominant ({n_b})</span></div>\n'
        f"<p>{''.join(spans)}</p>\n</body></html>\n"
    )

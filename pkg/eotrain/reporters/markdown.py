# eotrain/reporters/markdown.py

"""Markdown renderings of plan reports and swap-mode sweeps."""

from typing import Any, Dict, Sequence

from jinja2 import Environment, StrictUndefined

from eotrain.core.models import SweepRow
from eotrain.core.utils import format_bytes

_env = Environment(undefined=StrictUndefined, trim_blocks=True, lstrip_blocks=True)
_env.filters["bytes"] = format_bytes

PLAN_TEMPLATE = _env.from_string(
    """\
# Memory plan: {{ model }}

| | bytes | |
|---|---:|---|
| pool | {{ pool_bytes }} | {{ pool_bytes | bytes }} |
| external | {{ external_bytes }} | {{ external_bytes | bytes }} |
| total | {{ total_bytes }} | {{ total_bytes | bytes }} |
| peak live lower bound | {{ peak_live_lower_bound }} | {{ peak_live_lower_bound | bytes }} |

Merging: {{ "on" if merge else "off" }}. EOs per iteration: {{ eo_max }}.
{% if clip_eo is not none %}
Gradient clipping runs at EO {{ clip_eo }}.
{% endif %}

## Execution orders

| EO | layer | procedure |
|---:|---|---|
{% for step in steps %}
| {{ step.eo }} | {{ step.layer }} | {{ step.proc }} |
{% endfor %}

## Tensors

| name | dim | bytes | spatial | EOs | group | offset |
|---|---|---:|---|---|---|---:|
{% for t in tensors %}
| {{ t.name }} | {{ t.dim }} | {{ t.bytes }} | {{ t.spatial }} | {{ t.eos | join(",") }} \
| {{ t.group }} | {{ "ext" if t.offset is none else t.offset }} |
{% endfor %}
"""
)

SWEEP_TEMPLATE = _env.from_string(
    """\
# Swap modes: {{ model }}

| mode | lookahead | peak resident | swap in | swap out | stalls | wall (s) |
|---|---:|---:|---:|---:|---:|---:|
{% for r in rows %}
| {{ r.mode }} | {{ r.lookahead if r.lookahead is not none else "" }} \
| {{ r.peak_resident_bytes | bytes }} | {{ r.swap_in_count }} | {{ r.swap_out_count }} \
| {{ r.stall_count }} \
| {{ "%.3f" | format(r.wall_seconds) if r.wall_seconds is not none else "" }} |
{% endfor %}
"""
)


def render_plan_markdown(report: Dict[str, Any]) -> str:
    """Render the dict produced by `plan_report` as markdown."""
    return PLAN_TEMPLATE.render(**report)


def render_sweep_markdown(model: str, rows: Sequence[SweepRow]) -> str:
    return SWEEP_TEMPLATE.render(model=model, rows=rows)

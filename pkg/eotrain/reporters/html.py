# eotrain/reporters/html.py

"""
HTML plan report

Same content as the markdown report plus two charts rendered with matplotlib and
embedded as base64 PNG: live bytes per EO against the pool size, and the offset
layout (one bar per tensor spanning its lifetime at its arena offset).
"""

import base64
import io
from typing import Any, Dict, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from jinja2 import Environment, select_autoescape  # noqa: E402

from eotrain.core.utils import format_bytes  # noqa: E402

_env = Environment(autoescape=select_autoescape(default_for_string=True))
_env.filters["bytes"] = format_bytes

HTML_TEMPLATE = _env.from_string(
    """<!DOCTYPE html>
<html>
<head>
<meta charset="utf-8">
<title>Memory plan: {{ model }}</title>
<style>
body { font-family: sans-serif; margin: 2em; }
table { border-collapse: collapse; }
td, th { border: 1px solid #ccc; padding: 2px 8px; text-align: left; }
td.num { text-align: right; }
</style>
</head>
<body>
<h1>Memory plan: {{ model }}</h1>
<table>
<tr><th>pool</th><td class="num">{{ pool_bytes }}</td><td>{{ pool_bytes | bytes }}</td></tr>
<tr><th>external</th><td class="num">{{ external_bytes }}</td>
<td>{{ external_bytes | bytes }}</td></tr>
<tr><th>total</th><td class="num">{{ total_bytes }}</td><td>{{ total_bytes | bytes }}</td></tr>
<tr><th>peak live lower bound</th><td class="num">{{ peak_live_lower_bound }}</td>
<td>{{ peak_live_lower_bound | bytes }}</td></tr>
</table>
<h2>Live bytes per EO</h2>
<img alt="live bytes per EO" src="data:image/png;base64,{{ live_chart }}">
<h2>Offset layout</h2>
<img alt="offset layout" src="data:image/png;base64,{{ layout_chart }}">
<h2>Tensors</h2>
<table>
<tr><th>name</th><th>dim</th><th>bytes</th><th>spatial</th><th>EOs</th><th>group</th>
<th>offset</th></tr>
{% for t in tensors %}
<tr><td>{{ t.name }}</td><td>{{ t.dim }}</td><td class="num">{{ t.bytes }}</td>
<td>{{ t.spatial }}</td><td>{{ t.eos | join(",") }}</td><td>{{ t.group }}</td>
<td class="num">{{ "ext" if t.offset is none else t.offset }}</td></tr>
{% endfor %}
</table>
</body>
</html>
"""
)


def _png(fig: "plt.Figure") -> str:
    buffer = io.BytesIO()
    fig.savefig(buffer, format="png", dpi=100, bbox_inches="tight")
    plt.close(fig)
    return base64.b64encode(buffer.getvalue()).decode("ascii")


def live_bytes_chart(report: Dict[str, Any]) -> str:
    """Base64 PNG of live bytes per EO with the pool size as a reference line."""
    live = report["live_bytes_per_eo"]
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.step(range(len(live)), live, where="mid", label="live")
    ax.axhline(report["pool_bytes"], color="tab:red", linestyle="--", label="pool")
    ax.set_xlabel("EO")
    ax.set_ylabel("bytes")
    ax.legend(loc="upper right")
    return _png(fig)


def layout_chart(report: Dict[str, Any]) -> str:
    """Base64 PNG of storage groups as (lifetime x offset) rectangles."""
    spans: Dict[str, Tuple[int, int]] = {}
    for t in report["tensors"]:
        if t["offset"] is None:
            continue
        lo, hi = t["lifetime"]
        previous = spans.get(t["group"], (lo, hi))
        spans[t["group"]] = (min(lo, previous[0]), max(hi, previous[1]))

    fig, ax = plt.subplots(figsize=(8, 4))
    for group, (lo, hi) in spans.items():
        assignment = report["assignments"][group]
        ax.broken_barh(
            [(lo, hi - lo + 1)], (assignment["offset"], assignment["size"]), alpha=0.6
        )
        ax.text(lo, assignment["offset"], group, fontsize=6, va="bottom")
    ax.set_xlim(0, max(report["eo_max"], 1))
    ax.set_ylim(0, max(report["pool_bytes"], 1))
    ax.set_xlabel("EO")
    ax.set_ylabel("offset (bytes)")
    return _png(fig)


def render_plan_html(report: Dict[str, Any]) -> str:
    """Render the dict produced by `plan_report` as a standalone HTML page."""
    return HTML_TEMPLATE.render(
        live_chart=live_bytes_chart(report), layout_chart=layout_chart(report), **report
    )

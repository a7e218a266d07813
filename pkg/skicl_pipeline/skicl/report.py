"""
Report module for SKI-CL runs.
Generates a self-contained HTML summary of a continual training run.
"""

import logging
from html import escape
from datetime import datetime
from typing import Any, Dict, List, Optional

import pandas as pd

logger = logging.getLogger(__name__)


# =============================================================================
# HTML TEMPLATE
# =============================================================================

HTML_TEMPLATE = """<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>SKI-CL run report</title>
<style>
  body {{ font: 14px/1.5 system-ui, sans-serif; color: #1f2933; margin: 2rem auto; max-width: 68rem; padding: 0 1rem; }}
  h1 {{ font-size: 1.6rem; margin-bottom: 0.25rem; }}
  h2 {{ font-size: 1.15rem; margin-top: 2rem; border-bottom: 1px solid #cbd2d9; }}
  h3 {{ font-size: 1rem; color: #3e4c59; }}
  .run-info {{ color: #616e7c; font-size: 0.85rem; }}
  .stats-grid {{ display: flex; flex-wrap: wrap; gap: 0.75rem; }}
  .stat-card {{ border: 1px solid #cbd2d9; border-radius: 6px; padding: 0.75rem 1.25rem; min-width: 12rem; }}
  .stat-value {{ font-size: 1.5rem; font-weight: 600; font-variant-numeric: tabular-nums; }}
  .stat-label {{ font-size: 0.8rem; color: #616e7c; }}
  .data-table {{ border-collapse: collapse; font-variant-numeric: tabular-nums; }}
  .data-table th, .data-table td {{ border: 1px solid #e4e7eb; padding: 0.25rem 0.6rem; text-align: right; }}
  .data-table th {{ background: #f5f7fa; }}
  .warning {{ background: #fffbea; border-left: 3px solid #f0b429; padding: 0.4rem 0.8rem; margin: 0.3rem 0; }}
</style>
</head>
<body>
<h1>SKI-CL continual forecasting run</h1>
<p class="run-info">
  {timestamp} &middot; {output_dir}<br>
  selector={selector} &middot; lambda={lam} &middot; alpha={alpha}
</p>
{content}
</body>
</html>
"""


def df_to_html(df: pd.DataFrame, max_rows: int = 30, index: bool = False) -> str:
    """Convert DataFrame to an HTML table with 4-decimal floats."""
    if df.empty:
        return "<p><em>No data</em></p>"
    display_df = df.head(max_rows).copy()
    for col in display_df.select_dtypes(include=["float64", "float32"]).columns:
        display_df[col] = display_df[col].apply(lambda x: f"{x:.4f}" if pd.notna(x) else "-")
    html = display_df.to_html(index=index, classes="data-table", escape=True)
    if len(df) > max_rows:
        html += f"<p><em>Showing the first {max_rows} of {len(df)} rows</em></p>"
    return html


def generate_headline(summary: Dict[str, Dict], metric: str = "mae") -> str:
    if not summary:
        return ""
    last_regime = list(summary)[-1]
    entry = summary[last_regime].get(metric, {})
    cards = []
    for label, key in (("AP", "AP"), ("AF", "AF")):
        value = entry.get(key)
        shown = "n/a" if value is None else f"{value:.4f}"
        cards.append(
            f'<div class="stat-card"><div class="stat-value">{shown}</div>'
            f'<div class="stat-label">{label} ({metric.upper()}) after {last_regime}</div></div>'
        )
    return f'<h2>Headline</h2><div class="stats-grid">{"".join(cards)}</div>'


def summary_frame(summary: Dict[str, Dict]) -> pd.DataFrame:
    """Flatten {regime: {metric: {AP, AF}}} into rows."""
    rows = []
    for regime_id, metrics in summary.items():
        for metric, values in metrics.items():
            rows.append({"regime": regime_id, "metric": metric, "AP": values["AP"], "AF": values["AF"]})
    return pd.DataFrame(rows)


def generate_report(
    summary: Dict[str, Dict],
    matrices: Dict[str, pd.DataFrame],
    history: pd.DataFrame,
    warnings: List[str],
    output_dir: str,
    settings: Optional[Dict[str, Any]] = None,
) -> str:
    """
    Generate the HTML run report.

    Args:
        summary: AP/AF per regime and metric
        matrices: metric -> performance matrix frame
        history: Per-epoch training log
        warnings: Warning messages collected during the run
        output_dir: Run directory (for display)
        settings: selector / lambda / alpha shown in the header

    Returns:
        Complete HTML report string
    """
    settings = settings or {}
    content = generate_headline(summary)

    content += "<h2>AP / AF</h2>" + df_to_html(summary_frame(summary), max_rows=200)

    content += "<h2>Performance matrices</h2>"
    for metric, frame in matrices.items():
        content += f"<h3>{metric}</h3>" + df_to_html(frame, index=True)

    if not history.empty:
        last_epochs = history.groupby("regime_id", sort=False).tail(1)
        content += "<h2>Training (final epoch per regime)</h2>" + df_to_html(last_epochs)

    if warnings:
        content += "<h2>Warnings</h2>" + "".join(f'<div class="warning">{escape(w)}</div>' for w in warnings)

    html = HTML_TEMPLATE.format(
        timestamp=datetime.now().strftime("%Y-%m-%d %H:%M:%S"),
        output_dir=output_dir,
        selector=settings.get("selector", "-"),
        lam=settings.get("lambda", "-"),
        alpha=settings.get("alpha", "-"),
        content=content,
    )
    logger.info("Generated HTML report")
    return html

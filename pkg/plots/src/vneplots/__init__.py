"""Figure rendering for placement-simulation logs.

Consumes only the engine's documented file formats (metrics.csv,
events.jsonl, summary.json, curves.csv, probability-dump JSON); never
imports engine internals.
"""

from .figures import (FigureSpec, plot_curves, plot_heatmap, plot_sweep,
                      plot_timeseries)
from .io import (METRICS_COLUMNS, SUMMARY_SCHEMA, SchemaMismatch,
                 load_curves, load_events, load_metrics,
                 load_probability_dump, load_summary, moving_average)

__version__ = "0.1.0"

__all__ = [
    "FigureSpec", "plot_timeseries", "plot_sweep", "plot_heatmap",
    "plot_curves", "load_metrics", "load_events", "load_summary",
    "load_curves", "load_probability_dump", "moving_average",
    "SchemaMismatch", "METRICS_COLUMNS", "SUMMARY_SCHEMA", "__version__",
]

"""Summary-figure renderer for single-photon-source comparison results."""

from .render import FigureSpec, MissingCase, SchemaMismatch, load_series, render_fig4

__all__ = ["FigureSpec", "MissingCase", "SchemaMismatch", "load_series", "render_fig4"]

__version__ = "0.1.0"

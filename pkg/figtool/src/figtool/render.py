"""Render indistinguishability vs pump decay rate from a results.csv.

The tool consumes only the documented CSV schema

    case,gamma2,lambda,p_c,p_emit,n_traj,mc_stderr,m_tau,G,m,C,seed

and draws one error-bar series per case plus an inset with the relative
improvement of the feed-forward case over the uncorrected dephasing case.
The inset is recomputed here from the two lambda series so the CSV stays the
single source of truth.  Rendering is deterministic for a fixed input file.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

REQUIRED_COLUMNS = (
    "case",
    "gamma2",
    "lambda",
    "p_c",
    "p_emit",
    "n_traj",
    "mc_stderr",
    "m_tau",
    "G",
    "m",
    "C",
    "seed",
)

CASE_NO_DEPHASING = "no-dephasing"
CASE_DEPHASING_NO_FF = "dephasing-no-ff"
CASE_DEPHASING_FF = "dephasing-ff"

REQUIRED_CASES = (CASE_NO_DEPHASING, CASE_DEPHASING_NO_FF, CASE_DEPHASING_FF)

DEFAULT_STYLES = {
    CASE_NO_DEPHASING: {"color": "tab:green", "marker": "o", "label": "no dephasing"},
    CASE_DEPHASING_NO_FF: {"color": "tab:red", "marker": "s", "label": "dephasing, no feed-forward"},
    CASE_DEPHASING_FF: {"color": "tab:blue", "marker": "^", "label": "dephasing + feed-forward"},
}


class SchemaMismatch(Exception):
    """The CSV does not match the documented results schema."""


class MissingCase(Exception):
    """A case required for the figure is absent from the CSV."""


@dataclass
class FigureSpec:
    csv_path: str
    out_path: str
    no_inset: bool = False
    xlabel: str = "pump decay rate $\\Gamma_2$ (units of $\\kappa$)"
    ylabel: str = "indistinguishability $\\Lambda$"
    styles: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_STYLES.items()})


def load_series(csv_path) -> dict:
    """Parse the CSV into {case: (gamma2[], lambda[], stderr[])}, sorted by gamma2."""
    try:
        with open(csv_path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = reader.fieldnames or []
            missing = [c for c in REQUIRED_COLUMNS if c not in header]
            if missing:
                raise SchemaMismatch(f"missing column(s): {', '.join(missing)}")
            rows = list(reader)
    except OSError as exc:
        raise SchemaMismatch(f"cannot read {csv_path}: {exc}") from exc
    series: dict = {}
    for lineno, row in enumerate(rows, start=2):
        try:
            point = (float(row["gamma2"]), float(row["lambda"]), float(row["mc_stderr"]))
        except (TypeError, ValueError) as exc:
            raise SchemaMismatch(f"line {lineno}: non-numeric gamma2/lambda/mc_stderr") from exc
        series.setdefault(row["case"], []).append(point)
    out = {}
    for case, points in series.items():
        points.sort()
        g2, lam, err = zip(*points)
        out[case] = (list(g2), list(lam), [0.0 if math.isnan(e) else e for e in err])
    return out


def _require_common_grid(series: dict) -> list:
    for case in REQUIRED_CASES:
        if case not in series:
            raise MissingCase(f"case {case!r} is absent from the CSV")
    grids = {case: series[case][0] for case in REQUIRED_CASES}
    reference = grids[REQUIRED_CASES[0]]
    for case, grid in grids.items():
        if grid != reference:
            raise SchemaMismatch(
                f"gamma2 grids differ between cases ({case!r} vs {REQUIRED_CASES[0]!r})"
            )
    return reference


def render_fig4(spec: FigureSpec):
    """Draw the figure, write it to spec.out_path and return the Figure."""
    series = load_series(spec.csv_path)
    grid = _require_common_grid(series)

    fig, ax = plt.subplots(figsize=(6.4, 4.8))
    for case in REQUIRED_CASES:
        g2, lam, err = series[case]
        style = spec.styles.get(case, {})
        ax.errorbar(g2, lam, yerr=err, capsize=2.5, linewidth=1.3, **style)
    ax.set_xlabel(spec.xlabel)
    ax.set_ylabel(spec.ylabel)
    ax.set_ylim(0.45, 1.02)
    ax.grid(True, alpha=0.3)
    ax.legend(loc="center right", fontsize=9)

    if not spec.no_inset:
        base = series[CASE_DEPHASING_NO_FF][1]
        ff = series[CASE_DEPHASING_FF][1]
        improvement = [100.0 * (f - b) / b for f, b in zip(ff, base)]
        inset = ax.inset_axes([0.58, 0.55, 0.38, 0.35])
        inset.plot(grid, improvement, "k.-", linewidth=1.0, markersize=4)
        inset.axhline(0.0, color="gray", linewidth=0.6)
        inset.set_xlabel("$\\Gamma_2$", fontsize=8)
        inset.set_ylabel("improvement (%)", fontsize=8)
        inset.tick_params(labelsize=7)

    fig.tight_layout()
    fig.savefig(spec.out_path, dpi=150)
    return fig

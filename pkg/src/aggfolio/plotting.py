"""Report figures rendered to PNG files with the Agg backend.

Figures are built on bare ``Figure`` objects rather than pyplot, so no
figure registry or interactive backend is involved. The style is applied
through a temporary rc context, so render from one thread at a time.
"""

from __future__ import annotations

import functools
from pathlib import Path

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

STYLE = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
}
# No software/version stamp, so repeated runs write identical bytes.
_PNG_METADATA = {"Software": None}


def _styled(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        with matplotlib.rc_context(STYLE):
            return fn(*args, **kwargs)

    return wrapper


def _new(width=7.0, height=3.6):
    fig = Figure(figsize=(width, height), dpi=120)
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_PNG_METADATA)
    return path


def _year_ticks(ax, months):
    months = np.asarray(months)
    if months.size == 0:
        return
    starts = np.flatnonzero(months % 12 == 0)
    step = max(1, len(starts) // 8)
    ticks = starts[::step]
    ax.set_xticks(ticks)
    ax.set_xticklabels([str(months[i] // 12) for i in ticks])


# Fixed styles for the report strategies; experts cycle through a muted map.
_FIXED = {
    "Target": {"color": "black", "lw": 1.0, "ls": "--"},
    "PtfUNI": {"color": "tab:blue", "lw": 1.8},
    "PtfBOA": {"color": "tab:red", "lw": 1.8},
}


def _legend_right(ax, **kwargs):
    ax.legend(loc="upper left", bbox_to_anchor=(1.01, 1.0), frameon=False, **kwargs)


@_styled
def cumulative_returns(path, months, series: dict) -> Path:
    """Cumulative summed monthly returns; target and mixtures drawn on top."""
    fig = _new(width=8.0)
    ax = fig.add_subplot()
    x = np.arange(len(months))
    experts = [n for n in series if n not in _FIXED]
    palette = matplotlib.colormaps["tab20b"](np.linspace(0.0, 1.0, max(len(experts), 1)))
    for i, name in enumerate(experts):
        ax.plot(x, np.cumsum(series[name]), lw=0.8, alpha=0.8, color=palette[i], label=name)
    for name, style in _FIXED.items():
        if name in series:
            ax.plot(x, np.cumsum(series[name]), label=name, zorder=3, **style)
    ax.axhline(0.0, color="0.6", lw=0.5)
    ax.set_ylabel("cumulative return")
    _year_ticks(ax, months)
    _legend_right(ax)
    return _save(fig, path)


@_styled
def weight_paths(path, months, names, long_weights, short_weights, title="") -> Path:
    """Stacked mixture weights of the long and short aggregations."""
    fig = _new(width=8.0, height=4.8)
    x = np.arange(len(months))
    for i, (side, w) in enumerate((("long", long_weights), ("short", short_weights))):
        ax = fig.add_subplot(2, 1, i + 1)
        ax.stackplot(x, np.asarray(w).T, labels=list(names))
        ax.set_ylim(0.0, 1.0)
        ax.set_xlim(0, max(len(x) - 1, 1))
        ax.set_ylabel(f"{side} weight")
        _year_ticks(ax, months)
        if i == 0:
            ax.set_title(title)
            _legend_right(ax)
    return _save(fig, path)


@_styled
def rank_heatmap(path, counts) -> Path:
    """Strategy by rank counts from :func:`aggfolio.metrics.rank_distribution`."""
    fig = _new(height=0.35 * len(counts) + 1.2)
    ax = fig.add_subplot()
    im = ax.imshow(counts.to_numpy(), cmap="Blues", aspect="auto")
    ax.set_yticks(range(len(counts)))
    ax.set_yticklabels(counts.index.tolist())
    ax.set_xticks(range(counts.shape[1]))
    ax.set_xticklabels([str(c) for c in counts.columns])
    ax.set_xlabel("annual Sharpe rank")
    fig.colorbar(im, ax=ax, label="years")
    return _save(fig, path)


@_styled
def importance_bars(path, table) -> Path:
    """One panel of signed normalised importance per indicator.

    ``table`` has columns ``expert``, ``indicator`` and ``importance``.
    """
    indicators = list(dict.fromkeys(table["indicator"]))
    fig = _new(width=2.2 * len(indicators) + 1.0, height=0.3 * table["expert"].nunique() + 1.5)
    for i, ind in enumerate(indicators):
        ax = fig.add_subplot(1, len(indicators), i + 1)
        sub = table[table["indicator"] == ind]
        y = np.arange(len(sub))
        vals = sub["importance"].to_numpy(dtype=float)
        ax.barh(y, np.nan_to_num(vals), color=np.where(vals >= 0, "tab:blue", "tab:red"))
        ax.axvline(0.0, color="0.3", lw=0.5)
        ax.set_yticks(y)
        ax.set_yticklabels(sub["expert"].tolist() if i == 0 else [])
        ax.set_title(ind)
    return _save(fig, path)

"""
Plot-ready data for the signal heatmap and the eyeplot.

Rows (AEs) are ordered by the largest scaled Wasserstein-2 distance between
any of their cell posteriors and a point mass at 1, so the AEs whose
posteriors sit furthest from "no signal" come first. Columns (drugs) are
ordered by their number of detected signals. Ties keep table order. The
reference row and column are never plotted.

`render_svg` draws a plain matplotlib version of either plot for quick
checks; renderers that want styling should consume the PlotData JSON.
"""

import io
import logging

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .exceptions import DataError, ModelSpecError  # noqa: E402
from .posterior import detect_signals, posterior_summary, wasserstein_matrix  # noqa: E402

# Standard logger for this module
logger = logging.getLogger(__name__)

PLOT_TYPES = ('heatmap', 'eyeplot')


def _select(names, available, label):
    if names is None:
        return list(range(len(available)))
    unknown = [name for name in names if name not in available]
    if unknown:
        raise DataError(f"unknown {label} name '{unknown[0]}'")
    return [available.index(name) for name in names]


def _stable_descending(indices, scores):
    return sorted(indices, key=lambda index: -scores[index])


def plot_orders(fit, table, E, cutoff=1.001, prob=0.95, ae_names=None, drug_names=None):
    """
    The AE and drug plotting orders as index lists (reference row and column excluded).

    Returns:
        tuple[list[int], list[int], np.ndarray, np.ndarray]: AE order, drug
        order, the detection matrix and the tail-probability matrix.
    """
    detected, tails = detect_signals(fit, table, E, cutoff=cutoff, prob=prob)
    distances = wasserstein_matrix(fit, table, E, lambda_value=1.0, p=2)
    rows = [i for i in _select(ae_names, list(table.ae_names), 'AE') if i != table.reference_row_index]
    cols = [j for j in _select(drug_names, list(table.drug_names), 'drug') if j != table.reference_col_index]
    if not rows or not cols:
        raise DataError("nothing to plot once the reference row and column are excluded")
    row_scores = distances[:, cols].max(axis=1)
    col_scores = detected[rows, :].sum(axis=0)
    return _stable_descending(rows, row_scores), _stable_descending(cols, col_scores), detected, tails


def _clamp(requested, available, label):
    if requested is None:
        return available
    if requested < 1:
        raise ModelSpecError(f"the number of top {label} must be positive, got {requested}")
    if requested > available:
        logger.warning(f"{requested} top {label} requested but only {available} available; showing {available}")
        return available
    return requested


def build_plot_data(fit, table, E, plot_type='heatmap', num_top_AEs=10, num_top_drugs=None, n_threshold=1,
                    log_scale=False, ae_names=None, drug_names=None, cutoff=1.001, prob=0.95, level=0.90,
                    text_shift=None, text_size=None, x_lim_scalar=None):
    """
    Builds the PlotData payload.

    Args:
        plot_type (str): 'heatmap' or 'eyeplot'.
        num_top_AEs (int): AEs to keep from the top of the AE order (clamped with a warning).
        num_top_drugs (int, optional): Drugs to keep from the top of the drug order; default all.
        n_threshold (int): Eyeplot only; cells with N below it are left out.
        log_scale (bool): Eyeplot only; flag for renderers.
        ae_names, drug_names (list[str], optional): Restrict the plot to these AEs / drugs.
        text_shift, text_size, x_lim_scalar: Eyeplot label geometry, passed through untouched.

    Returns:
        dict: Heatmap cells carry N, E and prob_signal; eyeplot cells carry
        N, E and the posterior median with the equi-tailed interval (lo, hi).
    """
    if plot_type not in PLOT_TYPES:
        raise ModelSpecError(f"unknown plot type '{plot_type}'; choose heatmap or eyeplot")
    ae_order, drug_order, _, tails = plot_orders(
        fit, table, E, cutoff=cutoff, prob=prob, ae_names=ae_names, drug_names=drug_names,
    )
    ae_order = ae_order[:_clamp(num_top_AEs, len(ae_order), 'AEs')]
    drug_order = drug_order[:_clamp(num_top_drugs, len(drug_order), 'drugs')]

    counts = table.counts
    expected = E.values
    payload = {
        'type': plot_type,
        'model': fit.model,
        'ae_order': [table.ae_names[i] for i in ae_order],
        'drug_order': [table.drug_names[j] for j in drug_order],
    }
    cells = []
    if plot_type == 'heatmap':
        for i in ae_order:
            for j in drug_order:
                cells.append({
                    'ae': table.ae_names[i], 'drug': table.drug_names[j],
                    'N': int(counts[i, j]), 'E': float(expected[i, j]), 'prob_signal': float(tails[i, j]),
                })
    else:
        summary = posterior_summary(fit, table, E, level=level)
        for i in ae_order:
            for j in drug_order:
                if counts[i, j] < n_threshold:
                    continue
                cells.append({
                    'ae': table.ae_names[i], 'drug': table.drug_names[j],
                    'N': int(counts[i, j]), 'E': float(expected[i, j]),
                    'median': float(summary['median'][i, j]),
                    'lo': float(summary['lower'][i, j]), 'hi': float(summary['upper'][i, j]),
                })
        payload.update({
            'log_scale': bool(log_scale),
            'n_threshold': int(n_threshold),
            'level': float(level),
            'text_shift': text_shift,
            'text_size': text_size,
            'x_lim_scalar': x_lim_scalar,
        })
    payload['cells'] = cells
    return payload


def _heatmap_figure(plot_data):
    aes, drugs = plot_data['ae_order'], plot_data['drug_order']
    matrix = np.full((len(aes), len(drugs)), np.nan)
    for cell in plot_data['cells']:
        matrix[aes.index(cell['ae']), drugs.index(cell['drug'])] = cell['prob_signal']
    fig, ax = plt.subplots(figsize=(1.2 + 0.9 * len(drugs), 1.0 + 0.4 * len(aes)))
    image = ax.imshow(matrix, vmin=0.0, vmax=1.0, cmap='Reds', aspect='auto')
    ax.set_xticks(np.arange(len(drugs)))
    ax.set_xticklabels(drugs, rotation=45, ha='right')
    ax.set_yticks(np.arange(len(aes)))
    ax.set_yticklabels(aes)
    for cell in plot_data['cells']:
        ax.text(drugs.index(cell['drug']), aes.index(cell['ae']),
                f"N={cell['N']}\nE={cell['E']:.3g}\n{cell['prob_signal']:.2f}",
                ha='center', va='center', fontsize=6)
    fig.colorbar(image, ax=ax, label='Pr(signal | data)')
    return fig


def _eyeplot_figure(plot_data):
    cells = plot_data['cells']
    labels = [f"{cell['ae']} / {cell['drug']}" for cell in cells]
    fig, ax = plt.subplots(figsize=(6.0, 1.0 + 0.3 * max(len(cells), 1)))
    for row, cell in enumerate(cells):
        ax.plot([cell['lo'], cell['hi']], [row, row], color='black', linewidth=1.0)
        ax.plot(cell['median'], row, 'o', color='tab:red', markersize=3)
    ax.axvline(1.0, color='grey', linestyle='--', linewidth=0.8)
    ax.set_yticks(np.arange(len(cells)))
    ax.set_yticklabels(labels, fontsize=6)
    ax.invert_yaxis()
    if plot_data.get('log_scale'):
        ax.set_xscale('log')
    ax.set_xlabel('signal strength')
    return fig


def render_svg(plot_data):
    """A minimal static SVG of the heatmap (cell grid) or eyeplot (interval glyphs)."""
    fig = _heatmap_figure(plot_data) if plot_data['type'] == 'heatmap' else _eyeplot_figure(plot_data)
    buffer = io.StringIO()
    with plt.rc_context({'svg.hashsalt': 'srsbayes', 'svg.fonttype': 'none'}):
        fig.savefig(buffer, format='svg', bbox_inches='tight', metadata={'Date': None})
    plt.close(fig)
    return buffer.getvalue()

import json
import matplotlib as mpl
import matplotlib.colors as mcolors
import numpy as np
import pandas as pd

mpl.use('Agg')

import matplotlib.pyplot as plt  # noqa: E402


colors = {
    'green': '#8ECFC9',
    'orange': '#FFBE7A',
    'red': '#FA7F6F',
    'blue': '#82B0D2',
    'purple': '#BEB8DC',
    'beige': '#E7DAD2',
    'gray': '#999999',
    'lightgray': '#E9E9E9',
}


def plot_grid(table: pd.DataFrame, config_file, save_as, title=None):
    """Heat map of a grid table (rows x columns of accuracies in percent).

    Failed cells (NaN) are drawn in the missing color; the per-row maximum is
    written in bold when ``Cell.boldRowMax`` is on.
    """
    with open(config_file, 'r') as fr:
        json_object = json.load(fr)
        json_fig = json_object['Figure']
        json_cell = json_object['Cell']
        json_color = json_object['ColorWeight']

    values = table.to_numpy(dtype=np.float64)
    cmap_colors = [colors[c] for c in json_color['colors']]
    cmap = mcolors.LinearSegmentedColormap.from_list(
        'custom_cmap', list(zip(np.linspace(0, 1, len(cmap_colors)), cmap_colors)))
    cmap.set_bad(colors[json_color['missing']])

    fig, ax = plt.subplots(1, 1, figsize=json_fig['figsize'])
    image = ax.imshow(np.ma.masked_invalid(values), cmap=cmap, aspect='auto')
    fig.colorbar(image, ax=ax, label='accuracy (%)')
    ax.set_xticks(range(values.shape[1]), [str(c) for c in table.columns])
    ax.set_yticks(range(values.shape[0]), [str(r) for r in table.index])
    ax.set_xlabel(table.columns.name or '')
    ax.set_ylabel(table.index.name or '')
    if title:
        ax.set_title(title)

    for i, row in enumerate(values):
        finite = np.isfinite(row)
        best = np.nanmax(row) if finite.any() else None
        for j, v in enumerate(row):
            if not np.isfinite(v):
                continue
            bold = json_cell['boldRowMax'] == 'on' and v == best
            ax.text(j, i, json_cell['format'].format(v), ha='center', va='center',
                    fontsize=json_cell['fontSize'], color=json_cell['fontColor'],
                    fontweight='bold' if bold else 'normal')

    fig.tight_layout()
    fig.savefig(save_as, dpi=json_fig['dpi'])
    plt.close(fig)

"""
Report charts: plotly HTML for ablation sweeps and training history,
matplotlib PNG heatmaps for spatial energy maps.
"""

import logging
import os
from typing import Dict, List, Optional, Sequence

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt
import numpy as np
import plotly.graph_objs as go
from plotly.subplots import make_subplots

logger = logging.getLogger(__name__)

HTML_CONFIG = {'displayModeBar': True, 'responsive': True}


class ReportVisualizer:
    """Writes the chart files that accompany CSV/JSON artifacts."""

    def __init__(self, output_dir: str = 'reports'):
        self.output_dir = output_dir
        os.makedirs(output_dir, exist_ok=True)

    def _write(self, fig: go.Figure, name: str) -> str:
        filename = os.path.join(self.output_dir, name)
        # Fixed div id keeps the HTML stable across reruns
        fig.write_html(
            filename,
            include_plotlyjs='cdn',
            full_html=True,
            config=HTML_CONFIG,
            div_id=os.path.splitext(name)[0],
        )
        logger.info(f"Generated report: {filename}")
        return filename

    def plot_ablation(self, sweep: str, rows: Sequence[Dict]) -> str:
        """
        Grouped bars of mean Rank-1 and mAP per configuration, with std error bars.

        Args:
            sweep: Sweep name, used in the title and file name
            rows: Ablation rows with 'config', and mean/std metric fields

        Returns:
            Path of ``ablation_<sweep>.html``
        """
        labels = [row['config'] for row in rows]
        fig = go.Figure()
        for metric, color in (('rank1', '#3498db'), ('map', '#2ecc71')):
            if not any(row.get(f'{metric}_mean') is not None for row in rows):
                continue
            fig.add_trace(go.Bar(
                x=labels,
                y=[row.get(f'{metric}_mean') for row in rows],
                error_y=dict(type='data', array=[row.get(f'{metric}_std') or 0.0 for row in rows]),
                name='Rank-1' if metric == 'rank1' else 'mAP',
                marker_color=color,
                opacity=0.8,
            ))
        recall_keys = sorted({k for row in rows for k in row if k.startswith('recall@') and k.endswith('_mean')})
        for key in recall_keys:
            fig.add_trace(go.Bar(
                x=labels,
                y=[row.get(key) for row in rows],
                error_y=dict(type='data', array=[row.get(key.replace('_mean', '_std')) or 0.0 for row in rows]),
                name=key.replace('_mean', ''),
                opacity=0.8,
            ))
        fig.update_layout(
            title=dict(text=f'Ablation: {sweep}', x=0.5, font=dict(size=20)),
            xaxis_title=dict(text='Configuration', font=dict(size=14)),
            yaxis_title=dict(text='Score', font=dict(size=14)),
            barmode='group',
            hovermode='closest',
            margin=dict(t=100, l=80, r=80, b=80),
            template='plotly_white',
        )
        return self._write(fig, f'ablation_{sweep}.html')

    def plot_history(self, history_rows: Sequence) -> str:
        """Loss components and learning rate per epoch, plus Rank-1/mAP when recorded."""
        epochs = [row.epoch for row in history_rows]
        fig = make_subplots(rows=2, cols=1, shared_xaxes=True, subplot_titles=('Loss', 'Learning rate'))
        fig.add_trace(go.Scatter(x=epochs, y=[r.loss_total for r in history_rows], name='total',
                                 mode='lines+markers'), row=1, col=1)
        names = sorted({name for r in history_rows for name in r.components})
        for name in names:
            fig.add_trace(go.Scatter(
                x=epochs, y=[r.components.get(name) for r in history_rows], name=name, mode='lines'
            ), row=1, col=1)
        fig.add_trace(go.Scatter(x=epochs, y=[r.lr for r in history_rows], name='lr', mode='lines'),
                      row=2, col=1)
        scored = [r for r in history_rows if r.rank1 is not None]
        if scored:
            fig.add_trace(go.Scatter(x=[r.epoch for r in scored], y=[r.rank1 for r in scored],
                                     name='rank1', mode='markers'), row=1, col=1)
            fig.add_trace(go.Scatter(x=[r.epoch for r in scored], y=[r.map for r in scored],
                                     name='map', mode='markers'), row=1, col=1)
        fig.update_xaxes(title_text='Epoch', row=2, col=1)
        fig.update_layout(title=dict(text='Training history', x=0.5), template='plotly_white', height=700)
        return self._write(fig, 'history.html')


def plot_energy_maps(
    energy: np.ndarray,
    sample_ids: Sequence[str],
    output_dir: str,
    limit: int = 8,
    entropy: Optional[np.ndarray] = None
) -> List[str]:
    """
    Save one heatmap PNG per sample for the first ``limit`` energy maps.

    Returns:
        Paths of the written files
    """
    os.makedirs(output_dir, exist_ok=True)
    paths = []
    for i in range(min(limit, len(energy))):
        fig, ax = plt.subplots(figsize=(2.5, 5))
        image = ax.imshow(energy[i], cmap='viridis', interpolation='nearest')
        title = sample_ids[i]
        if entropy is not None:
            title = f"{title}\nH={entropy[i]:.3f}"
        ax.set_title(title, fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
        fig.colorbar(image, ax=ax, fraction=0.046, pad=0.04)
        path = os.path.join(output_dir, f"{sample_ids[i]}.png")
        fig.savefig(path, dpi=100, bbox_inches='tight', metadata={'Software': None})
        plt.close(fig)
        paths.append(path)
    return paths

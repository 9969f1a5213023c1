"""
visualization/visualizer.py

Static analysis figures for finished runs: variable frequency across the best
policies, a log-log FLOPs/bytes chart against the reference devices, ablation
travel-time bars and the search-progress curve. Figures are written to disk
with the non-interactive Agg backend.
"""
import os

import matplotlib

matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


class Visualizer:
    """Writes one PNG per figure into `output_dir`."""

    def __init__(self, output_dir, dpi=120):
        self.output_dir = output_dir
        self.dpi = dpi
        os.makedirs(output_dir, exist_ok=True)

    def _save(self, fig, name):
        path = os.path.join(self.output_dir, name)
        fig.tight_layout()
        fig.savefig(path, dpi=self.dpi)
        plt.close(fig)
        return path

    def plot_feature_frequency(self, counts, name='feature_frequency.png'):
        """Bar chart of how often each variable appears in the best policies."""
        fig, ax = plt.subplots(figsize=(7, 4))
        labels = list(counts)
        ax.bar(labels, [counts[k] for k in labels], color='tab:blue')
        ax.set_xlabel("Variable")
        ax.set_ylabel("Occurrences")
        ax.set_title("Variable frequency in best policies")
        return self._save(fig, name)

    def plot_cost(self, costs, settings, movements, name='policy_cost.png'):
        """
        Policies as (FLOPs, bytes) points on log axes, with each device's RAM
        as a horizontal limit and its per-decision FLOP budget as a vertical one.
        """
        fig, ax = plt.subplots(figsize=(7, 5))
        flops = np.array([max(1, c.flops) for c in costs], dtype=float)
        size = np.array([c.bytes for c in costs], dtype=float)
        ax.scatter(flops, size, color='black', zorder=3, label="policies")
        colors = plt.rcParams['axes.prop_cycle'].by_key()['color']
        for i, (device, spec) in enumerate(settings['devices'].items()):
            color = colors[i % len(colors)]
            budget = settings['response_threshold_s'] * spec['clock_hz'] / (
                settings['cycles_per_operation'] * max(1, movements))
            ax.axhline(spec['ram_bytes'], color=color, linestyle='--', label=f"{device} RAM")
            ax.axvline(budget, color=color, linestyle=':', label=f"{device} FLOP budget")
        ax.set_xscale('log')
        ax.set_yscale('log')
        ax.set_xlabel("FLOPs per movement")
        ax.set_ylabel("Bytes")
        ax.legend(fontsize='small')
        return self._save(fig, name)

    def plot_ablation(self, summary, name='ablation.png'):
        """Mean travel time with std error bars per mode, from summarize() groups."""
        groups = [g for g in summary if g['mode']]
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.bar([g['mode'] for g in groups], [g['avg_travel_time_mean'] for g in groups],
               yerr=[g['avg_travel_time_std'] for g in groups], capsize=4, color='tab:orange')
        ax.set_ylabel("Average travel time (s)")
        ax.set_title("Ablation")
        return self._save(fig, name)

    def plot_search_progress(self, records, name='search_progress.png'):
        """Best average travel time so far against iteration, one line per run."""
        runs = {}
        for record in records:
            if record.get('best_so_far'):
                runs.setdefault(record.get('run', 'search'), []).append(
                    (record['iter'], 1.0 / record['best_so_far']))
        fig, ax = plt.subplots(figsize=(7, 4))
        for label, points in runs.items():
            xs, ys = zip(*points)
            ax.step(xs, ys, where='post', label=label)
        ax.set_xlabel("Iteration")
        ax.set_ylabel("Best average travel time (s)")
        if len(runs) > 1:
            ax.legend(fontsize='small')
        return self._save(fig, name)

"""Learning-curve figures rendered next to the tidy metrics CSV."""
from __future__ import annotations

import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

RC = {
    "figure.figsize": (6.0, 3.8),
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.4,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def render_learning_curves(tidy_rows, out_dir) -> list[str]:
    """One PNG per metric, a line per run; returns the written paths.

    `tidy_rows` are (run_id, step, metric, value) tuples as emitted in the
    long-format CSV.
    """
    by_metric: dict[str, dict[str, list[tuple[int, float]]]] = defaultdict(
        lambda: defaultdict(list))
    for run_id, step, metric, value in tidy_rows:
        by_metric[metric][run_id].append((int(step), float(value)))

    os.makedirs(out_dir, exist_ok=True)
    written = []
    with plt.rc_context(RC):
        for metric in sorted(by_metric):
            fig, ax = plt.subplots()
            for run_id in sorted(by_metric[metric]):
                points = sorted(by_metric[metric][run_id])
                ax.plot([p[0] for p in points], [p[1] for p in points],
                        label=run_id)
            ax.set_xlabel("step")
            ax.set_ylabel(metric)
            ax.legend(loc="best", fontsize=8)
            path = os.path.join(out_dir, f"curve_{metric}.png")
            fig.savefig(path)
            plt.close(fig)
            written.append(path)
    return written

"""Render replay reports as figures next to the CSV output."""

from __future__ import annotations

from pathlib import Path

from . import costmodel
from .scenario import RunReportRow


def _series(rows: list[RunReportRow], mode: str, attr: str):
    cycles, values = [], []
    for row in rows:
        if row.mode == mode:
            cycles.append(row.cycle)
            values.append(getattr(row, attr))
    return cycles, values


def render_report_figures(rows: list[RunReportRow], out_prefix) -> list[Path]:
    """Write per-cycle memory and time comparison charts.

    Produces ``<prefix>_memory.png`` and ``<prefix>_time.png``; returns
    the written paths. No-op on an empty report.
    """
    if not rows:
        return []
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_prefix = Path(out_prefix)
    scenario_id = rows[0].scenario_id
    written: list[Path] = []
    specs = (
        ("peak_mem_mib", "Peak device memory (MiB)", "_memory.png"),
        ("total_time_s", "Total simulated time (s)", "_time.png"),
    )
    width = 0.38
    for attr, ylabel, suffix in specs:
        fig, ax = plt.subplots(figsize=(7, 3.4))
        plotted = False
        for offset, (mode, color) in enumerate(
            ((costmodel.UNFUSED, "#b0b0b0"), (costmodel.FUSED, "#2f6fb4"))
        ):
            cycles, values = _series(rows, mode, attr)
            if not cycles:
                continue
            positions = [c + (offset - 0.5) * width for c in cycles]
            ax.bar(positions, values, width=width, label=mode, color=color)
            plotted = True
        if not plotted:
            plt.close(fig)
            continue
        ax.set_xlabel("cycle")
        ax.set_ylabel(ylabel)
        ax.set_title(scenario_id)
        ax.legend(frameon=False)
        all_cycles = sorted({row.cycle for row in rows})
        ax.set_xticks(all_cycles)
        fig.tight_layout()
        path = out_prefix.with_name(out_prefix.name + suffix)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written

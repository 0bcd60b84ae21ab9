"""Static SVG line plots of misclassified signals."""

import logging
import os
import re
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import DatasetIOError  # noqa: E402
from .metrics import Misclassified  # noqa: E402
from .signals import EgmSignal  # noqa: E402

logger = logging.getLogger(__name__)

# fixed salt and no date keep the SVG output byte-identical between runs
matplotlib.rcParams.update({"svg.hashsalt": "egm-triage", "axes.unicode_minus": False})


def plot_title(signal_id: str, truth: str, pred: str) -> str:
    return f"{signal_id} {truth}→{pred}"


def _filename(signal_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", signal_id) + ".svg"


def plot_signal(signal: EgmSignal, title: str, path: os.PathLike) -> Path:
    """Voltage against time in ms."""
    path = Path(path)
    time_ms = np.arange(len(signal)) * 1000.0 / signal.sampling_rate
    fig, ax = plt.subplots(figsize=(10, 3), constrained_layout=True)
    try:
        ax.plot(time_ms, signal.samples, color="black", linewidth=0.8)
        ax.set_title(title)
        ax.set_xlabel("Time (ms)")
        ax.set_ylabel("Voltage (mV)")
        path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as e:
        raise DatasetIOError(f"Cannot write plot {path}: {e}") from e
    finally:
        plt.close(fig)
    return path


def plot_misclassified(
    misclassified: Sequence[Misclassified], signals: Dict[str, EgmSignal], directory: os.PathLike
) -> List[Path]:
    """One SVG per misclassified signal; signals missing from ``signals`` are skipped with a warning."""
    written = []
    for item in misclassified:
        signal = signals.get(item.signal_id)
        if signal is None:
            logger.warning("No samples for misclassified signal %s, not plotted", item.signal_id)
            continue
        title = plot_title(item.signal_id, item.truth.value, item.pred.value)
        written.append(plot_signal(signal, title, Path(directory) / _filename(item.signal_id)))
    logger.info("Wrote %d plots to %s", len(written), directory)
    return written

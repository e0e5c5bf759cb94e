import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402


def plot_loss_curve(history: pd.DataFrame, path: str, window: int = 5) -> str:
    """训练损失曲线：逐步损失 + 滑动平均"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig, ax = plt.subplots(figsize=(8, 4))
    ax.plot(history.index, history["loss"], alpha=0.4, label="loss")
    ax.plot(history.index, history["loss"].rolling(window, min_periods=1).mean(), label=f"mean({window})")
    ax.set_xlabel("step")
    ax.set_ylabel("combined loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_precision_curves(table: pd.DataFrame, path: str) -> str:
    """
    table 列：metric, threshold, precision。
    每种误差一条曲线，角度与毫米阈值画在各自的子图里。
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    groups = list(table.groupby("metric", sort=True))
    fig, axes = plt.subplots(1, max(len(groups), 1), figsize=(4 * max(len(groups), 1), 3.5), squeeze=False)
    for ax, (metric, df) in zip(axes[0], groups):
        df = df.sort_values("threshold")
        ax.plot(df["threshold"], df["precision"], marker="o")
        ax.set_title(str(metric))
        ax.set_ylim(0.0, 1.02)
        ax.grid(True, alpha=0.3)
    fig.savefig(path, dpi=150, bbox_inches="tight")
    plt.close(fig)
    return path

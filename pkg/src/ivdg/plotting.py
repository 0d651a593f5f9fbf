"""Figures rendered next to the CSV output of a study."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .report import ExperimentReport  # noqa: E402

LINEAR_FIGURE = "linear_study.png"
NONLINEAR_FIGURE = "nonlinear_study.png"

STYLE = {
    "figure.dpi": 110,
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 7,
    "axes.spines.top": False,
    "axes.spines.right": False,
}

_LABELS = {"TwoStageIV": "IV", "OLS": "OLS", "IVDG": "IV-DG (2 sources)", "PooledBaseline": "Pooled (all sources)"}


def _label(estimator: str) -> str:
    if estimator.startswith("DgAverage"):
        return f"DG ({estimator[len('DgAverage'):]}) sources"
    return _LABELS.get(estimator, estimator)


def _panel(ax, report: ExperimentReport, metric: str, logx: bool, logy: bool) -> None:
    for est in report.estimators():
        cells = sorted((c for c in report.summary if c.estimator == est and c.metric == metric), key=lambda c: c.setting)
        if not cells:
            continue
        xs = [c.setting for c in cells]
        ax.errorbar(xs, [c.mean for c in cells], yerr=[c.stderr for c in cells], marker="o", ms=3, capsize=2,
                    lw=1.0, label=_label(est))
    if logx:
        ax.set_xscale("log")
    if logy:
        ax.set_yscale("log")


def render_report(report: ExperimentReport, out_dir: str | Path) -> list[Path]:
    """Draw the study figure into ``out_dir``; returns the written paths."""
    out_dir = Path(out_dir)
    metrics = {r.metric for r in report.rows}
    with plt.rc_context(STYLE):
        if "target_accuracy" in metrics:
            fig, ax = plt.subplots(figsize=(4.0, 3.0))
            _panel(ax, report, "target_accuracy", logx=False, logy=False)
            ax.set_xlabel(r"domain divergence $r_{div}$")
            ax.set_ylabel("target accuracy")
            ax.legend(frameon=False)
            path = out_dir / NONLINEAR_FIGURE
        else:
            fig, axes = plt.subplots(1, 2, figsize=(7.5, 3.0))
            _panel(axes[0], report, "mae_lambda", logx=True, logy=True)
            axes[0].set_ylabel(r"MAE of $\hat\lambda_{ivt}$")
            _panel(axes[1], report, "mse_target", logx=True, logy=False)
            axes[1].set_ylabel("target MSE")
            for ax in axes:
                ax.set_xlabel("sample size per domain")
            axes[0].legend(frameon=False, ncol=2)
            path = out_dir / LINEAR_FIGURE
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
    return [path]

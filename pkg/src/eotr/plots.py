"""SVG figures from the CSV files written by the pipelines."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

PLOT_KINDS = ("rate-curve", "entropy-profile", "laplace-slope")

_REQUIRED = {
    "rate-curve": ("epsilon", "gap"),
    "entropy-profile": ("delta", "H"),
    "laplace-slope": ("epsilon", "log_integral"),
}


class PlotError(ValueError):
    pass


def _read(path: Path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            rows = list(reader)
            header = reader.fieldnames or []
    except OSError as exc:
        raise PlotError(f"{path}: {exc.strerror}") from exc
    if not rows:
        raise PlotError(f"{path}: no data rows")
    return header, rows


def _fit_row(csv_path: Path):
    fit = csv_path.with_name("fit.csv")
    if not fit.exists():
        return None
    try:
        return _read(fit)[1]
    except PlotError:
        return None


def emit_plot(csv_path, kind: str, out=None) -> Path:
    """Draw ``kind`` from ``csv_path`` and write an SVG next to it (or to ``out``).

    A ``fit.csv`` in the same directory adds the fitted overlay: the
    two-term rate model, the fitted Laplace line, or a reference line of
    integer slope for entropy profiles.
    """
    if kind not in PLOT_KINDS:
        raise PlotError(f"unknown plot kind {kind!r}; expected one of {list(PLOT_KINDS)}")
    csv_path = Path(csv_path)
    header, rows = _read(csv_path)
    missing = [c for c in _REQUIRED[kind] if c not in header]
    if missing:
        raise PlotError(f"{csv_path}: missing column(s) {', '.join(missing)} for {kind}")
    fit = _fit_row(csv_path)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5.5, 4.0))
    if kind == "rate-curve":
        eps = np.array([float(r["epsilon"]) for r in rows])
        gap = np.array([float(r["gap"]) for r in rows])
        order = np.argsort(eps)
        ax.plot(eps[order], gap[order], "o-", label="v_eps - v0")
        if fit and "a" in fit[0]:
            a, b = float(fit[0]["a"]), float(fit[0]["b"])
            e = np.geomspace(eps.min(), eps.max(), 200)
            ax.plot(e, a * e * np.log(1 / e) + b * e, "--",
                    label=f"{a:.3f} eps log(1/eps) + {b:.3f} eps")
        ax.set_xscale("log")
        if np.all(gap > 0):
            ax.set_yscale("log")
        ax.set_xlabel("eps")
        ax.set_ylabel("v_eps - v0")
    elif kind == "entropy-profile":
        groups = {}
        for r in rows:
            groups.setdefault(r.get("measure", ""), []).append((float(r["delta"]), float(r["H"])))
        for label, pts in groups.items():
            d, H = np.array(pts).T
            t = np.log(1 / d)
            ax.plot(t, H, "o-", label=label or "H_delta")
            slope = None
            if fit:
                for f in fit:
                    if f.get("measure", "") == label and "fitted_dim" in f:
                        slope = round(float(f["fitted_dim"]))
            if slope is None and t.size > 1:
                slope = round(float(np.polyfit(t, H, 1)[0]))
            if slope:
                ref = H.max() - slope * (t.max() - t)
                ax.plot(t, ref, ":", color="gray", label=f"slope {slope}")
        ax.set_xlabel("log(1/delta)")
        ax.set_ylabel("H_delta")
    else:
        eps = np.array([float(r["epsilon"]) for r in rows])
        logs = np.array([float(r["log_integral"]) for r in rows])
        ax.plot(eps, np.exp(logs), "o-", label="sum exp(-E/eps)")
        if fit and "slope" in fit[0]:
            s, c = float(fit[0]["slope"]), float(fit[0]["intercept"])
            ax.plot(eps, np.exp(c) * eps ** s, "--", label=f"slope {s:.3f}")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_xlabel("eps")
        ax.set_ylabel("Laplace integral")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    target = Path(out) if out else csv_path.with_name(f"{csv_path.stem}-{kind}.svg")
    fig.savefig(target, format="svg")
    plt.close(fig)
    return target

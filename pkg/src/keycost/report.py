"""Matplotlib figures written next to CLI outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .typicality import SourceSpec, type_classes  # noqa: E402

_META = {"Software": None}


def figure_path(out: str | Path, suffix: str) -> Path:
    p = Path(out)
    return p.with_name(f"{p.stem}_{suffix}.png")


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def typical_figure(spec: SourceSpec, path: Path) -> Path:
    """Probability mass of each type class, typical classes highlighted."""
    rows = [(comp, float(mass), typ) for comp, _, mass, typ in type_classes(spec)]
    rows.sort(key=lambda r: -r[1])
    rows = rows[:40]
    fig, ax = plt.subplots(figsize=(8, 3.6))
    ax.bar(range(len(rows)), [m for _, m, _ in rows], color=["tab:blue" if t else "tab:gray" for _, _, t in rows])
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(["".join(map(str, c)) for c, _, _ in rows], rotation=90, fontsize=6)
    ax.set_xlabel("type (symbol counts)")
    ax.set_ylabel("class probability")
    ax.set_title(f"n={spec.n}, delta={spec.delta}: typical classes in blue")
    return _save(fig, path)


def bounds_figure(d_k: int, eps: list[float], exact: list[float], path: Path) -> Path:
    """2^{-D_h} against the dual value (1-eps)/d_k."""
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.plot(eps, exact, "o-", label="2^(-D_h)")
    ax.plot(eps, [(1 - e) / d_k for e in eps], "s--", label="(1-eps)/d_k")
    ax.set_xlabel("eps")
    ax.set_ylabel("type-II error")
    ax.set_title(f"d_k={d_k}")
    ax.legend()
    return _save(fig, path)


def dilution_figure(report: dict, path: Path) -> Path:
    """Resource accounting of one run."""
    labels = ["key bits", "ebits (qubit eq.)", "ebits nominal"]
    values = [report["key_bits_consumed"], report["ebits_qubit_equivalent"], report["ebits_nominal"]]
    fig, ax = plt.subplots(figsize=(5, 3.6))
    ax.bar(labels, values, color=["tab:blue", "tab:orange", "tab:gray"])
    d = report["trace_distance_to_target"]
    dist = "n/a" if d is None else f"{d:.2e}"
    ax.set_title(f"n={report['n']}, delta={report['delta']}, distance {dist}")
    ax.set_ylabel("bits")
    return _save(fig, path)

"""
Tables and plots over EvalReports.

Each table is built once as a DataFrame of formatted strings, so the CSV and the
Markdown rendering carry the same values. Undefined metrics render as "—".
"""

import logging
from collections.abc import Mapping
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import pandas as pd  # noqa: E402

from har_kit.types import AttackSummary, EvalReport  # noqa: E402

logger = logging.getLogger(__name__)

MISSING = "—"


def fmt(value: float | None) -> str:
    return MISSING if value is None else f"{100 * value:.2f}"


def _untargeted(report: EvalReport) -> list[AttackSummary]:
    return [s for s in report.attacks if not s.spec.is_hierarchical]


def untargeted_table(reports: Mapping[str, EvalReport]) -> pd.DataFrame:
    """
    Fine and coarse accuracy (%) on clean inputs and under each untargeted attack.
    """
    rows = []
    for name, r in reports.items():
        rows.append(
            {
                "model": name,
                "attack": "Clean",
                "fine_acc": fmt(r.clean_fine_acc),
                "coarse_acc": fmt(r.clean_coarse_acc),
            }
        )
        for s in _untargeted(r):
            rows.append(
                {
                    "model": name,
                    "attack": s.spec.label(),
                    "fine_acc": fmt(s.fine_acc),
                    "coarse_acc": fmt(s.coarse_acc),
                }
            )
    return pd.DataFrame(rows, columns=["model", "attack", "fine_acc", "coarse_acc"])


def targeted_table(reports: Mapping[str, EvalReport]) -> pd.DataFrame:
    rows = []
    for name, r in reports.items():
        for s in r.attacks:
            if s.spec.is_hierarchical and s.spec.mode != "coarse_net_targeted":
                rows.append(
                    {
                        "model": name,
                        "attack": f"{s.spec.label()} {s.spec.mode}",
                        "n": str(s.n_samples),
                        "targeted_robust_acc": fmt(s.targeted_robust_acc),
                    }
                )
    return pd.DataFrame(rows, columns=["model", "attack", "n", "targeted_robust_acc"])


def within_coarse_table(reports: Mapping[str, EvalReport]) -> pd.DataFrame:
    """
    Share (%) of fine misclassifications that stay in the true coarse class.
    """
    rows = []
    for name, r in reports.items():
        row = {"model": name, "Clean": fmt(r.clean_within_coarse_ratio)}
        for s in _untargeted(r):
            row[s.spec.label()] = fmt(s.within_coarse_ratio)
        rows.append(row)
    return pd.DataFrame(rows).fillna(MISSING)


COARSE_NET_COLUMNS = [
    "model",
    "untargeted_coarse_acc",
    "coarse_net_attack",
    "worst_case_attack",
]


def coarse_net_table(reports: Mapping[str, EvalReport]) -> pd.DataFrame:
    """
    Untargeted coarse accuracy next to robust accuracy under the coarse-net
    attack and the full-model worst-case attack.
    """
    rows = []
    for name, r in reports.items():
        coarse_net = [s for s in r.attacks if s.spec.mode == "coarse_net_targeted"]
        worst = [s for s in r.attacks if s.spec.mode == "worst_case_hierarchical"]
        if not coarse_net:
            continue
        rows.append(
            {
                "model": name,
                "untargeted_coarse_acc": fmt(r.attacked_coarse_acc),
                "coarse_net_attack": fmt(coarse_net[0].targeted_robust_acc),
                "worst_case_attack": fmt(
                    worst[0].targeted_robust_acc if worst else None
                ),
            }
        )
    return pd.DataFrame(rows, columns=COARSE_NET_COLUMNS)


TABLES = {
    "untargeted": untargeted_table,
    "targeted": targeted_table,
    "within_coarse": within_coarse_table,
    "coarse_net": coarse_net_table,
}


def to_markdown(frame: pd.DataFrame) -> str:
    if frame.empty:
        return "_no rows_\n"
    return frame.to_markdown(index=False) + "\n"


def write_tables(
    reports: Mapping[str, EvalReport],
    out_dir: str | Path,
    config_hash: str = "",
    seed: int = 0,
) -> list[Path]:
    """
    Writes <table>.csv and <table>.md for every table; returns the paths.
    Every row carries the config hash and seed of the run that wrote it.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, build in TABLES.items():
        frame = build(reports)
        frame["config_hash"] = config_hash
        frame["seed"] = seed
        csv_path = out / f"{name}.csv"
        md_path = out / f"{name}.md"
        frame.to_csv(csv_path, index=False)
        md_path.write_text(to_markdown(frame), encoding="utf-8")
        written.extend([csv_path, md_path])
    logger.info("wrote %d report files to %s", len(written), out)
    return written


def _plot(
    reports: Mapping[str, EvalReport],
    x_field: str,
    xlabel: str,
    path: Path,
    metadata: dict[str, str | None],
) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for name, r in reports.items():
        groups: dict[str, list[tuple[float, float]]] = {}
        for s in _untargeted(r):
            if s.fine_acc is None:
                continue
            if x_field == "epsilon":
                key, x = f"{s.spec.norm} k={s.spec.iterations}", s.spec.epsilon
            else:
                key = f"{s.spec.norm} eps={s.spec.epsilon:.4g}"
                x = float(s.spec.iterations)
            groups.setdefault(key, []).append((x, 100 * s.fine_acc))
        for key, points in sorted(groups.items()):
            points.sort()
            xs, ys = zip(*points, strict=True)
            ax.plot(xs, ys, marker="o", label=f"{name} {key}")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("fine accuracy (%)")
    if ax.has_data():
        ax.legend(fontsize="small")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=metadata)
    plt.close(fig)


def write_plots(
    reports: Mapping[str, EvalReport],
    out_dir: str | Path,
    config_hash: str = "",
    seed: int = 0,
) -> list[Path]:
    """
    Writes the accuracy-vs-epsilon and accuracy-vs-iterations SVGs. Output is
    byte-identical for identical inputs: no timestamp, element ids salted with
    the config hash and seed.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    eps_path = out / "acc_vs_eps.svg"
    iters_path = out / "acc_vs_iters.svg"
    stamp = f"config_hash={config_hash} seed={seed}"
    metadata: dict[str, str | None] = {"Date": None, "Description": stamp}
    with matplotlib.rc_context({"svg.hashsalt": stamp}):
        _plot(reports, "epsilon", "epsilon", eps_path, metadata)
        _plot(reports, "iterations", "attack iterations", iters_path, metadata)
    return [eps_path, iters_path]

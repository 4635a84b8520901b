"""Report files: delimited tables, a structured text document, and figures.

Tables carry no timing or timestamps, so identical runs produce byte-identical
files; wall times go to the text report only. Figures render next to the
tables with a non-interactive matplotlib backend.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .benchmark import ExperimentReport


def _fmt(x) -> str:
    return repr(float(x))


def write_experiment_report(report: ExperimentReport, out_dir, stem: str | None = None) -> dict:
    """Write summary/long tables, the text report and the MAE-vs-density
    figure for one experiment. Returns the written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{report.variant}_{report.dataset}_{report.qos}".lower().replace("-", "_")

    summary = out / f"{stem}_summary.csv"
    with open(summary, "w") as fh:
        fh.write("variant,dataset,qos,density,episodes,mean_mae\n")
        for d in report.densities:
            fh.write(
                f"{report.variant},{report.dataset},{report.qos},"
                f"{_fmt(d)},{report.episodes},{_fmt(report.mean_mae(d))}\n"
            )

    long = out / f"{stem}_long.csv"
    with open(long, "w") as fh:
        fh.write("variant,density,episode,mae\n")
        for r in report.rows:
            fh.write(f"{report.variant},{_fmt(r.density)},{r.episode},{_fmt(r.mae)}\n")

    text = out / f"{stem}_report.txt"
    with open(text, "w") as fh:
        fh.write(_text_report(report))

    figure = out / f"{stem}_mae_vs_density.png"
    _plot_density_curve([report], figure)
    return {"summary": summary, "long": long, "text": text, "figure": figure}


def write_ablation_report(reports: list, out_dir, stem: str = "ablation") -> dict:
    """Combined tables and bar figure for a paired variant comparison."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    long = out / f"{stem}_long.csv"
    with open(long, "w") as fh:
        fh.write("variant,density,episode,mae\n")
        for rep in reports:
            for r in rep.rows:
                fh.write(f"{rep.variant},{_fmt(r.density)},{r.episode},{_fmt(r.mae)}\n")

    summary = out / f"{stem}_summary.csv"
    with open(summary, "w") as fh:
        fh.write("variant,dataset,qos,density,episodes,mean_mae\n")
        for rep in reports:
            for d in rep.densities:
                fh.write(
                    f"{rep.variant},{rep.dataset},{rep.qos},"
                    f"{_fmt(d)},{rep.episodes},{_fmt(rep.mean_mae(d))}\n"
                )

    text = out / f"{stem}_report.txt"
    with open(text, "w") as fh:
        fh.write(f"paired comparison over {len(reports)} variants\n")
        fh.write("=" * 60 + "\n\n")
        for rep in reports:
            fh.write(_text_report(rep))
            fh.write("\n")

    figure = out / f"{stem}_mae_by_variant.png"
    fig, ax = plt.subplots(figsize=(10, 4.5))
    names = [rep.variant for rep in reports]
    means = [rep.mean_mae(rep.densities[0]) for rep in reports]
    colors = ["tab:red" if n == "CAHPHF" else "tab:blue" for n in names]
    ax.bar(range(len(names)), means, color=colors)
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylabel("mean MAE")
    ax.set_title(f"{reports[0].dataset} {reports[0].qos}, density {reports[0].densities[0]:g}")
    fig.tight_layout()
    fig.savefig(figure, dpi=120)
    plt.close(fig)
    return {"summary": summary, "long": long, "text": text, "figure": figure}


def write_sweep_report(param: str, values, reports: list, out_dir, stem: str = "sweep") -> dict:
    """Tables and figure for a one-parameter sweep (one report per value)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    summary = out / f"{stem}_{param}_summary.csv"
    with open(summary, "w") as fh:
        fh.write(f"{param},density,mean_mae\n")
        for v, rep in zip(values, reports):
            for d in rep.densities:
                fh.write(f"{v},{_fmt(d)},{_fmt(rep.mean_mae(d))}\n")

    long = out / f"{stem}_{param}_long.csv"
    with open(long, "w") as fh:
        fh.write(f"{param},variant,density,episode,mae\n")
        for v, rep in zip(values, reports):
            for r in rep.rows:
                fh.write(f"{v},{rep.variant},{_fmt(r.density)},{r.episode},{_fmt(r.mae)}\n")

    text = out / f"{stem}_{param}_report.txt"
    with open(text, "w") as fh:
        fh.write(f"sweep of {param} over {list(values)}\n")
        fh.write("=" * 60 + "\n\n")
        for v, rep in zip(values, reports):
            fh.write(f"--- {param} = {v}\n")
            fh.write(_text_report(rep))
            fh.write("\n")

    figure = out / f"{stem}_{param}.png"
    fig, ax = plt.subplots(figsize=(6, 4))
    for d in reports[0].densities:
        ax.plot(
            list(values),
            [rep.mean_mae(d) for rep in reports],
            marker="o",
            label=f"density {d:g}",
        )
    ax.set_xlabel(param)
    ax.set_ylabel("mean MAE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(figure, dpi=120)
    plt.close(fig)
    return {"summary": summary, "long": long, "text": text, "figure": figure}


def _text_report(report: ExperimentReport) -> str:
    lines = [
        f"variant: {report.variant}",
        f"dataset: {report.dataset} ({report.qos})",
        f"densities: {', '.join(f'{d:g}' for d in report.densities)}",
        f"episodes: {report.episodes}, targets per episode: {report.test_k}",
        f"seed: {report.seed}",
        f"wall time: {report.wall_time_s:.1f} s",
        "",
        "density  episode  mae          targets  split",
    ]
    for r in report.rows:
        lines.append(
            f"{r.density:<8g} {r.episode:<8d} {r.mae:<12.6g} {r.n_targets:<8d} "
            f"{r.split_fingerprint[:12]}"
        )
    lines.append("")
    for d in report.densities:
        lines.append(f"mean MAE @ density {d:g}: {report.mean_mae(d):.6g}")
    lines.append("")
    lines.append("resolved configuration:")
    lines.extend(f"  {ln}" for ln in report.config_lines)
    lines.append("")
    return "\n".join(lines)


def _plot_density_curve(reports: list, path) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    for rep in reports:
        ds = list(rep.densities)
        ax.plot(ds, [rep.mean_mae(d) for d in ds], marker="o", label=rep.variant)
        for r in rep.rows:
            ax.scatter([r.density], [r.mae], s=12, alpha=0.4, color="gray")
    ax.set_xlabel("training density")
    ax.set_ylabel("MAE")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)

"""Render a campaign result to CSV, JSON, and matplotlib figures.

Delimited output is the machine-readable contract (detection-rate
curves, transfer matrices, a JSON summary with payload statistics); the
PNGs next to them are the same data drawn for humans.  CSV and JSON are
byte-reproducible for a fixed result.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .campaign import CampaignResult, curve_key


def emit_reports(result: CampaignResult, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [
        _write_curves_csv(result, out / "curves.csv"),
        _write_summary_json(result, out / "summary.json"),
    ]
    for attack, block in sorted(result.transfer.items()):
        written.append(_write_transfer_csv(block, out / f"transfer_{attack}.csv"))
        written.append(_plot_transfer(attack, block, out / f"transfer_{attack}.png"))
    attacks = sorted({c.attack for c in result.cells})
    for attack in attacks:
        written.append(_plot_curves(result, attack, out / f"curves_{attack}.png"))
    return written


def _write_curves_csv(result: CampaignResult, path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["attack", "model", "iteration", "detection_rate", "mean_score"])
        for key in sorted(result.curves):
            attack, model = key.split("|", 1)
            dr = result.curves[key]
            ms = result.mean_scores[key]
            for i, (rate, score) in enumerate(zip(dr, ms)):
                writer.writerow([attack, model, i, repr(float(rate)), repr(float(score))])
    return path


def _write_transfer_csv(block: dict, path: Path) -> Path:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["surrogate"] + list(block["targets"]))
        for name, row in zip(block["surrogates"], block["matrix"]):
            writer.writerow([name] + [repr(float(v)) for v in row])
    return path


def _write_summary_json(result: CampaignResult, path: Path) -> Path:
    per_attack_model: dict[str, dict] = {}
    for key in sorted(result.curves):
        attack, model = key.split("|", 1)
        group = [c for c in result.cells if c.attack == attack and c.model == model]
        if not group:
            continue
        payload_sizes = [c.payload_bytes for c in group]
        per_attack_model[key] = {
            "baseline_detection_rate": result.baseline_rates[model],
            "final_detection_rate": result.curves[key][-1],
            "initial_mean_score": float(np.mean([c.initial_score for c in group])),
            "final_mean_score": float(np.mean([c.final_score for c in group])),
            "evasion_rate": float(np.mean([c.evaded for c in group])),
            "payload_bytes_mean": float(np.mean(payload_sizes)),
            "payload_bytes_min": int(min(payload_sizes)),
            "payload_bytes_max": int(max(payload_sizes)),
            "payload_window_fraction_mean": float(
                np.mean([c.payload_fraction for c in group])
            ),
            "timed_out": int(sum(c.timed_out for c in group)),
        }
    summary = {
        "config": result.config,
        "thresholds": result.thresholds,
        "model_reports": result.model_reports,
        "baseline_detection_rates": result.baseline_rates,
        "attack_sample_names": result.attack_sample_names,
        "results": per_attack_model,
    }
    path.write_text(json.dumps(summary, sort_keys=True, indent=1))
    return path


def _plot_curves(result: CampaignResult, attack: str, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    for model in sorted(result.baseline_rates):
        key = curve_key(attack, model)
        if key not in result.curves:
            continue
        dr = result.curves[key]
        ax.plot(range(len(dr)), dr, marker=".", markersize=3, label=model)
    ax.set_xlabel("optimization step")
    ax.set_ylabel("detection rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"{attack}: detection rate vs step")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def _plot_transfer(attack: str, block: dict, path: Path) -> Path:
    matrix = np.asarray(block["matrix"], dtype=float)
    fig, ax = plt.subplots(figsize=(5.2, 4.2))
    im = ax.imshow(matrix, vmin=0.0, vmax=1.0, cmap="viridis")
    ax.set_xticks(range(len(block["targets"])), block["targets"], rotation=30, ha="right", fontsize=8)
    ax.set_yticks(range(len(block["surrogates"])), block["surrogates"], fontsize=8)
    ax.set_xlabel("target")
    ax.set_ylabel("surrogate")
    ax.set_title(f"{attack}: transfer detection rate")
    for i in range(matrix.shape[0]):
        for j in range(matrix.shape[1]):
            shade = "white" if matrix[i, j] < 0.5 else "black"
            ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center",
                    color=shade, fontsize=8)
    fig.colorbar(im, ax=ax, shrink=0.85)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path

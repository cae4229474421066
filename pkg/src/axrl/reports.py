"""Analysis artifacts: bonus-discrimination reports and beta-sweep summaries.

Machine-readable only; plotting is left to external tools. Histograms share
one fixed binning across all score groups so the CSV columns line up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

N_HISTOGRAM_BINS = 50


def mann_whitney_auc(ood_scores, dataset_scores) -> float:
    """Probability a random OOD score outranks a random dataset score.

    Rank-based (ties counted half), so the value is threshold-free: 0.5 means
    the bonus cannot separate the groups, 1.0 means perfect separation.
    """
    ood = np.asarray(ood_scores, dtype=float).ravel()
    data = np.asarray(dataset_scores, dtype=float).ravel()
    if len(ood) == 0 or len(data) == 0:
        raise ValueError("both score groups must be non-empty")
    ranks = rankdata(np.concatenate([ood, data]))
    r_ood = float(ranks[:len(ood)].sum())
    return (r_ood - len(ood) * (len(ood) + 1) / 2.0) / (len(ood) * len(data))


@dataclass(frozen=True)
class ModeSummary:
    name: str
    n: int
    mean: float
    median: float
    q05: float
    q25: float
    q75: float
    q95: float
    histogram: tuple[int, ...]
    auc_vs_dataset: float | None

    def __post_init__(self):
        if sum(self.histogram) != self.n:
            raise ValueError(f"{self.name}: histogram counts sum to "
                             f"{sum(self.histogram)}, expected {self.n}")
        if self.auc_vs_dataset is not None and not 0 <= self.auc_vs_dataset <= 1:
            raise ValueError(f"{self.name}: AUC {self.auc_vs_dataset} outside [0, 1]")


@dataclass(frozen=True)
class DiscriminationReport:
    model_kind: str
    dataset_fingerprint: str
    seed: int
    bin_edges: tuple[float, ...]
    dataset: ModeSummary
    modes: tuple[ModeSummary, ...]
    config_fingerprint: str = ""

    def __post_init__(self):
        if len(self.bin_edges) != N_HISTOGRAM_BINS + 1:
            raise ValueError("bin_edges must delimit the fixed bin count")
        for summary in (self.dataset, *self.modes):
            if len(summary.histogram) != N_HISTOGRAM_BINS:
                raise ValueError(f"{summary.name}: wrong histogram length")


def _summarize(name, scores, edges, dataset_scores=None) -> ModeSummary:
    scores = np.asarray(scores, dtype=float).ravel()
    counts, _ = np.histogram(scores, bins=np.asarray(edges))
    auc = None
    if dataset_scores is not None:
        auc = mann_whitney_auc(scores, dataset_scores)
    q05, q25, q75, q95 = np.quantile(scores, [0.05, 0.25, 0.75, 0.95])
    return ModeSummary(name=name, n=len(scores), mean=float(scores.mean()),
                       median=float(np.median(scores)), q05=float(q05),
                       q25=float(q25), q75=float(q75), q95=float(q95),
                       histogram=tuple(int(c) for c in counts),
                       auc_vs_dataset=auc)


def build_discrimination_report(model_kind: str, dataset_fingerprint: str,
                                seed: int, dataset_scores,
                                mode_scores: dict[str, np.ndarray],
                                config_fingerprint: str = ""
                                ) -> DiscriminationReport:
    """Shared-bin histograms plus per-mode AUC against the dataset scores."""
    dataset_scores = np.asarray(dataset_scores, dtype=float).ravel()
    pooled = np.concatenate([dataset_scores]
                            + [np.asarray(v, float).ravel()
                               for v in mode_scores.values()])
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi == lo:
        hi = lo + 1.0
    edges = tuple(np.linspace(lo, hi, N_HISTOGRAM_BINS + 1))
    return DiscriminationReport(
        model_kind=model_kind, dataset_fingerprint=dataset_fingerprint,
        seed=int(seed), bin_edges=edges,
        dataset=_summarize("dataset", dataset_scores, edges),
        modes=tuple(_summarize(name, scores, edges, dataset_scores)
                    for name, scores in mode_scores.items()),
        config_fingerprint=config_fingerprint)


def report_to_json(report: DiscriminationReport) -> str:
    def summary_doc(s: ModeSummary) -> dict:
        return {"name": s.name, "n": s.n, "mean": s.mean, "median": s.median,
                "q05": s.q05, "q25": s.q25, "q75": s.q75, "q95": s.q95,
                "histogram": list(s.histogram),
                "auc_vs_dataset": s.auc_vs_dataset}
    doc = {
        "model_kind": report.model_kind,
        "dataset_fingerprint": report.dataset_fingerprint,
        "seed": report.seed,
        "config_fingerprint": report.config_fingerprint,
        "bin_edges": list(report.bin_edges),
        "dataset": summary_doc(report.dataset),
        "modes": [summary_doc(m) for m in report.modes],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def report_from_json(text: str) -> DiscriminationReport:
    doc = json.loads(text)

    def summary(d) -> ModeSummary:
        return ModeSummary(name=d["name"], n=int(d["n"]), mean=d["mean"],
                           median=d["median"], q05=d["q05"], q25=d["q25"],
                           q75=d["q75"], q95=d["q95"],
                           histogram=tuple(int(c) for c in d["histogram"]),
                           auc_vs_dataset=d["auc_vs_dataset"])
    try:
        return DiscriminationReport(
            model_kind=doc["model_kind"],
            dataset_fingerprint=doc["dataset_fingerprint"],
            seed=int(doc["seed"]),
            config_fingerprint=doc.get("config_fingerprint", ""),
            bin_edges=tuple(float(e) for e in doc["bin_edges"]),
            dataset=summary(doc["dataset"]),
            modes=tuple(summary(m) for m in doc["modes"]))
    except KeyError as exc:
        raise ValueError(f"report document missing field {exc}") from exc


def write_histogram_csv(report: DiscriminationReport, fileobj) -> None:
    names = ["dataset"] + [m.name for m in report.modes]
    fileobj.write("bin_left,bin_right," + ",".join(names) + "\n")
    groups = [report.dataset] + list(report.modes)
    for i in range(N_HISTOGRAM_BINS):
        row = [repr(report.bin_edges[i]), repr(report.bin_edges[i + 1])]
        row += [str(g.histogram[i]) for g in groups]
        fileobj.write(",".join(row) + "\n")


# ---------------------------------------------------------------------------
# Beta sweeps


def normalized_return(mean_return: float, random_return: float,
                      expert_return: float) -> float:
    """Score on the 0-to-1 random/expert scale used for cross-task averaging."""
    span = expert_return - random_return
    if span == 0:
        raise ValueError("expert and random reference returns coincide")
    return (mean_return - random_return) / span


@dataclass(frozen=True)
class SweepCell:
    beta_actor: float
    beta_critic: float
    mean_normalized_return: float
    std_normalized_return: float
    per_task: tuple[tuple[str, float], ...]


@dataclass(frozen=True)
class SweepResult:
    cells: tuple[SweepCell, ...]
    selected_beta_actor: float
    selected_beta_critic: float

    def __post_init__(self):
        if not self.cells:
            raise ValueError("sweep needs at least one cell")
        best = max(c.mean_normalized_return for c in self.cells)
        chosen = [c for c in self.cells
                  if (c.beta_actor, c.beta_critic)
                  == (self.selected_beta_actor, self.selected_beta_critic)]
        if not chosen:
            raise ValueError("selected pair not present in the grid")
        if chosen[0].mean_normalized_return < best:
            raise ValueError("selected pair does not attain the grid maximum")


def select_best(cells) -> SweepResult:
    """Single best pair across every listed task, by cross-task mean."""
    cells = tuple(cells)
    best = max(cells, key=lambda c: c.mean_normalized_return)
    return SweepResult(cells=cells, selected_beta_actor=best.beta_actor,
                       selected_beta_critic=best.beta_critic)


def sweep_to_json(result: SweepResult, seed: int,
                  config_fingerprint: str = "") -> str:
    doc = {
        "seed": int(seed),
        "config_fingerprint": config_fingerprint,
        "selected": {"beta_actor": result.selected_beta_actor,
                     "beta_critic": result.selected_beta_critic},
        "cells": [{
            "beta_actor": c.beta_actor, "beta_critic": c.beta_critic,
            "mean_normalized_return": c.mean_normalized_return,
            "std_normalized_return": c.std_normalized_return,
            "per_task": {task: value for task, value in c.per_task},
        } for c in result.cells],
    }
    return json.dumps(doc, indent=2, sort_keys=True)


def sweep_from_json(text: str) -> tuple[SweepResult, int]:
    doc = json.loads(text)
    cells = tuple(
        SweepCell(beta_actor=float(c["beta_actor"]),
                  beta_critic=float(c["beta_critic"]),
                  mean_normalized_return=float(c["mean_normalized_return"]),
                  std_normalized_return=float(c["std_normalized_return"]),
                  per_task=tuple(sorted(c["per_task"].items())))
        for c in doc["cells"])
    result = SweepResult(cells=cells,
                         selected_beta_actor=float(doc["selected"]["beta_actor"]),
                         selected_beta_critic=float(doc["selected"]["beta_critic"]))
    return result, int(doc["seed"])

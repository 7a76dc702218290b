"""Trial scoring, equal error rate computation, and report rendering.

EER uses the "score >= threshold accepts" convention.  Candidate
thresholds are the sorted unique scores plus a sentinel above the maximum,
which enumerates every achievable (FAR, FRR) operating point.  FAR - FRR
is non-increasing along that sweep and goes from 1 to -1, so the crossing
is bracketed; an exact zero is returned directly, otherwise the two
bracketing points are interpolated linearly.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal, ROUND_HALF_UP
from pathlib import Path

import numpy as np

from .corpus import Manifest, TrialList
from .feature_store import CmvnStats, apply_cmvn, feature_path, read_features
from .trainer import Checkpoint
from . import embedder

ROW_ORDER = ("female", "male", "average")


class EvalError(ValueError):
    """Raised for malformed score sets or reports."""


@dataclass
class ScoreSet:
    """Trial scores paired with their target/nontarget labels."""

    subset: str
    scores: np.ndarray
    labels: np.ndarray  # bool, True = target

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=bool)
        if self.scores.shape != self.labels.shape or self.scores.ndim != 1:
            raise EvalError(
                f"scores and labels must be matching 1-D arrays, got "
                f"{self.scores.shape} and {self.labels.shape}"
            )
        if not np.all(np.isfinite(self.scores)):
            raise EvalError("scores must be finite")
        if not self.labels.any() or self.labels.all():
            raise EvalError("need at least one target and one nontarget score")


def embed_utterances(ckpt: Checkpoint, manifest: Manifest,
                     feature_dir: str | Path, cmvn: CmvnStats | None = None,
                     jobs: int = 1) -> dict[str, np.ndarray]:
    """Unit-norm embeddings for every utterance in a manifest."""
    feature_dir = Path(feature_dir)

    def one(rec):
        matrix = read_features(feature_path(feature_dir, rec.utt_id))
        if cmvn is not None:
            matrix = apply_cmvn(matrix, cmvn)
        emb, _ = embedder.forward(matrix.data.astype(np.float64),
                                  ckpt.params, ckpt.config)
        return rec.utt_id, emb

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            pairs = list(pool.map(one, manifest.records))
    else:
        pairs = [one(rec) for rec in manifest.records]
    return dict(pairs)


def score_trials(trials: TrialList, embeddings: dict[str, np.ndarray]) -> ScoreSet:
    """Cosine scores for a trial list over precomputed embeddings."""
    scores = np.empty(len(trials))
    labels = np.empty(len(trials), dtype=bool)
    for i, trial in enumerate(trials):
        for utt in (trial.enroll_id, trial.test_id):
            if utt not in embeddings:
                raise EvalError(f"trial references unknown utterance {utt!r}")
        scores[i] = float(embeddings[trial.enroll_id] @ embeddings[trial.test_id])
        labels[i] = trial.is_target
    return ScoreSet(subset=trials.subset, scores=scores, labels=labels)


def compute_eer(score_set: ScoreSet) -> float:
    """Equal error rate as a fraction in [0, 1]."""
    target = np.sort(score_set.scores[score_set.labels])
    nontarget = np.sort(score_set.scores[~score_set.labels])
    thresholds = np.unique(score_set.scores)
    # P(nontarget >= t) and P(target < t) for each candidate threshold
    far = 1.0 - np.searchsorted(nontarget, thresholds, side="left") / len(nontarget)
    frr = np.searchsorted(target, thresholds, side="left") / len(target)
    far = np.append(far, 0.0)   # sentinel threshold above every score
    frr = np.append(frr, 1.0)
    diff = far - frr
    idx = int(np.argmax(diff <= 0.0))
    if diff[idx] == 0.0:
        return float(far[idx])
    lam = diff[idx - 1] / (diff[idx - 1] - diff[idx])
    return float(far[idx - 1] + lam * (far[idx] - far[idx - 1]))


def write_scores(score_set: ScoreSet, trials: TrialList, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for trial, score in zip(trials, score_set.scores):
            label = "target" if trial.is_target else "nontarget"
            fh.write(f"{trial.enroll_id} {trial.test_id} "
                     f"{float(score)!r} {label}\n")


def render_percent(value: float) -> str:
    """Format a percentage with two decimals, ties away from zero.

    The shortest decimal representation of the float is quantized, so a
    value that prints as ``x.xx5`` rounds its final digit up.
    """
    return str(Decimal(repr(float(value))).quantize(Decimal("0.01"), ROUND_HALF_UP))


@dataclass
class EERReport:
    """EER percentages for one system, keyed by (dataset, row).

    Rows are ``female``, ``male``, and a derived ``average``.  Values are
    unrounded percents; rounding happens only at rendering time.
    """

    system: str
    cells: dict[tuple[str, str], float] = field(default_factory=dict)

    def datasets(self) -> list[str]:
        seen = {}
        for dataset, _ in self.cells:
            seen.setdefault(dataset, None)
        return list(seen)


def build_report(system: str, subset_eers: dict[tuple[str, str], float]) -> EERReport:
    """Assemble a report from per-(dataset, gender) EER fractions.

    EERs arrive as fractions and are stored as percents.  For every
    dataset with both genders present, an ``average`` row is added as the
    unweighted mean of the two unrounded percentages.
    """
    cells: dict[tuple[str, str], float] = {}
    for (dataset, gender), eer in subset_eers.items():
        if gender not in ("female", "male"):
            raise EvalError(f"unknown gender {gender!r} for dataset {dataset!r}")
        if not (0.0 <= eer <= 1.0):
            raise EvalError(f"EER must be a fraction in [0, 1], got {eer}")
        cells[(dataset, gender)] = eer * 100.0
    for dataset in {d for d, _ in cells}:
        female = cells.get((dataset, "female"))
        male = cells.get((dataset, "male"))
        if female is not None and male is not None:
            cells[(dataset, "average")] = (female + male) / 2.0
    return EERReport(system=system, cells=cells)


def _sorted_keys(cells) -> list[tuple[str, str]]:
    return sorted(cells, key=lambda k: (k[0], ROW_ORDER.index(k[1])))


def write_report_csv(report: EERReport, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["system", "dataset", "row", "eer_percent"])
        for dataset, row in _sorted_keys(report.cells):
            writer.writerow([report.system, dataset, row,
                             render_percent(report.cells[(dataset, row)])])


def read_report_csv(path: str | Path) -> EERReport:
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["system", "dataset", "row", "eer_percent"]:
            raise EvalError(f"unexpected report header in {path}: {header}")
        system = None
        cells = {}
        for fields in reader:
            if len(fields) != 4:
                raise EvalError(f"malformed report row in {path}: {fields}")
            sys_name, dataset, row, value = fields
            if system is None:
                system = sys_name
            elif system != sys_name:
                raise EvalError(
                    f"report {path} mixes systems {system!r} and {sys_name!r}"
                )
            if row not in ROW_ORDER:
                raise EvalError(f"unknown report row {row!r} in {path}")
            cells[(dataset, row)] = float(value)
    if system is None or not cells:
        raise EvalError(f"report {path} has no rows")
    return EERReport(system=system, cells=cells)


def render_table(reports: list[EERReport]) -> str:
    """Plain-text table: one column per system, rows grouped by dataset."""
    if not reports:
        raise EvalError("need at least one report to render")
    keys = []
    for report in reports:
        for key in _sorted_keys(report.cells):
            if key not in keys:
                keys.append(key)
    keys.sort(key=lambda k: (k[0], ROW_ORDER.index(k[1])))
    header = ["dataset", "row"] + [r.system for r in reports]
    lines = [header]
    for dataset, row in keys:
        line = [dataset, row]
        for report in reports:
            value = report.cells.get((dataset, row))
            line.append(render_percent(value) if value is not None else "-")
        lines.append(line)
    widths = [max(len(line[i]) for line in lines) for i in range(len(header))]
    out = []
    for line in lines:
        out.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(line)))
    return "\n".join(out) + "\n"


def compare_runs(a: EERReport, b: EERReport) -> dict[tuple[str, str], float | None]:
    """Absolute per-cell EER difference in percentage points.

    Cells present in only one report map to ``None``.
    """
    deltas: dict[tuple[str, str], float | None] = {}
    for key in set(a.cells) | set(b.cells):
        if key in a.cells and key in b.cells:
            deltas[key] = abs(a.cells[key] - b.cells[key])
        else:
            deltas[key] = None
    return deltas


def render_deltas(a: EERReport, b: EERReport) -> str:
    deltas = compare_runs(a, b)
    lines = [f"dataset  row  |{a.system} - {b.system}|"]
    for key in sorted(deltas, key=lambda k: (k[0], ROW_ORDER.index(k[1]))):
        value = deltas[key]
        rendered = render_percent(value) if value is not None else "absent"
        lines.append(f"{key[0]}  {key[1]}  {rendered}")
    return "\n".join(lines) + "\n"

"""Presentation-attack-detection metrics: APCER / BPCER / ACER, EER, TPR@FPR.

Conventions (fixed across the toolkit):
  * bonafide is the positive class;
  * a sample is decided bonafide iff score >= threshold (ties accept);
  * APCER = fraction of attacks decided bonafide,
    BPCER = fraction of bonafide decided attack,
    ACER  = (APCER + BPCER) / 2.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .core import FlexFasError, Label, ScoreRecord

TPR_FPR_TARGETS = (0.001, 0.01)


class ThresholdRule(Enum):
    EER_ON_VALIDATION = "eer_on_validation"
    FIXED_0_5 = "fixed_0_5"


@dataclass(frozen=True)
class EvalReport:
    apcer: float
    bpcer: float
    acer: float
    threshold: float
    eer: float
    tpr_at_fpr: dict[float, float]
    counts: tuple[int, int]  # (n_bonafide, n_attack)
    per_pai_apcer: dict[str, float]

    def to_json_dict(self) -> dict:
        d = {
            "apcer": self.apcer,
            "bpcer": self.bpcer,
            "acer": self.acer,
            "eer": self.eer,
            "threshold": self.threshold,
            "n_bonafide": self.counts[0],
            "n_attack": self.counts[1],
            "per_pai_apcer": self.per_pai_apcer,
        }
        for target, tpr in self.tpr_at_fpr.items():
            d[f"tpr_at_fpr_{target:g}"] = tpr
        return d


def _split_scores(records: list[ScoreRecord]) -> tuple[np.ndarray, np.ndarray]:
    bona = np.array([r.score for r in records if r.label is Label.BONAFIDE], dtype=float)
    attack = np.array([r.score for r in records if r.label is Label.ATTACK], dtype=float)
    if bona.size == 0 or attack.size == 0:
        raise FlexFasError(
            "ONE_CLASS_ONLY",
            f"need both classes, got {bona.size} bonafide / {attack.size} attack",
        )
    return bona, attack


def _rates_at(bona: np.ndarray, attack: np.ndarray, t: float) -> tuple[float, float]:
    apcer = float(np.mean(attack >= t))
    bpcer = float(np.mean(bona < t))
    return apcer, bpcer


def classify_rates(
    records: list[ScoreRecord], threshold: float
) -> tuple[float, float, float]:
    """APCER, BPCER, ACER at a fixed decision threshold."""
    bona, attack = _split_scores(records)
    apcer, bpcer = _rates_at(bona, attack, threshold)
    return apcer, bpcer, (apcer + bpcer) / 2.0


def _candidate_thresholds(scores: np.ndarray) -> np.ndarray:
    """Midpoints of adjacent distinct scores plus accept-all / reject-all sentinels.

    The sentinels are min-1 and max+1: finite stand-ins for -inf/+inf that
    select the same degenerate operating points while staying JSON-safe.
    """
    distinct = np.unique(scores)
    mids = (distinct[:-1] + distinct[1:]) / 2.0
    return np.concatenate(([distinct[0] - 1.0], mids, [distinct[-1] + 1.0]))


def eer_threshold(records: list[ScoreRecord]) -> tuple[float, float]:
    """Threshold minimizing |APCER - BPCER|; ties resolved to the lower threshold.

    Returns (threshold, eer) with eer = (APCER + BPCER) / 2 at the chosen
    threshold.
    """
    bona, attack = _split_scores(records)
    cands = _candidate_thresholds(np.concatenate([bona, attack]))
    # [n_cand] rates via broadcasting; candidates are ascending, so argmin
    # already breaks gap ties toward the lower threshold.
    apcer = np.mean(attack[None, :] >= cands[:, None], axis=1)
    bpcer = np.mean(bona[None, :] < cands[:, None], axis=1)
    idx = int(np.argmin(np.abs(apcer - bpcer)))
    return float(cands[idx]), float((apcer[idx] + bpcer[idx]) / 2.0)


def tpr_at_fpr(records: list[ScoreRecord], fpr_target: float) -> float:
    """Max TPR over thresholds with FPR <= fpr_target (step-wise, no interpolation).

    TPR(t) = fraction of bonafide >= t, FPR(t) = fraction of attacks >= t.
    """
    if not 0.0 < fpr_target < 1.0:
        raise FlexFasError("VALUE_RANGE", f"fpr_target {fpr_target} not in (0, 1)")
    bona, attack = _split_scores(records)
    cands = _candidate_thresholds(np.concatenate([bona, attack]))
    tpr = np.mean(bona[None, :] >= cands[:, None], axis=1)
    fpr = np.mean(attack[None, :] >= cands[:, None], axis=1)
    feasible = fpr <= fpr_target
    if not feasible.any():  # unreachable: the reject-all sentinel has FPR 0
        return 0.0
    return float(tpr[feasible].max())


def _per_pai_apcer(records: list[ScoreRecord], threshold: float) -> dict[str, float]:
    by_pai: dict[str, list[float]] = {}
    for r in records:
        if r.label is Label.ATTACK:
            by_pai.setdefault(r.pai or "unknown", []).append(r.score)
    return {
        pai: float(np.mean(np.array(scores) >= threshold))
        for pai, scores in sorted(by_pai.items())
    }


def build_report(
    val_records: list[ScoreRecord] | None,
    test_records: list[ScoreRecord],
    rule: ThresholdRule,
) -> EvalReport:
    """Report on test records at a threshold chosen per the rule.

    EER_ON_VALIDATION fits the threshold on val_records; FIXED_0_5 uses 0.5
    and ignores val_records entirely. The eer field is always the test-set
    EER (threshold-free rank statistic), independent of the rule.
    """
    if rule is ThresholdRule.EER_ON_VALIDATION:
        if not val_records:
            raise FlexFasError("ONE_CLASS_ONLY", "EER_ON_VALIDATION needs val records")
        threshold, _ = eer_threshold(val_records)
    else:
        threshold = 0.5
    apcer, bpcer, acer = classify_rates(test_records, threshold)
    _, test_eer = eer_threshold(test_records)
    bona, attack = _split_scores(test_records)
    return EvalReport(
        apcer=apcer,
        bpcer=bpcer,
        acer=acer,
        threshold=threshold,
        eer=test_eer,
        tpr_at_fpr={t: tpr_at_fpr(test_records, t) for t in TPR_FPR_TARGETS},
        counts=(int(bona.size), int(attack.size)),
        per_pai_apcer=_per_pai_apcer(test_records, threshold),
    )


def write_score_file(path, records: list[ScoreRecord]) -> None:
    """One record per line: sample_id,score,label,pai (pai empty if untagged)."""
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(f"{r.sample_id},{r.score!r},{r.label.value},{r.pai or ''}\n")


def read_score_file(path) -> list[ScoreRecord]:
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 4:
                raise FlexFasError("PARSE_ERROR", f"line {lineno}: expected 4 fields")
            sid, score, label, pai = parts
            records.append(
                ScoreRecord(sid, float(score), Label(label), pai or None)
            )
    return records

"""Shared test utilities: independent oracles and sample builders.

Everything here is deliberately naive (brute-force sweeps, central finite
differences, O(n^2) rank statistics) so it stays independent of the library
code it checks.
"""
from __future__ import annotations

import numpy as np
import torch

from flexfas.core import Label, Modality, ModalitySample
from flexfas.metrics import ThresholdRule


def make_sample(
    rng=None,
    sample_id="s0",
    label=Label.BONAFIDE,
    hw=(8, 8),
    modalities=(Modality.RGB, Modality.DEPTH, Modality.IR),
    pai=None,
):
    rng = rng or np.random.default_rng(0)
    h, w = hw
    images = {}
    for m in modalities:
        c = 3 if m is Modality.RGB else 1
        images[m] = rng.random((c, h, w)).astype(np.float32)
    return ModalitySample(
        sample_id=sample_id, images=images, label=label, pai=pai, subject_id="subj0"
    )


# --- brute-force metric sweep -------------------------------------------------


def sweep_rates(bona, attack, t):
    apcer = float(sum(1 for s in attack if s >= t)) / len(attack)
    bpcer = float(sum(1 for s in bona if s < t)) / len(bona)
    return apcer, bpcer


def sweep_candidates(scores):
    distinct = sorted(set(scores))
    mids = [(a + b) / 2.0 for a, b in zip(distinct[:-1], distinct[1:])]
    return [distinct[0] - 1.0] + mids + [distinct[-1] + 1.0]


def sweep_eer(bona, attack):
    best = None
    for t in sweep_candidates(list(bona) + list(attack)):
        apcer, bpcer = sweep_rates(bona, attack, t)
        key = (abs(apcer - bpcer), t)
        if best is None or key < best[0]:
            best = (key, t, (apcer + bpcer) / 2.0)
    return best[1], best[2]


def sweep_tpr_at_fpr(bona, attack, target):
    best = 0.0
    for t in sweep_candidates(list(bona) + list(attack)):
        tpr = float(sum(1 for s in bona if s >= t)) / len(bona)
        fpr = float(sum(1 for s in attack if s >= t)) / len(attack)
        if fpr <= target:
            best = max(best, tpr)
    return best


def random_score_records(rng, n, tie_prob=0.3):
    """Random two-class score list with deliberate ties."""
    from flexfas.core import ScoreRecord

    n_bona = int(rng.integers(1, n))
    n_attack = n - n_bona
    if n_attack == 0:
        n_bona, n_attack = n - 1, 1
    pool = np.round(rng.random(max(2, int(n * (1 - tie_prob)))), 3)
    scores = rng.choice(pool, size=n)
    labels = [Label.BONAFIDE] * n_bona + [Label.ATTACK] * n_attack
    return [
        ScoreRecord(f"r{i}", float(s), lab, "print" if lab is Label.ATTACK else None)
        for i, (s, lab) in enumerate(zip(scores, labels))
    ]


def split_scores(records):
    bona = [r.score for r in records if r.label is Label.BONAFIDE]
    attack = [r.score for r in records if r.label is Label.ATTACK]
    return bona, attack


# --- rank AUC (Mann-Whitney, ties get half credit) ------------------------------


def rank_auc(pos, neg):
    pos = np.asarray(pos, dtype=np.float64)[:, None]
    neg = np.asarray(neg, dtype=np.float64)[None, :]
    wins = np.sum(pos > neg) + 0.5 * np.sum(pos == neg)
    return float(wins) / (pos.shape[0] * neg.shape[1])


# --- finite differences ----------------------------------------------------------


def finite_diff_grad(f, tensor, eps=1e-5):
    """Central-difference gradient of scalar f() w.r.t. tensor (in-place probes)."""
    grad = torch.zeros_like(tensor)
    flat = tensor.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.numel()):
        with torch.no_grad():
            orig = float(flat[i])
            flat[i] = orig + eps
            fp = float(f())
            flat[i] = orig - eps
            fm = float(f())
            flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * eps)
    return grad


def max_rel_err(analytic: torch.Tensor, numeric: torch.Tensor) -> float:
    a = analytic.detach().reshape(-1)
    n = numeric.reshape(-1)
    denom = torch.maximum(
        torch.maximum(a.abs(), n.abs()), torch.full_like(a, 1e-6)
    )
    return float(((a - n).abs() / denom).max())


def check_grads(loss_fn, tensors, tol=1e-4, eps=1e-5):
    """Compare autograd and finite differences for every tensor; returns worst err."""
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        fd = finite_diff_grad(lambda: loss_fn(), t, eps=eps)
        analytic = t.grad if t.grad is not None else torch.zeros_like(t)
        worst = max(worst, max_rel_err(analytic, fd))
    assert worst < tol, f"max relative gradient error {worst} >= {tol}"
    return worst


def check_grads_sampled(loss_fn, tensors, rng, n_coords=60, tol=1e-4, eps=1e-5):
    """Spot-check random coordinates across tensors against finite differences."""
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    loss = loss_fn()
    loss.backward()
    sizes = np.array([t.numel() for t in tensors])
    total = int(sizes.sum())
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    worst = 0.0
    for coord in coords:
        ti = int(np.searchsorted(np.cumsum(sizes), coord, side="right"))
        offset = int(coord - (np.cumsum(sizes)[ti] - sizes[ti]))
        t = tensors[ti]
        flat = t.reshape(-1)
        with torch.no_grad():
            orig = float(flat[offset])
            flat[offset] = orig + eps
            fp = float(loss_fn())
            flat[offset] = orig - eps
            fm = float(loss_fn())
            flat[offset] = orig
        fd = (fp - fm) / (2.0 * eps)
        analytic = 0.0 if t.grad is None else float(t.grad.reshape(-1)[offset])
        denom = max(abs(analytic), abs(fd), 1e-6)
        worst = max(worst, abs(analytic - fd) / denom)
    assert worst < tol, f"max relative gradient error {worst} >= {tol}"
    return worst

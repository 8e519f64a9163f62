"""Lightweight perturbation check of cached explanations.

A cached surrogate is re-scored against the current model on a handful of
Gaussian perturbations around the query, using the same fidelity functional
the explainers report.  The default budget of 15 evaluations is a few
percent of regenerating the explanation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .explainers import (DEFAULT_BASE_COST, FIDELITY_PROBES, PERTURBATION_SCALE, Explanation,
                         fidelity, generate, local_probe)
from .models import random_model, update_model


@dataclass(frozen=True)
class VerificationConfig:
    n_perturbations: int = 15
    fidelity_threshold: float = 0.90
    perturbation_scale: float = PERTURBATION_SCALE
    seed: int = 0

    def __post_init__(self):
        if self.n_perturbations < 1:
            raise ValueError("n_perturbations must be >= 1")
        if not 0.0 < self.fidelity_threshold <= 1.0:
            raise ValueError("fidelity_threshold must be in (0, 1]")


@dataclass(frozen=True)
class VerificationResult:
    valid: bool
    measured_fidelity: float
    evals_used: int


def verify(expl: Explanation, x_q, model, cfg: VerificationConfig = VerificationConfig(),
           seed: int | None = None, threshold: float | None = None) -> VerificationResult:
    """Score ``expl`` against ``model`` on ``cfg.n_perturbations`` points near ``x_q``.

    ``threshold`` overrides ``cfg.fidelity_threshold`` for a single request.
    """
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    probe = local_probe(x_q, cfg.n_perturbations, cfg.perturbation_scale, rng)
    measured = fidelity(expl, model, probe)
    thr = cfg.fidelity_threshold if threshold is None else threshold
    return VerificationResult(measured >= thr, measured, cfg.n_perturbations)


def true_fidelity(expl: Explanation, x_q, model, seed: int,
                  n_probe: int = FIDELITY_PROBES,
                  scale: float = PERTURBATION_SCALE) -> float:
    """Full-probe fidelity; the ground truth for detection experiments."""
    rng = np.random.default_rng([int(seed), 0x7E57])
    return fidelity(expl, model, local_probe(x_q, n_probe, scale, rng))


@dataclass
class DetectionReport:
    detection: float
    false_positive: float
    cost_ratio: float
    n: int
    threshold: float
    seeds: List[int] = field(default_factory=list)
    truly_invalid: int = 0
    truly_valid: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def detection_rate_experiment(model_pairs: Sequence[Tuple[object, object]],
                              cached: Sequence[Sequence[Tuple[np.ndarray, Explanation]]],
                              cfg: VerificationConfig = VerificationConfig(),
                              regeneration_cost: float = 500.0,
                              seeds: Sequence[int] = ()) -> DetectionReport:
    """How well verification separates invalidated from still-valid explanations.

    ``cached[i]`` holds ``(x_q, explanation)`` pairs generated under
    ``model_pairs[i][0]``; they are checked against the drifted
    ``model_pairs[i][1]``.  An explanation is truly invalid when its
    200-point fidelity under the drifted model is below the threshold.
    ``detection`` is NaN when nothing was invalidated.
    """
    if not model_pairs or not any(len(c) for c in cached):
        raise ValueError("detection experiment needs model pairs and cached explanations")
    if len(model_pairs) != len(cached):
        raise ValueError("one list of cached explanations per model pair")
    caught = missed = false_pos = true_neg = 0
    for pi, ((_, drifted), items) in enumerate(zip(model_pairs, cached)):
        for j, (x_q, expl) in enumerate(items):
            s = 7919 * pi + j
            truth_valid = true_fidelity(expl, x_q, drifted, seed=s) >= cfg.fidelity_threshold
            res = verify(expl, x_q, drifted, cfg, seed=s)
            if truth_valid:
                true_neg += res.valid
                false_pos += not res.valid
            else:
                caught += not res.valid
                missed += res.valid
    n_invalid, n_valid = caught + missed, false_pos + true_neg
    return DetectionReport(
        detection=caught / n_invalid if n_invalid else float("nan"),
        false_positive=false_pos / n_valid if n_valid else 0.0,
        cost_ratio=cfg.n_perturbations / regeneration_cost,
        n=cfg.n_perturbations,
        threshold=cfg.fidelity_threshold,
        seeds=list(seeds),
        truly_invalid=n_invalid,
        truly_valid=n_valid,
    )


def drift_benchmark(magnitude: float, seed: int = 0, n_models: int = 10, n_points: int = 20,
                    input_dim: int = 16, kind: str = "mlp2", num_classes: int = 2,
                    hidden: int = 16, scale: float = 1.5, method: str = "lime_local",
                    cfg: VerificationConfig = VerificationConfig(),
                    regeneration_cost: float = DEFAULT_BASE_COST["kernel_shap"]
                    ) -> DetectionReport:
    """Detection experiment on a seeded family of toy models and their drifted copies.

    Explanations are generated at uniform points of ``[-1, 1]^d`` under each
    original model and verified against its drifted successor.
    """
    rng = np.random.default_rng([int(seed), 0xB3AC])
    pairs, cached = [], []
    for i in range(n_models):
        m_seed, d_seed = (int(v) for v in rng.integers(0, 2**31, 2))
        model = random_model(kind, input_dim, num_classes, seed=m_seed, model_id=f"bench-{i}",
                             hidden=hidden, scale=scale)
        pairs.append((model, update_model(model, d_seed, magnitude)))
        X = rng.uniform(-1.0, 1.0, (n_points, input_dim))
        g_seeds = rng.integers(0, 2**31, n_points)
        cached.append([(x, generate(method, model, x, seed=int(s)))
                       for x, s in zip(X, g_seeds)])
    return detection_rate_experiment(pairs, cached, cfg, regeneration_cost, seeds=[int(seed)])

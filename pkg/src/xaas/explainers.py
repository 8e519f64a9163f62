"""Explanation methods, the fidelity functional, and per-method profiles.

Every explainer returns an :class:`Explanation` carrying an attribution
vector and a local linear surrogate ``g(x') = w . x' + b`` that predicts the
probability of the explained label.  The surrogate is what the cache and the
verifier use to re-predict around a query.

``generation_cost`` counts the model evaluations used to build the
explanation.  The fidelity audit that fills ``fidelity_estimate`` is run on
the unwrapped model and is not part of it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, FrozenSet, Optional, Sequence

import numpy as np

from .models import CountingModel, MethodNotApplicableError, _as_input, base_model

PERTURBATION_SCALE = 0.1
FIDELITY_PROBES = 200
RIDGE = 1e-6
EXACT_SHAPLEY_MAX_DIM = 12

METHOD_IDS = ("lime_local", "kernel_shap", "grad_attr", "fast_saliency")


@dataclass(frozen=True, eq=False)
class Explanation:
    attribution: np.ndarray
    weights: np.ndarray
    intercept: float
    method_id: str
    model_id: str
    model_version: int
    cached_prediction: int
    fidelity_estimate: float
    generation_cost: int

    def predict(self, X) -> np.ndarray:
        return surrogate_predict(self, X)

    def to_dict(self) -> dict:
        return {
            "method": self.method_id,
            "model_id": self.model_id,
            "model_version": self.model_version,
            "prediction": self.cached_prediction,
            "attribution": [float(v) for v in self.attribution],
            "surrogate": {"w": [float(v) for v in self.weights], "b": float(self.intercept)},
            "fidelity": float(self.fidelity_estimate),
            "cost_evals": int(self.generation_cost),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Explanation":
        return cls(
            attribution=np.asarray(doc["attribution"], dtype=np.float64),
            weights=np.asarray(doc["surrogate"]["w"], dtype=np.float64),
            intercept=float(doc["surrogate"]["b"]),
            method_id=doc["method"],
            model_id=doc["model_id"],
            model_version=int(doc["model_version"]),
            cached_prediction=int(doc["prediction"]),
            fidelity_estimate=float(doc["fidelity"]),
            generation_cost=int(doc["cost_evals"]),
        )

    def equals(self, other: "Explanation") -> bool:
        return self.to_dict() == other.to_dict()


@dataclass(frozen=True)
class MethodProfile:
    method_id: str
    base_cost: int
    fidelity_prior: float
    kinds: FrozenSet[str] = frozenset({"linear", "mlp2", "tree"})

    def __post_init__(self):
        if self.base_cost < 1:
            raise ValueError("base_cost must be >= 1")

    def applicable(self, kind: str) -> bool:
        return kind in self.kinds


def surrogate_predict(expl: Explanation, X) -> np.ndarray | float:
    """Evaluate the clamped linear surrogate at one point or a batch."""
    X = np.asarray(X, dtype=np.float64)
    out = np.clip(X @ expl.weights + expl.intercept, 0.0, 1.0)
    return float(out) if X.ndim == 1 else out


def fidelity(expl: Explanation, model, probe) -> float:
    """1 - mean |prob_f(x_i) - g(x_i)| over the probe set, for the explained label."""
    P = np.asarray(probe, dtype=np.float64)
    if P.ndim == 1:
        P = P[None, :]
    if P.shape[0] < 1:
        raise ValueError("probe set must be non-empty")
    f = model.class_prob(P, expl.cached_prediction)
    g = surrogate_predict(expl, P)
    return float(np.clip(1.0 - np.mean(np.abs(f - g)), 0.0, 1.0))


def local_probe(x, n: int, scale: float, rng: np.random.Generator) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x + scale * rng.standard_normal((n, x.shape[0]))


def _audit(expl: Explanation, model, x, seed, n_probe: int, scale: float) -> Explanation:
    # fresh stream, independent of the generation sample
    rng = np.random.default_rng([int(seed), 0xF1DE])
    fid = fidelity(expl, base_model(model), local_probe(x, n_probe, scale, rng))
    return replace(expl, fidelity_estimate=fid)


def _explained_label(model, x) -> int:
    return int(np.argmax(base_model(model).proba(x[None, :])[0]))


def _weighted_lstsq(A: np.ndarray, y: np.ndarray, sw: np.ndarray) -> np.ndarray:
    Aw = A * sw[:, None]
    G = A.T @ Aw
    r = Aw.T @ y
    try:
        if np.linalg.cond(G) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned")
        return np.linalg.solve(G, r)
    except np.linalg.LinAlgError:
        return np.linalg.solve(G + RIDGE * np.eye(G.shape[0]), r)


def explain_lime(model, x, n_samples: int = 1000, seed: int = 0, *,
                 scale: float = PERTURBATION_SCALE, label: Optional[int] = None,
                 n_probe: int = FIDELITY_PROBES) -> Explanation:
    """Distance-weighted local linear fit of the explained label's probability."""
    x = _as_input(model, x)
    d = x.shape[0]
    if n_samples < d + 1:
        raise ValueError(f"lime_local needs n_samples >= d+1 = {d + 1}")
    if not scale > 0:
        raise ValueError("perturbation scale must be > 0")
    label = _explained_label(model, x) if label is None else label
    rng = np.random.default_rng(seed)
    Z = local_probe(x, n_samples, scale, rng)
    y = model.class_prob(Z, label)
    width = 0.75 * math.sqrt(d) * scale
    sw = np.exp(-np.sum((Z - x) ** 2, axis=1) / width**2)
    A = np.hstack([Z, np.ones((n_samples, 1))])
    coef = _weighted_lstsq(A, y, sw)
    m = base_model(model)
    expl = Explanation(coef[:d].copy(), coef[:d].copy(), float(coef[d]), "lime_local",
                       m.model_id, m.version, label, 0.0, n_samples)
    return _audit(expl, model, x, seed, n_probe, scale)


def _shapley_kernel_size_probs(d: int) -> np.ndarray:
    s = np.arange(1, d)
    mass = (d - 1) / (s * (d - s))
    return mass / mass.sum()


def explain_kernel_shap(model, x, n_samples: int = 500, seed: int = 0, *,
                        label: Optional[int] = None, scale: float = PERTURBATION_SCALE,
                        n_probe: int = FIDELITY_PROBES) -> Explanation:
    """Kernel SHAP against the zero baseline.

    Coalition sizes are drawn from the Shapley kernel's mass per size and
    sampled in complementary pairs; the regression enforces efficiency
    (attributions sum to f(x) - f(0)).  Two of the ``n_samples`` evaluations
    go to the endpoints f(x) and f(0).

    The surrogate maps coalition weights back to input space:
    ``g(x') = f(0) + sum_i phi_i x'_i / x_i``, which reproduces f(x) at x.
    """
    x = _as_input(model, x)
    d = x.shape[0]
    if n_samples < 2 * d:
        raise ValueError(f"kernel_shap needs n_samples >= 2d = {2 * d}")
    label = _explained_label(model, x) if label is None else label
    rng = np.random.default_rng(seed)
    ends = model.class_prob(np.vstack([np.zeros(d), x]), label)
    f0, fx = float(ends[0]), float(ends[1])

    n_coal = n_samples - 2
    half = n_coal // 2
    sizes = rng.choice(np.arange(1, d), size=half, p=_shapley_kernel_size_probs(d))
    keys = rng.random((half, d))
    # a uniformly random subset of each drawn size: the `size` smallest keys
    ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
    M = (ranks < sizes[:, None]).astype(np.float64)
    M = np.vstack([M, 1.0 - M])
    if n_coal % 2:
        extra = (rng.random(d) < 0.5).astype(np.float64)
        if extra.sum() in (0, d):
            extra[0] = 1.0 - extra[0]
        M = np.vstack([M, extra])
    v = model.class_prob(M * x, label)

    # efficiency-constrained least squares: eliminate the last coordinate
    y = v - f0 - M[:, -1] * (fx - f0)
    A = M[:, :-1] - M[:, -1:]
    phi_head = _weighted_lstsq(A, y, np.ones(len(y)))
    phi = np.append(phi_head, (fx - f0) - phi_head.sum())

    nz = np.abs(x) > 1e-12
    w = np.zeros(d)
    w[nz] = phi[nz] / x[nz]
    m = base_model(model)
    expl = Explanation(phi, w, f0, "kernel_shap", m.model_id, m.version, label, 0.0,
                       n_samples)
    return _audit(expl, model, x, seed, n_probe, scale)


def exact_shapley(model, x, label: Optional[int] = None) -> np.ndarray:
    """Exact Shapley values by enumerating all 2^d coalitions (zero baseline)."""
    x = np.asarray(x, dtype=np.float64)
    d = x.shape[0]
    if d > EXACT_SHAPLEY_MAX_DIM:
        raise ValueError(f"exact enumeration refused for d={d} > {EXACT_SHAPLEY_MAX_DIM}")
    if label is None:
        label = int(np.argmax(model.proba(x[None, :])[0]))
    masks = np.array(list(itertools.product((0.0, 1.0), repeat=d)))
    values = model.class_prob(masks * x, label)
    index = {tuple(m.astype(int)): i for i, m in enumerate(masks)}
    fact = [math.factorial(k) for k in range(d + 1)]
    phi = np.zeros(d)
    for m, val in zip(masks.astype(int), values):
        s = int(m.sum())
        for i in range(d):
            if m[i]:
                continue
            with_i = list(m)
            with_i[i] = 1
            wt = fact[s] * fact[d - s - 1] / fact[d]
            phi[i] += wt * (values[index[tuple(with_i)]] - val)
    return phi


def explain_gradient(model, x, seed: int = 0, *, label: Optional[int] = None,
                     scale: float = PERTURBATION_SCALE,
                     n_probe: int = FIDELITY_PROBES) -> Explanation:
    """Gradient x input attribution with a first-order Taylor surrogate.

    Costs one forward and one backward pass.
    """
    x = _as_input(model, x)
    if not base_model(model).differentiable:
        raise MethodNotApplicableError(f"grad_attr not applicable to {model.kind} models")
    fx_all = model.proba(x[None, :])[0]
    label = int(np.argmax(fx_all)) if label is None else label
    g = model.grad(x, label)
    b = float(fx_all[label] - g @ x)
    m = base_model(model)
    expl = Explanation(g * x, g.copy(), b, "grad_attr", m.model_id, m.version, label, 0.0, 2)
    return _audit(expl, model, x, seed, n_probe, scale)


def explain_fast_saliency(model, x, seed: int = 0, *, n_evals: int = 10,
                          label: Optional[int] = None, scale: float = PERTURBATION_SCALE,
                          n_probe: int = FIDELITY_PROBES) -> Explanation:
    """Simultaneous-perturbation gradient estimate from ``n_evals`` evaluations.

    Uses ``n_evals // 2`` Rademacher direction pairs with step ``scale``;
    model-agnostic, so it also covers trees.
    """
    x = _as_input(model, x)
    d = x.shape[0]
    pairs = max(1, n_evals // 2)
    rng = np.random.default_rng(seed)
    D = rng.choice((-1.0, 1.0), size=(pairs, d))
    P = model.proba(np.vstack([x + scale * D, x - scale * D]))
    if label is None:
        label = int(np.argmax(P.mean(axis=0)))
    fp, fm = P[:pairs, label], P[pairs:, label]
    g = ((fp - fm) / (2 * scale)) @ D / pairs
    b = float(np.mean((fp + fm) / 2) - g @ x)
    m = base_model(model)
    expl = Explanation(g * x, g, b, "fast_saliency", m.model_id, m.version, label, 0.0,
                       2 * pairs)
    return _audit(expl, model, x, seed, n_probe, scale)


DEFAULT_BASE_COST = {"lime_local": 1000, "kernel_shap": 500, "grad_attr": 2,
                     "fast_saliency": 10}

_DIFFERENTIABLE = frozenset({"linear", "mlp2"})
_ALL_KINDS = frozenset({"linear", "mlp2", "tree"})


def default_profiles(fidelity_priors: Dict[str, float],
                     base_costs: Optional[Dict[str, int]] = None) -> Dict[str, MethodProfile]:
    costs = dict(DEFAULT_BASE_COST, **(base_costs or {}))
    return {
        mid: MethodProfile(mid, int(costs[mid]), float(fidelity_priors[mid]),
                           _DIFFERENTIABLE if mid == "grad_attr" else _ALL_KINDS)
        for mid in METHOD_IDS
    }


def generate(method_id: str, model, x, seed: int, base_cost: Optional[int] = None,
             label: Optional[int] = None) -> Explanation:
    """Dispatch to the explainer for ``method_id`` at its profile budget."""
    cost = base_cost or DEFAULT_BASE_COST[method_id]
    if method_id == "lime_local":
        return explain_lime(model, x, n_samples=cost, seed=seed, label=label)
    if method_id == "kernel_shap":
        return explain_kernel_shap(model, x, n_samples=cost, seed=seed, label=label)
    if method_id == "grad_attr":
        return explain_gradient(model, x, seed=seed, label=label)
    if method_id == "fast_saliency":
        return explain_fast_saliency(model, x, seed=seed, n_evals=cost, label=label)
    raise ValueError(f"unknown method {method_id!r}")


def calibrate_fidelity_priors(models: Sequence, n_points: int = 20, seed: int = 0,
                              n_probe: int = FIDELITY_PROBES) -> Dict[str, float]:
    """Mean fidelity of each method over a fixed calibration probe set.

    For each model, ``n_points`` inputs are drawn uniformly in [-1, 1]^d and
    explained with every applicable method at its default budget.
    """
    scores: Dict[str, list] = {m: [] for m in METHOD_IDS}
    rng = np.random.default_rng(seed)
    for mi, model in enumerate(models):
        X = rng.uniform(-1, 1, (n_points, model.input_dim))
        for i, x in enumerate(X):
            s = 1_000_003 * mi + i
            for mid in METHOD_IDS:
                if mid == "grad_attr" and not model.differentiable:
                    continue
                scores[mid].append(generate(mid, model, x, seed=s).fidelity_estimate)
    return {m: float(np.mean(v)) for m, v in scores.items() if v}

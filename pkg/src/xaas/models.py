"""Small analytic predictive models with versioning and seeded drift.

Three kinds are supported:

* ``linear`` -- logistic (binary) or softmax (multiclass) regression.
* ``mlp2``   -- one tanh hidden layer followed by a logistic/softmax head.
* ``tree``   -- a complete binary decision tree of axis-aligned splits whose
  leaves hold class logits.  Not differentiable.

Binary models carry a single output logit; the probability of class 1 is the
sigmoid of that logit.  Multiclass models carry one logit per class.

Handles are immutable: parameter arrays are made read-only on construction
and :func:`update_model` always returns a new handle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Dict, Mapping, NamedTuple, Sequence

import numpy as np

KINDS = ("linear", "mlp2", "tree")

# Parameter names per kind, in serialization order.
PARAM_ORDER = {
    "linear": ("W", "b"),
    "mlp2": ("W1", "b1", "W2", "b2"),
    "tree": ("feature", "threshold", "leaf"),
}


class RejectedInputError(ValueError):
    """Input does not match the model's input dimension or is not finite."""


class MethodNotApplicableError(RuntimeError):
    """The requested operation is undefined for this model kind."""


class Prediction(NamedTuple):
    label: int
    prob: float


def _freeze(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _softmax(z):
    # column loop: axis-1 reductions over a handful of classes are slow in numpy
    m = z[:, 0].copy()
    for j in range(1, z.shape[1]):
        np.maximum(m, z[:, j], out=m)
    e = np.exp(z - m[:, None])
    return e / (e @ np.ones(z.shape[1]))[:, None]


@dataclass(frozen=True, eq=False)
class ModelHandle:
    model_id: str
    version: int
    kind: str
    params: Mapping[str, np.ndarray]
    num_classes: int
    input_dim: int
    _depth: int = field(default=0, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        frozen = {k: _freeze(self.params[k]) for k in PARAM_ORDER[self.kind]}
        object.__setattr__(self, "params", frozen)
        if self.kind == "tree":
            n_internal = frozen["feature"].shape[0]
            depth = int(round(np.log2(n_internal + 1)))
            if 2**depth - 1 != n_internal or frozen["leaf"].shape[0] != 2**depth:
                raise ValueError("tree must be complete: 2^k-1 splits and 2^k leaves")
            object.__setattr__(self, "_depth", depth)
        self._check_shapes()

    def _check_shapes(self):
        out = 1 if self.num_classes == 2 else self.num_classes
        p = self.params
        d = self.input_dim
        if self.kind == "linear":
            ok = p["W"].shape == (out, d) and p["b"].shape == (out,)
        elif self.kind == "mlp2":
            h = p["W1"].shape[0]
            ok = (p["W1"].shape == (h, d) and p["b1"].shape == (h,)
                  and p["W2"].shape == (out, h) and p["b2"].shape == (out,))
        else:
            ok = p["leaf"].shape[1] == out and np.all(p["feature"] < d)
        if not ok:
            raise ValueError(f"parameter shapes inconsistent for {self.kind} model")

    @property
    def differentiable(self) -> bool:
        return self.kind in ("linear", "mlp2")

    def logits(self, X: np.ndarray) -> np.ndarray:
        p = self.params
        if self.kind == "linear":
            return X @ p["W"].T + p["b"]
        if self.kind == "mlp2":
            return np.tanh(X @ p["W1"].T + p["b1"]) @ p["W2"].T + p["b2"]
        node = np.zeros(X.shape[0], dtype=np.int64)
        feat = p["feature"].astype(np.int64)
        thr = p["threshold"]
        rows = np.arange(X.shape[0])
        for _ in range(self._depth):
            go_right = X[rows, feat[node]] > thr[node]
            node = 2 * node + 1 + go_right
        return p["leaf"][node - (2**self._depth - 1)]

    def proba(self, X) -> np.ndarray:
        """Class probabilities for a batch, shape ``(n, num_classes)``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise RejectedInputError(
                f"expected inputs of dim {self.input_dim}, got shape {X.shape}")
        z = self.logits(X)
        if self.num_classes == 2:
            p1 = _sigmoid(z[:, 0])
            return np.stack([1.0 - p1, p1], axis=1)
        return _softmax(z)

    def class_prob(self, X, label: int) -> np.ndarray:
        """Probability of one class for a batch, shape ``(n,)``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise RejectedInputError(
                f"expected inputs of dim {self.input_dim}, got shape {X.shape}")
        z = self.logits(X)
        if self.num_classes == 2:
            p1 = _sigmoid(z[:, 0])
            return p1 if label == 1 else 1.0 - p1
        # p_c = 1 / sum_k exp(z_k - z_c); logit gaps are far from overflow here
        gaps = np.minimum(z - z[:, label:label + 1], 700.0)
        return 1.0 / (np.exp(gaps) @ np.ones(z.shape[1]))

    def grad(self, x: np.ndarray, label: int) -> np.ndarray:
        return gradient(self, x, label)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "model_id": self.model_id,
            "version": self.version,
            "kind": self.kind,
            "input_dim": self.input_dim,
            "num_classes": self.num_classes,
            "params": [self.params[k].tolist() for k in PARAM_ORDER[self.kind]],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def model_from_dict(doc: Mapping[str, Any]) -> ModelHandle:
    kind = doc["kind"]
    names = PARAM_ORDER[kind]
    if len(doc["params"]) != len(names):
        raise ValueError(f"{kind} model expects {len(names)} parameter arrays")
    params = dict(zip(names, (np.asarray(v, dtype=np.float64) for v in doc["params"])))
    return ModelHandle(
        model_id=str(doc["model_id"]),
        version=int(doc["version"]),
        kind=kind,
        params=params,
        num_classes=int(doc["num_classes"]),
        input_dim=int(doc["input_dim"]),
    )


def model_from_json(text: str) -> ModelHandle:
    return model_from_dict(json.loads(text))


def _as_input(model, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.input_dim:
        raise RejectedInputError(
            f"expected input of length {model.input_dim}, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise RejectedInputError("input contains non-finite entries")
    return x


def predict(model: ModelHandle, x) -> Prediction:
    """Label (argmax, lowest id on ties) and its probability."""
    x = _as_input(model, x)
    p = model.proba(x[None, :])[0]
    label = int(np.argmax(p))
    return Prediction(label, float(p[label]))


def gradient(model: ModelHandle, x, label: int) -> np.ndarray:
    """Analytic d prob(label) / dx."""
    if not model.differentiable:
        raise MethodNotApplicableError(f"gradient undefined for {model.kind} models")
    x = _as_input(model, x)
    p = model.params
    if model.kind == "linear":
        J = p["W"]                                     # dz/dx, (out, d)
    else:
        h = np.tanh(p["W1"] @ x + p["b1"])
        J = p["W2"] @ ((1.0 - h * h)[:, None] * p["W1"])
    probs = model.proba(x[None, :])[0]
    if model.num_classes == 2:
        g = probs[1] * probs[0] * J[0]
        return g if label == 1 else -g
    # d softmax_c / dz = p_c (e_c - p)
    return probs[label] * (J[label] - probs @ J)


def update_model(model: ModelHandle, seed: int, magnitude: float) -> ModelHandle:
    """Retraining drift: add seeded Gaussian noise of std ``magnitude`` to params.

    Tree split features are structural and left untouched; thresholds and
    leaf logits drift.
    """
    if magnitude < 0:
        raise ValueError("magnitude must be >= 0")
    rng = np.random.default_rng(seed)
    new = {}
    for name in PARAM_ORDER[model.kind]:
        arr = model.params[name]
        if name == "feature":
            new[name] = arr
        else:
            new[name] = arr + magnitude * rng.standard_normal(arr.shape)
    return ModelHandle(model.model_id, model.version + 1, model.kind, new,
                       model.num_classes, model.input_dim)


def linear_model(w, b, model_id: str = "linear", version: int = 0) -> ModelHandle:
    """Binary logistic model from a weight vector and scalar bias."""
    w = np.asarray(w, dtype=np.float64)
    return ModelHandle(model_id, version, "linear",
                       {"W": w[None, :], "b": np.array([float(b)])}, 2, w.shape[0])


def random_model(kind: str, input_dim: int, num_classes: int = 2, seed: int = 0,
                 model_id: str | None = None, hidden: int = 16, scale: float = 1.0,
                 depth: int = 3) -> ModelHandle:
    """Seeded random model of the given kind.

    ``scale`` multiplies the weight distributions; larger values give sharper,
    more curved decision surfaces.
    """
    rng = np.random.default_rng(seed)
    d = input_dim
    out = 1 if num_classes == 2 else num_classes
    if kind == "linear":
        params = {"W": scale * rng.normal(0, 2.0 / np.sqrt(d), (out, d)),
                  "b": 0.1 * rng.standard_normal(out)}
    elif kind == "mlp2":
        params = {"W1": scale * rng.normal(0, 1.5 / np.sqrt(d), (hidden, d)),
                  "b1": 0.5 * rng.standard_normal(hidden),
                  "W2": scale * rng.normal(0, 3.0 / np.sqrt(hidden), (out, hidden)),
                  "b2": 0.1 * rng.standard_normal(out)}
    elif kind == "tree":
        n_internal = 2**depth - 1
        params = {"feature": rng.integers(0, d, n_internal).astype(np.float64),
                  "threshold": rng.uniform(-0.6, 0.6, n_internal),
                  "leaf": scale * rng.normal(0, 2.0, (2**depth, out))}
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    return ModelHandle(model_id or f"{kind}-{seed}", 0, kind, params, num_classes, d)


class CountingModel:
    """Wraps a model and counts evaluations.

    Each row passed to :meth:`proba` counts as one evaluation; each analytic
    gradient counts as one (a backward pass).  The count belongs to a single
    explanation call and must not be shared across requests.
    """

    def __init__(self, base: ModelHandle):
        self.base = base
        self.count = 0

    def __getattr__(self, name):
        return getattr(self.base, name)

    def proba(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        self.count += X.shape[0] if X.ndim == 2 else 1
        return self.base.proba(X)

    def class_prob(self, X, label: int) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        self.count += X.shape[0] if X.ndim == 2 else 1
        return self.base.class_prob(X, label)

    def grad(self, x, label: int) -> np.ndarray:
        self.count += 1
        return gradient(self.base, x, label)


def base_model(model) -> ModelHandle:
    return model.base if isinstance(model, CountingModel) else model


def label_flip_fraction(model: ModelHandle, drifted: ModelHandle,
                        probe: Sequence) -> float:
    """Fraction of probe inputs whose predicted label differs between models."""
    P = np.asarray(probe, dtype=np.float64)
    a = np.argmax(model.proba(P), axis=1)
    b = np.argmax(drifted.proba(P), axis=1)
    return float(np.mean(a != b))

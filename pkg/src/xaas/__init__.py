"""Explainability as a service: semantic explanation caching, verification,
adaptive method selection, a discrete-event simulator and an NDJSON service."""

from .models import (ModelHandle, MethodNotApplicableError, RejectedInputError, gradient,
                     model_from_dict, model_from_json, predict, random_model, update_model)
from .explainers import (Explanation, MethodProfile, exact_shapley, explain_fast_saliency,
                         explain_gradient, explain_kernel_shap, explain_lime, fidelity,
                         surrogate_predict)
from .embedding import Encoder, EncoderConfig, distance, embed
from .cache import CacheConfig, CacheEntry, CacheTier, TwoTierCache, lookup
from .verification import VerificationConfig, verify
from .selector import Location, select

__version__ = "0.1.0"

__all__ = [
    "ModelHandle", "MethodNotApplicableError", "RejectedInputError", "gradient",
    "model_from_dict", "model_from_json", "predict", "random_model", "update_model",
    "Explanation", "MethodProfile", "exact_shapley", "explain_fast_saliency",
    "explain_gradient", "explain_kernel_shap", "explain_lime", "fidelity",
    "surrogate_predict", "Encoder", "EncoderConfig", "distance", "embed",
    "CacheConfig", "CacheEntry", "CacheTier", "TwoTierCache", "lookup",
    "VerificationConfig", "verify", "Location", "select",
]

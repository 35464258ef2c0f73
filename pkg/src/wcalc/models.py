"""Named coefficient families for the filtering experiments.

Two fully featured families satisfy the boundedness/decay requirements
(sinusoidal drift, Gaussian-decay costs); the degenerate families
(static, common-noise-only, control-separable) exist because their
closed-form behavior anchors the consistency checks.
"""

from __future__ import annotations

import numpy as np

from .filtering import FilterModel

__all__ = ["MODEL_NAMES", "build_model"]


def _take(params: dict, key: str, default):
    return params.pop(key, default)


def _dims(params: dict, dim_v_default: int = 1, dim_w_default: int = 1):
    dim = int(_take(params, "dim", 1))
    dim_v = int(_take(params, "dim_v", dim_v_default))
    dim_w = int(_take(params, "dim_w", dim_w_default))
    horizon = float(_take(params, "horizon", 1.0))
    return dim, dim_v, dim_w, horizon


def _static(params: dict) -> FilterModel:
    dim, dim_v, dim_w, horizon = _dims(params)
    return FilterModel(dim=dim, dim_v=dim_v, dim_w=dim_w,
                       controls=(0.0,), horizon=horizon)


def _common_noise(params: dict) -> FilterModel:
    dim, dim_v, dim_w, horizon = _dims(params)
    scale = float(_take(params, "scale", 0.7))
    loading = scale * np.eye(dim, dim_w)
    return FilterModel(
        dim=dim, dim_v=dim_v, dim_w=dim_w,
        sigma_tilde=lambda a: loading,
        controls=(0.0,), horizon=horizon,
    )


def _control_separable(params: dict) -> FilterModel:
    dim, dim_v, dim_w, horizon = _dims(params)
    controls = tuple(float(c) for c in _take(params, "controls", (-0.5, 1.0)))
    gamma = float(_take(params, "gamma", 2.0))
    scale = float(_take(params, "scale", 0.5))
    loading = scale * np.eye(dim, dim_w)
    return FilterModel(
        dim=dim, dim_v=dim_v, dim_w=dim_w,
        sigma_tilde=(lambda a: loading) if scale > 0 else None,
        f=lambda x, a: np.full(x.shape[:-1], float(a)),
        g=lambda x: np.full(x.shape[:-1], gamma),
        controls=controls, horizon=horizon,
    )


def _sin_drift(params: dict) -> FilterModel:
    dim, dim_v, dim_w, horizon = _dims(params, dim_v_default=0, dim_w_default=0)
    # dim defaults above treat 0 as "match dim" for the square loadings
    dim_v = dim_v or dim
    dim_w = dim_w or dim
    amp = float(_take(params, "amp", 1.0))
    s_v = float(_take(params, "s_v", 0.3))
    s_w = float(_take(params, "s_w", 0.4))
    controls = tuple(float(c) for c in _take(params, "controls", (0.0,)))
    sig = s_v * np.eye(dim, dim_v)
    loading = s_w * np.eye(dim, dim_w)
    return FilterModel(
        dim=dim, dim_v=dim_v, dim_w=dim_w,
        b=lambda x, a: amp * np.sin(x + float(a)),
        sigma=(lambda x, a: sig) if s_v > 0 else None,
        sigma_tilde=(lambda a: loading) if s_w > 0 else None,
        controls=controls, horizon=horizon,
    )


def _gauss_cost(params: dict) -> FilterModel:
    dim, dim_v, dim_w, horizon = _dims(params)
    amp = float(_take(params, "amp", 0.5))
    s_v = float(_take(params, "s_v", 0.3))
    s_w = float(_take(params, "s_w", 0.4))
    controls = tuple(float(c) for c in _take(params, "controls", (0.0, 1.0)))
    sig = s_v * np.eye(dim, dim_v)
    loading = s_w * np.eye(dim, dim_w)

    def bell(x):
        return np.exp(-0.5 * np.einsum("...i,...i->...", x, x))

    return FilterModel(
        dim=dim, dim_v=dim_v, dim_w=dim_w,
        b=lambda x, a: amp * np.sin(x + float(a)),
        sigma=(lambda x, a: sig) if s_v > 0 else None,
        sigma_tilde=(lambda a: loading) if s_w > 0 else None,
        f=lambda x, a: (1.0 + float(a) ** 2) * bell(x),
        g=bell,
        controls=controls, horizon=horizon,
    )


_REGISTRY = {
    "static": _static,
    "common_noise": _common_noise,
    "control_separable": _control_separable,
    "sin_drift": _sin_drift,
    "gauss_cost": _gauss_cost,
}

MODEL_NAMES = tuple(sorted(_REGISTRY))


def build_model(name: str, params: dict | None = None) -> FilterModel:
    """Instantiate a named model family; unknown names or params raise ValueError."""
    if name not in _REGISTRY:
        raise ValueError(f"unknown model {name!r}; available: {', '.join(MODEL_NAMES)}")
    params = dict(params or {})
    model = _REGISTRY[name](params)
    if params:
        raise ValueError(f"unknown parameters for model {name!r}: {sorted(params)}")
    return model

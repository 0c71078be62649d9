"""Least-squares fits in transformed (linearized) coordinates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadData

MODELS = ("ExpDecay", "PowerLaw", "Affine", "ReciprocalLog")


@dataclass(frozen=True)
class FitResult:
    model: str
    params: dict
    residual: float  # rms misfit over rms of the transformed data


def _design(xs, model):
    if model == "ExpDecay":
        return np.column_stack([np.ones_like(xs), -xs])
    if model == "PowerLaw":
        return np.column_stack([np.ones_like(xs), np.log(xs)])
    if model == "Affine":
        return np.column_stack([xs, np.ones_like(xs)])
    if model == "ReciprocalLog":
        return np.column_stack([xs, np.log(xs), np.ones_like(xs)])
    raise BadData(f"unknown model {model!r}")


def fit_model(xs, ys, model: str) -> FitResult:
    """Fit ``ys`` against ``xs``.

    ExpDecay:       y = coeff * exp(-rate * x)
    PowerLaw:       y = coeff * x**exponent
    Affine:         y = slope * x + intercept
    ReciprocalLog:  y = slope * x + beta * log(x) + intercept
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise BadData("xs and ys must be 1-d arrays of equal length")
    if xs.size < 5:
        raise BadData("need at least 5 points")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise BadData("non-finite data")
    sign = 1.0
    target = ys
    if model in ("ExpDecay", "PowerLaw"):
        if not (np.all(ys > 0) or np.all(ys < 0)):
            raise BadData(f"{model} needs one-signed data")
        sign = float(np.sign(ys[0]))
        target = np.log(np.abs(ys))
    if model in ("PowerLaw", "ReciprocalLog") and np.any(xs <= 0):
        raise BadData(f"{model} needs positive abscissae")
    a = _design(xs, model)
    # column scaling keeps the normal equations well conditioned
    scale = np.linalg.norm(a, axis=0)
    scale[scale == 0] = 1.0
    coef, *_ = np.linalg.lstsq(a / scale, target, rcond=None)
    coef = coef / scale
    resid = target - a @ coef
    denom = np.sqrt(np.mean(target**2)) or 1.0
    rel = float(np.sqrt(np.mean(resid**2)) / denom)
    if model == "ExpDecay":
        params = {"coeff": sign * float(np.exp(coef[0])), "rate": float(coef[1])}
    elif model == "PowerLaw":
        params = {"coeff": sign * float(np.exp(coef[0])), "exponent": float(coef[1])}
    elif model == "Affine":
        params = {"slope": float(coef[0]), "intercept": float(coef[1])}
    else:
        params = {"slope": float(coef[0]), "beta": float(coef[1]), "intercept": float(coef[2])}
    return FitResult(model, params, rel)

"""Case-control (conditional logit) partial likelihood and its penalized form.

Rows of ``X`` are grouped into contiguous strata given by ``offsets``; the
first row of each stratum is the observed event.  Baseline hazard and any
pure function of time cancel inside each stratum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class NonFiniteError(FloatingPointError):
    pass


@dataclass
class Strata:
    """Minimal view of a stratified design used by the likelihood."""

    X: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        self.sizes = np.diff(np.r_[self.offsets, len(self.X)])
        self.owner = np.repeat(np.arange(len(self.offsets)), self.sizes)

    @property
    def n_strata(self) -> int:
        return len(self.offsets)

    def subset(self, keep) -> "Strata":
        keep = np.sort(np.asarray(keep))
        mask = np.isin(self.owner, keep)
        sizes = self.sizes[keep]
        return Strata(self.X[mask], np.r_[0, np.cumsum(sizes)[:-1]])


def _linear_predictor(strata: Strata, theta: np.ndarray) -> np.ndarray:
    with np.errstate(invalid="ignore", over="ignore"):
        eta = strata.X @ theta
    if not np.all(np.isfinite(eta)):
        raise NonFiniteError("non-finite linear predictor")
    return eta


def _stratum_probs(strata: Strata, eta: np.ndarray):
    """Within-stratum softmax and the per-stratum log normalizer."""
    mx = np.maximum.reduceat(eta, strata.offsets)
    z = eta - mx[strata.owner]
    ez = np.exp(z)
    tot = np.add.reduceat(ez, strata.offsets)
    p = ez / tot[strata.owner]
    return p, mx + np.log(tot)


def _event_loglik(strata: Strata, eta, p, lse) -> float:
    """Sum of per-stratum log event probabilities.

    ``log p`` is used where ``p`` is a normal float, so that equal
    probabilities give bit-identical terms; ``fsum`` rounds the total once.
    """
    pe = p[strata.offsets]
    with np.errstate(divide="ignore"):
        terms = np.where(pe > 1e-300, np.log(pe), eta[strata.offsets] - lse)
    return math.fsum(terms)


def loglik(strata: Strata, theta) -> float:
    theta = np.asarray(theta, dtype=float)
    eta = _linear_predictor(strata, theta)
    p, lse = _stratum_probs(strata, eta)
    return _event_loglik(strata, eta, p, lse)


def penalty_value(theta, tau: Sequence[float], penalties) -> float:
    total = 0.0
    for tj, pb in zip(tau, penalties):
        th = theta[pb.start:pb.stop]
        total += tj * float(th @ pb.S @ th)
    return 0.5 * total


def penalized_loglik(strata: Strata, theta, tau=(), penalties=()) -> float:
    theta = np.asarray(theta, dtype=float)
    return loglik(strata, theta) - penalty_value(theta, tau, penalties)


def penalty_matrix(n_coef: int, tau, penalties) -> np.ndarray:
    S = np.zeros((n_coef, n_coef))
    for tj, pb in zip(tau, penalties):
        S[pb.start:pb.stop, pb.start:pb.stop] += tj * pb.S
    return S


def score_information(strata: Strata, theta):
    """Unpenalized log-likelihood, score and observed information (= -Hessian)."""
    theta = np.asarray(theta, dtype=float)
    X = strata.X
    eta = _linear_predictor(strata, theta)
    p, lse = _stratum_probs(strata, eta)
    ll = _event_loglik(strata, eta, p, lse)
    W = p[:, None] * X
    mean = np.add.reduceat(W, strata.offsets, axis=0)
    grad = X[strata.offsets].sum(axis=0) - mean.sum(axis=0)
    info = X.T @ W - mean.T @ mean
    info = 0.5 * (info + info.T)
    return ll, grad, info


def gradient_hessian(strata: Strata, theta, tau=(), penalties=()):
    """Exact gradient and Hessian of the penalized log-likelihood."""
    theta = np.asarray(theta, dtype=float)
    _, grad, info = score_information(strata, theta)
    S = penalty_matrix(len(theta), tau, penalties)
    return grad - S @ theta, -(info + S)

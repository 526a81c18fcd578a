"""Bernoulli-Gaussian group priors and the exact sum-product step over them.

Groups are stored column-wise: a ``BGGroups`` with ``mu.shape == (M, G)``
holds ``G`` groups of ``M`` elements each, one activity probability per
column.  Weight matrix ``W_l`` (``N_l x N_{l-1}``) is a ``BGGroups`` whose
columns are the outgoing weights of the input neurons; a bias vector is a
``BGGroups`` with ``M == 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .gaussian import GaussianMsg, gauss_product

RHO_CLIP = 1e-12


@dataclass
class BGGroups:
    rho: np.ndarray  # (G,)
    mu: np.ndarray  # (M, G)
    var: np.ndarray  # (M, G)

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.mu = np.asarray(self.mu, dtype=float)
        self.var = np.asarray(self.var, dtype=float)
        if self.mu.shape != self.var.shape or self.mu.shape[1:] != self.rho.shape:
            raise ValueError(f"inconsistent shapes rho{self.rho.shape} mu{self.mu.shape} var{self.var.shape}")

    @property
    def n_groups(self) -> int:
        return self.rho.shape[0]

    def copy(self) -> "BGGroups":
        return BGGroups(self.rho.copy(), self.mu.copy(), self.var.copy())

    def mean(self):
        """Elementwise prior/posterior mean rho*mu."""
        return self.rho * self.mu

    def check(self):
        assert np.all((self.rho >= 0) & (self.rho <= 1)), "rho outside [0,1]"
        assert np.all(self.var > 0), "non-positive variance"


@dataclass
class ExtrinsicSet:
    """Per-element Bernoulli-Gaussian messages from the group prior to the network."""

    rho: np.ndarray  # (M, G)
    mu: np.ndarray
    var: np.ndarray


@dataclass
class GroupPosterior:
    groups: BGGroups
    log_evidence: np.ndarray = field(default=None)  # (G,), sum_m -log eta_m


def _logit(rho):
    r = np.clip(rho, RHO_CLIP, 1.0 - RHO_CLIP)
    return np.log(r) - np.log1p(-r)


def log_eta(prior: BGGroups, a2b: GaussianMsg):
    """log of the inactive/active evidence ratio for every element.

    numerator  N(0; q, vq)        (element forced to zero)
    denominator N(0; q - mu, vq + v) (element drawn from the slab)
    Flat messages give exactly 0.
    """
    q = np.asarray(a2b.mean, dtype=float)
    vq = np.asarray(a2b.var, dtype=float)
    flat = np.isinf(vq)
    vq_s = np.where(flat, 1.0, vq)
    q_s = np.where(flat, 0.0, q)
    s = vq_s + prior.var
    out = -0.5 * (np.log(vq_s) + q_s**2 / vq_s) + 0.5 * (np.log(s) + (q_s - prior.mu) ** 2 / s)
    return np.where(flat, 0.0, out)


def _hard_override(rho_prior, out):
    """Groups with prior rho exactly 0 or 1 never look at the evidence."""
    out = np.where(rho_prior == 0.0, 0.0, out)
    return np.where(rho_prior == 1.0, 1.0, out)


def spmp_extrinsic(prior: BGGroups, a2b: GaussianMsg) -> ExtrinsicSet:
    """Leave-one-out activity probabilities sent back to the network.

    For element m of group n the evidence of every other element m' of the
    same group is folded into the group's prior odds.
    """
    if np.all((prior.rho == 0.0) | (prior.rho == 1.0)):
        rho = np.broadcast_to(prior.rho[None, :], prior.mu.shape).copy()
        return ExtrinsicSet(rho, prior.mu.copy(), prior.var.copy())
    le = log_eta(prior, a2b)
    total = le.sum(axis=0, keepdims=True)
    logit = _logit(prior.rho)[None, :] - (total - le)
    rho = _hard_override(prior.rho[None, :], special.expit(logit))
    return ExtrinsicSet(rho, prior.mu.copy(), prior.var.copy())


def group_posterior(prior: BGGroups, a2b: GaussianMsg) -> GroupPosterior:
    """Exact Bernoulli-Gaussian posterior of each group given its elements' messages."""
    le = log_eta(prior, a2b)
    evidence = -le.sum(axis=0)
    rho = _hard_override(prior.rho, special.expit(_logit(prior.rho) + evidence))
    g = gauss_product(GaussianMsg(prior.mu, prior.var), a2b)
    return GroupPosterior(BGGroups(rho, np.asarray(g.mean), np.asarray(g.var)), evidence)


def bias_posterior(prior: BGGroups, a2b: GaussianMsg) -> GroupPosterior:
    """Independent per-bias spike-and-slab update (length-1 groups)."""
    if prior.mu.shape[0] != 1:
        raise ValueError("bias priors are length-1 groups")
    return group_posterior(prior, a2b)


def pasp_update(posterior, lam: float = 1.0):
    """Posterior-as-prior: the next prior is ``posterior ** lam``.

    Only ``lam == 1`` has a closed form for spike-and-slab groups.
    """
    if lam != 1.0:
        raise ValueError("PasP exponent must be 1 (fractional powers of a spike-and-slab are not closed-form)")
    if isinstance(posterior, BGGroups):
        return posterior.copy()
    return [pasp_update(p, lam) for p in posterior]


def bg_marginal(rho, mu, var, a2b_mean, a2b_var):
    """Mean and variance of rho*N(mu,var)+(1-rho)*delta times N(q; ., vq).

    This is the network-side posterior of one parameter given its
    spike-and-slab message and the likelihood message N(q, vq).
    """
    q = np.asarray(a2b_mean, dtype=float)
    vq = np.asarray(a2b_var, dtype=float)
    flat = np.isinf(vq)
    vq_s = np.where(flat, 1.0, vq)
    prec = 1.0 / var + np.where(flat, 0.0, 1.0 / vq_s)
    vpost = 1.0 / prec
    mpost = vpost * (mu / var + np.where(flat, 0.0, q / vq_s))
    # posterior activity
    s = var + vq_s
    log_on = -0.5 * (np.log(s) + (q - mu) ** 2 / s)
    log_off = -0.5 * (np.log(vq_s) + q**2 / vq_s)
    lo = _logit(rho) + np.where(flat, 0.0, log_on - log_off)
    pi = np.where(rho >= 1.0, 1.0, np.where(rho <= 0.0, 0.0, special.expit(lo)))
    mean = pi * mpost
    v = pi * vpost + pi * (1.0 - pi) * mpost**2
    return mean, v


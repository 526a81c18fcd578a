"""Deep approximate message passing over a ReLU MLP (the network-side module).

Each layer ``z = W u + b`` is handled with bilinear-AMP style updates in
which both ``W`` and ``u`` are unknown.  Layers are coupled through exact
ReLU moment computations, and the last layer talks to either a Gaussian
(regression) or probit-product (classification) likelihood.

Shapes: activations are ``(N, B)`` with ``B`` the minibatch size, weights are
``(N_out, N_in)``.  Flat messages use ``var = inf``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .gaussian import GaussianMsg, log_normal_pdf, skew_normal_match, trunc_moments
from .prior import ExtrinsicSet, bg_marginal

log = logging.getLogger(__name__)

PREC_FLOOR = 1e-12


class MessagePassingError(RuntimeError):
    """Raised when a sweep produces non-finite messages."""


@dataclass
class LayerState:
    """Messages of one layer for one minibatch."""

    n_in: int
    n_out: int
    batch: int
    U: np.ndarray = None  # input activation posterior mean (n_in, B)
    VU: np.ndarray = None
    Wm: np.ndarray = None  # weight marginals (n_out, n_in)
    Wv: np.ndarray = None
    bm: np.ndarray = None
    bv: np.ndarray = None
    qhat: np.ndarray = None  # weight likelihood messages (A->B)
    vq: np.ndarray = None
    qb: np.ndarray = None
    vqb: np.ndarray = None
    Vbar: np.ndarray = None
    V: np.ndarray = None
    phat: np.ndarray = None
    shat: np.ndarray = None
    vs: np.ndarray = None
    rhat: np.ndarray = None  # backward message to the input activations
    vr: np.ndarray = None
    zhat: np.ndarray = None
    vz: np.ndarray = None
    sweeps: int = 0
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        o, i, b = self.n_out, self.n_in, self.batch
        self.qhat = np.zeros((o, i))
        self.vq = np.full((o, i), np.inf)
        self.qb = np.zeros(o)
        self.vqb = np.full(o, np.inf)
        self.shat = np.zeros((o, b))
        self.vs = np.zeros((o, b))
        self.rhat = np.zeros((i, b))
        self.vr = np.full((i, b), np.inf)

    @property
    def weight_msg(self) -> GaussianMsg:
        return GaussianMsg(self.qhat, self.vq)

    @property
    def bias_msg(self) -> GaussianMsg:
        return GaussianMsg(self.qb[None, :], self.vqb[None, :])


def _damp(new, old, alpha):
    if old is None or alpha >= 1.0:
        return new
    return alpha * new + (1.0 - alpha) * old


def _marginals(prior: ExtrinsicSet, qhat, vq):
    if np.all(prior.rho == 1.0):
        flat = np.isinf(vq)
        prec = 1.0 / prior.var + np.where(flat, 0.0, 1.0 / np.where(flat, 1.0, vq))
        v = 1.0 / prec
        m = v * (prior.mu / prior.var + np.where(flat, 0.0, qhat / np.where(flat, 1.0, vq)))
        return m, v
    return bg_marginal(prior.rho, prior.mu, prior.var, qhat, vq)


def layer_forward(st: LayerState, weight_prior: ExtrinsicSet, bias_prior: ExtrinsicSet, alpha: float = 1.0):
    """Refresh parameter marginals and the pseudo-prior N(phat, V) of z.

    ``weight_prior``/``bias_prior`` are the spike-and-slab messages the
    parameters receive from the group prior; ``st.U``/``st.VU`` must hold the
    current input activation moments.
    """
    st.Wm, st.Wv = _marginals(weight_prior, st.qhat, st.vq)
    bm, bv = _marginals(bias_prior, st.qb[None, :], st.vqb[None, :])
    st.bm, st.bv = bm[0], bv[0]
    U, VU = st.U, st.VU
    U2 = U * U
    Vbar = st.Wv @ U2 + st.bv[:, None]
    V = Vbar.copy()
    if np.any(VU):
        Vbar += (st.Wm * st.Wm) @ VU
        V = Vbar + st.Wv @ VU
    Pbar = st.Wm @ U + st.bm[:, None]
    phat = Pbar - st.shat * Vbar
    st.Vbar = Vbar
    st.phat = _damp(phat, st.phat, alpha)
    st.V = _damp(V, st.V, alpha)
    if not (np.all(np.isfinite(st.phat)) and np.all(np.isfinite(st.V))):
        bad = np.argwhere(~np.isfinite(st.phat) | ~np.isfinite(st.V))[0]
        raise MessagePassingError(f"non-finite pseudo-prior at (m, i) = {tuple(int(k) for k in bad)}")
    return st.phat, st.V


def layer_backward(st: LayerState, need_input: bool = True):
    """Turn residuals (shat, vs) into likelihood messages for W, b and u."""
    s, vs = st.shat, st.vs
    U, VU = st.U, st.VU
    det = not np.any(VU)

    prec = vs @ (U * U).T
    lin = s @ U.T
    ok = prec > PREC_FLOOR
    st.flags["weight_prec_floor"] = int(np.size(ok) - np.count_nonzero(ok))
    with np.errstate(divide="ignore", invalid="ignore"):
        vq = np.where(ok, 1.0 / prec, np.inf)
        corr = 0.0 if det else vs @ VU.T
        q = st.Wm * (1.0 - vq * corr) + vq * lin
    st.vq = vq
    st.qhat = np.where(ok, q, 0.0)

    pb = vs.sum(axis=1)
    okb = pb > PREC_FLOOR
    with np.errstate(divide="ignore", invalid="ignore"):
        st.vqb = np.where(okb, 1.0 / pb, np.inf)
        st.qb = np.where(okb, st.bm + s.sum(axis=1) / pb, 0.0)

    if need_input:
        prec_r = (st.Wm * st.Wm).T @ vs
        okr = prec_r > PREC_FLOOR
        with np.errstate(divide="ignore", invalid="ignore"):
            vr = np.where(okr, 1.0 / prec_r, np.inf)
            r = U * (1.0 - vr * (st.Wv.T @ vs)) + vr * (st.Wm.T @ s)
        st.vr = vr
        st.rhat = np.where(okr, r, 0.0)
    return st


# -- nonlinear couplings ---------------------------------------------------


@dataclass
class ReluMoments:
    u_mean: np.ndarray
    u_var: np.ndarray
    z_mean: np.ndarray
    z_var: np.ndarray
    p_pos: np.ndarray  # probability of the z > 0 branch


def relu_coupling(fwd: GaussianMsg, bwd: GaussianMsg) -> ReluMoments:
    """Posterior moments of z and u = relu(z).

    ``fwd`` is the message N(p, V) reaching z from the affine layer, ``bwd``
    the message N(r, vr) reaching u from the layer above (flat allowed).
    Both posteriors are a two-branch mixture: z <= 0 (u = 0) and z > 0 (u = z).
    """
    p = np.asarray(fwd.mean, dtype=float)
    V = np.asarray(fwd.var, dtype=float)
    r = np.asarray(bwd.mean, dtype=float)
    vr = np.asarray(bwd.var, dtype=float)
    p, V, r, vr = np.broadcast_arrays(p, V, r, vr)
    flat = np.isinf(vr)
    vr_s = np.where(flat, 1.0, vr)
    s = V + vr_s
    mc = np.where(flat, p, (r * V + p * vr_s) / s)
    vc = np.where(flat, V, V * vr_s / s)
    sdV = np.sqrt(V)
    log_w0 = special.log_ndtr(-p / sdV) + np.where(flat, 0.0, log_normal_pdf(0.0, r, vr_s))
    log_w1 = special.log_ndtr(mc / np.sqrt(vc)) + np.where(flat, 0.0, log_normal_pdf(0.0, p - r, s))
    p1 = special.expit(log_w1 - log_w0)
    p0 = 1.0 - p1
    _, m1, v1 = trunc_moments(mc, vc, "positive")
    _, m0, v0 = trunc_moments(p, V, "negative")
    u_mean = p1 * m1
    u_var = p1 * v1 + p1 * p0 * m1 * m1
    z_mean = p0 * m0 + p1 * m1
    z_var = p0 * v0 + p1 * v1 + p0 * p1 * (m1 - m0) ** 2
    return ReluMoments(u_mean, u_var, z_mean, z_var, p1)


def residuals(zhat, vz, phat, V):
    """Scaled residual and its variance from a z-posterior and its pseudo-prior."""
    s = (zhat - phat) / V
    vs = (1.0 - vz / V) / V
    return s, vs


def head_regression(phat, V, y, v):
    """Gaussian likelihood N(y; z, v).  Returns (zhat, vz, shat, vs)."""
    denom = V + v
    zhat = (phat * v + y * V) / denom
    vz = V * v / denom
    return zhat, vz, (y - phat) / denom, 1.0 / denom


@dataclass
class ClassHeadOutput:
    zhat: np.ndarray  # (C, B)
    vz: np.ndarray
    shat: np.ndarray
    vs: np.ndarray
    xi_mean: np.ndarray  # (C-1, B) margins z_m - z_y for m != y
    xi_var: np.ndarray


def head_classification(phat, V, labels, v) -> ClassHeadOutput:
    """Probit-product likelihood prod_{m != y} Q((z_m - z_y)/sqrt(v)).

    One pass: each competing class tilts the label-class message, the
    tilts are combined into the label-class posterior, and each competitor is
    then tilted by the leave-one-out label-class message.
    """
    phat = np.asarray(phat, dtype=float)
    V = np.asarray(V, dtype=float)
    C, B = phat.shape
    if C < 2:
        raise ValueError("probit-product head needs at least two classes")
    labels = np.asarray(labels, dtype=int)
    cols = np.arange(B)
    is_y = np.zeros((C, B), dtype=bool)
    is_y[labels, cols] = True
    py, Vy = phat[labels, cols], V[labels, cols]

    # label class tilted by each competitor in turn
    tilt = skew_normal_match(GaussianMsg(py[None, :], Vy[None, :]), shift=phat, scale=np.sqrt(v + V), sign=+1.0)
    prec_h = np.maximum(1.0 / tilt.var - 1.0 / Vy[None, :], 0.0)
    lin_h = tilt.mean / tilt.var - py[None, :] / Vy[None, :]
    prec_h = np.where(is_y, 0.0, prec_h)
    lin_h = np.where(is_y, 0.0, lin_h)
    prec_y = 1.0 / Vy + prec_h.sum(axis=0)
    lin_y = py / Vy + lin_h.sum(axis=0)
    zy, vzy = lin_y / prec_y, 1.0 / prec_y

    # leave-one-out label message to each competitor
    prec_c = prec_y[None, :] - prec_h
    mean_c = (lin_y[None, :] - lin_h) / prec_c
    comp = skew_normal_match(GaussianMsg(phat, V), shift=mean_c, scale=np.sqrt(v + 1.0 / prec_c), sign=-1.0)

    zhat = np.where(is_y, zy[None, :], comp.mean)
    vz = np.where(is_y, vzy[None, :], comp.var)
    shat, vs = residuals(zhat, vz, phat, V)
    xi_mean = _others(zhat - zy[None, :], is_y)
    xi_var = _others(vz + vzy[None, :], is_y)
    return ClassHeadOutput(zhat, vz, shat, vs, xi_mean, xi_var)


def _others(a, is_y):
    """Drop the label row of every column: (C, B) -> (C-1, B)."""
    C, B = a.shape
    return a.T[~is_y.T].reshape(B, C - 1).T


# -- one sweep over the whole network ---------------------------------------


@dataclass
class SweepResult:
    zhat: np.ndarray  # (N_L, B) output posterior
    vz: np.ndarray
    xi_mean: np.ndarray | None = None
    xi_var: np.ndarray | None = None


def new_states(sizes, batch: int) -> list[LayerState]:
    return [LayerState(n_in, n_out, batch) for n_in, n_out in zip(sizes[:-1], sizes[1:])]


def damp_sweep(states, weight_priors, bias_priors, x, y, task: str, noise_var: float, alpha: float = 1.0) -> SweepResult:
    """One forward pass (layers 1..L) followed by one backward pass (L..1).

    ``x`` is (B, N_0); ``y`` is (B, N_L) for regression or (B,) class
    indices in 0..N_L-1 for classification.
    """
    L = len(states)
    for l, st in enumerate(states):
        if l == 0:
            if st.U is None:
                st.U = np.ascontiguousarray(np.asarray(x, dtype=float).T)
                st.VU = np.zeros_like(st.U)
        else:
            below, above = states[l - 1], st
            rm = relu_coupling(GaussianMsg(below.phat, below.V), GaussianMsg(above.rhat, above.vr))
            st.U, st.VU = rm.u_mean, rm.u_var
        layer_forward(st, weight_priors[l], bias_priors[l], alpha)

    out = None
    for l in range(L - 1, -1, -1):
        st = states[l]
        if l == L - 1:
            if task == "regression":
                zhat, vz, s, vs = head_regression(st.phat, st.V, np.asarray(y, dtype=float).T, noise_var)
                out = SweepResult(zhat, vz)
            else:
                h = head_classification(st.phat, st.V, y, noise_var)
                zhat, vz, s, vs = h.zhat, h.vz, h.shat, h.vs
                out = SweepResult(zhat, vz, h.xi_mean, h.xi_var)
        else:
            above = states[l + 1]
            rm = relu_coupling(GaussianMsg(st.phat, st.V), GaussianMsg(above.rhat, above.vr))
            zhat, vz = rm.z_mean, rm.z_var
            s, vs = residuals(zhat, vz, st.phat, st.V)
        neg = vs < 0
        if np.any(neg):
            st.flags["negative_vs"] = int(np.count_nonzero(neg))
            vs = np.where(neg, 0.0, vs)
        first = st.sweeps == 0
        st.shat = s if first else _damp(s, st.shat, alpha)
        st.vs = vs if first else _damp(vs, st.vs, alpha)
        st.zhat, st.vz = zhat, vz
        layer_backward(st, need_input=l > 0)
        st.sweeps += 1
    return out


def damp_minibatch(states, weight_priors, bias_priors, x, y, task, noise_var, n_sweeps: int = 1, alpha: float = 1.0):
    """Run ``n_sweeps`` sweeps with fixed parameter priors; returns the last SweepResult."""
    out = None
    for _ in range(n_sweeps):
        out = damp_sweep(states, weight_priors, bias_priors, x, y, task, noise_var, alpha)
    return out


def layer_diagnostics(states) -> list[dict]:
    """min/max/mean of the key variances per layer, for the metrics stream."""
    rows = []
    for l, st in enumerate(states, start=1):
        row = {"layer": l}
        for name in ("V", "vs", "Wv"):
            a = getattr(st, name)
            if a is not None:
                row[f"{name}_min"] = float(np.min(a))
                row[f"{name}_max"] = float(np.max(a))
                row[f"{name}_mean"] = float(np.mean(a))
        row.update(st.flags)
        rows.append(row)
    return rows

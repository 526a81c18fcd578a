"""Outer EM loop: turbo E-step over minibatches with posterior-as-prior, then M-step."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import damp
from .data import partition
from .gaussian import default_ftable, f_table_lookup, gumbel_fit, FTable
from .metrics import MetricsSink
from .network import NetHyper, forward
from .prior import group_posterior, pasp_update, spmp_extrinsic

log = logging.getLogger(__name__)


@dataclass
class SparsityPolicy:
    """Target fraction of weight groups kept, plus the reset rule constants."""

    target: float = 1.0
    rho_th: float = 0.99
    rho0: float = 0.5
    enforce_budget: bool = True

    def __post_init__(self):
        if not 0.0 < self.target <= 1.0:
            raise ValueError("target sparsity must lie in (0, 1]")
        if not 0.0 < self.rho0 < self.rho_th < 1.0:
            raise ValueError("need 0 < rho0 < rho_th < 1")

    @property
    def dense(self) -> bool:
        return self.target >= 1.0


@dataclass
class TrainConfig:
    iterations: int = 100
    batch_size: int = 101
    damping: float = 0.8
    sweeps: int = 1
    seed: int = 0
    learn_noise: bool = True
    reshuffle: bool = False
    noise_damping: float = 0.5

    def __post_init__(self):
        if self.iterations < 0 or self.batch_size < 1 or self.sweeps < 1:
            raise ValueError("iterations >= 0, batch_size >= 1 and sweeps >= 1 required")
        if not 0.0 < self.damping <= 1.0:
            raise ValueError("damping must lie in (0, 1]")


@dataclass
class NoiseStats:
    """Sufficient statistics for the noise M-step, summed over samples."""

    task: str
    count: int = 0
    sq: float = 0.0  # regression: sum of (y - z)^2 + v_z
    xi: float = 0.0  # classification: sum of margin means
    xi2: float = 0.0  # classification: sum of margin second moments

    def add_regression(self, y, zhat, vz):
        self.sq += float(np.sum((y - zhat) ** 2 + vz))
        self.count += int(np.size(zhat))

    def add_classification(self, xi_mean, xi_var):
        self.xi += float(np.sum(xi_mean))
        self.xi2 += float(np.sum(xi_mean**2 + xi_var))
        self.count += int(np.size(xi_mean))

    @property
    def sigma(self) -> float:
        return self.sq / self.count

    @property
    def mu(self) -> float:
        return self.xi / self.count

    @property
    def second(self) -> float:
        return self.xi2 / self.count


@dataclass
class MinibatchResult:
    posterior: NetHyper
    zhat: np.ndarray  # (B, N_L)
    vz: np.ndarray
    xi_mean: np.ndarray | None
    xi_var: np.ndarray | None
    log_evidence: np.ndarray  # (Q_W,)
    diagnostics: list
    states: list = field(default=None, repr=False)


def estep_minibatch(hyper: NetHyper, x, y, alpha: float = 0.8, sweeps: int = 1, states=None) -> MinibatchResult:
    """Turbo E-step on one minibatch.

    Each sweep sends the group prior's leave-one-out messages to the network
    and runs one forward/backward pass there; afterwards the weight and bias
    posteriors are formed from the network's final likelihood messages.
    ``states`` warm-starts the network messages from an earlier visit.
    """
    if states is None:
        states = damp.new_states(hyper.sizes, len(x))
    out = None
    for _ in range(sweeps):
        wpri = [spmp_extrinsic(w, st.weight_msg) for w, st in zip(hyper.weights, states)]
        bpri = [spmp_extrinsic(b, st.bias_msg) for b, st in zip(hyper.biases, states)]
        out = damp.damp_sweep(states, wpri, bpri, x, y, hyper.task, hyper.noise_var, alpha)
    wpost = [group_posterior(w, st.weight_msg) for w, st in zip(hyper.weights, states)]
    bpost = [group_posterior(b, st.bias_msg) for b, st in zip(hyper.biases, states)]
    post = NetHyper(hyper.sizes, hyper.task, [g.groups for g in wpost], [g.groups for g in bpost], hyper.noise_var)
    for g in post.weights + post.biases:
        if not (np.all(np.isfinite(g.mu)) and np.all(np.isfinite(g.var)) and np.all(g.var > 0)):
            raise damp.MessagePassingError("invalid group posterior")
    return MinibatchResult(
        post,
        out.zhat.T,
        out.vz.T,
        None if out.xi_mean is None else out.xi_mean.T,
        None if out.xi_var is None else out.xi_var.T,
        np.concatenate([g.log_evidence for g in wpost]),
        damp.layer_diagnostics(states),
        states,
    )


@dataclass
class EpochResult:
    hyper: NetHyper  # prior after the last minibatch (i.e. the running posterior)
    stats: NoiseStats
    zhat: np.ndarray
    vz: np.ndarray
    log_evidence: np.ndarray
    failures: int
    diagnostics: list = field(default_factory=list)  # per-layer stats of the last minibatch


def estep_epoch(
    hyper: NetHyper, x, y, batches, alpha: float, sweeps: int, sink: MetricsSink | None = None, iteration: int = 0, cache: dict | None = None
):
    """One pass over all minibatches with posterior-as-prior between them.

    With a ``cache`` dict the per-minibatch network messages persist between
    calls (keyed by minibatch position); otherwise every visit starts fresh.
    """
    stats = NoiseStats(hyper.task)
    n_out = hyper.sizes[-1]
    zhat = np.full((len(x), n_out), np.nan)
    vz = np.full((len(x), n_out), np.nan)
    evidence = np.zeros(hyper.n_weight_groups)
    failures = 0
    diagnostics = []
    for r, idx in enumerate(batches):
        xb, yb = x[idx], y[idx]
        try:
            with np.errstate(over="ignore", under="ignore"):
                states = None if cache is None else cache.get(r)
                res = estep_minibatch(hyper, xb, yb, alpha, sweeps, states)
        except (damp.MessagePassingError, FloatingPointError, ValueError) as exc:
            failures += 1
            if cache is not None:
                cache.pop(r, None)
            log.warning("iteration %d minibatch %d skipped: %s", iteration, r, exc)
            if sink is not None:
                sink.emit(iteration, "estep", "minibatch_failure", r)
            continue
        if cache is not None:
            cache[r] = res.states
        hyper = pasp_update_net(res.posterior)
        zhat[idx], vz[idx] = res.zhat, res.vz
        evidence += res.log_evidence
        diagnostics = res.diagnostics
        if hyper.task == "regression":
            stats.add_regression(yb, res.zhat, res.vz)
        else:
            stats.add_classification(res.xi_mean, res.xi_var)
    return EpochResult(hyper, stats, zhat, vz, evidence, failures, diagnostics)


def pasp_update_net(posterior: NetHyper, lam: float = 1.0) -> NetHyper:
    return NetHyper(
        posterior.sizes, posterior.task, pasp_update(posterior.weights, lam), pasp_update(posterior.biases, lam), posterior.noise_var
    )


# -- M-step -----------------------------------------------------------------


def m_step_prior(posterior: NetHyper) -> NetHyper:
    """The expected log prior is maximized by copying the posterior's group parameters."""
    out = posterior.copy()
    out.check()
    return out


def sparsity_control(hyper: NetHyper, policy: SparsityPolicy, evidence=None) -> tuple[NetHyper, dict]:
    """Reset rule on the weight-group activity probabilities.

    S counts groups with rho above rho_th.  When S exceeds the target
    rho*Q_W, confident groups restart from rho0 and all others are pruned.
    With ``enforce_budget`` the number of groups with rho > 0 is then capped
    at floor(rho*Q_W), keeping the groups with the largest rho (ties broken
    by accumulated log-evidence).
    """
    out = hyper.copy()
    rho = out.weight_rho()
    q = rho.size
    limit = policy.target * q
    S = int(np.count_nonzero(rho > policy.rho_th))
    info = {"S": S, "reset": False, "trimmed": 0}
    if policy.dense:
        return out, info
    if S > limit:
        rho = np.where(rho >= policy.rho_th, policy.rho0, 0.0)
        info["reset"] = True
    if policy.enforce_budget:
        budget = int(math.floor(limit))
        active = np.flatnonzero(rho > 0)
        if active.size > budget:
            ev = np.zeros(q) if evidence is None else np.asarray(evidence, dtype=float)
            order = np.lexsort((ev[active], rho[active]))[::-1]
            drop = active[order[budget:]]
            rho[drop] = 0.0
            info["trimmed"] = int(drop.size)
    out.set_weight_rho(rho)
    return out, info


def noise_update_regression(y, zhat, vz) -> float:
    """Closed-form maximizer of E[log N(y; z, v)]: mean of (y - z)^2 + v_z."""
    y = np.asarray(y, dtype=float)
    zhat = np.asarray(zhat, dtype=float)
    vz = np.asarray(vz, dtype=float)
    if zhat.size == 0:
        raise ValueError("noise update needs at least one sample")
    return float(np.mean((y - zhat) ** 2 + vz))


def noise_update_classification(mu: float, second: float, v: float, table: FTable | None = None, damping: float = 0.5):
    """Gumbel moment-match of the margin statistics, table lookup, damped blend.

    Returns ``(v_new, info)``; a degenerate spread (E <= mu^2) keeps ``v``.
    """
    if not v > 0:
        raise ValueError("current noise variance must be positive")
    table = table or default_ftable()
    try:
        g = gumbel_fit(mu, second)
    except ValueError:
        log.warning("degenerate margin statistics (E <= mu^2); noise variance kept")
        return v, {"skipped": True}
    ratio = g.loc / g.scale
    v0 = g.scale**2 * float(f_table_lookup(table, ratio))
    return damping * v0 + (1.0 - damping) * v, {"skipped": False, "v0": v0, "ratio": ratio}


def predict(hyper: NetHyper, x) -> np.ndarray:
    """Deterministic forward pass with posterior-mean weights; pruned groups (rho = 0) contribute nothing."""
    ws = [np.where(w.rho[None, :] > 0, w.mu, 0.0) for w in hyper.weights]
    bs = [np.where(b.rho > 0, b.mu[0], 0.0) for b in hyper.biases]
    return forward(ws, bs, x)


def predict_labels(hyper: NetHyper, x) -> np.ndarray:
    return np.argmax(predict(hyper, x), axis=1)


def active_groups(hyper: NetHyper) -> int:
    return int(np.count_nonzero(hyper.weight_rho() > 0))


# -- driver -------------------------------------------------------------------


def make_batches(n: int, batch_size: int, seed: int) -> list[np.ndarray]:
    return partition(n, size=batch_size, seed=seed)


@dataclass
class EMResult:
    hyper: NetHyper
    zhat: np.ndarray
    vz: np.ndarray
    history: list = field(default_factory=list)
    iterations: int = 0


def m_step(hyper: NetHyper, epoch: EpochResult, policy: SparsityPolicy, cfg: TrainConfig, table=None, ynorm=None):
    """Prior update, sparsity control and noise-variance update."""
    new = m_step_prior(epoch.hyper)
    new, info = sparsity_control(new, policy, epoch.log_evidence)
    info["noise_skipped"] = False
    if cfg.learn_noise and epoch.stats.count > 0:
        if hyper.task == "regression":
            new.noise_var = max(epoch.stats.sigma, 1e-12)
        else:
            v, ninfo = noise_update_classification(epoch.stats.mu, epoch.stats.second, hyper.noise_var, table, cfg.noise_damping)
            new.noise_var = v
            info["noise_skipped"] = ninfo["skipped"]
    return new, info


def run_em(
    x,
    y,
    hyper: NetHyper,
    cfg: TrainConfig,
    policy: SparsityPolicy | None = None,
    sink: MetricsSink | None = None,
    callback: Callable[[int, NetHyper], dict | None] | None = None,
) -> EMResult:
    """Algorithm-1 style training.

    ``y`` is (I, N_L) for regression or (I,) zero-based class indices.
    ``callback(iteration, hyper)`` may return a dict of extra metrics; a
    truthy ``"stop"`` entry ends training early.
    """
    policy = policy or SparsityPolicy()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float) if hyper.task == "regression" else np.asarray(y, dtype=int)
    table = default_ftable() if hyper.task == "classification" else None
    batches = make_batches(len(x), cfg.batch_size, cfg.seed)
    result = EMResult(hyper.copy(), np.zeros((len(x), hyper.sizes[-1])), np.zeros((len(x), hyper.sizes[-1])))
    for it in range(1, cfg.iterations + 1):
        if cfg.reshuffle and it > 1:
            batches = make_batches(len(x), cfg.batch_size, cfg.seed + it)
        epoch = estep_epoch(result.hyper, x, y, batches, cfg.damping, cfg.sweeps, sink, it)
        new, info = m_step(result.hyper, epoch, policy, cfg, table)
        row = {
            "iteration": it,
            "noise_var": new.noise_var,
            "active_groups": active_groups(new),
            "S": info["S"],
            "reset": int(info["reset"]),
            "trimmed": info["trimmed"],
            "failures": epoch.failures,
        }
        if hyper.task == "regression":
            row["train_mse"] = float(np.nanmean((y - epoch.zhat) ** 2)) if epoch.stats.count else float("nan")
        else:
            row["xi_mu"], row["xi_E"] = epoch.stats.mu, epoch.stats.second
        result.hyper, result.zhat, result.vz, result.iterations = new, epoch.zhat, epoch.vz, it
        extra = callback(it, new) if callback else None
        stop = False
        if extra:
            stop = bool(extra.pop("stop", False))
            row.update(extra)
        result.history.append(row)
        if sink is not None:
            for k, v in row.items():
                if k != "iteration":
                    sink.emit(it, "mstep", k, v)
            for d in epoch.diagnostics:
                for k, v in d.items():
                    if k != "layer":
                        sink.emit(it, "diagnostics", f"layer{d['layer']}.{k}", v)
        if stop:
            break
    return result

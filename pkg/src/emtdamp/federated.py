"""Federated simulation: broadcast, local turbo training, server aggregation."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from . import checkpoint, em
from .data import partition
from .gaussian import default_ftable
from .metrics import MetricsSink
from .network import NetHyper
from .prior import RHO_CLIP, BGGroups

log = logging.getLogger(__name__)

SUMMARY_FORMAT = "emtdamp-client-summary"


@dataclass
class ClientSummary:
    """What a client sends back: its posterior parameters and noise statistics."""

    client: int
    posterior: NetHyper
    n_samples: int
    sigma: float | None = None  # regression
    mu: float | None = None  # classification margin mean
    second: float | None = None  # classification margin second moment
    log_evidence: np.ndarray | None = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("client summary needs at least one sample")

    def dumps(self) -> str:
        return json.dumps(
            {
                "format": SUMMARY_FORMAT,
                "version": checkpoint.VERSION,
                "client": self.client,
                "n_samples": self.n_samples,
                "sigma": self.sigma,
                "mu": self.mu,
                "second": self.second,
                "log_evidence": None if self.log_evidence is None else self.log_evidence.tolist(),
                "posterior": checkpoint.hyper_to_dict(self.posterior),
            }
        )

    @classmethod
    def loads(cls, text: str) -> "ClientSummary":
        d = json.loads(text)
        if d.get("format") != SUMMARY_FORMAT:
            raise checkpoint.CheckpointError("not a client summary")
        ev = d["log_evidence"]
        return cls(
            d["client"],
            checkpoint.hyper_from_dict(d["posterior"]),
            d["n_samples"],
            d["sigma"],
            d["mu"],
            d["second"],
            None if ev is None else np.array(ev, dtype=float),
        )


@dataclass
class FedConfig:
    clients: int = 4
    rounds: int = 50
    inner: int = 10
    batch_size: int = 101
    damping: float = 0.8
    sweeps: int = 1
    seed: int = 0
    learn_noise: bool = True
    noise_damping: float = 0.5
    shards: list | None = None  # explicit partition hook; default equal random shards
    dropout: dict = field(default_factory=dict)  # round -> client ids that do not report

    def __post_init__(self):
        if self.clients < 1 or self.rounds < 0 or self.inner < 1:
            raise ValueError("clients >= 1, rounds >= 0 and inner >= 1 required")


def client_local_train(client: int, x, y, hyper: NetHyper, inner: int, batch_size: int, damping: float = 0.8, sweeps: int = 1):
    """Local TDAMP with the broadcast hyperparameters held fixed.

    One posterior-as-prior pass over the local minibatches; each minibatch
    visit runs ``inner * sweeps`` network sweeps, so ``inner`` buys more
    message-passing iterations without counting local data twice.  The local
    data is sliced contiguously in the given order, so a single client
    holding the globally shuffled data reproduces centralized minibatches.
    """
    n = len(x)
    if n == 0:
        raise ValueError("empty local dataset")
    batches = [np.arange(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]
    epoch = em.estep_epoch(hyper, x, y, batches, damping, inner * sweeps)
    post, s = epoch.hyper, epoch.stats
    if post.task == "regression":
        return ClientSummary(client, post, n, sigma=s.sigma, log_evidence=epoch.log_evidence)
    return ClientSummary(client, post, n, mu=s.mu, second=s.second, log_evidence=epoch.log_evidence)


def _weights(summaries):
    n = np.array([s.n_samples for s in summaries], dtype=float)
    return n / n.sum()


def _aggregate_groups(groups: list[BGGroups], w) -> BGGroups:
    prec = sum(wk / g.var for wk, g in zip(w, groups))
    lin = sum(wk * g.mu / g.var for wk, g in zip(w, groups))
    logit = sum(wk * special.logit(np.clip(g.rho, RHO_CLIP, 1 - RHO_CLIP)) for wk, g in zip(w, groups))
    rho = special.expit(logit)
    rho = np.where(np.all([g.rho == 1.0 for g in groups], axis=0), 1.0, rho)
    rho = np.where(np.any([g.rho == 0.0 for g in groups], axis=0), 0.0, rho)
    return BGGroups(rho, lin / prec, 1.0 / prec)


def aggregate_posteriors(summaries: list[ClientSummary]) -> NetHyper:
    """Weighted geometric average, parameter by parameter.

    Gaussian parts combine by precision weighting; activity probabilities by
    weighted log-odds.  Weights are I_k / I over the clients present.
    """
    if not summaries:
        raise ValueError("no client summaries to aggregate")
    summaries = sorted(summaries, key=lambda s: s.client)
    if len(summaries) == 1:
        return summaries[0].posterior.copy()
    w = _weights(summaries)
    first = summaries[0].posterior
    weights = [_aggregate_groups([s.posterior.weights[l] for s in summaries], w) for l in range(first.n_layers)]
    biases = [_aggregate_groups([s.posterior.biases[l] for s in summaries], w) for l in range(first.n_layers)]
    return NetHyper(first.sizes, first.task, weights, biases, first.noise_var)


def aggregate_noise(summaries: list[ClientSummary]):
    """Weighted sums of the client statistics: sigma (regression) or (mu, E) (classification)."""
    if not summaries:
        raise ValueError("no client summaries to aggregate")
    summaries = sorted(summaries, key=lambda s: s.client)
    w = _weights(summaries)
    if summaries[0].sigma is not None:
        return float(sum(wk * s.sigma for wk, s in zip(w, summaries)))
    mu = float(sum(wk * s.mu for wk, s in zip(w, summaries)))
    second = float(sum(wk * s.second for wk, s in zip(w, summaries)))
    return mu, second


def server_update(global_post: NetHyper, summaries, current: NetHyper, policy: em.SparsityPolicy, learn_noise=True, noise_damping=0.5, table=None):
    """Server-side M-step on the aggregated posterior."""
    evidence = sum(s.log_evidence for s in sorted(summaries, key=lambda s: s.client))
    new = em.m_step_prior(global_post)
    new, info = em.sparsity_control(new, policy, evidence)
    if learn_noise:
        stat = aggregate_noise(summaries)
        if current.task == "regression":
            new.noise_var = max(stat, 1e-12)
        else:
            new.noise_var, _ = em.noise_update_classification(stat[0], stat[1], current.noise_var, table, noise_damping)
    else:
        new.noise_var = current.noise_var
    return new, info


@dataclass
class FedResult:
    hyper: NetHyper
    history: list
    rounds: int


def run_federated(
    x,
    y,
    hyper: NetHyper,
    cfg: FedConfig,
    policy: em.SparsityPolicy | None = None,
    sink: MetricsSink | None = None,
    callback: Callable[[int, NetHyper], dict | None] | None = None,
) -> FedResult:
    """Algorithm-2 style simulation with in-process, serialized client transport."""
    policy = policy or em.SparsityPolicy()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float) if hyper.task == "regression" else np.asarray(y, dtype=int)
    shards = cfg.shards if cfg.shards is not None else partition(len(x), n_parts=cfg.clients, seed=cfg.seed)
    if len(shards) != cfg.clients:
        raise ValueError("one shard per client required")
    flat = np.concatenate(shards)
    if flat.size != len(x) or np.unique(flat).size != len(x):
        raise ValueError("shards must be disjoint and cover the training set")
    if min(len(s) for s in shards) == 0:
        raise ValueError("empty client shard")
    table = default_ftable() if hyper.task == "classification" else None
    current = hyper.copy()
    history = []
    done = 0
    for rnd in range(1, cfg.rounds + 1):
        absent = set(cfg.dropout.get(rnd, ()))
        wire = []
        for k, idx in enumerate(shards):
            if k in absent:
                continue
            try:
                s = client_local_train(k, x[idx], y[idx], current, cfg.inner, cfg.batch_size, cfg.damping, cfg.sweeps)
            except Exception as exc:  # a failing client is reported absent
                log.warning("round %d client %d failed: %s", rnd, k, exc)
                continue
            wire.append(s.dumps())
        summaries = [ClientSummary.loads(t) for t in wire]
        if not summaries:
            log.error("round %d: no surviving clients, stopping", rnd)
            break
        agg = aggregate_posteriors(summaries)
        current, info = server_update(agg, summaries, current, policy, cfg.learn_noise, cfg.noise_damping, table)
        done = rnd
        row = {"round": rnd, "clients": len(summaries), "noise_var": current.noise_var, "active_groups": em.active_groups(current), "S": info["S"]}
        if sink is not None:
            for s in summaries:
                stat = s.sigma if s.sigma is not None else s.mu
                sink.emit(rnd, "client", "noise_stat", stat, client=s.client)
        extra = callback(rnd, current) if callback else None
        stop = False
        if extra:
            stop = bool(extra.pop("stop", False))
            row.update(extra)
        history.append(row)
        if sink is not None:
            for k, v in row.items():
                if k != "round":
                    sink.emit(rnd, "server", k, v)
        if stop:
            break
    return FedResult(current, history, done)

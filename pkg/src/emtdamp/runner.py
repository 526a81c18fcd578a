"""Glue between RunConfig, datasets and the trainers."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import data as dio
from . import em, federated
from .config import ConfigError, RunConfig
from .metrics import MetricsSink, error_rate, nmse
from .network import NetHyper, init_hyper

REPO_ROOT = Path(__file__).resolve().parents[2]


@dataclass
class TaskData:
    train: dio.Dataset
    test: dio.Dataset
    normalizer: dio.Normalizer


def resolve_dir(path: str) -> Path:
    p = Path(path)
    if p.exists() or p.is_absolute():
        return p
    alt = REPO_ROOT / p
    return alt if alt.exists() else p


def load_data(cfg: RunConfig) -> TaskData:
    root = resolve_dir(cfg.data_dir)
    if not root.is_dir():
        raise ConfigError(f"data directory {root} not found (see scripts/prepare_data.py)")
    train, test = dio.load_boston(root) if cfg.dataset == "csv" else dio.load_mnist(root)
    if (cfg.task == "classification") != (train.task == "classification"):
        raise ConfigError(f"dataset in {root} does not match task {cfg.task}")
    n = dio.normalize_fit(train)
    train, test = dio.normalize_apply(n, train), dio.normalize_apply(n, test)
    if train.features.shape[1] != cfg.sizes[0]:
        raise ConfigError(f"data has {train.features.shape[1]} features but sizes[0] = {cfg.sizes[0]}")
    n_out = train.n_classes if cfg.task == "classification" else train.labels.shape[1]
    if n_out != cfg.sizes[-1]:
        raise ConfigError(f"data has {n_out} outputs but sizes[-1] = {cfg.sizes[-1]}")
    return TaskData(train, test, n)


def initial_hyper(cfg: RunConfig, target: float | None = None, seed: int | None = None) -> NetHyper:
    target = cfg.target_sparsity if target is None else target
    return init_hyper(
        cfg.sizes,
        cfg.task,
        rho0=1.0 if target >= 1.0 else cfg.rho0,
        bias_var=cfg.bias_var,
        noise_var=cfg.noise_init,
        mean_scale=cfg.mean_scale,
        seed=cfg.seed if seed is None else seed,
    )


def policy(cfg: RunConfig, target: float | None = None) -> em.SparsityPolicy:
    return em.SparsityPolicy(cfg.target_sparsity if target is None else target, cfg.rho_th, cfg.rho0)


def metric_name(cfg_or_task) -> str:
    task = cfg_or_task if isinstance(cfg_or_task, str) else cfg_or_task.task
    return "test_nmse" if task == "regression" else "test_error"


def evaluate(hyper: NetHyper, ds: dio.Dataset) -> float:
    if hyper.task == "regression":
        return nmse(em.predict(hyper, ds.features), ds.labels)
    return error_rate(em.predict_labels(hyper, ds.features), ds.targets)


def _callback(cfg: RunConfig, test: dio.Dataset):
    name = metric_name(cfg)

    def cb(it, hyper):
        m = evaluate(hyper, test)
        return {name: m, "stop": cfg.stop_at > 0 and m <= cfg.stop_at}

    return cb


def train(cfg: RunConfig, td: TaskData | None = None, sink: MetricsSink | None = None, target=None, seed=None):
    td = td or load_data(cfg)
    seed = cfg.seed if seed is None else seed
    tc = em.TrainConfig(cfg.iterations, cfg.batch_size, cfg.damping, cfg.sweeps, seed, cfg.learn_noise, cfg.reshuffle, cfg.noise_damping)
    h0 = initial_hyper(cfg, target, seed)
    return em.run_em(td.train.features, td.train.targets, h0, tc, policy(cfg, target), sink, _callback(cfg, td.test))


def train_federated(cfg: RunConfig, td: TaskData | None = None, sink: MetricsSink | None = None, target=None, seed=None):
    td = td or load_data(cfg)
    seed = cfg.seed if seed is None else seed
    fc = federated.FedConfig(
        cfg.clients, cfg.rounds, cfg.inner, cfg.batch_size, cfg.damping, cfg.sweeps, seed, cfg.learn_noise, cfg.noise_damping
    )
    h0 = initial_hyper(cfg, target, seed)
    return federated.run_federated(td.train.features, td.train.targets, h0, fc, policy(cfg, target), sink, _callback(cfg, td.test))


def first_reaching(history: list[dict], key: str, threshold: float, xkey: str = "iteration"):
    """First iteration whose metric is <= threshold, or None."""
    for row in history:
        if row.get(key, np.inf) <= threshold:
            return row[xkey]
    return None

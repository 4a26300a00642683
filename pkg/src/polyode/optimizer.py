"""ADAM and the mini-batch training loop."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .architectures import EvalCounter, ModelConfig, predict
from .basis import basis_values
from .data import Dataset
from .gradients import PARAM_KEYS, loss, loss_and_grad
from .integrators import StepControl

log = logging.getLogger(__name__)

METRICS_HEADER = ("epoch", "train_loss", "val_loss", "cum_rhs_evals", "wall_ms")


class DivergenceError(RuntimeError):
    def __init__(self, msg, last_good=None, metrics=None):
        super().__init__(msg)
        self.last_good = last_good
        self.metrics = metrics


@dataclass
class AdamState:
    m: dict
    v: dict
    step_count: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.step_count < 0:
            raise ValueError("step_count must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.eps <= 0:
            raise ValueError("eps must be positive")

    @classmethod
    def zeros_like(cls, params: dict, **kw) -> "AdamState":
        return cls(
            m={k: np.zeros_like(v) for k, v in params.items()},
            v={k: np.zeros_like(v) for k, v in params.items()},
            **kw,
        )


def adam_step(params: dict, grads: dict, state: AdamState):
    """One bias-corrected ADAM update; returns new (params, state) without mutating inputs."""
    if params.keys() != grads.keys():
        raise ValueError("parameter and gradient blocks differ")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {k}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * (g * g)
        new_p[k] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_m[k], new_v[k] = m, v
    new_state = AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
    return new_p, new_state


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1000
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    loss_tolerance: Optional[float] = None
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class RunMetrics:
    rows: list = field(default_factory=list)

    def append(self, epoch, train_loss, val_loss, cum_rhs_evals, wall_ms):
        if self.rows and cum_rhs_evals < self.rows[-1][3]:
            raise ValueError("cumulative evaluation counter went backwards")
        self.rows.append((epoch, train_loss, val_loss, cum_rhs_evals, wall_ms))

    @property
    def last(self):
        return self.rows[-1] if self.rows else None

    def evals_to_reach(self, target: float) -> Optional[int]:
        """Cumulative rhs evaluations at the first epoch with train loss <= target."""
        for row in self.rows:
            if row[1] <= target:
                return row[3]
        return None

    def write_csv(self, path, include_wall=True):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER if include_wall else METRICS_HEADER[:-1])
            for e, tr, va, ev, ms in self.rows:
                row = [e, repr(float(tr)), repr(float(va)), ev]
                if include_wall:
                    row.append(f"{ms:.3f}")
                w.writerow(row)


@dataclass
class Model:
    cfg: ModelConfig
    params: dict

    def predict(self, y, ctrl: StepControl = StepControl(), counter=None):
        return predict(self.params, self.cfg, y, ctrl, counter)

    def loss(self, ds: Dataset, ctrl: StepControl = StepControl()) -> float:
        if ds.n_samples == 0:
            return float("nan")
        return loss(self.predict(ds.features, ctrl), ds.targets, self.params, self.cfg.alpha)


def init_params(cfg: ModelConfig, seed: int = 0) -> dict:
    """Random initial parameters.

    Opening/closing weights have std ``1/sqrt(fan_in)``; biases start at
    zero. Coefficients are scaled so the materialized layer weights have std
    about ``0.1/sqrt(channels + 1)``, keeping the initial flow close to the
    identity.
    """
    rng = np.random.default_rng(seed)
    c = cfg.channels
    shapes = cfg.param_shapes()
    fan = c + 1
    if cfg.basis.is_polynomial:
        # mean over [0, 1] of sum_i p_i(s)^2
        s = (np.arange(200) + 0.5) / 200
        power = float(np.mean(np.sum(basis_values(cfg.basis, s) ** 2, axis=0)))
    else:
        power = 1.0
    return {
        "K_in": rng.normal(size=shapes["K_in"]) / np.sqrt(cfg.n_features),
        "b_in": np.zeros(shapes["b_in"]),
        "theta": rng.normal(size=shapes["theta"]) * (0.1 / np.sqrt(fan * power)),
        "W_out": rng.normal(size=shapes["W_out"]) / np.sqrt(c),
        "b_out": np.zeros(shapes["b_out"]),
    }


def _finite(value, grads) -> bool:
    return math.isfinite(value) and all(np.all(np.isfinite(g)) for g in grads.values())


def train(model: Model, data, tcfg: TrainConfig, ctrl: StepControl = StepControl(),
          counter: EvalCounter | None = None, callback=None):
    """Mini-batch ADAM over ``data = (train, val)``; returns (model, RunMetrics).

    Only the training passes feed the evaluation counter; the per-epoch
    full-set losses are bookkeeping.
    """
    train_ds, val_ds = data
    counter = counter or EvalCounter()
    params = {k: np.array(model.params[k], dtype=float) for k in PARAM_KEYS}
    state = AdamState.zeros_like(params, lr=tcfg.lr)
    rng = np.random.default_rng([tcfg.seed, 7])
    metrics = RunMetrics()
    n = train_ds.n_samples
    start = time.perf_counter()

    for epoch in range(1, tcfg.epochs + 1):
        order = rng.permutation(n) if tcfg.shuffle else np.arange(n)
        last_good = params
        for lo in range(0, n, tcfg.batch_size):
            idx = order[lo:lo + tcfg.batch_size]
            value, grads = loss_and_grad(
                params, model.cfg, train_ds.features[:, idx], train_ds.targets[:, idx], ctrl, counter
            )
            if not _finite(value, grads):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch}", Model(model.cfg, last_good), metrics
                )
            last_good = params
            params, state = adam_step(params, grads, state)

        current = Model(model.cfg, params)
        tr = current.loss(train_ds, ctrl)
        va = current.loss(val_ds, ctrl)
        if not math.isfinite(tr):
            raise DivergenceError(f"non-finite train loss at epoch {epoch}", Model(model.cfg, last_good), metrics)
        wall = 1000.0 * (time.perf_counter() - start)
        metrics.append(epoch, tr, va, counter.count, wall)
        log.debug("epoch %d train %.6g val %.6g evals %d", epoch, tr, va, counter.count)
        if callback is not None:
            callback(epoch, current, metrics)
        if tcfg.loss_tolerance is not None and tr < tcfg.loss_tolerance:
            break

    return Model(model.cfg, params), metrics

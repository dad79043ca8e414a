"""Experiment orchestration: pretraining (BPTT or RTRL), online fine-tuning
with the anchor regularizer, ablation grids, evaluation and the imputer
benchmark. The CLI in cli.py is a thin wrapper over these functions.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import bptt as bptt_mod
from .bptt import TrainConfig, TrainResult, sample_windows
from .checkpoint import Checkpoint
from .datapipe import (FittedPipeline, SequenceData, SeriesTable,
                       apply_pipeline, fit_pipeline, impute_knn,
                       impute_rolling_median, join_weather, load_emission_csv,
                       load_weather_csv, resample_to_grid, split_sessions)
from .errors import CompatibilityError, ConfigurationError
from .lru import LruNetwork, init_network, network_forward, network_step
from .optim import (AdamState, AnchorConfig, adam_step, anchor_gradient,
                    clip_global_norm, huber, huber_grad, tree_add, tree_copy,
                    tree_norm, tree_sub)
from .rtrl import online_gradient, reset_trace, step_traces, window_gradient
from .synth import GeneratorConfig, generate_dataset


# ------------------------------------------------------------ data plumbing

def prepare_tables(emission_path, weather_path, window: int = 5,
                   strict_vocab: bool = False, train_fraction: float = 0.8
                   ) -> tuple[FittedPipeline, SequenceData, SequenceData]:
    """Full preprocessing: load, weather join, 1 s grid, rolling-median
    imputation, session split, pipeline fit (vocabularies over train+val
    unless strict_vocab) and apply."""
    table = load_emission_csv(emission_path)
    weather = load_weather_csv(weather_path)
    table = join_weather(table, weather)
    table = resample_to_grid(table)
    table = impute_rolling_median(table, window)
    train_t, val_t = split_sessions(table, train_fraction)
    pipe = fit_pipeline(train_t, None if strict_vocab else table, window)
    return pipe, apply_pipeline(pipe, train_t), apply_pipeline(pipe, val_t)


# -------------------------------------------------------------- pretraining

@dataclass
class PretrainConfig:
    trainer: str = "bptt"                 # "bptt" | "rtrl"
    layers: tuple[int, ...] = (16,)
    steps: int = 5000
    batch: int = 256
    lr: float = 1e-3
    clip: float | None = 0.5
    window: int = 256
    seed: int = 0
    eval_every: int = 250
    huber_delta: float = 1.0
    r_min: float = 0.9
    r_max: float = 0.999
    rtrl_update: str = "window"           # "window" | "step"


def train_rtrl(net: LruNetwork, train_data: SequenceData,
               val_data: SequenceData | None, cfg: TrainConfig,
               update: str = "window") -> TrainResult:
    """RTRL pretraining: windows are consumed sequentially with online
    gradients, applying the Adam update per window or per step."""
    if update not in ("window", "step"):
        raise ConfigurationError(f"unknown rtrl update cadence {update!r}")
    rng = np.random.default_rng(cfg.seed)
    theta = tree_copy(net.parameters())
    state = AdamState.init(theta, lr=cfg.lr)
    best = tree_copy(theta)
    best_val = float("inf")
    curve = []
    for step in range(1, cfg.steps + 1):
        batch = sample_windows(train_data, cfg.window, 1, rng)
        inputs, targets = batch.inputs[0], batch.targets[0]
        cur = LruNetwork.from_parameters(theta)
        if update == "window":
            loss, grads = window_gradient(cur, inputs, targets, cfg.huber_delta)
            grads = clip_global_norm(grads, cfg.clip)
            theta, state = adam_step(theta, grads, state)
        else:
            states = cur.zero_states()
            traces = reset_trace(cur)
            total = 0.0
            for t in range(inputs.shape[0]):
                cur = LruNetwork.from_parameters(theta)
                new_states, y_hat, layer_in = network_step(cur, states, inputs[t])
                traces = step_traces(cur, states, layer_in, traces)
                resid = y_hat - targets[t]
                total += huber(resid, cfg.huber_delta)
                grads = online_gradient(cur, traces, new_states, layer_in,
                                        huber_grad(resid, cfg.huber_delta))
                grads = clip_global_norm(grads, cfg.clip)
                theta, state = adam_step(theta, grads, state)
                states = new_states
            loss = total / inputs.shape[0]
        val_loss = float("nan")
        if (val_data is not None
                and (step % cfg.eval_every == 0 or step == cfg.steps)):
            val_loss = bptt_mod.evaluate(LruNetwork.from_parameters(theta),
                                         val_data, cfg.huber_delta)
            if val_loss < best_val:
                best_val = val_loss
                best = tree_copy(theta)
        curve.append((step, loss, val_loss))
    if val_data is None or not np.isfinite(best_val):
        best = theta
    return TrainResult(net=LruNetwork.from_parameters(best), loss_curve=curve,
                       best_val_loss=best_val)


def cmd_pretrain(train_data: SequenceData, val_data: SequenceData | None,
                 pipeline: FittedPipeline | None, cfg: PretrainConfig,
                 provenance: dict | None = None
                 ) -> tuple[Checkpoint, TrainResult]:
    if cfg.trainer not in ("bptt", "rtrl"):
        raise ConfigurationError(f"unknown trainer {cfg.trainer!r}")
    net = init_network(train_data.features.shape[1], tuple(cfg.layers),
                       train_data.targets.shape[1],
                       r_min=cfg.r_min, r_max=cfg.r_max, seed=cfg.seed)
    tcfg = TrainConfig(steps=cfg.steps, batch=cfg.batch, lr=cfg.lr,
                       clip=cfg.clip, window=cfg.window, seed=cfg.seed,
                       eval_every=cfg.eval_every, huber_delta=cfg.huber_delta)
    if cfg.trainer == "bptt":
        result = bptt_mod.train(net, train_data, val_data, tcfg)
    else:
        result = train_rtrl(net, train_data, val_data, tcfg,
                            update=cfg.rtrl_update)
    cfg_dict = asdict(cfg)
    cfg_dict["layers"] = list(cfg.layers)
    ckpt = Checkpoint(params=result.net.parameters(), pipeline=pipeline,
                      config=cfg_dict, seed=cfg.seed,
                      provenance=provenance or {})
    return ckpt, result


# -------------------------------------------------------------------- sweep

@dataclass
class SweepConfig:
    layers: list = field(default_factory=lambda: [(8,), (16,), (8, 8),
                                                  (16, 16), (8, 8, 8)])
    lrs: list = field(default_factory=lambda: [1e-2, 1e-3, 1e-4])
    clips: list = field(default_factory=lambda: [0.5, 1.0, None])
    trainers: list = field(default_factory=lambda: ["bptt", "rtrl"])
    repeats: int = 5
    steps: int = 500
    batch: int = 32
    window: int = 128
    eval_every: int = 100
    seed: int = 0


def cmd_sweep(train_data: SequenceData, val_data: SequenceData,
              cfg: SweepConfig) -> list[dict]:
    """One row per run (config x repeat), sorted deterministically. Failures
    are recorded in their row and the sweep continues."""
    rows = []
    for trainer in cfg.trainers:
        for layers in cfg.layers:
            for lr in cfg.lrs:
                for clip in cfg.clips:
                    for rep in range(cfg.repeats):
                        row = {"trainer": trainer,
                               "layers": "x".join(map(str, layers)),
                               "lr": lr,
                               "clip": "" if clip is None else clip,
                               "repeat": rep}
                        pcfg = PretrainConfig(
                            trainer=trainer, layers=tuple(layers), lr=lr,
                            clip=clip, steps=cfg.steps, batch=cfg.batch,
                            window=cfg.window, eval_every=cfg.eval_every,
                            seed=cfg.seed + rep)
                        t0 = time.perf_counter()
                        try:
                            _, result = cmd_pretrain(train_data, val_data,
                                                     None, pcfg)
                            row["best_val_loss"] = result.best_val_loss
                            row["error"] = ""
                        except Exception as e:  # keep sweeping
                            row["best_val_loss"] = float("nan")
                            row["error"] = f"{type(e).__name__}: {e}"
                        row["wall_seconds"] = time.perf_counter() - t0
                        rows.append(row)
    return rows


# -------------------------------------------------------------- fine-tuning

@dataclass
class FinetuneConfig:
    lambda_reg: float = 0.0
    freeze_after: int | None = None   # 0 = never update, None = no freeze
    lr: float = 1e-3
    clip: float | None = 0.5
    seed: int = 0
    huber_delta: float = 1.0
    squared_anchor: bool = False
    carry_optimizer: bool = False


@dataclass
class RunMetrics:
    """Paired per-step traces of the frozen baseline and the fine-tuned run."""
    timestamps: np.ndarray
    targets: np.ndarray            # (N, p)
    predictions: np.ndarray        # fine-tuned, logged pre-update
    predictions_frozen: np.ndarray
    loss: np.ndarray               # (N,) per-step mean Huber
    loss_frozen: np.ndarray
    anchor_distance: np.ndarray    # ||theta_t - theta_pre||_2 after step t

    @property
    def total_loss(self) -> float:
        return float(np.sum(self.loss))

    @property
    def total_loss_frozen(self) -> float:
        return float(np.sum(self.loss_frozen))

    def summary(self) -> dict:
        n = self.loss.size
        return {
            "steps": n,
            "total_loss_finetuned": self.total_loss,
            "total_loss_frozen": self.total_loss_frozen,
            "mean_loss_finetuned": self.total_loss / n,
            "mean_loss_frozen": self.total_loss_frozen / n,
            "final_anchor_distance": float(self.anchor_distance[-1]),
        }


def cmd_finetune(ckpt: Checkpoint, stream: SequenceData,
                 cfg: FinetuneConfig) -> RunMetrics:
    """Online fine-tuning against a ground-truth stream.

    One interleaved pass records the frozen-baseline prediction and the
    adaptive prediction at every step; the adaptive model predicts, observes
    the label, and Adam-updates on the clipped Huber + anchor gradient,
    until freeze_after steps have elapsed. Predictions are logged before the
    update (no label leakage into the logged step).
    """
    net_pre = LruNetwork.from_parameters(ckpt.params)
    if net_pre.input_dim != stream.features.shape[1]:
        raise CompatibilityError(
            f"checkpoint expects {net_pre.input_dim} features but the stream "
            f"has {stream.features.shape[1]}")
    theta_pre = tree_copy(ckpt.params)
    theta = tree_copy(ckpt.params)
    anchor = AnchorConfig(theta_pre=theta_pre, lambda_reg=cfg.lambda_reg,
                          squared=cfg.squared_anchor)
    if cfg.carry_optimizer and ckpt.optimizer is not None:
        adam = replace(ckpt.optimizer, lr=cfg.lr)
    else:
        adam = AdamState.init(theta, lr=cfg.lr)
    states = net_pre.zero_states()
    frozen_states = net_pre.zero_states()
    traces = reset_trace(net_pre)
    N = stream.n_rows
    p = stream.targets.shape[1]
    preds = np.empty((N, p))
    preds_frozen = np.empty((N, p))
    loss = np.empty(N)
    loss_frozen = np.empty(N)
    dist = np.empty(N)
    for t in range(N):
        x = stream.features[t]
        y = stream.targets[t]
        frozen_states, y_fr = network_forward(net_pre, frozen_states, x)
        cur = LruNetwork.from_parameters(theta)
        new_states, y_hat, layer_in = network_step(cur, states, x)
        preds[t] = y_hat
        preds_frozen[t] = y_fr
        loss[t] = huber(y_hat - y, cfg.huber_delta)
        loss_frozen[t] = huber(y_fr - y, cfg.huber_delta)
        updating = cfg.lr > 0 and (cfg.freeze_after is None
                                   or t < cfg.freeze_after)
        if updating:
            traces = step_traces(cur, states, layer_in, traces)
            grads = online_gradient(cur, traces, new_states, layer_in,
                                    huber_grad(y_hat - y, cfg.huber_delta))
            grads = tree_add(grads, anchor_gradient(theta, anchor))
            grads = clip_global_norm(grads, cfg.clip)
            theta, adam = adam_step(theta, grads, adam)
        states = new_states
        dist[t] = tree_norm(tree_sub(theta, theta_pre))
    return RunMetrics(timestamps=stream.timestamps.copy(),
                      targets=stream.targets.copy(),
                      predictions=preds, predictions_frozen=preds_frozen,
                      loss=loss, loss_frozen=loss_frozen,
                      anchor_distance=dist)


# ----------------------------------------------------------------- ablation

LAMBDA_GRID = (0.0, 0.001, 0.01, 0.1)
FREEZE_GRID = (1000, 2000, 3000)


def cmd_ablate(ckpt: Checkpoint, stream: SequenceData,
               base: FinetuneConfig) -> list[dict]:
    """Regularization-strength grid over the full horizon plus the
    freeze-after grid (with the best lambda and with lambda 0), plus the
    frozen-baseline row: 4 + 2*3 + 1 rows."""
    rows = []
    best_lambda, best_total = None, float("inf")
    baseline_total = None
    for lam in LAMBDA_GRID:
        metrics = cmd_finetune(ckpt, stream,
                               replace(base, lambda_reg=lam, freeze_after=None))
        total = metrics.total_loss
        rows.append({"kind": "lambda", "lambda_reg": lam, "freeze_after": "",
                     "total_loss": total,
                     "mean_loss": total / metrics.loss.size,
                     "final_anchor_distance": float(metrics.anchor_distance[-1])})
        if total < best_total:
            best_total, best_lambda = total, lam
        baseline_total = metrics.total_loss_frozen
    for lam in (best_lambda, 0.0) if best_lambda != 0.0 else (0.0, 0.0):
        for freeze in FREEZE_GRID:
            metrics = cmd_finetune(ckpt, stream,
                                   replace(base, lambda_reg=lam,
                                           freeze_after=freeze))
            rows.append({"kind": "freeze", "lambda_reg": lam,
                         "freeze_after": freeze,
                         "total_loss": metrics.total_loss,
                         "mean_loss": metrics.total_loss / metrics.loss.size,
                         "final_anchor_distance":
                             float(metrics.anchor_distance[-1])})
    rows.append({"kind": "baseline", "lambda_reg": "", "freeze_after": "",
                 "total_loss": baseline_total,
                 "mean_loss": baseline_total / stream.n_rows,
                 "final_anchor_distance": 0.0})
    return rows


# --------------------------------------------------------------- evaluation

def cmd_evaluate(ckpt: Checkpoint, data: SequenceData,
                 huber_delta: float = 1.0) -> dict:
    """Frozen full-sequence prediction with per-target MSE and Huber totals;
    also returns the per-step prediction/target arrays for plotting."""
    net = LruNetwork.from_parameters(ckpt.params)
    if net.input_dim != data.features.shape[1]:
        raise CompatibilityError(
            f"checkpoint expects {net.input_dim} features but the data "
            f"has {data.features.shape[1]}")
    preds = np.empty_like(data.targets)
    for sid in data.sessions():
        idx = data.session_slice(sid)
        from .lru import network_scan
        _, _, preds[idx] = network_scan(net, data.features[idx])
    resid = preds - data.targets
    per_target_mse = np.mean(resid * resid, axis=0)
    names = data.target_names or [f"target_{i}" for i in range(resid.shape[1])]
    return {
        "per_target_mse": {n: float(v) for n, v in zip(names, per_target_mse)},
        "huber_mean": huber(resid, huber_delta),
        "huber_total": huber(resid, huber_delta) * resid.shape[0],
        "predictions": preds,
        "targets": data.targets,
        "timestamps": data.timestamps,
        "target_names": names,
    }


# --------------------------------------------------------- imputer benchmark

def impute_benchmark(gen_cfg: GeneratorConfig, mask_rate: float = 0.2,
                     window: int = 5, k: int = 20, seed: int = 0) -> dict:
    """Mask cells of a fully observed synthetic validation table and compare
    the two imputers by MSE on the masked cells (standardized scale)."""
    ds = generate_dataset(replace(gen_cfg, missing_rate=0.0))
    table = join_weather(ds.emission, ds.weather)
    _, val = split_sessions(table)
    names = val.numeric_columns()
    for c in names:
        vals = val.columns[c]
        sd = np.std(vals)
        val.columns[c] = (vals - np.mean(vals)) / (sd if sd > 1e-12 else 1.0)
    rng = np.random.default_rng(seed)
    truth = {c: val.columns[c].copy() for c in names}
    masked = val.copy()
    # mask whole rows: the production missingness is absent samples, so a
    # masked cell never has same-row companions to match on
    m = rng.random(val.n_rows) < mask_rate
    m[0] = m[-1] = False  # keep session endpoints observed
    masks = {c: m for c in names}
    for c in names:
        masked.columns[c][m] = np.nan

    def mse(imputed: SeriesTable) -> float:
        errs = [imputed.columns[c][masks[c]] - truth[c][masks[c]]
                for c in names if masks[c].any()]
        e = np.concatenate(errs)
        return float(np.mean(e * e))

    rolled = impute_rolling_median(masked, window)
    knned = impute_knn(masked, k)
    return {"rolling_mse": mse(rolled), "knn_mse": mse(knned),
            "masked_cells": int(sum(m.sum() for m in masks.values()))}

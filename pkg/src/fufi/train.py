"""Training loop, learning-rate schedule, early stopping and evaluation."""
from __future__ import annotations

import copy
import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, List, Optional, Tuple

import numpy as np
import torch

from .baselines import baseline_mean, fit_ha
from .checkpoint import model_kind
from .errors import DivergenceError, ShapeError
from .external import FusionConfig, encode_records
from .geo import GeoEncoderConfig, pretrain_geo_encoder
from .grid import DatasetSplit, FlowDataset, coarsen, split as split_dataset
from .layers import log2_int
from .losses import combined_loss, ground_truth_distribution, mse_loss
from .metrics import MetricAccumulator
from .ops import structural_loss, sum_pool
from .urbanfm import FMConfig, UrbanFM, build_urbanfm, build_urbanfm_sl
from .urbanpy import PyramidConfig, UrbanPy, build_urbanpy

log = logging.getLogger(__name__)

MODEL_KINDS = ("urbanfm", "fm-sl", "urbanpy")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 16
    lr_halve_every: int = 20
    early_stop_patience: int = 50
    max_epochs: int = 200
    seed: int = 0
    ratios: Tuple[float, float, float] = (2, 1, 1)
    # variant switches; None defers to the model config
    use_external: Optional[bool] = None
    use_structural_loss_variant: bool = False
    local_structure: Optional[bool] = None
    distributional_loss: Optional[bool] = None
    structural_weight: float = 1.0
    grad_clip: Optional[float] = None

    def __post_init__(self):
        self.ratios = tuple(self.ratios)
        if self.lr <= 0 or self.batch_size < 1 or self.early_stop_patience < 1:
            raise ValueError("need lr > 0, batch_size >= 1 and early_stop_patience >= 1")
        if self.lr_halve_every < 1 or self.max_epochs < 1:
            raise ValueError("lr_halve_every and max_epochs must be >= 1")

    @classmethod
    def for_model(cls, kind, **overrides):
        """Defaults: lr 1e-4 and batch 16 for single-pass models, both doubled for the pyramid."""
        base = {"lr": 2e-4, "batch_size": 32} if kind == "urbanpy" else {}
        return cls(**{**base, **overrides})


def lr_at(epoch, cfg: TrainConfig):
    return cfg.lr * 0.5 ** (epoch // cfg.lr_halve_every)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_rmse: float
    lr: float
    wall_time: float


@dataclass
class TrainLog:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stopped_early: bool = False

    @property
    def best_val_rmse(self):
        return self.epochs[self.best_epoch].val_rmse

    def to_dict(self, with_time=True):
        recs = [asdict(r) for r in self.epochs]
        if not with_time:
            for r in recs:
                r.pop("wall_time")
        return {"epochs": recs, "best_epoch": self.best_epoch, "stopped_early": self.stopped_early}


def fit_loop(model: torch.nn.Module, loss_fn: Callable, n_train: int, validate: Callable,
             cfg: TrainConfig, params=None) -> TrainLog:
    """Generic Adam loop with staircase LR, best-model tracking and patience.

    ``loss_fn(indices)`` returns the mini-batch loss for those training
    indices; ``validate()`` returns the validation RMSE. The best weights are
    loaded back into ``model`` before returning.
    """
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    params = [p for p in (model.parameters() if params is None else params) if p.requires_grad]
    opt = torch.optim.Adam(params, lr=cfg.lr)
    out = TrainLog()
    best, best_state = float("inf"), copy.deepcopy(model.state_dict())
    start = time.perf_counter()
    for epoch in range(cfg.max_epochs):
        lr = lr_at(epoch, cfg)
        for group in opt.param_groups:
            group["lr"] = lr
        model.train()
        order = rng.permutation(n_train)
        total, batches = 0.0, 0
        for lo in range(0, n_train, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            opt.zero_grad()
            loss = loss_fn(idx)
            if not torch.isfinite(loss):
                raise DivergenceError(f"non-finite loss {loss.item()} at epoch {epoch}, batch {batches}")
            loss.backward()
            if cfg.grad_clip:
                torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
            opt.step()
            total += loss.item()
            batches += 1
        model.eval()
        with torch.no_grad():
            val = float(validate())
        if not np.isfinite(val):
            raise DivergenceError(f"non-finite validation RMSE at epoch {epoch}")
        out.epochs.append(EpochRecord(epoch, total / max(batches, 1), val, lr, time.perf_counter() - start))
        if val < best:
            best, out.best_epoch = val, epoch
            best_state = copy.deepcopy(model.state_dict())
        log.info("epoch %d loss %.6g val_rmse %.6g lr %.3g", epoch, total / max(batches, 1), val, lr)
        if epoch - out.best_epoch >= cfg.early_stop_patience:
            out.stopped_early = True
            break
    model.load_state_dict(best_state)
    model.eval()
    return out


@dataclass
class DataTensors:
    coarse: torch.Tensor
    fine: torch.Tensor
    cat: Optional[torch.Tensor]
    con: Optional[torch.Tensor]

    def ext(self, idx):
        if self.cat is None:
            return None, None
        return self.cat[idx], self.con[idx]


def prepare_tensors(ds: FlowDataset, n: int, fusion_cfg: Optional[FusionConfig] = None) -> DataTensors:
    fine = np.asarray(ds.flows, np.float64)
    coarse = coarsen(fine, n)
    cat = con = None
    if fusion_cfg is not None:
        if ds.externals is None:
            raise ValueError("the model uses external factors but the dataset has none")
        cat, con = encode_records(ds.externals, fusion_cfg)
    return DataTensors(
        torch.tensor(coarse[:, None], dtype=torch.float32),
        torch.tensor(fine[:, None], dtype=torch.float32),
        cat,
        con,
    )


def _fine_grid(ds, n):
    h, w = ds.shape
    if h % n or w % n:
        raise ShapeError(f"dataset grid {h}x{w} is not divisible by N={n}")
    return h // n, w // n


def build_model(kind: str, model_cfg, ds: FlowDataset, data_split: DatasetSplit, seed=0,
                geo_cfg: Optional[GeoEncoderConfig] = None):
    """Build a model sized for ``ds`` with train-split statistics attached.

    Sets the input flow scale (max train coarse value) and external-factor
    normalisation; for the pyramid with local structure, pretrains the
    geographic encoder and stores per-level codes.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    n = model_cfg.n_upscale
    grid = _fine_grid(ds, n)
    train_idx = list(data_split.train)
    fusion_cfg = None
    if model_cfg.use_external:
        if ds.externals is None:
            raise ValueError("use_external is set but the dataset has no external factors")
        steps = log2_int(n) if kind != "urbanpy" else sum(log2_int(r) for r in model_cfg.ratios())
        fusion_cfg = FusionConfig.from_records([ds.externals[i] for i in train_idx], grid, steps,
                                               weather_vocab=ds.weather_vocab, ticket_price=ds.has_ticket_price)
    if kind == "urbanpy":
        if model_cfg.use_local_structure:
            if ds.geo is None:
                raise ValueError("local structure needs geographic features; disable use_local_structure")
            geo_cfg = geo_cfg or GeoEncoderConfig(in_channels=ds.geo.raw.shape[0], seed=seed)
            geo_cfg = GeoEncoderConfig(**{**asdict(geo_cfg), "in_channels": ds.geo.raw.shape[0],
                                          "code_channels": model_cfg.geo_channels})
        model = build_urbanpy(model_cfg, grid, fusion_cfg, geo_cfg, seed)
        if model_cfg.use_local_structure:
            raws = [ds.geo.pooled(n // s).raw for s in model_cfg.scales]
            enc, codes = pretrain_geo_encoder(raws, geo_cfg)
            model.geo_encoder.load_state_dict(enc.state_dict())
            model.set_geo_codes(codes)
    elif kind == "fm-sl":
        model = build_urbanfm_sl(model_cfg, grid, fusion_cfg, seed)
    else:
        model = build_urbanfm(model_cfg, grid, fusion_cfg, seed)
    coarse_train = coarsen(np.asarray(ds.flows)[train_idx], n)
    model.flow_scale.fill_(float(max(coarse_train.max(), 1e-6)))
    return model


def _objective(model, data: DataTensors, cfg: TrainConfig):
    scale = model.flow_scale
    if isinstance(model, UrbanPy):
        alpha = model.cfg.loss_alpha if model.cfg.use_distributional_loss else 0.0
        N = model.cfg.n_upscale

        def loss_fn(idx):
            coarse, fine = data.coarse[idx], data.fine[idx]
            states = model(coarse, *data.ext(idx))
            outs, truths = [], []
            for st in states:
                level_fine = sum_pool(fine, N // st.scale)
                truths.append((level_fine / scale, ground_truth_distribution(level_fine, coarse, st.scale)))
                outs.append((st.flow_pred / scale, st.distribution))
            return combined_loss(outs, truths, [st.scale for st in states], alpha, reduction="batch_mean")

        return loss_fn

    N = model.cfg.n_upscale
    sl_weight = cfg.structural_weight if not model.cfg.distributional else 0.0

    def loss_fn(idx):
        coarse, fine = data.coarse[idx], data.fine[idx]
        pred = model(coarse, *data.ext(idx)).fine_pred
        loss = mse_loss(pred / scale, fine / scale, reduction="batch_mean")
        if sl_weight:
            loss = loss + sl_weight * structural_loss(coarse / scale, pred / scale, N) / len(idx)
        return loss

    return loss_fn


def predict(model, data: DataTensors, indices, batch_size=256, all_levels=False):
    """Fine predictions for ``indices`` as float64 arrays ``(T, H, W)``.

    With ``all_levels`` a pyramid returns one array per level.
    """
    model.eval()
    indices = np.asarray(list(indices))
    chunks = []
    with torch.no_grad():
        for lo in range(0, len(indices), batch_size):
            idx = indices[lo:lo + batch_size]
            out = model(data.coarse[idx], *data.ext(idx))
            if isinstance(model, UrbanPy):
                chunks.append([st.flow_pred[:, 0].double().numpy() for st in out])
            else:
                chunks.append([out.fine_pred[:, 0].double().numpy()])
    levels = [np.concatenate([c[k] for c in chunks]) for k in range(len(chunks[0]))]
    return levels if all_levels else levels[-1]


def resolve_configs(kind, model_cfg, cfg: TrainConfig):
    """Apply TrainConfig variant switches to the model config."""
    updates = {}
    if cfg.use_external is not None:
        updates["use_external"] = cfg.use_external
    if kind == "urbanpy":
        if cfg.local_structure is not None:
            updates["use_local_structure"] = cfg.local_structure
        if cfg.distributional_loss is not None:
            updates["use_distributional_loss"] = cfg.distributional_loss
    elif cfg.use_structural_loss_variant or kind == "fm-sl":
        updates["distributional"] = False
    return type(model_cfg)(**{**asdict(model_cfg), **updates}) if updates else model_cfg


def train(model, ds: FlowDataset, data_split: DatasetSplit, cfg: TrainConfig):
    """Train ``model`` on the split; returns ``(best model, TrainLog)``."""
    N = model.cfg.n_upscale
    if _fine_grid(ds, N) != model.coarse_dims:
        raise ShapeError(f"dataset grid {ds.shape} does not fit model grid {model.coarse_dims} x {N}")
    data = prepare_tensors(ds, N, model.fusion_cfg)
    train_idx = np.asarray(list(data_split.train))
    val_idx = list(data_split.validation)
    val_truth = np.asarray(ds.flows, np.float64)[val_idx]
    inner = _objective(model, data, cfg)

    def validate():
        acc = MetricAccumulator().update(predict(model, data, val_idx), val_truth)
        return acc.result()["rmse"]

    log_ = fit_loop(model, lambda idx: inner(train_idx[idx]), len(train_idx), validate, cfg)
    return model, log_


def evaluate(model, ds: FlowDataset, indices, batch_size=256):
    """Metric report on ``indices`` (typically the test split).

    For the pyramid the top-level metrics are the final level's and
    ``levels`` lists each level against the aggregated ground truth.
    """
    N = model.cfg.n_upscale
    data = prepare_tensors(ds, N, model.fusion_cfg)
    indices = list(indices)
    truth = np.asarray(ds.flows, np.float64)[indices]
    levels = predict(model, data, indices, batch_size, all_levels=True)
    report = {"model": model_kind(model), "n_samples": len(indices)}
    report.update(MetricAccumulator().update(levels[-1], truth).result())
    if isinstance(model, UrbanPy):
        report["levels"] = []
        for s, pred in zip(model.cfg.scales, levels):
            level_truth = coarsen(truth, N // s)
            report["levels"].append({"scale": s, **MetricAccumulator().update(pred, level_truth).result()})
    return report


def evaluate_baselines(ds: FlowDataset, n: int, data_split: DatasetSplit):
    """Mean and HA reports on the test split (HA fitted on the train split)."""
    flows = np.asarray(ds.flows, np.float64)
    test = flows[list(data_split.test)]
    coarse = coarsen(test, n)
    ha = fit_ha(flows[list(data_split.train)], n)
    return {
        "mean": {"n_samples": len(test), **MetricAccumulator().update(baseline_mean(coarse, n), test).result()},
        "ha": {"n_samples": len(test), **MetricAccumulator().update(ha.predict(coarse), test).result()},
    }


def _pick(dc, raw):
    names = {f.name for f in fields(dc)}
    return {k: v for k, v in raw.items() if k in names}


def load_run_config(raw: dict, kind: str):
    """Split a flat JSON config into ``(TrainConfig, model config, geo config)``.

    Keys are the dataclass field names verbatim; ``geo_encoder`` may hold a
    nested object of GeoEncoderConfig fields.
    """
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}")
    raw = dict(raw)
    geo_raw = raw.pop("geo_encoder", None)
    model_cls = PyramidConfig if kind == "urbanpy" else FMConfig
    known = {f.name for f in fields(TrainConfig)} | {f.name for f in fields(model_cls)}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown config keys for {kind}: {sorted(unknown)}")
    cfg = TrainConfig.for_model(kind, **_pick(TrainConfig, raw))
    model_cfg = resolve_configs(kind, model_cls(**_pick(model_cls, raw)), cfg)
    geo_cfg = None
    if geo_raw is not None:
        geo_cfg = GeoEncoderConfig(**{"in_channels": 1, **geo_raw})
    return cfg, model_cfg, geo_cfg


def run_training(kind, ds: FlowDataset, raw_cfg: dict):
    """Config dict -> trained model, log and test report (used by the CLI)."""
    cfg, model_cfg, geo_cfg = load_run_config(raw_cfg, kind)
    data_split = split_dataset(ds, cfg.ratios)
    model = build_model(kind, model_cfg, ds, data_split, cfg.seed, geo_cfg)
    model, log_ = train(model, ds, data_split, cfg)
    return model, log_, evaluate(model, ds, data_split.test)

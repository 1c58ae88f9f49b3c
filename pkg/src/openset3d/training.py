"""Two-phase optimization and evaluation.

Phase 1 minimizes plain prototype cross-entropy. The frozen phase-1 model
then produces cached saliency maps and partial views, and phase 2 resumes
from the same optimizer state against the combined loss

    total = cls + alpha * high_part + beta * synthesis + gamma * margin.

Reproducibility contract: every stochastic choice draws from a generator
keyed by (seed, stream, global epoch), so runs with the same config and
seed are bit-identical, and a phase-2 run whose extra loss weights are all
zero consumes exactly the same draws as continued phase-1 training.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import ConfigError, SaliencyCache, ToyDataset
from .encoder import Model, normalize_cloud
from .margins import RunningStd, build_triplet, margin_loss, pseudo_features
from .metrics import ScoredSample, acc_macc, auroc, fpr95, mls_score, msp_score
from .saliency import (
    Part,
    PartialView,
    SaliencyMap,
    normalize_scores,
    partial_views,
    random_split,
    saliency_maps_batch,
    tunable_decompose,
)
from .synthesis import gss_loss, mix

__all__ = [
    "TrainConfig",
    "TrainState",
    "TrainResult",
    "TrainingDiverged",
    "Adam",
    "cls_loss",
    "high_saliency_loss",
    "total_loss",
    "train",
    "init_state",
    "run_pretrain",
    "run_combined",
    "build_saliency_cache",
    "build_views",
    "build_decomposition_caches",
    "DecompCaches",
    "predict_logits",
    "evaluate_closed_set",
    "score_records",
    "evaluate_open_set",
    "report_csv_text",
    "write_report_csv",
    "REPORT_COLUMNS",
]

REPORT_COLUMNS = ("epoch", "l_cls", "l_h", "l_s", "l_m", "total", "val_acc")

# independent stochastic streams, keyed additionally by global epoch
STREAM_SHUFFLE = 1
STREAM_TSD = 2
STREAM_GSS = 3
STREAM_SMS = 4
STREAM_VIEWS = 5


def stream_rng(seed: int, stream: int, epoch: int = 0) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFF, stream, epoch])
    )


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, value: float):
        super().__init__(f"non-finite loss at epoch {epoch}: {value}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    # loss weights
    alpha: float = 0.1
    beta: float = 0.01
    gamma: float = 0.3
    # optimizer / schedule
    learning_rate: float = 0.001
    phase1_epochs: int = 100
    phase2_epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    # soft pseudo-label smoothing
    eps: float = 0.1
    eps_known: float = 0.1
    mix_count: int = 3
    # decomposition
    view_high_thresh: float = 0.6
    view_low_thresh: float = 0.4
    views_per_object: int = 8
    view_radius: tuple = (1.5, 4.0)
    saliency_mode: str = "cached"  # cached | online
    # margin separation
    noise_weights: tuple = (0.01, 0.05, 0.1, 0.2)
    pos_weight: float = 0.01
    neg_weight: float = 1.0
    margin: float = 10.0
    p_replace: float = 0.5
    # model
    feat_dim: int = 256
    point_widths: tuple = (64, 128, 256)
    proj_hidden: tuple = ()
    # module toggles (ablation)
    use_tsd: bool = True
    use_gss: bool = True
    use_sms: bool = True
    synth_ratio: float = 1.0

    def validate(self) -> None:
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ConfigError("loss weights must be nonnegative")
        if not (self.pos_weight < self.neg_weight):
            raise ConfigError("triplet weights must satisfy pos_weight < neg_weight")
        if not (0.0 <= self.view_low_thresh < self.view_high_thresh <= 1.0):
            raise ConfigError("view thresholds must satisfy 0 <= low < high <= 1")
        if self.eps < 0 or self.eps_known < 0 or self.eps + self.eps_known >= 1:
            raise ConfigError("smoothing weights must satisfy eps + eps_known < 1")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.phase1_epochs < 0 or self.phase2_epochs < 0 or self.batch_size < 1:
            raise ConfigError("epoch and batch counts must be nonnegative/positive")
        if self.mix_count < 2:
            raise ConfigError("mix_count must be at least 2")
        if self.saliency_mode not in ("cached", "online"):
            raise ConfigError("saliency_mode must be 'cached' or 'online'")
        if self.synth_ratio < 0:
            raise ConfigError("synth_ratio must be nonnegative")

    def gss_active(self) -> bool:
        return self.use_gss and self.beta > 0 and self.synth_ratio > 0

    def sms_active(self) -> bool:
        return self.use_sms and self.gamma > 0

    def needs_parts(self) -> bool:
        return self.alpha > 0 or self.gss_active() or self.sms_active()


class Adam:
    """Adaptive moment estimation over the model's parameter dict."""

    def __init__(self, params: dict, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            params[name] -= lr * (self.m[name] / b1c) / (np.sqrt(self.v[name] / b2c) + self.eps)

    def copy(self) -> "Adam":
        dup = Adam.__new__(Adam)
        dup.beta1, dup.beta2, dup.eps = self.beta1, self.beta2, self.eps
        dup.m = {k: v.copy() for k, v in self.m.items()}
        dup.v = {k: v.copy() for k, v in self.v.items()}
        dup.t = self.t
        return dup


def cosine_lr(lr0: float, epoch: int, total_epochs: int) -> float:
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / max(1, total_epochs)))


# ----------------------------------------------------------------------
# loss operations


def _one_hot(index: int, width: int) -> np.ndarray:
    t = np.zeros(width)
    t[index] = 1.0
    return t


def cls_loss(logits, class_index: int):
    """Cross-entropy of the (C+1)-way softmax against a known class.

    The last logit belongs to the unknown prototype; labeling a real sample
    with it is rejected. Accepts a Tensor (differentiable) or an array.
    """
    width = logits.shape[-1]
    class_index = int(class_index)
    if not (0 <= class_index < width - 1):
        raise ValueError(
            f"class index {class_index} invalid: known classes are 0..{width - 2} "
            "(the unknown slot is reserved for synthetic samples)"
        )
    target = _one_hot(class_index, width)
    if isinstance(logits, ad.Tensor):
        return ad.soft_cross_entropy(logits, target)
    return gss_loss(np.asarray(logits, dtype=np.float64), target)


def high_saliency_loss(bound, part_points, class_index):
    """Classification loss of a high-saliency part as a same-class instance.

    `bound` is a tape-bound model; the part is renormalized like any other
    input cloud. Returns (loss, part feature) so margin terms can reuse the
    encoding.
    """
    cloud = normalize_cloud(part_points)
    _, f = bound.encode(cloud)
    logits = bound.logits(f)
    return cls_loss(logits, class_index), f


def total_loss(l_cls, l_h, l_s, l_m, alpha, beta, gamma):
    """Weighted sum of the four loss terms (Tensor or float, by l_cls)."""
    if isinstance(l_cls, ad.Tensor):
        out = l_cls
        for term, weight in ((l_h, alpha), (l_s, beta), (l_m, gamma)):
            if weight != 0.0:
                out = ad.add(out, ad.scale(term, weight))
        return out
    return float(l_cls + alpha * l_h + beta * l_s + gamma * l_m)


# ----------------------------------------------------------------------
# cached decomposition inputs


@dataclass
class DecompCaches:
    saliency: SaliencyCache
    views: dict[str, list[PartialView]]


def build_saliency_cache(model: Model, records) -> SaliencyCache:
    """Saliency scores for every record, from one frozen model."""
    checksum = model.checksum()
    cache = SaliencyCache(checksum)
    records = list(records)
    for start in range(0, len(records), 128):
        chunk = records[start : start + 128]
        maps = saliency_maps_batch(
            model, [r.points for r in chunk], [r.class_index for r in chunk]
        )
        for rec, smap in zip(chunk, maps):
            cache.put(rec.object_id, smap.raw, checksum)
    return cache


def build_views(records, cache: SaliencyCache, config: TrainConfig):
    """Partial views for every record, scored by its cached saliency.

    View sampling is keyed by the record's position, not the epoch, so the
    same views come back however often training restarts from the cache.
    """
    views: dict[str, list[PartialView]] = {}
    for pos, rec in enumerate(records):
        rng = stream_rng(config.seed, STREAM_VIEWS, pos)
        normalized = normalize_scores(cache.get(rec.object_id, cache.model_checksum))
        views[rec.object_id] = partial_views(
            rec.points, normalized, config.views_per_object, rng, config.view_radius
        )
    return views


def build_decomposition_caches(model: Model, records, config: TrainConfig) -> DecompCaches:
    records = list(records)
    cache = build_saliency_cache(model, records)
    return DecompCaches(saliency=cache, views=build_views(records, cache, config))


# ----------------------------------------------------------------------
# train state and steps


@dataclass
class TrainState:
    model: Model
    opt: Adam
    epoch: int  # next global epoch index
    total_epochs: int  # span of the cosine schedule
    rows: list = field(default_factory=list)  # report rows, one dict per epoch

    def copy(self) -> "TrainState":
        return TrainState(
            model=self.model.copy(),
            opt=self.opt.copy(),
            epoch=self.epoch,
            total_epochs=self.total_epochs,
            rows=list(self.rows),
        )


@dataclass
class TrainResult:
    model: Model  # final phase-2 model
    phase1_model: Model  # snapshot at the phase boundary
    rows: list
    caches: DecompCaches | None = None


def _batches(records, batch_size, rng):
    order = rng.permutation(len(records))
    for start in range(0, len(order), batch_size):
        yield [records[i] for i in order[start : start + batch_size]]


def _cls_batch_loss(bound, batch, num_known):
    clouds = [r.points for r in batch]
    labels = [r.class_index for r in batch]
    _, feats = bound.encode_batch(clouds)
    logits = bound.logits(feats)
    targets = np.zeros((len(batch), num_known + 1))
    targets[np.arange(len(batch)), labels] = 1.0
    return ad.mean_all(ad.soft_cross_entropy(logits, targets)), feats, logits


def _pretrain_epoch(state, dataset, config, val_records):
    model = state.model
    lr = cosine_lr(config.learning_rate, state.epoch, state.total_epochs)
    rng = stream_rng(config.seed, STREAM_SHUFFLE, state.epoch)
    cls_total, n_batches = 0.0, 0
    for batch in _batches(dataset.train_known, config.batch_size, rng):
        tape = ad.Tape()
        bound = model.bind(tape)
        loss, _, _ = _cls_batch_loss(bound, batch, model.num_known)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(state.epoch, value)
        tape.backward(loss)
        state.opt.step(model.params, bound.param_grads(), lr)
        cls_total += value
        n_batches += 1
    mean_cls = cls_total / max(1, n_batches)
    val_acc, _ = evaluate_closed_set(model, val_records) if val_records else (float("nan"),) * 2
    state.rows.append({
        "epoch": state.epoch, "l_cls": mean_cls, "l_h": 0.0, "l_s": 0.0,
        "l_m": 0.0, "total": mean_cls, "val_acc": val_acc,
    })
    state.epoch += 1


def _decompose_batch(model, batch, config, caches, rng_tsd):
    """Per-sample (high, low) parts for one batch.

    With TSD on, parts come from the saliency split with optional partial
    view substitution; with TSD off, a uniformly random split of the same
    sizes stands in, isolating the value of the saliency signal.
    """
    highs, lows = [], []
    if config.use_tsd and config.saliency_mode == "online":
        online_maps = saliency_maps_batch(
            model, [r.points for r in batch], [r.class_index for r in batch]
        )
    for pos, rec in enumerate(batch):
        n = len(rec.points)
        if not config.use_tsd:
            decomp = random_split(n, config.mix_count, rng_tsd)
            high = Part(rec.points[decomp.high_indices], rec.class_index,
                        rec.object_id, decomp.high_indices)
            low = Part(rec.points[decomp.low_indices], rec.class_index,
                       rec.object_id, decomp.low_indices)
        else:
            if config.saliency_mode == "online":
                smap = online_maps[pos]
                views = partial_views(
                    rec.points, smap.normalized, config.views_per_object,
                    rng_tsd, config.view_radius,
                )
            else:
                raw = caches.saliency.get(rec.object_id, caches.saliency.model_checksum)
                smap = SaliencyMap(raw=raw, normalized=normalize_scores(raw))
                views = caches.views[rec.object_id]
            high, low = tunable_decompose(
                rec.points, smap, config.mix_count,
                config.view_high_thresh, config.view_low_thresh,
                views, rng_tsd, label=rec.class_index, source_id=rec.object_id,
            )
        highs.append(high)
        lows.append(low)
    return highs, lows


def _combined_epoch(state, dataset, config, caches, run_std, val_records):
    model = state.model
    num_known = model.num_known
    lr = cosine_lr(config.learning_rate, state.epoch, state.total_epochs)
    rng_shuffle = stream_rng(config.seed, STREAM_SHUFFLE, state.epoch)
    rng_tsd = stream_rng(config.seed, STREAM_TSD, state.epoch)
    rng_gss = stream_rng(config.seed, STREAM_GSS, state.epoch)
    rng_sms = stream_rng(config.seed, STREAM_SMS, state.epoch)
    gss_on, sms_on = config.gss_active(), config.sms_active()
    need_high = config.alpha > 0 or sms_on
    sums = {"l_cls": 0.0, "l_h": 0.0, "l_s": 0.0, "l_m": 0.0, "total": 0.0}
    n_batches = 0
    for batch in _batches(dataset.train_known, config.batch_size, rng_shuffle):
        tape = ad.Tape()
        bound = model.bind(tape)
        labels = [r.class_index for r in batch]
        l_cls, feats, _ = _cls_batch_loss(bound, batch, num_known)
        l_h = l_s = l_m = None
        if config.needs_parts():
            highs, lows = _decompose_batch(model, batch, config, caches, rng_tsd)
            if need_high:
                high_clouds = [normalize_cloud(p.points) for p in highs]
                _, high_feats = bound.encode_batch(high_clouds)
                high_logits = bound.logits(high_feats)
                targets = np.zeros((len(batch), num_known + 1))
                targets[np.arange(len(batch)), labels] = 1.0
                l_h = ad.mean_all(ad.soft_cross_entropy(high_logits, targets))
            if gss_on:
                l_s = _synthesis_loss(bound, batch, lows, config, num_known, rng_gss)
            if sms_on:
                l_m = _margin_term(bound, model, batch, feats, high_feats, config,
                                   run_std, rng_sms)
        loss = l_cls
        for term, weight in ((l_h, config.alpha), (l_s, config.beta), (l_m, config.gamma)):
            if term is not None and weight > 0:
                loss = ad.add(loss, ad.scale(term, weight))
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingDiverged(state.epoch, value)
        tape.backward(loss)
        state.opt.step(model.params, bound.param_grads(), lr)
        if sms_on:
            run_std.update(feats.data)
        sums["l_cls"] += l_cls.item()
        sums["l_h"] += l_h.item() if l_h is not None else 0.0
        sums["l_s"] += l_s.item() if l_s is not None else 0.0
        sums["l_m"] += l_m.item() if l_m is not None else 0.0
        sums["total"] += value
        n_batches += 1
    means = {k: v / max(1, n_batches) for k, v in sums.items()}
    val_acc, _ = evaluate_closed_set(model, val_records) if val_records else (float("nan"),) * 2
    state.rows.append({"epoch": state.epoch, **means, "val_acc": val_acc})
    state.epoch += 1


def _synthesis_loss(bound, batch, lows, config, num_known, rng_gss):
    n_points = len(batch[0].points)
    n_synth = int(round(len(batch) * config.synth_ratio))
    samples = []
    for _ in range(n_synth):
        if len(batch) < config.mix_count:
            break
        picks = rng_gss.choice(len(batch), size=config.mix_count, replace=False)
        samples.append(mix(
            [lows[i] for i in picks], n_points, num_known,
            config.eps, config.eps_known, rng_gss,
        ))
    if not samples:
        return None
    _, synth_feats = bound.encode_batch([s.points for s in samples])
    synth_logits = bound.logits(synth_feats)
    targets = np.stack([s.soft_label for s in samples])
    return ad.mean_all(ad.soft_cross_entropy(synth_logits, targets))


def _margin_term(bound, model, batch, feats, high_feats, config, run_std, rng_sms):
    """Mean hinge triplet loss over the batch's real known-class anchors."""
    labels = np.array([r.class_index for r in batch])
    losses = []
    for b in range(len(batch)):
        others = np.flatnonzero(labels != labels[b])
        if others.size == 0:
            continue  # no different-class negative available: skip this anchor
        j = int(others[rng_sms.integers(others.size)])
        pseudo = pseudo_features(
            feats.data[b], config.noise_weights, model, labels[b], rng_sms,
            run_std.value,
        )
        triplet = build_triplet(
            (ad.take_row(feats, b), labels[b]),
            ad.take_row(high_feats, b),
            (ad.take_row(feats, j), labels[j]),
            pseudo, config.p_replace, rng_sms,
        )
        losses.append(margin_loss(triplet, config.pos_weight, config.neg_weight,
                                  config.margin))
    if not losses:
        return None
    acc = losses[0]
    for extra in losses[1:]:
        acc = ad.add(acc, extra)
    return ad.scale(acc, 1.0 / len(losses))


# ----------------------------------------------------------------------
# public training entry points


def init_state(dataset: ToyDataset, config: TrainConfig) -> TrainState:
    config.validate()
    if len(dataset.known_classes) < 2:
        raise ConfigError("training requires at least two known classes")
    model = Model(
        num_known=len(dataset.known_classes),
        feat_dim=config.feat_dim,
        point_widths=config.point_widths,
        proj_hidden=config.proj_hidden,
        seed=config.seed,
    )
    return TrainState(
        model=model,
        opt=Adam(model.params),
        epoch=0,
        total_epochs=config.phase1_epochs + config.phase2_epochs,
    )


def run_pretrain(state: TrainState, dataset: ToyDataset, config: TrainConfig,
                 epochs: int, progress=None) -> TrainState:
    for _ in range(epochs):
        _pretrain_epoch(state, dataset, config, dataset.val_known)
        if progress is not None:
            progress(state.rows[-1])
    return state


def run_combined(state: TrainState, dataset: ToyDataset, config: TrainConfig,
              epochs: int, caches: DecompCaches | None, progress=None) -> TrainState:
    if (epochs > 0 and config.needs_parts() and config.use_tsd
            and config.saliency_mode == "cached" and caches is None):
        raise ConfigError("cached saliency mode needs decomposition caches")
    run_std = RunningStd(config.feat_dim)
    for _ in range(epochs):
        _combined_epoch(state, dataset, config, caches, run_std, dataset.val_known)
        if progress is not None:
            progress(state.rows[-1])
    return state


def train(dataset: ToyDataset, config: TrainConfig, progress=None) -> TrainResult:
    """Full two-phase run; returns the final model, the phase-1 snapshot,
    per-epoch report rows, and the decomposition caches (when built)."""
    state = init_state(dataset, config)
    run_pretrain(state, dataset, config, config.phase1_epochs, progress)
    phase1_model = state.model.copy()
    caches = None
    if (config.phase2_epochs > 0 and config.needs_parts()
            and config.use_tsd and config.saliency_mode == "cached"):
        caches = build_decomposition_caches(state.model, dataset.train_known, config)
    run_combined(state, dataset, config, config.phase2_epochs, caches, progress)
    return TrainResult(model=state.model, phase1_model=phase1_model,
                       rows=state.rows, caches=caches)


# ----------------------------------------------------------------------
# evaluation


def predict_logits(model: Model, records, chunk=256) -> np.ndarray:
    records = list(records)
    out = []
    for start in range(0, len(records), chunk):
        out.append(model.infer_batch([r.points for r in records[start : start + chunk]]))
    return np.vstack(out)


def evaluate_closed_set(model: Model, records) -> tuple[float, float]:
    """(ACC, mACC) of known-class argmax predictions on `records`."""
    records = list(records)
    logits = predict_logits(model, records)
    preds = logits[:, :-1].argmax(axis=1)
    labels = np.array([r.class_index for r in records])
    return acc_macc(preds, labels)


def score_records(model: Model, records, scorer: str = "mls") -> list[ScoredSample]:
    score_fn = {"mls": mls_score, "msp": msp_score}.get(scorer)
    if score_fn is None:
        raise ConfigError(f"unknown scorer {scorer!r}; choose mls or msp")
    records = list(records)
    logits = predict_logits(model, records)
    samples = []
    for rec, row in zip(records, logits):
        confidence, predicted = score_fn(row)
        samples.append(ScoredSample(
            confidence=confidence,
            predicted_class=predicted,
            is_known=rec.known,
            true_class=rec.class_index if rec.known else None,
            object_id=rec.object_id,
        ))
    return samples


def evaluate_open_set(model: Model, known_records, unknown_records,
                      scorer: str = "mls") -> tuple[dict, list[ScoredSample]]:
    """Open-set metrics row plus the per-sample score dump."""
    known = score_records(model, known_records, scorer)
    unknown = score_records(model, unknown_records, scorer)
    preds = np.array([s.predicted_class for s in known])
    labels = np.array([s.true_class for s in known])
    acc, macc = acc_macc(preds, labels)
    row = {
        "method": scorer,
        "split": "test",
        "auroc": auroc([s.confidence for s in known], [s.confidence for s in unknown]),
        "fpr95": fpr95([s.confidence for s in known], [s.confidence for s in unknown]),
        "acc": acc,
        "macc": macc,
    }
    return row, known + unknown


# ----------------------------------------------------------------------
# report serialization


def report_csv_text(rows) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for row in rows:
        lines.append(",".join(
            str(row["epoch"]) if col == "epoch" else repr(float(row[col]))
            for col in REPORT_COLUMNS
        ))
    return "\n".join(lines) + "\n"


def write_report_csv(path, rows) -> None:
    Path(path).write_text(report_csv_text(rows), encoding="ascii")

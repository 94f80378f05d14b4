"""Joint optimization of the denoiser and the conditional autoencoder + classifier.

Per batch, the denoiser is trained on the x0-reconstruction loss alone. Its
prediction and activations are then detached and fed to the decoder, which
learns to predict the denoiser's elementwise error map, while the classifier
learns from the pooled encoder features. The two optimizers never see each
other's losses.
"""
from __future__ import annotations

import copy
import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import DatasetSplit, batches, split
from .diffusion import NoiseSchedule, ddpm_loss, make_schedule, q_sample, sample_timesteps
from .errors import ConfigurationError, DataError, MetricError, TrainingError
from .grad_core import NDValue, RMSProp, Tape, CyclicLr, backward, cyclic_lr, l1_loss, mse_loss
from .metrics import MODE_LABELS, RunMetrics, multiclass_auc
from .networks import Classifier, Encoder, ModelBundle, build_bundle, check_length, N_CLASSES
from .sigproc import EpochSet

log = logging.getLogger(__name__)

MODES = ("full", "no_ddpm", "encoder_classifier")


@dataclass
class ModelConfig:
    ddpm_widths: tuple[int, int, int] = (32, 64, 128)
    encoder_widths: tuple[int, int, int] = (64, 128, 256)
    decoder_widths: tuple[int, int, int] = (32, 32, 32)
    time_dim: int = 64
    groups: int = 8
    classifier_hidden: int = 0


@dataclass
class TrainConfig:
    alpha: float = 0.1
    epochs: int = 500
    batch_size: int = 32
    base_lr: float = 9e-5
    max_lr: float = 1.5e-3
    cycle_epochs: int = 4
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    seed: int = 42
    test_fraction: float = 0.2
    ablation_mode: str = "full"
    eval_batch_size: int = 128
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.alpha < 0:
            raise ConfigurationError("alpha must be >= 0")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ConfigurationError("test_fraction must lie in (0, 1)")
        if self.ablation_mode not in MODES:
            raise ConfigurationError(f"unknown ablation mode {self.ablation_mode!r}; expected one of {MODES}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")

    def replace(self, **kw) -> "TrainConfig":
        new = copy.deepcopy(self)
        for k, v in kw.items():
            if not hasattr(new, k):
                raise ConfigurationError(f"TrainConfig has no field {k!r}")
            setattr(new, k, v)
        return new


@dataclass
class EpochRecord:
    epoch: int
    l_ddpm: float
    l_cae: float
    l_cls: float
    train_acc: float
    lr: float
    test_acc: float = float("nan")
    test_auc: float = float("nan")


HISTORY_COLUMNS = ("epoch", "l_ddpm", "l_cae", "l_cls", "train_acc", "lr")


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(HISTORY_COLUMNS)
            for r in self.records:
                w.writerow([r.epoch] + [repr(float(getattr(r, c))) for c in HISTORY_COLUMNS[1:]])


@dataclass
class StepMetrics:
    l_ddpm: float
    l_cae: float
    l_cls: float
    n_correct: int
    n: int
    boundary_ok: bool


@dataclass
class Optimizers:
    theta: RMSProp | None
    rest: RMSProp


def make_optimizers(models: ModelBundle, config: TrainConfig) -> Optimizers:
    rest = [p for k, net in models.networks().items() if k != "theta" for p in net.parameters()]
    theta = RMSProp(models.theta.parameters(), config.rms_decay, config.rms_eps) if models.theta else None
    return Optimizers(theta, RMSProp(rest, config.rms_decay, config.rms_eps))


def one_hot(y, n_classes: int = N_CLASSES, dtype=np.float32) -> np.ndarray:
    return np.eye(n_classes, dtype=dtype)[np.asarray(y)]


def _grads_present(params) -> tuple[bool, bool]:
    """(all have a gradient, none has a gradient)"""
    flags = [p.grad is not None for p in params]
    return all(flags), not any(flags)


def _check_finite(value: float, what: str, where: str) -> None:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {what} {where}")


def ddpm_objective(x0: NDValue, x_t: NDValue, t, theta) -> tuple[NDValue, NDValue, NDValue, dict]:
    """Denoiser loss: (scalar L1, elementwise error map, x_hat, decoder taps)."""
    x_hat, acts = theta.forward(x_t, t)
    l_ddpm, error_map = ddpm_loss(x0, x_hat)
    return l_ddpm, error_map, x_hat, acts


def joint_objective(x0: NDValue, target: NDValue, models: ModelBundle, alpha: float, mode: str = "full",
                    error_map: NDValue | None = None, x_hat: NDValue | None = None,
                    acts: dict | None = None) -> tuple[NDValue, NDValue | None, NDValue, NDValue]:
    """Autoencoder + classifier loss of one mode: (total, reconstruction term, class term, scores).

    In full mode the denoiser outputs (``error_map``, ``x_hat``, ``acts``) are
    detached here, so the result never carries gradient into the denoiser.
    """
    if mode == "encoder_classifier":
        _, z = models.phi.forward(x0)
        scores = models.rho.forward(z)
        l_cls = mse_loss(scores, target)
        return l_cls, None, l_cls, scores
    feats, z = models.phi.forward(x0)
    if mode == "full":
        skips = {k: v.detach() for k, v in acts.items()}
        e_hat = models.psi.forward(feats[8], skips, [x0, x_hat.detach()])
        l_rec = l1_loss(e_hat, error_map.detach())
    else:
        x_rec = models.psi.forward(feats[8], feats, [])
        l_rec = l1_loss(x_rec, x0)
    scores = models.rho.forward(z)
    l_cls = mse_loss(scores, target)
    return l_rec + alpha * l_cls, l_rec, l_cls, scores


def diffe_step(x0: np.ndarray, y: np.ndarray, models: ModelBundle, opts: Optimizers, lr: float,
               config: TrainConfig, sched: NoiseSchedule | None, rng: np.random.Generator,
               where: str = "") -> StepMetrics:
    """One optimization step of the configured mode on a single batch."""
    mode = config.ablation_mode
    x0v = NDValue(x0)
    target = NDValue(one_hot(y, models.rho.n_classes, x0.dtype))
    rest_params = opts.rest.params
    boundary_ok = True
    l_ddpm_val = 0.0
    error_map = x_hat = acts = None

    if mode == "full":
        theta_params = opts.theta.params
        t = sample_timesteps(len(x0), sched.T, rng)
        eps = rng.standard_normal(x0.shape).astype(x0.dtype)
        sample = q_sample(x0v, t, eps, sched)
        opts.theta.zero_grad()
        opts.rest.zero_grad()
        with Tape() as tape_theta:
            l_ddpm, error_map, x_hat, acts = ddpm_objective(x0v, sample.x_t, t, models.theta)
        l_ddpm_val = float(l_ddpm.data)
        _check_finite(l_ddpm_val, "DDPM loss", where)
        backward(l_ddpm, tape_theta)
        all_theta, _ = _grads_present(theta_params)
        _, no_rest = _grads_present(rest_params)
        boundary_ok &= all_theta and no_rest
        opts.theta.step(lr)
        opts.theta.zero_grad()
        del tape_theta

    opts.rest.zero_grad()
    with Tape() as tape:
        loss, l_rec, l_cls, scores = joint_objective(x0v, target, models, config.alpha, mode,
                                                     error_map, x_hat, acts)

    loss_val = float(loss.data)
    _check_finite(loss_val, "autoencoder/classifier loss", where)
    backward(loss, tape)
    if opts.theta is not None:
        _, no_theta = _grads_present(opts.theta.params)
        boundary_ok &= no_theta
    opts.rest.step(lr)
    pred = scores.data.argmax(axis=1)
    return StepMetrics(
        l_ddpm=l_ddpm_val,
        l_cae=float(l_rec.data) if l_rec is not None else 0.0,
        l_cls=float(l_cls.data),
        n_correct=int(np.sum(pred == y)),
        n=len(y),
        boundary_ok=bool(boundary_ok),
    )


def infer(x0, phi: Encoder, rho: Classifier, batch_size: int = 128) -> tuple[np.ndarray, np.ndarray]:
    """Labels and raw class scores from the encoder and classifier alone."""
    x = x0.data if isinstance(x0, NDValue) else np.asarray(x0)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3:
        raise ConfigurationError(f"infer expects (B, C, L) or (C, L), got {x.shape}")
    out = []
    for i in range(0, len(x), batch_size):
        _, z = phi.forward(NDValue(x[i:i + batch_size].astype(phi.params["enc1.conv.weight"].dtype, copy=False)))
        out.append(rho.forward(z).data)
    scores = np.concatenate(out, axis=0) if out else np.zeros((0, rho.n_classes), dtype=np.float32)
    return scores.argmax(axis=1), scores


def init_models(config: TrainConfig, in_channels: int) -> ModelBundle:
    m = config.model
    return build_bundle(config.ablation_mode, in_channels, config.seed, m.ddpm_widths, m.encoder_widths,
                        m.decoder_widths, m.time_dim, m.groups, m.classifier_hidden)


@dataclass
class FitResult:
    models: ModelBundle
    history: TrainHistory
    best_state: dict
    best_epoch: int
    boundary_violations: int
    steps: int


def fit_models(x_train: np.ndarray, y_train: np.ndarray, config: TrainConfig,
               x_test: np.ndarray | None = None, y_test: np.ndarray | None = None,
               models: ModelBundle | None = None, on_epoch=None) -> FitResult:
    """Train on already-scaled arrays; evaluate on the test arrays after each epoch."""
    config.validate()
    check_length(x_train.shape[2])
    models = models or init_models(config, x_train.shape[1])
    opts = make_optimizers(models, config)
    sched = make_schedule(config.T, config.beta_start, config.beta_end) if config.ablation_mode == "full" else None
    noise_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 1]))
    steps_per_epoch = math.ceil(len(x_train) / config.batch_size)
    lr_sched = CyclicLr(config.base_lr, config.max_lr, max(1, config.cycle_epochs * steps_per_epoch))
    history = TrainHistory()
    best_acc, best_epoch, best_state = -1.0, 0, models.state_dict()
    violations = 0
    step = 0
    n_classes = models.rho.n_classes
    for epoch in range(1, config.epochs + 1):
        sums = np.zeros(3)
        correct = seen = 0
        lr = cyclic_lr(step, lr_sched)
        for bi, idx in enumerate(batches(np.arange(len(x_train)), config.batch_size, config.seed, epoch)):
            lr = cyclic_lr(step, lr_sched)
            m = diffe_step(x_train[idx], y_train[idx], models, opts, lr, config, sched, noise_rng,
                           where=f"(epoch {epoch}, batch {bi})")
            sums += np.array([m.l_ddpm, m.l_cae, m.l_cls]) * m.n
            correct += m.n_correct
            seen += m.n
            violations += 0 if m.boundary_ok else 1
            step += 1
        rec = EpochRecord(epoch, *(sums / seen), train_acc=correct / seen, lr=lr)
        if x_test is not None and len(x_test):
            pred, scores = infer(x_test, models.phi, models.rho, config.eval_batch_size)
            rec.test_acc = float(np.mean(pred == y_test))
            try:
                rec.test_auc = multiclass_auc(scores, y_test, n_classes)
            except MetricError:  # a class missing from a tiny test set
                rec.test_auc = float("nan")
            if rec.test_acc > best_acc:
                best_acc, best_epoch, best_state = rec.test_acc, epoch, models.state_dict()
        history.records.append(rec)
        log.info("epoch %d  l_ddpm %.4f  l_cae %.4f  l_cls %.4f  train_acc %.3f  test_acc %.3f  lr %.2e",
                 epoch, rec.l_ddpm, rec.l_cae, rec.l_cls, rec.train_acc, rec.test_acc, rec.lr)
        if on_epoch is not None:
            on_epoch(rec)
    if x_test is None:
        best_state, best_epoch = models.state_dict(), config.epochs
    return FitResult(models, history, best_state, best_epoch, violations, step)


def input_scale(x: np.ndarray) -> float:
    s = float(np.std(x, dtype=np.float64))
    return s if s > 0 else 1.0


@dataclass
class TrainResult:
    models: ModelBundle
    history: TrainHistory
    split: DatasetSplit
    metrics: RunMetrics
    best_state: dict
    best_epoch: int
    scale: float
    boundary_violations: int
    steps: int
    wall_time: float
    config: TrainConfig


def train(dataset: EpochSet, config: TrainConfig, on_epoch=None) -> TrainResult:
    """Stratified split, training, and final-state test metrics for one run."""
    config.validate()
    labels = dataset.labels
    if np.any(labels < 0) or np.any(labels >= N_CLASSES):
        raise DataError(f"labels must lie in [0, {N_CLASSES})")
    sp = split(labels, config.test_fraction, config.seed)
    missing = sorted(set(range(N_CLASSES)) - set(labels[sp.train].tolist()))
    if missing:
        raise DataError(f"classes {missing} have no training samples after the split")
    t0 = time.perf_counter()
    x = dataset.epochs.astype(np.float32, copy=False)
    scale = input_scale(x[sp.train])
    x_train = (x[sp.train] / scale).astype(np.float32)
    x_test = (x[sp.test] / scale).astype(np.float32)
    fit = fit_models(x_train, labels[sp.train], config, x_test, labels[sp.test], on_epoch=on_epoch)
    _, scores = infer(x_test, fit.models.phi, fit.models.rho, config.eval_batch_size)
    extra = {"best_epoch": fit.best_epoch, "best_test_accuracy": float(np.nanmax(fit.history.column("test_acc")))}
    # tiny test sets may miss a class, leaving the AUC undefined
    metrics = RunMetrics.from_scores(config.ablation_mode, scores, labels[sp.test], N_CLASSES, lenient=True,
                                     extra=extra)
    return TrainResult(fit.models, fit.history, sp, metrics, fit.best_state, fit.best_epoch, scale,
                       fit.boundary_violations, fit.steps, time.perf_counter() - t0, config)


def run_ablation(dataset: EpochSet, config: TrainConfig, mode: str, on_epoch=None) -> TrainResult:
    """One training run in the given mode with the shared split, seed and epoch budget."""
    if mode not in MODES:
        raise ConfigurationError(f"unknown ablation mode {mode!r}; expected one of {MODES}")
    return train(dataset, config.replace(ablation_mode=mode), on_epoch=on_epoch)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)


__all__ = [
    "MODES", "MODE_LABELS", "ModelConfig", "TrainConfig", "TrainHistory", "EpochRecord", "StepMetrics",
    "diffe_step", "ddpm_objective", "joint_objective", "infer", "fit_models", "train", "run_ablation", "init_models", "make_optimizers",
]

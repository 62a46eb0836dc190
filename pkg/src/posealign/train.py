"""Training loop, optimizer, gradient checking, and retrieval evaluation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .aligner import (
    ARRAY_FIELDS,
    AlignerConfig,
    AlignerParams,
    POOLINGS,
    backward_batch,
    encode_poses,
    forward_batch,
    forward_reps,
    init_params,
)
from .contrastive import (
    clamp_log_scale,
    contrastive_loss,
    cosine_backward,
    cosine_sim_matrix,
    loss_and_sim_grad,
    mi_lower_bound,
    tau_from_log_scale,
)
from .seeding import STREAM_EVAL, STREAM_PARAMS, sub_rng
from .synth import PairBatch, SynthWorld, SynthWorldParams

METRICS_HEADER = "step,pia_loss,mi_lower_bound,temperature,grad_norm"
GRADCHECK_TOLERANCE = 1e-4


class NumericalError(RuntimeError):
    """Raised when training produces a non-finite quantity."""

    def __init__(self, step: int, quantity: str):
        super().__init__(f"non-finite {quantity} at step {step}")
        self.step = step
        self.quantity = quantity


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale defaults; the full-scale analog uses 4096 atoms and
    an independent pair batch of 1024."""

    n_pairs_per_batch: int = 32
    steps: int = 2000
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    pooling: str = "max"
    euler_enabled: bool = True
    dict_atoms: int = 256
    token_dim: int = 64
    num_tokens: int = 16
    feature_dim: int = 24
    seed: int = 0
    eval_identities: int = 64
    world: SynthWorldParams = field(default_factory=SynthWorldParams)

    def __post_init__(self):
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}, got {self.pooling!r}")
        for name in ("n_pairs_per_batch", "learning_rate", "beta1", "beta2", "eps",
                     "dict_atoms", "token_dim", "num_tokens", "feature_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")

    def aligner_config(self) -> AlignerConfig:
        return AlignerConfig(
            num_tokens=self.num_tokens,
            feature_dim=self.feature_dim,
            token_dim=self.token_dim,
            dict_atoms=self.dict_atoms,
            pooling=self.pooling,
            euler_enabled=self.euler_enabled,
        )

    def world_params(self) -> SynthWorldParams:
        # Token/feature dims and the seed come from the train config so the
        # two halves cannot drift apart.
        return replace(
            self.world,
            num_tokens=self.num_tokens,
            feature_dim=self.feature_dim,
            seed=self.seed,
        )


@dataclass
class MetricsRow:
    step: int
    pia_loss: float
    mi_lower_bound: float
    temperature: float
    grad_norm: float


@dataclass
class TrainMetrics:
    rows: list[MetricsRow] = field(default_factory=list)
    retrieval_accuracy: float | None = None


def metrics_row_csv(row: MetricsRow) -> str:
    return (
        f"{row.step},{float(row.pia_loss)!r},{float(row.mi_lower_bound)!r},"
        f"{float(row.temperature)!r},{float(row.grad_norm)!r}"
    )


def write_metrics_csv(path, metrics: TrainMetrics) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(METRICS_HEADER + "\n")
        for row in metrics.rows:
            fh.write(metrics_row_csv(row) + "\n")


def smoothed_loss(rows: list[MetricsRow], step: int, window: int = 50) -> float:
    """Trailing-window mean of pia_loss over steps in (step - window, step]."""
    values = [r.pia_loss for r in rows if step - window < r.step <= step]
    if not values:
        raise ValueError(f"no metrics rows in window ending at step {step}")
    return float(np.mean(values))


def batch_loss(params: AlignerParams, config: AlignerConfig, batch: PairBatch) -> float:
    """Contrastive loss of one pair batch (forward only)."""
    reps1 = forward_reps(batch.raw1, batch.angles1, params, config)
    reps2 = forward_reps(batch.raw2, batch.angles2, params, config)
    return contrastive_loss(cosine_sim_matrix(reps1, reps2), params.log_temperature)


def batch_loss_and_grads(
    params: AlignerParams, config: AlignerConfig, batch: PairBatch
) -> tuple[float, AlignerParams, np.ndarray, np.ndarray]:
    """Loss and exact analytic gradients for every parameter field."""
    enc1 = encode_poses(batch.angles1, config)
    enc2 = encode_poses(batch.angles2, config)
    f1 = forward_batch(batch.raw1, enc1, params, config.pooling)
    f2 = forward_batch(batch.raw2, enc2, params, config.pooling)
    sim = cosine_sim_matrix(f1.reps, f2.reps)
    loss, d_sim, d_log_scale = loss_and_sim_grad(sim, params.log_temperature)
    d_r1, d_r2 = cosine_backward(f1.reps, f2.reps, sim, d_sim)
    grads = params.zeros_like()
    backward_batch(f1, d_r1, params, config.pooling, grads)
    backward_batch(f2, d_r2, params, config.pooling, grads)
    grads.log_temperature = d_log_scale
    return loss, grads, f1.reps, f2.reps


def grad_global_norm(grads: AlignerParams) -> float:
    total = grads.log_temperature**2
    for name in ARRAY_FIELDS:
        total += float((getattr(grads, name) ** 2).sum())
    return math.sqrt(total)


@dataclass
class AdamState:
    m: AlignerParams
    v: AlignerParams
    t: int = 0

    @classmethod
    def for_params(cls, params: AlignerParams) -> "AdamState":
        return cls(m=params.zeros_like(), v=params.zeros_like())


def adam_step(params: AlignerParams, grads: AlignerParams, state: AdamState, cfg: TrainConfig) -> None:
    """In-place moment-adaptive update; the caller owns the parameters."""
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    corr1 = 1.0 - b1**state.t
    corr2 = 1.0 - b2**state.t
    for name in ARRAY_FIELDS:
        g = getattr(grads, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        update = (m / corr1) / (np.sqrt(v / corr2) + cfg.eps)
        getattr(params, name)[...] -= cfg.learning_rate * update
    g = grads.log_temperature
    state.m.log_temperature = b1 * state.m.log_temperature + (1 - b1) * g
    state.v.log_temperature = b2 * state.v.log_temperature + (1 - b2) * g * g
    step_scalar = (state.m.log_temperature / corr1) / (
        math.sqrt(state.v.log_temperature / corr2) + cfg.eps
    )
    params.log_temperature = clamp_log_scale(
        params.log_temperature - cfg.learning_rate * step_scalar
    )


def retrieval_eval(params: AlignerParams, config: AlignerConfig, batch: PairBatch) -> float:
    """Top-1 cross-pose retrieval accuracy over a pair batch."""
    if batch.n < 2:
        raise ValueError(f"retrieval needs at least 2 pairs, got {batch.n}")
    reps1 = forward_reps(batch.raw1, batch.angles1, params, config)
    reps2 = forward_reps(batch.raw2, batch.angles2, params, config)
    sims = cosine_sim_matrix(reps1, reps2)
    predictions = sims.argmax(axis=1)  # ties resolve to the lowest index
    return float(np.mean(predictions == np.arange(batch.n)))


def make_eval_batch(world: SynthWorld, m: int, counter: int = 0) -> PairBatch:
    """Held-out identity pair batch for retrieval / analysis."""
    return world.make_pair_batch_for_ids(world.held_out_ids(m), counter, STREAM_EVAL)


def train(
    cfg: TrainConfig,
    metrics_path=None,
    aux_loss=None,
) -> tuple[AlignerParams, TrainMetrics]:
    """Run the optimization loop; deterministic given the config.

    ``aux_loss`` is an extension hook called as ``aux_loss(params, step)``
    and expected to return ``(value, extra_grads_or_None)``; the extra
    gradients are added before the update while the recorded pia_loss stays
    the contrastive term alone. The generative-model objective that the
    full-scale system trains jointly would plug in here.
    """
    config = cfg.aligner_config()
    world = SynthWorld(cfg.world_params())
    params = init_params(config, cfg.seed)
    state = AdamState.for_params(params)
    metrics = TrainMetrics()

    writer = open(metrics_path, "w", encoding="utf-8") if metrics_path else None
    try:
        if writer:
            writer.write(METRICS_HEADER + "\n")
        for step in range(1, cfg.steps + 1):
            batch = world.make_pair_batch(cfg.n_pairs_per_batch, counter=step)
            try:
                loss, grads, _, _ = batch_loss_and_grads(params, config, batch)
            except ValueError as exc:
                raise NumericalError(step, f"pia_loss ({exc})") from exc
            if not math.isfinite(loss):
                raise NumericalError(step, "pia_loss")
            if aux_loss is not None:
                _, extra = aux_loss(params, step)
                if extra is not None:
                    for name in ARRAY_FIELDS:
                        getattr(grads, name)[...] += getattr(extra, name)
                    grads.log_temperature += extra.log_temperature
            gnorm = grad_global_norm(grads)
            if not math.isfinite(gnorm):
                raise NumericalError(step, "grad_norm")
            row = MetricsRow(
                step=step,
                pia_loss=loss,
                mi_lower_bound=mi_lower_bound(loss, cfg.n_pairs_per_batch),
                temperature=tau_from_log_scale(params.log_temperature),
                grad_norm=gnorm,
            )
            metrics.rows.append(row)
            if writer:
                writer.write(metrics_row_csv(row) + "\n")
                writer.flush()
            adam_step(params, grads, state, cfg)
            if not params.all_finite():
                raise NumericalError(step, "parameters")
    finally:
        if writer:
            writer.close()

    if cfg.eval_identities >= 2:
        eval_batch = make_eval_batch(world, cfg.eval_identities)
        metrics.retrieval_accuracy = retrieval_eval(params, config, eval_batch)
    return params, metrics


# ---------------------------------------------------------------------------
# gradient verification

@dataclass
class GradCheckResult:
    max_rel_error: float
    per_tensor: dict[str, float]
    worst: tuple[str, int, float, float, float] | None  # (tensor, flat index, analytic, numeric, err)


def _perturbed_loss(
    params: AlignerParams, config: AlignerConfig, batch: PairBatch, name: str, idx: int, delta: float
) -> float:
    probe = params.copy()
    if name == "log_temperature":
        probe.log_temperature += delta
    else:
        getattr(probe, name).flat[idx] += delta
    return batch_loss(probe, config, batch)


def grad_check(
    cfg: TrainConfig,
    samples: int,
    h: float = 1e-5,
    freeze: tuple[str, ...] = (),
    corrupt: bool = False,
) -> GradCheckResult:
    """Compare analytic gradients against central finite differences.

    Checks ``samples`` random coordinates per tensor (all of them when the
    tensor is smaller) and returns the maximum relative error
    2|g_a - g_f| / (|g_a| + |g_f| + 1e-12). Frozen tensors contribute an
    error of exactly 0. ``corrupt`` deliberately breaks the analytic
    tokenizer gradient (negative-control hook for the CLI).
    """
    if samples < 1:
        raise ValueError(f"samples must be >= 1, got {samples}")
    config = cfg.aligner_config()
    f, d, c = config.feature_dim, config.token_dim, config.dict_atoms
    n_params = f * d + d * d + c * d + 1
    if n_params > 100_000:
        raise ValueError(
            f"grad_check is for small configurations; {n_params} parameters exceed the 1e5 cap"
        )
    world = SynthWorld(cfg.world_params())
    batch = world.make_pair_batch(cfg.n_pairs_per_batch, counter=1)
    params = init_params(config, cfg.seed)
    _, grads, _, _ = batch_loss_and_grads(params, config, batch)
    if corrupt:
        grads.tokenizer_weights += 1.0

    rng = sub_rng(cfg.seed, STREAM_PARAMS, 1)
    per_tensor: dict[str, float] = {}
    worst = None
    max_err = 0.0
    for name in ARRAY_FIELDS + ("log_temperature",):
        if name in freeze:
            per_tensor[name] = 0.0
            continue
        if name == "log_temperature":
            coords = np.array([0])
        else:
            size = getattr(params, name).size
            coords = (
                np.arange(size)
                if samples >= size
                else np.sort(rng.choice(size, size=samples, replace=False))
            )
        tensor_err = 0.0
        for idx in coords:
            idx = int(idx)
            analytic = (
                grads.log_temperature
                if name == "log_temperature"
                else float(getattr(grads, name).flat[idx])
            )
            plus = _perturbed_loss(params, config, batch, name, idx, +h)
            minus = _perturbed_loss(params, config, batch, name, idx, -h)
            numeric = (plus - minus) / (2 * h)
            err = 2.0 * abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-12)
            if err > tensor_err:
                tensor_err = err
            if err > max_err:
                max_err = err
                worst = (name, idx, analytic, numeric, err)
        per_tensor[name] = tensor_err
    return GradCheckResult(max_rel_error=max_err, per_tensor=per_tensor, worst=worst)

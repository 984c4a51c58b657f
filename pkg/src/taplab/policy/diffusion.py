"""Conditional denoising policy over action windows, with a TAP trigger head.

Training corrupts normalized action windows with Gaussian noise along a
cosine variance schedule and regresses the noise with an MLP conditioned on
(observation, diffusion timestep). The hybrid variant jointly trains a
deterministic per-step TAP classifier on the same observation conditioning
with class-weighted cross-entropy; the baseline variant has no TAP head at
all. Inference runs a deterministic reverse chain (no re-noising) over a
strided subset of the training timesteps, so outputs are a pure function of
(weights, observation, noise seed).
"""

from __future__ import annotations

import io
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..dataset import Demonstration
from .network import MLP, Adam, timestep_embedding


class TrainingDiverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# variance schedule
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CosineSchedule:
    """Squared-cosine alpha-bar schedule; timestep 0 is the identity."""

    steps: int
    offset: float = 0.008
    max_beta: float = 0.999

    def alpha_bar(self) -> np.ndarray:
        """alpha_bar[t] for t in 0..steps; alpha_bar[0] == 1 exactly."""
        def f(u: float) -> float:
            return np.cos((u + self.offset) / (1 + self.offset) * np.pi / 2.0) ** 2

        out = np.empty(self.steps + 1)
        out[0] = 1.0
        prev = 1.0
        for t in range(1, self.steps + 1):
            beta = min(1.0 - f(t / self.steps) / f((t - 1) / self.steps), self.max_beta)
            prev *= 1.0 - beta
            out[t] = prev
        return out

    def snr(self, t: int) -> float:
        ab = self.alpha_bar()[t]
        return float(ab / (1.0 - ab)) if ab < 1.0 else float("inf")


# ---------------------------------------------------------------------------
# configuration / weights
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PolicyConfig:
    observation_dim: int
    tap_count: int  # TAP library size K
    action_dim: int = 7
    horizon: int = 8  # n
    execute_steps: int = 3
    denoise_steps_train: int = 50
    denoise_steps_infer: int = 8
    denoiser_hidden: tuple[int, ...] = (128, 128, 128)
    tap_hidden: tuple[int, ...] = (128, 128)
    timestep_embed_dim: int = 16
    learning_rate: float = 1e-3
    lr_final_fraction: float = 0.1  # cosine decay floor, as a fraction of learning_rate
    batch_size: int = 256
    train_steps: int = 3000
    tap_head_enabled: bool = True
    tap_loss_weight: float = 0.5
    tap_class_weight_cap: float = 40.0
    tap_threshold: float = 0.5  # tau: confidence below this yields Empty
    x0_clip: float = 5.0
    prediction_type: str = "epsilon"  # "epsilon" (noise) or "sample" (clean window)
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.execute_steps <= self.horizon:
            raise ValueError("need 1 <= execute_steps <= horizon")

    @property
    def window_dim(self) -> int:
        return self.horizon * self.action_dim

    @property
    def denoiser_sizes(self) -> list[int]:
        inp = self.observation_dim + self.window_dim + self.timestep_embed_dim
        return [inp, *self.denoiser_hidden, self.window_dim]

    @property
    def tap_sizes(self) -> list[int]:
        return [self.observation_dim, *self.tap_hidden, self.horizon * (self.tap_count + 1)]


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray

    @staticmethod
    def fit(data: np.ndarray, floor: float = 1e-4) -> "Normalizer":
        return Normalizer(data.mean(axis=0), np.maximum(data.std(axis=0), floor))

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean


@dataclass
class PolicyWeights:
    config: PolicyConfig
    obs_normalizer: Normalizer
    act_normalizer: Normalizer
    denoiser_params: list[np.ndarray]
    tap_params: list[np.ndarray] | None
    train_loss_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def make_denoiser(self) -> MLP:
        net = MLP(self.config.denoiser_sizes, np.random.default_rng(0))
        net.load_params(self.denoiser_params)
        return net

    def make_tap_head(self) -> MLP | None:
        if self.tap_params is None:
            return None
        net = MLP(self.config.tap_sizes, np.random.default_rng(0))
        net.load_params(self.tap_params)
        return net


@dataclass
class PolicyOutput:
    actions: np.ndarray  # (horizon, action_dim), de-normalized
    tap_decisions: list[tuple[int | None, float]]  # per step: (tap id | None, confidence)


# ---------------------------------------------------------------------------
# training windows
# ---------------------------------------------------------------------------

def build_windows(demos: list[Demonstration], horizon: int, tap_count: int):
    """(observations, action windows, tap-label windows) across all frames.

    Terminal windows are padded by repeating the final action; tap labels pad
    with Empty. Label k is TAP id k-1; label 0 is Empty.
    """
    obs_list, act_list, tap_list = [], [], []
    for demo in demos:
        t = len(demo)
        if t == 0:
            continue
        actions = demo.actions
        labels = np.where(demo.tap_events >= 0, demo.tap_events + 1, 0).astype(np.int64)
        for i in range(t):
            end = min(i + horizon, t)
            window = actions[i:end]
            tap_win = labels[i:end]
            if end - i < horizon:
                pad = horizon - (end - i)
                window = np.concatenate([window, np.repeat(window[-1:], pad, axis=0)])
                tap_win = np.concatenate([tap_win, np.zeros(pad, dtype=np.int64)])
            obs_list.append(demo.observations[i])
            act_list.append(window)
            tap_list.append(tap_win)
    observations = np.asarray(obs_list, dtype=np.float64)
    windows = np.asarray(act_list, dtype=np.float64)
    taps = np.asarray(tap_list, dtype=np.int64)
    if taps.max(initial=0) > tap_count:
        raise ValueError("tap label outside the declared library size")
    return observations, windows, taps


def tap_class_weights(labels: np.ndarray, tap_count: int, cap: float) -> np.ndarray:
    """Inverse-frequency weights over {Empty} + K tap classes, capped."""
    counts = np.bincount(labels.ravel(), minlength=tap_count + 1).astype(np.float64)
    total = counts.sum()
    weights = np.where(counts > 0, total / (len(counts) * np.maximum(counts, 1.0)), 0.0)
    return np.minimum(weights, cap)


# ---------------------------------------------------------------------------
# losses (shared by training and the gradient-check tests)
# ---------------------------------------------------------------------------

def denoise_loss_and_grads(net: MLP, net_in: np.ndarray, eps_target: np.ndarray):
    pred, cache = net.forward(net_in)
    diff = pred - eps_target
    loss = float(np.mean(diff * diff))
    grad_out = 2.0 * diff / diff.size
    return loss, net.backward(cache, grad_out)


def tap_loss_and_grads(net: MLP, obs: np.ndarray, labels: np.ndarray,
                       class_weights: np.ndarray, horizon: int, n_classes: int):
    """Class-weighted softmax cross-entropy over (batch, horizon) positions."""
    logits, cache = net.forward(obs)
    b = obs.shape[0]
    logits = logits.reshape(b, horizon, n_classes)
    shifted = logits - logits.max(axis=2, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=2, keepdims=True)
    w = class_weights[labels]  # (b, horizon)
    denom = float(w.sum())
    if denom <= 0.0:
        return 0.0, [np.zeros_like(p) for p in net.params]
    idx_b, idx_h = np.meshgrid(np.arange(b), np.arange(horizon), indexing="ij")
    log_p = shifted - np.log(exp.sum(axis=2, keepdims=True))
    loss = float(-(w * log_p[idx_b, idx_h, labels]).sum() / denom)
    grad = probs.copy()
    grad[idx_b, idx_h, labels] -= 1.0
    grad *= (w / denom)[:, :, None]
    return loss, net.backward(cache, grad.reshape(b, horizon * n_classes))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(demos: list[Demonstration], config: PolicyConfig,
          progress: bool = False) -> PolicyWeights:
    """Denoising-policy training; returns weights plus normalization stats."""
    if not demos:
        raise ValueError("training requires a non-empty dataset")
    observations, windows, taps = build_windows(demos, config.horizon, config.tap_count)
    if observations.shape[1] != config.observation_dim:
        raise ValueError(
            f"dataset observation dim {observations.shape[1]} != config "
            f"{config.observation_dim}"
        )
    obs_norm = Normalizer.fit(observations)
    act_norm = Normalizer.fit(windows.reshape(-1, config.action_dim))

    norm_obs = obs_norm.normalize(observations)
    norm_windows = act_norm.normalize(windows).reshape(-1, config.window_dim)

    rng = np.random.default_rng([config.seed & 0xFFFFFFFFFFFFFFFF, 555])
    denoiser = MLP(config.denoiser_sizes, rng)
    opt = Adam(denoiser.params, lr=config.learning_rate)

    tap_head = None
    tap_opt = None
    weights_vec = None
    if config.tap_head_enabled:
        tap_head = MLP(config.tap_sizes, rng)
        tap_opt = Adam(tap_head.params, lr=config.learning_rate)
        weights_vec = tap_class_weights(taps, config.tap_count, config.tap_class_weight_cap)

    alpha_bar = CosineSchedule(config.denoise_steps_train).alpha_bar()
    n = observations.shape[0]
    history = np.zeros(config.train_steps)

    for step_i in range(config.train_steps):
        # cosine learning-rate decay toward lr * lr_final_fraction
        progress_f = step_i / max(1, config.train_steps - 1)
        floor = config.lr_final_fraction
        lr_now = config.learning_rate * (
            floor + (1.0 - floor) * 0.5 * (1.0 + np.cos(np.pi * progress_f))
        )
        opt.lr = lr_now
        if tap_opt is not None:
            tap_opt.lr = lr_now
        idx = rng.integers(0, n, size=config.batch_size)
        x0 = norm_windows[idx]
        obs_batch = norm_obs[idx]
        t = rng.integers(1, config.denoise_steps_train + 1, size=config.batch_size)
        eps = rng.standard_normal(x0.shape)
        ab = alpha_bar[t][:, None]
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
        net_in = np.concatenate(
            [obs_batch, x_t, timestep_embedding(t, config.timestep_embed_dim)], axis=1
        )
        target = eps if config.prediction_type == "epsilon" else x0
        loss, grads = denoise_loss_and_grads(denoiser, net_in, target)
        total_loss = loss
        if tap_head is not None:
            tap_loss, tap_grads = tap_loss_and_grads(
                tap_head, obs_batch, taps[idx], weights_vec,
                config.horizon, config.tap_count + 1,
            )
            total_loss += config.tap_loss_weight * tap_loss
            tap_opt.step(tap_head.params, [g * config.tap_loss_weight for g in tap_grads])
        if not np.isfinite(total_loss):
            raise TrainingDiverged(
                f"non-finite loss at step {step_i}: denoise={loss!r}"
            )
        opt.step(denoiser.params, grads)
        history[step_i] = total_loss
        if progress and (step_i + 1) % 500 == 0:
            recent = history[max(0, step_i - 499):step_i + 1].mean()
            print(f"  step {step_i + 1}/{config.train_steps} loss {recent:.4f}")

    return PolicyWeights(
        config=config,
        obs_normalizer=obs_norm,
        act_normalizer=act_norm,
        denoiser_params=denoiser.copy_params(),
        tap_params=tap_head.copy_params() if tap_head is not None else None,
        train_loss_history=history,
    )


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def inference_timesteps(train_steps: int, infer_steps: int) -> np.ndarray:
    """Strictly decreasing subset of 1..train_steps used by the reverse chain."""
    ts = np.unique(np.round(np.linspace(train_steps, 1, infer_steps)).astype(int))
    return ts[::-1]


def infer(weights: PolicyWeights, obs_vector: np.ndarray, noise_seed: int) -> PolicyOutput:
    """Deterministic reverse chain from seeded Gaussian noise."""
    config = weights.config
    denoiser = weights.make_denoiser()
    alpha_bar = CosineSchedule(config.denoise_steps_train).alpha_bar()
    rng = np.random.default_rng([int(noise_seed) & 0xFFFFFFFFFFFFFFFF, 99991])
    x = rng.standard_normal(config.window_dim)

    norm_obs = weights.obs_normalizer.normalize(np.asarray(obs_vector, dtype=np.float64))
    steps = inference_timesteps(config.denoise_steps_train, config.denoise_steps_infer)
    x0 = x
    for i, t in enumerate(steps):
        emb = timestep_embedding(np.array([t]), config.timestep_embed_dim)[0]
        prediction = denoiser(np.concatenate([norm_obs, x, emb])[None, :])[0]
        ab_t = alpha_bar[t]
        if config.prediction_type == "epsilon":
            eps_hat = prediction
            x0 = (x - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
        else:
            x0 = prediction
            eps_hat = (x - np.sqrt(ab_t) * x0) / np.sqrt(max(1.0 - ab_t, 1e-12))
        x0 = np.clip(x0, -config.x0_clip, config.x0_clip)
        t_next = steps[i + 1] if i + 1 < len(steps) else 0
        ab_next = alpha_bar[t_next]
        x = np.sqrt(ab_next) * x0 + np.sqrt(1.0 - ab_next) * eps_hat

    window = weights.act_normalizer.denormalize(
        x.reshape(config.horizon, config.action_dim)
    )

    decisions: list[tuple[int | None, float]] = [(None, 0.0)] * config.horizon
    tap_head = weights.make_tap_head()
    if tap_head is not None:
        logits = tap_head(norm_obs[None, :])[0].reshape(
            config.horizon, config.tap_count + 1
        )
        shifted = logits - logits.max(axis=1, keepdims=True)
        probs = np.exp(shifted)
        probs /= probs.sum(axis=1, keepdims=True)
        for step_i in range(config.horizon):
            cls = int(np.argmax(probs[step_i]))
            conf = float(probs[step_i, cls])
            fires = (
                cls != 0
                and config.tap_threshold < 1.0  # tau >= 1 disables triggering
                and conf >= config.tap_threshold
            )
            decisions[step_i] = (cls - 1, conf) if fires else (None, conf)
    return PolicyOutput(actions=window, tap_decisions=decisions)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

WEIGHTS_FORMAT_VERSION = 1


def save_weights(weights: PolicyWeights, path) -> None:
    arrays = {
        "obs_mean": weights.obs_normalizer.mean,
        "obs_std": weights.obs_normalizer.std,
        "act_mean": weights.act_normalizer.mean,
        "act_std": weights.act_normalizer.std,
        "loss_history": weights.train_loss_history,
    }
    for i, p in enumerate(weights.denoiser_params):
        arrays[f"denoiser_{i}"] = p
    if weights.tap_params is not None:
        for i, p in enumerate(weights.tap_params):
            arrays[f"tap_{i}"] = p
    config_raw = asdict(weights.config)
    header = json.dumps({
        "format_version": WEIGHTS_FORMAT_VERSION,
        "config": config_raw,
        "n_denoiser": len(weights.denoiser_params),
        "n_tap": 0 if weights.tap_params is None else len(weights.tap_params),
    })
    buffer = io.BytesIO()
    np.savez(buffer, header=np.frombuffer(header.encode(), dtype=np.uint8), **arrays)
    with open(path, "wb") as fh:
        fh.write(buffer.getvalue())


def load_weights(path) -> PolicyWeights:
    with np.load(path) as data:
        header = json.loads(bytes(data["header"]).decode())
        if header["format_version"] != WEIGHTS_FORMAT_VERSION:
            raise ValueError(f"unsupported weights format {header['format_version']}")
        raw = header["config"]
        for key in ("denoiser_hidden", "tap_hidden"):
            raw[key] = tuple(raw[key])
        config = PolicyConfig(**raw)
        denoiser = [data[f"denoiser_{i}"] for i in range(header["n_denoiser"])]
        tap = [data[f"tap_{i}"] for i in range(header["n_tap"])] or None
        return PolicyWeights(
            config=config,
            obs_normalizer=Normalizer(data["obs_mean"], data["obs_std"]),
            act_normalizer=Normalizer(data["act_mean"], data["act_std"]),
            denoiser_params=denoiser,
            tap_params=tap,
            train_loss_history=data["loss_history"],
        )

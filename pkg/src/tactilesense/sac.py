"""Discrete-action soft actor-critic for the two-action pressing task.

Categorical actor over {UP, DOWN}, twin per-action critics with Polyak
averaged targets, and automatic temperature tuning. Expectations over the
two actions are taken in closed form, so no action sampling enters the
losses. Everything is plain numpy with hand-derived gradients.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .env import ACTIONS, DOWN, UP, ProbeEnv
from .errors import NoContact, NonFiniteLoss
from .mechprops import FrameSequence
from .nets import MLP, Adam, log_softmax

log = logging.getLogger(__name__)

N_ACTIONS = len(ACTIONS)
OBS_DIM = 3


@dataclass(frozen=True)
class SACConfig:
    hidden: tuple[int, ...] = (64, 64)
    gamma: float = 0.99
    tau: float = 0.005
    batch_size: int = 64
    buffer_capacity: int = 50_000
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    alpha_lr: float = 1e-3
    init_alpha: float = 0.2
    target_entropy: float = 0.5 * math.log(2)
    reward_scale: float = 1.0
    episodes: int = 1000
    warmup_steps: int = 500
    updates_per_step: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if not self.init_alpha > 0:
            raise ValueError("initial temperature must be positive")


class ReplayBuffer:
    """Fixed-capacity ring buffer with FIFO eviction and uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.action = np.zeros(capacity, dtype=np.int64)
        self.reward = np.zeros(capacity)
        self.done = np.zeros(capacity)
        self.size = 0
        self.ptr = 0

    def __len__(self) -> int:
        return self.size

    def add(self, obs, action: int, reward: float, next_obs, done: bool) -> None:
        i = self.ptr
        self.obs[i] = obs
        self.action[i] = action
        self.reward[i] = reward
        self.next_obs[i] = next_obs
        self.done[i] = float(done)
        self.ptr = (self.ptr + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        idx = rng.integers(0, self.size, size=batch_size)
        return self.batch(idx)

    def batch(self, idx) -> dict:
        return {"obs": self.obs[idx], "action": self.action[idx], "reward": self.reward[idx],
                "next_obs": self.next_obs[idx], "done": self.done[idx]}

    def items(self) -> list[tuple]:
        """Stored transitions, oldest first."""
        order = [(self.ptr - self.size + k) % self.capacity for k in range(self.size)]
        return [(self.obs[i].copy(), int(self.action[i]), float(self.reward[i]),
                 self.next_obs[i].copy(), bool(self.done[i])) for i in order]


@dataclass
class LossReport:
    critic_loss: float
    actor_loss: float
    alpha_loss: float
    alpha: float
    entropy: float


class AgentModel:
    def __init__(self, cfg: SACConfig = SACConfig(), rng: Optional[np.random.Generator] = None):
        self.cfg = cfg
        self.rng = rng if rng is not None else np.random.default_rng(cfg.seed)
        sizes = (OBS_DIM, *cfg.hidden, N_ACTIONS)
        self.actor = MLP(sizes, self.rng)
        self.q1 = MLP(sizes, self.rng)
        self.q2 = MLP(sizes, self.rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.log_alpha = np.array([math.log(cfg.init_alpha)])
        self.actor_opt = Adam(self.actor.params, cfg.actor_lr)
        self.q_opt = Adam(self.q1.params + self.q2.params, cfg.critic_lr)
        self.alpha_opt = Adam([self.log_alpha], cfg.alpha_lr)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)

    @property
    def alpha(self) -> float:
        return float(np.exp(self.log_alpha[0]))

    def probabilities(self, obs: np.ndarray) -> np.ndarray:
        obs = np.atleast_2d(obs)
        return np.exp(log_softmax(self.actor(obs)))

    def greedy_action(self, obs: np.ndarray) -> int:
        return int(np.argmax(self.probabilities(obs)[0]))

    def sample_action(self, obs: np.ndarray) -> int:
        p = self.probabilities(obs)[0]
        return int(self.rng.random() < p[DOWN])

    def snapshot_arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        for name in ("actor", "q1", "q2", "q1_target", "q2_target"):
            for k, p in enumerate(getattr(self, name).params):
                arrays[f"{name}.{k}"] = p
        arrays["log_alpha"] = self.log_alpha
        return arrays


def policy_distribution(model: AgentModel, obs) -> tuple[float, float]:
    """``(p_up, p_down)`` for one observation (normalized coordinates)."""
    x = obs.normalized if hasattr(obs, "normalized") else np.asarray(obs, dtype=np.float64)
    p = model.probabilities(x)[0]
    return float(p[UP]), float(p[DOWN])


def critic_targets(model: AgentModel, batch: dict, alpha: Optional[float] = None) -> np.ndarray:
    """Soft Bellman targets with the closed-form expectation over both actions."""
    a = model.alpha if alpha is None else alpha
    logp = log_softmax(model.actor(batch["next_obs"]))
    p = np.exp(logp)
    qmin = np.minimum(model.q1_target(batch["next_obs"]), model.q2_target(batch["next_obs"]))
    v_next = np.sum(p * (qmin - a * logp), axis=1)
    r = model.cfg.reward_scale * batch["reward"]
    return r + model.cfg.gamma * (1.0 - batch["done"]) * v_next


def critic_loss_and_grads(model: AgentModel, batch: dict, y: np.ndarray):
    """Sum of the two critics' losses ``mean(0.5 * (Q_i(s, a) - y)^2)``."""
    B = len(y)
    rows = np.arange(B)
    a = batch["action"]
    total = 0.0
    grads = []
    for net in (model.q1, model.q2):
        q, acts = net.forward(batch["obs"])
        err = q[rows, a] - y
        total += 0.5 * float(np.mean(err ** 2))
        dout = np.zeros_like(q)
        dout[rows, a] = err / B
        grads.extend(net.backward(acts, dout))
    return total, grads


def actor_loss_and_grads(model: AgentModel, batch: dict, alpha: Optional[float] = None):
    """``mean_s sum_a pi(a|s) * (alpha * log pi(a|s) - min_i Q_i(s, a))``.

    Returns ``(loss, grads, entropy_per_state)``.
    """
    a_ = model.alpha if alpha is None else alpha
    obs = batch["obs"]
    B = obs.shape[0]
    logits, acts = model.actor.forward(obs)
    logp = log_softmax(logits)
    p = np.exp(logp)
    qmin = np.minimum(model.q1(obs), model.q2(obs))
    c = a_ * logp - qmin
    loss = float(np.mean(np.sum(p * c, axis=1)))
    # d/dz_k sum_a p_a c_a = p_k (c_k - sum_a p_a c_a); the log-term derivative sums to zero
    dlogits = p * (c - np.sum(p * c, axis=1, keepdims=True)) / B
    grads = model.actor.backward(acts, dlogits)
    entropy = -np.sum(p * logp, axis=1)
    return loss, grads, entropy


def alpha_loss_and_grad(model: AgentModel, entropy: np.ndarray):
    """``alpha * mean(H(pi) - target_entropy)`` and its gradient in ``log_alpha``.

    Minimizing pushes the temperature up when entropy is below target.
    """
    gap = float(np.mean(entropy - model.cfg.target_entropy))
    alpha = model.alpha
    return alpha * gap, [np.array([alpha * gap])]


def polyak_update(target: MLP, online: MLP, tau: float) -> None:
    for tp, p in zip(target.params, online.params):
        tp[...] = (1.0 - tau) * tp + tau * p


def update_step(model: AgentModel, batch: dict) -> LossReport:
    y = critic_targets(model, batch)
    c_loss, c_grads = critic_loss_and_grads(model, batch, y)
    a_loss, a_grads, entropy = actor_loss_and_grads(model, batch)
    al_loss, al_grad = alpha_loss_and_grad(model, entropy)
    losses = (c_loss, a_loss, al_loss)
    if not all(math.isfinite(v) for v in losses):
        raise NonFiniteLoss(f"non-finite loss: critic={c_loss}, actor={a_loss}, alpha={al_loss} "
                            f"(alpha={model.alpha:.4g})")
    model.q_opt.step(c_grads)
    model.actor_opt.step(a_grads)
    model.alpha_opt.step(al_grad)
    polyak_update(model.q1_target, model.q1, model.cfg.tau)
    polyak_update(model.q2_target, model.q2, model.cfg.tau)
    return LossReport(c_loss, a_loss, al_loss, model.alpha, float(np.mean(entropy)))


@dataclass
class EpisodeRecord:
    episode: int
    steps: int
    cumulative_reward: float


@dataclass
class TrainResult:
    model: AgentModel
    trace: list[EpisodeRecord] = field(default_factory=list)


def train(env: ProbeEnv, cfg: SACConfig = SACConfig(),
          callback: Optional[Callable[[EpisodeRecord], None]] = None) -> TrainResult:
    """Run ``cfg.episodes`` episodes of off-policy training."""
    model = AgentModel(cfg)
    result = TrainResult(model)
    total_steps = 0
    for ep in range(cfg.episodes):
        obs = env.reset()
        ep_reward = 0.0
        steps = 0
        while True:
            if total_steps < cfg.warmup_steps:
                action = int(model.rng.integers(N_ACTIONS))
            else:
                action = model.sample_action(obs.normalized)
            next_obs, reward, done, truncated, _ = env.step(action)
            model.buffer.add(obs.normalized, action, reward, next_obs.normalized, done)
            ep_reward += reward
            steps += 1
            total_steps += 1
            if len(model.buffer) >= cfg.batch_size and total_steps >= cfg.warmup_steps:
                for _ in range(cfg.updates_per_step):
                    update_step(model, model.buffer.sample(cfg.batch_size, model.rng))
            obs = next_obs
            if done or truncated:
                break
        rec = EpisodeRecord(ep, steps, ep_reward)
        result.trace.append(rec)
        if callback is not None:
            callback(rec)
        log.debug("episode %d: %d steps, return %.3f, alpha %.4f", ep, steps, ep_reward, model.alpha)
    return result


def acquire_sequence(env: ProbeEnv, model: AgentModel, force_window: tuple[float, float],
                     xy=None, max_steps: Optional[int] = None) -> FrameSequence:
    """Press with the greedy policy and keep frames whose force lies in the window.

    The press phase ends when the policy first chooses UP after a frame has
    been recorded, when
    the next step is predicted (from the last force increment) to exceed the
    environment's ``max_force``, or when the step budget runs out.
    """
    lo, hi = force_window
    budget = env.cfg.max_steps if max_steps is None else max_steps
    obs = env.reset(xy=xy)
    frames = []
    prev_force = 0.0
    for _ in range(budget):
        action = model.greedy_action(obs.normalized)
        if action == UP and frames:
            break
        obs, _, done, _, info = env.step(action)
        force = info["force"]
        if done:
            break
        if lo <= force <= hi:
            frames.append(info["frame"])
        if action == DOWN and force + max(force - prev_force, 0.0) > env.cfg.max_force:
            break
        prev_force = force
    env.sim.retract(env.cfg.z_start)
    if not frames:
        raise NoContact(f"no frame entered the {force_window} N window within {budget} steps")
    return FrameSequence(frames)


# --- checkpoints -------------------------------------------------------------

MAGIC = b"TSACKPT\x00"
VERSION = 1


def save_checkpoint(model: AgentModel, path: Path | str) -> None:
    """Binary checkpoint: magic, version, JSON config, then named float64 arrays (little-endian)."""
    cfg_blob = json.dumps(asdict(model.cfg), sort_keys=True).encode()
    arrays = model.snapshot_arrays()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(cfg_blob)))
        fh.write(cfg_blob)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            nb = name.encode()
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: Path | str) -> AgentModel:
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    version, n = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    raw = json.loads(data[pos:pos + n])
    pos += n
    raw["hidden"] = tuple(raw["hidden"])
    model = AgentModel(SACConfig(**raw))
    (count,) = struct.unpack_from("<I", data, pos)
    pos += 4
    arrays = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + ln].decode()
        pos += ln
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
    for name, target in model.snapshot_arrays().items():
        if name not in arrays or arrays[name].shape != target.shape:
            raise ValueError(f"{path}: missing or mis-shaped array {name}")
        target[...] = arrays[name]
    return model

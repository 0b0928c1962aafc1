"""Twin-delayed deterministic policy-gradient learner for profile generation.

Two critics bound overestimation (the target uses their minimum on a
smoothed target action), the actor updates at a slower cadence than the
critics (delay d), and target copies of all three networks trail the learned
ones by Polyak averaging.  Everything is seeded and single-threaded, so a
training run is a pure function of (config, seed).
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .env import OBS_SIZE, BatteryDoeEnv
from .nn import Adam, Mlp

__all__ = [
    "Td3Config",
    "ReplayBuffer",
    "Td3Agent",
    "TrainResult",
    "train",
    "generate_doe",
    "CURVE_HEADER",
]

CURVE_HEADER = ("step", "eval_return", "critic_loss", "actor_loss")


@dataclass
class Td3Config:
    gamma: float = 0.99
    rho: float = 0.995                 # Polyak retention
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    warmup_steps: int = 1000           # uniform-random steps before any update
    explore_sigma: float = 0.1
    target_sigma: float = 0.2
    target_noise_clip: float = 0.3
    policy_delay: int = 2
    lr_actor: float = 1e-3
    lr_critic: float = 1e-3
    hidden: tuple = (128, 128, 64, 64)
    dropout: tuple = (0.2, 0.2, 0.1, 0.1)
    max_env_steps: int = 100_000
    n_envs: int = 4
    eval_every: int = 2000             # env steps between evaluation rollouts
    n_eval_episodes: int = 2
    plateau_patience: int = 0          # evals without a new best before stopping (0 = off)
    plateau_min_delta: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError("rho must be in [0, 1)")
        if self.batch_size <= 0 or self.buffer_capacity < self.batch_size:
            raise ValueError("buffer must hold at least one batch")
        if self.policy_delay <= 0:
            raise ValueError("policy delay must be positive")
        if self.warmup_steps < self.batch_size:
            raise ValueError("warmup must provide at least one batch of transitions")
        if self.n_envs <= 0:
            raise ValueError("need at least one environment")
        self.hidden = tuple(self.hidden)
        self.dropout = tuple(self.dropout)


class ReplayBuffer:
    """Fixed-capacity ring buffer; overwrites the oldest transition once full.

    Sampling is uniform with replacement.  Stored done flags mark true
    terminals only (truncation at the step limit still bootstraps).
    """

    def __init__(self, capacity: int, obs_size: int = OBS_SIZE):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_size), dtype=np.float32)
        self.action = np.zeros((capacity, 1))
        self.reward = np.zeros(capacity)
        self.obs_next = np.zeros((capacity, obs_size), dtype=np.float32)
        self.done = np.zeros(capacity)
        self._next = 0
        self.size = 0

    def push(self, obs, action: float, reward: float, obs_next, done: bool) -> None:
        k = self._next
        self.obs[k] = obs
        self.action[k, 0] = action
        self.reward[k] = reward
        self.obs_next[k] = obs_next
        self.done[k] = float(done)
        self._next = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> dict:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return {
            "obs": self.obs[idx].astype(float),
            "action": self.action[idx],
            "reward": self.reward[idx],
            "obs_next": self.obs_next[idx].astype(float),
            "done": self.done[idx],
        }


class Td3Agent:
    """Actor, twin critics, their target copies, and the update rules."""

    def __init__(self, config: Td3Config, rng: np.random.Generator, obs_size: int = OBS_SIZE):
        self.config = config
        self.obs_size = obs_size
        actor_sizes = (obs_size, *config.hidden, 1)
        critic_sizes = (obs_size + 1, *config.hidden, 1)
        self.actor = Mlp.init(actor_sizes, "tanh", rng, config.dropout)
        self.critic1 = Mlp.init(critic_sizes, "identity", rng, config.dropout)
        self.critic2 = Mlp.init(critic_sizes, "identity", rng, config.dropout)
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy()
        self.opt_actor = Adam(self.actor.parameters, lr=config.lr_actor)
        self.opt_critic1 = Adam(self.critic1.parameters, lr=config.lr_critic)
        self.opt_critic2 = Adam(self.critic2.parameters, lr=config.lr_critic)
        self.critic_updates = 0
        self.actor_updates = 0
        self.polyak_updates = 0

    # -- acting -------------------------------------------------------------------
    def act(self, obs: np.ndarray, noise_sigma: float = 0.0, rng: np.random.Generator | None = None) -> float:
        """Deterministic policy action, optionally with exploration noise."""
        a, _ = self.actor.forward(obs, train=False)
        a = float(a[0])
        if noise_sigma > 0.0:
            if rng is None:
                raise ValueError("exploration noise needs an rng")
            a += noise_sigma * float(rng.standard_normal())
        return min(1.0, max(-1.0, a))

    # -- updates --------------------------------------------------------------------
    def target_q(self, batch: dict, rng: np.random.Generator) -> np.ndarray:
        """Bootstrap target: smoothed target action, min of both target critics."""
        cfg = self.config
        a_next, _ = self.actor_target.forward(batch["obs_next"], train=False)
        noise = np.clip(
            cfg.target_sigma * rng.standard_normal(a_next.shape),
            -cfg.target_noise_clip,
            cfg.target_noise_clip,
        )
        a_next = np.clip(a_next + noise, -1.0, 1.0)
        sa = np.concatenate([batch["obs_next"], a_next], axis=1)
        q1, _ = self.critic1_target.forward(sa, train=False)
        q2, _ = self.critic2_target.forward(sa, train=False)
        q_min = np.minimum(q1[:, 0], q2[:, 0])
        return batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * q_min

    def critic_update(self, batch: dict, rng: np.random.Generator) -> float:
        """One gradient step on both critics against a shared target.

        Loss = MSE(Q1, Qtar) + MSE(Q2, Qtar); dropout is live in the learned
        critics' forward passes.
        """
        y = self.target_q(batch, rng)
        sa = np.concatenate([batch["obs"], batch["action"]], axis=1)
        b = sa.shape[0]
        loss = 0.0
        for net, opt in ((self.critic1, self.opt_critic1), (self.critic2, self.opt_critic2)):
            q, cache = net.forward(sa, train=True, rng=rng)
            err = q[:, 0] - y
            loss += float(np.mean(err**2))
            grads, _ = net.backward(cache, (2.0 * err / b)[:, None])
            opt.step(net.parameters, grads)
        self.critic_updates += 1
        return loss

    def actor_update(self, batch: dict, rng: np.random.Generator) -> float:
        """One gradient step on the actor: maximize the mean of both critics.

        Loss = -mean((Q1(s, pi(s)) + Q2(s, pi(s))) / 2); only actor
        parameters move.
        """
        obs = batch["obs"]
        b = obs.shape[0]
        a_pi, cache_a = self.actor.forward(obs, train=True, rng=rng)
        sa = np.concatenate([obs, a_pi], axis=1)
        loss = 0.0
        da = np.zeros((b, 1))
        for net in (self.critic1, self.critic2):
            q, cache = net.forward(sa, train=True, rng=rng)
            loss += float(np.mean(q[:, 0]))
            _, dsa = net.backward(cache, np.full((b, 1), -0.5 / b))
            da += dsa[:, -1:]
        loss = -0.5 * loss
        grads, _ = self.actor.backward(cache_a, da)
        self.opt_actor.step(self.actor.parameters, grads)
        self.actor_updates += 1
        return loss

    def polyak_update(self) -> None:
        """target <- rho * target + (1 - rho) * learned, for all three nets."""
        rho = self.config.rho
        for target, src in (
            (self.actor_target, self.actor),
            (self.critic1_target, self.critic1),
            (self.critic2_target, self.critic2),
        ):
            for pt, ps in zip(target.parameters, src.parameters):
                pt *= rho
                pt += (1.0 - rho) * ps
        self.polyak_updates += 1

    # -- persistence -------------------------------------------------------------------
    def save(self, path) -> None:
        nets = {
            "actor": self.actor,
            "critic1": self.critic1,
            "critic2": self.critic2,
            "actor_target": self.actor_target,
            "critic1_target": self.critic1_target,
            "critic2_target": self.critic2_target,
        }
        arrays = {
            name: np.frombuffer(net.to_bytes(), dtype=np.uint8) for name, net in nets.items()
        }
        meta = {"config": asdict(self.config), "obs_size": self.obs_size}
        meta_arr = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        if hasattr(path, "write"):
            np.savez(path, meta=meta_arr, **arrays)
        else:
            with open(path, "wb") as f:
                np.savez(f, meta=meta_arr, **arrays)

    @classmethod
    def load(cls, path) -> "Td3Agent":
        with np.load(path) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            cfg = Td3Config(**meta["config"])
            agent = cls(cfg, np.random.default_rng(0), obs_size=meta["obs_size"])
            for name in (
                "actor",
                "critic1",
                "critic2",
                "actor_target",
                "critic1_target",
                "critic2_target",
            ):
                setattr(agent, name, Mlp.from_bytes(bytes(data[name])))
        agent.opt_actor = Adam(agent.actor.parameters, lr=cfg.lr_actor)
        agent.opt_critic1 = Adam(agent.critic1.parameters, lr=cfg.lr_critic)
        agent.opt_critic2 = Adam(agent.critic2.parameters, lr=cfg.lr_critic)
        return agent


@dataclass
class TrainResult:
    agent: Td3Agent
    curve: list                      # rows matching CURVE_HEADER
    env_steps: int
    critic_updates: int
    actor_updates: int
    polyak_updates: int
    best_eval_return: float
    stop_reason: str
    best_agent: Td3Agent | None = None  # snapshot at the best evaluation


def evaluate_policy(agent: Td3Agent, env: BatteryDoeEnv, n_episodes: int, seed_base: int) -> float:
    """Mean noise-free episode return over fixed-seed episodes."""
    returns = []
    for k in range(n_episodes):
        obs = env.reset(seed=seed_base + k)
        total = 0.0
        done = False
        while not done:
            obs, r, done, _ = env.step(agent.act(obs))
            total += r
        returns.append(total)
    return float(np.mean(returns))


def train(
    envs: list,
    config: Td3Config,
    eval_env: BatteryDoeEnv | None = None,
    curve_sink=None,
) -> TrainResult:
    """Run TD3 over round-robin environments into one shared buffer.

    Post-warmup, every env step triggers a critic update; every
    ``policy_delay``-th critic update also steps the actor and Polyak-tracks
    all three targets.  ``curve_sink`` (optional callable) receives each
    evaluation row as it is produced.
    """
    if not envs:
        raise ValueError("need at least one environment")
    seeds = np.random.SeedSequence(config.seed).spawn(5)
    rng_init, rng_explore, rng_sample, rng_dropout, rng_target = (
        np.random.default_rng(s) for s in seeds
    )
    agent = Td3Agent(config, rng_init)
    buffer = ReplayBuffer(config.buffer_capacity)
    obs = [e.reset(seed=10_000 + 13 * k) for k, e in enumerate(envs)]

    curve: list = []
    best_eval = -np.inf
    best_snapshot: bytes | None = None
    evals_since_best = 0
    last_critic_loss = float("nan")
    last_actor_loss = float("nan")
    stop_reason = "max_env_steps"
    step = 0
    while step < config.max_env_steps:
        k = step % len(envs)
        env = envs[k]
        if step < config.warmup_steps:
            a = float(rng_explore.uniform(-1.0, 1.0))
        else:
            a = agent.act(obs[k], noise_sigma=config.explore_sigma, rng=rng_explore)
        obs_next, reward, done, info = env.step(a)
        buffer.push(obs[k], a, reward, obs_next, info["terminal"])
        obs[k] = env.reset() if done else obs_next
        step += 1

        if step > config.warmup_steps and buffer.size >= config.batch_size:
            batch = buffer.sample(config.batch_size, rng_sample)
            # target noise and dropout draw from distinct streams so the
            # update cadence never shifts other randomness
            batch_rng = rng_target
            last_critic_loss = agent.critic_update(batch, batch_rng)
            if agent.critic_updates % config.policy_delay == 0:
                last_actor_loss = agent.actor_update(batch, rng_dropout)
                agent.polyak_update()

        if eval_env is not None and step % config.eval_every == 0:
            eval_return = evaluate_policy(
                agent, eval_env, config.n_eval_episodes, seed_base=77_000
            )
            row = (step, eval_return, last_critic_loss, last_actor_loss)
            curve.append(row)
            if curve_sink is not None:
                curve_sink(row)
            if eval_return > best_eval + config.plateau_min_delta:
                best_eval = eval_return
                evals_since_best = 0
                buf_io = io.BytesIO()
                agent.save(buf_io)
                best_snapshot = buf_io.getvalue()
            else:
                evals_since_best += 1
                if config.plateau_patience and evals_since_best >= config.plateau_patience:
                    stop_reason = "plateau"
                    break

    return TrainResult(
        agent=agent,
        curve=curve,
        env_steps=step,
        critic_updates=agent.critic_updates,
        actor_updates=agent.actor_updates,
        polyak_updates=agent.polyak_updates,
        best_eval_return=best_eval,
        stop_reason=stop_reason,
        best_agent=(
            Td3Agent.load(io.BytesIO(best_snapshot)) if best_snapshot is not None else None
        ),
    )


def generate_doe(agent: Td3Agent, env: BatteryDoeEnv, seed: int, name: str = "ai_doe"):
    """Deterministic noise-free rollout; returns (profile, episode_log, info).

    The episode ends at the coverage target or the step limit; the exported
    profile replays the applied (post-safety) currents.
    """
    obs = env.reset(seed=seed)
    done = False
    info = {}
    total = 0.0
    while not done:
        obs, r, done, info = env.step(agent.act(obs))
        total += r
    log = env.episode_log()
    profile = env.export_profile(name=name)
    summary = {
        "return": total,
        "steps": len(log),
        "duration_s": len(log) * env.config.dt,
        "coverage": env.coverage_score(),
        "terminal": bool(info.get("terminal", False)),
        "uniformity_v": env.v_hist.uniformity(),
        "uniformity_i": env.i_hist.uniformity(),
        "uniformity_soc": env.soc_hist.uniformity(),
        "band_score": env.bands.score(),
        "violations": env.violations,
    }
    return profile, log, summary

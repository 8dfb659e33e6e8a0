"""Soft actor-critic with clipped double-Q critics, target networks, a
uniform replay buffer, tanh-squashed Gaussian policy, and automatic
temperature adjustment. Gradient work happens offline in a fixed number of
steps after each episode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .neural import AdamState, Head, Mlp, adam_step, clip_global_norm, polyak

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SacConfig:
    obs_dim: int = 12
    act_dim: int = 4
    hidden: tuple[int, int] = (400, 300)
    actor_lr: float = 3e-5
    critic_lr: float = 3e-4
    temperature_lr: float = 3e-4
    gamma: float = 0.99
    polyak_tau: float = 0.005
    target_update_interval: int = 1
    buffer_capacity: int = 10_000_000
    batch_size: int = 256
    initial_random_steps: int = 10_000
    gradient_steps_per_episode: int = 128
    target_entropy: float = -4.0
    log_sigma_range: tuple[float, float] = (-9.0, 2.0)
    grad_clip_norm: float = 10.0


class ReplayBuffer:
    """Uniform-sampling FIFO ring buffer of transitions.

    Arrays grow geometrically up to capacity so small runs stay small.
    """

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.act_dim = act_dim
        self.size = 0
        self._head = 0
        self._alloc = 0
        self._obs = self._act = self._rew = self._next_obs = self._term = None

    def _grow(self, need: int):
        new_alloc = max(1024, self._alloc * 2)
        while new_alloc < need:
            new_alloc *= 2
        new_alloc = min(new_alloc, self.capacity)
        def resize(arr, width):
            out = np.zeros((new_alloc, width)) if width else np.zeros(new_alloc)
            if arr is not None and self.size:
                if width:
                    out[: self.size] = arr[: self.size]
                else:
                    out[: self.size] = arr[: self.size]
            return out
        self._obs = resize(self._obs, self.obs_dim)
        self._act = resize(self._act, self.act_dim)
        self._rew = resize(self._rew, 0)
        self._next_obs = resize(self._next_obs, self.obs_dim)
        self._term = resize(self._term, 0)
        self._alloc = new_alloc

    def add(self, obs, act, reward, next_obs, terminal: bool):
        if self._alloc < self.capacity and self.size + 1 > self._alloc:
            self._grow(self.size + 1)
        i = self._head
        self._obs[i] = obs
        self._act[i] = act
        self._rew[i] = reward
        self._next_obs[i] = next_obs
        self._term[i] = 1.0 if terminal else 0.0
        self._head = (self._head + 1) % self._alloc
        self.size = min(self.size + 1, self._alloc)

    def sample(self, batch: int, rng: np.random.Generator):
        idx = rng.integers(0, self.size, size=batch)
        return (
            self._obs[idx], self._act[idx], self._rew[idx],
            self._next_obs[idx], self._term[idx],
        )


class Temperature:
    """Trainable entropy temperature, ln-parameterized so tau stays positive.

    Behavioral contract: estimated policy entropy below the target raises
    tau (more exploration pressure); above the target lowers it.
    """

    def __init__(self, target_entropy: float = -4.0, lr: float = 3e-4,
                 initial_tau: float = 1.0):
        self.target_entropy = target_entropy
        self._ln_tau = np.array([math.log(initial_tau)])
        self.adam = AdamState([self._ln_tau], lr=lr)

    @property
    def tau(self) -> float:
        return float(math.exp(self._ln_tau[0]))

    @property
    def ln_tau(self) -> float:
        return float(self._ln_tau[0])

    def update(self, log_probs: np.ndarray) -> float:
        """One Adam step on ln tau from a batch of policy log-probs."""
        entropy = -float(np.mean(log_probs))
        grad = np.array([entropy - self.target_entropy])
        adam_step(self.adam, [self._ln_tau], [grad])
        return entropy


def _log_one_minus_tanh_sq(u: np.ndarray) -> np.ndarray:
    """log(1 - tanh(u)^2), evaluated stably for large |u|."""
    au = np.abs(u)
    return 2.0 * (math.log(2.0) - au - np.log1p(np.exp(-2.0 * au)))


class SacAgent:
    """Networks, optimizers, buffer, and update rules for one training run."""

    def __init__(self, config: SacConfig = SacConfig(), seed: int = 0):
        self.config = config
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5AC]))
        c = config
        lo, hi = c.log_sigma_range
        init_rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
        actor_heads = [
            Head("tanh", c.act_dim, init_scale=0.01),
            Head("sigmoid", c.act_dim, lo=lo, hi=hi),
        ]
        self.actor = Mlp([c.obs_dim, *c.hidden, 2 * c.act_dim], actor_heads, rng=init_rng)
        qdims = [c.obs_dim + c.act_dim, *c.hidden, 1]
        self.critic1 = Mlp(qdims, rng=init_rng)
        self.critic2 = Mlp(qdims, rng=init_rng)
        self.target1 = self.critic1.copy()
        self.target2 = self.critic2.copy()
        self.actor_opt = AdamState(self.actor.params, lr=c.actor_lr)
        self.critic1_opt = AdamState(self.critic1.params, lr=c.critic_lr)
        self.critic2_opt = AdamState(self.critic2.params, lr=c.critic_lr)
        self.temperature = Temperature(c.target_entropy, lr=c.temperature_lr)
        self.buffer = ReplayBuffer(c.buffer_capacity, c.obs_dim, c.act_dim)
        self.env_steps = 0
        self.updates = 0

    # ------------------------------------------------------------------ policy

    def _policy_params(self, obs: np.ndarray):
        out, cache = self.actor.forward(obs)
        mean = out[:, : self.config.act_dim]
        log_sigma = out[:, self.config.act_dim:]
        return mean, log_sigma, cache

    def _log_prob(self, xi: np.ndarray, log_sigma: np.ndarray, u: np.ndarray) -> np.ndarray:
        per_dim = -0.5 * xi * xi - log_sigma - 0.5 * LOG_2PI - _log_one_minus_tanh_sq(u)
        return per_dim.sum(axis=1)

    def sample_action(self, obs: np.ndarray, rng: np.random.Generator | None = None,
                      deterministic: bool = False):
        """Action in [-1, 1]^act_dim and its log-probability.

        Stochastic mode squashes a Gaussian sample around the mean head;
        deterministic mode squashes the mean itself.
        """
        mean, log_sigma, _ = self._policy_params(np.atleast_2d(obs))
        if deterministic:
            xi = np.zeros_like(mean)
        else:
            if rng is None:
                rng = self.rng
            xi = rng.standard_normal(mean.shape)
        sigma = np.exp(log_sigma)
        u = mean + sigma * xi
        action = np.tanh(u)
        logp = self._log_prob(xi, log_sigma, u)
        if action.shape[0] == 1:
            return action[0], float(logp[0])
        return action, logp

    # ----------------------------------------------------------------- updates

    def compute_critic_targets(self, batch) -> np.ndarray:
        """Entropy-augmented clipped double-Q bootstrap targets.

        y = r + gamma * (1 - terminal) * (min(Q'1, Q'2)(s', a') - tau log pi(a'|s'))
        with a' freshly sampled from the current policy.
        """
        c = self.config
        obs, act, rew, next_obs, term = batch
        next_act, next_logp = self.sample_action(next_obs, rng=self.rng)
        next_act = np.atleast_2d(next_act)
        next_in = np.concatenate([next_obs, next_act], axis=1)
        q1t, _ = self.target1.forward(next_in)
        q2t, _ = self.target2.forward(next_in)
        q_next = np.minimum(q1t[:, 0], q2t[:, 0]) - self.temperature.tau * np.atleast_1d(next_logp)
        # hard mask instead of a (1 - term) factor: terminal next states may
        # be non-finite and must never touch the target arithmetic
        return np.where(term > 0.0, rew, rew + c.gamma * q_next)

    def critic_update(self, batch=None) -> tuple[float, float]:
        """Regress both critics to the entropy-augmented clipped double-Q target."""
        c = self.config
        if batch is None:
            batch = self.buffer.sample(c.batch_size, self.rng)
        obs, act = batch[0], batch[1]
        y = self.compute_critic_targets(batch)

        losses = []
        batch_in = np.concatenate([obs, act], axis=1)
        for critic, opt in ((self.critic1, self.critic1_opt), (self.critic2, self.critic2_opt)):
            q, cache = critic.forward(batch_in)
            err = q[:, 0] - y
            losses.append(float(np.mean(err * err)))
            grad_out = (2.0 / err.shape[0]) * err[:, None]
            grads, _ = critic.backward(cache, grad_out)
            clip_global_norm(grads, c.grad_clip_norm)
            adam_step(opt, critic.params, grads)
        return losses[0], losses[1]

    def actor_update(self, batch=None) -> tuple[float, np.ndarray]:
        """Ascend E[min Q(s, a~) - tau log pi(a~|s)] with reparameterized actions.

        Gradients flow through the critic inputs only; critic parameters
        stay frozen. Returns the loss and the batch log-probs (reused by
        the temperature update).
        """
        c = self.config
        if batch is None:
            batch = self.buffer.sample(c.batch_size, self.rng)
        obs = batch[0]
        b = obs.shape[0]
        tau = self.temperature.tau

        mean, log_sigma, cache = self._policy_params(obs)
        sigma = np.exp(log_sigma)
        xi = self.rng.standard_normal(mean.shape)
        u = mean + sigma * xi
        action = np.tanh(u)
        logp = self._log_prob(xi, log_sigma, u)

        q_in = np.concatenate([obs, action], axis=1)
        q1, cache1 = self.critic1.forward(q_in)
        q2, cache2 = self.critic2.forward(q_in)
        take1 = (q1[:, 0] <= q2[:, 0])[:, None]
        loss = float(np.mean(tau * logp - np.minimum(q1[:, 0], q2[:, 0])))

        # d loss / d qmin = -1/b, routed through whichever critic is the min
        g_q = np.full((b, 1), -1.0 / b)
        _, gin1 = self.critic1.backward(cache1, g_q * take1)
        _, gin2 = self.critic2.backward(cache2, g_q * (~take1))
        dl_da = (gin1 + gin2)[:, c.obs_dim:]

        # chain rule through a = tanh(u), u = mean + sigma * xi, and the
        # entropy term's explicit dependence on u and log sigma
        dl_du = dl_da * (1.0 - action * action) + (tau / b) * 2.0 * np.tanh(u)
        dl_dmean = dl_du
        dl_dlogsigma = dl_du * sigma * xi - (tau / b)
        grad_out = np.concatenate([dl_dmean, dl_dlogsigma], axis=1)
        grads, _ = self.actor.backward(cache, grad_out)
        clip_global_norm(grads, c.grad_clip_norm)
        adam_step(self.actor_opt, self.actor.params, grads)
        return loss, logp

    def update_targets(self):
        polyak(self.target1.params, self.critic1.params, self.config.polyak_tau)
        polyak(self.target2.params, self.critic2.params, self.config.polyak_tau)

    def gradient_phase(self) -> dict:
        """The fixed post-episode block of offline gradient steps."""
        c = self.config
        if self.buffer.size < c.batch_size:
            return {"updates": 0, "entropy": float("nan"), "tau": self.temperature.tau}
        entropy = float("nan")
        for _ in range(c.gradient_steps_per_episode):
            self.critic_update()
            _, logp = self.actor_update()
            entropy = self.temperature.update(logp)
            self.updates += 1
            if self.updates % c.target_update_interval == 0:
                self.update_targets()
        return {
            "updates": c.gradient_steps_per_episode,
            "entropy": entropy,
            "tau": self.temperature.tau,
        }

    # ---------------------------------------------------------------- episodes

    def train_episode(self, env, action_rng: np.random.Generator | None = None) -> dict:
        """Roll out one episode with the stochastic policy, then run the
        offline gradient phase. Uniform random actions fill the warm-up
        period of initial environment steps."""
        c = self.config
        rng = action_rng if action_rng is not None else self.rng
        obs = env.reset()
        ep_return = 0.0
        pos_err_sum = 0.0
        steps = 0
        final_pos_err = float("nan")
        while True:
            if self.env_steps < c.initial_random_steps:
                action = rng.uniform(-1.0, 1.0, size=c.act_dim)
            else:
                action, _ = self.sample_action(obs, rng=rng)
            next_obs, reward, done, info = env.step(action)
            stored_next = next_obs
            if info["terminal"] and not np.isfinite(next_obs).all():
                # never bootstrapped; keep the buffer finite
                stored_next = np.zeros_like(next_obs)
            self.buffer.add(obs, action, reward, stored_next, terminal=info["terminal"])
            self.env_steps += 1
            ep_return += reward
            final_pos_err = info["position_error"]
            pos_err_sum += final_pos_err
            steps += 1
            obs = next_obs
            if done:
                break
        stats = self.gradient_phase()
        return {
            "return": ep_return,
            "steps": steps,
            "mean_position_error": pos_err_sum / steps,
            "final_position_error": final_pos_err,
            "mean_step_reward": ep_return / steps,
            "outcome": info["outcome"],
            "entropy": stats["entropy"],
            "tau": stats["tau"],
            "updates": stats["updates"],
            "env_steps": self.env_steps,
        }

    # ------------------------------------------------------------- persistence

    def save(self, path, meta: dict | None = None):
        from .neural import save_checkpoint

        t = self.temperature
        scalars = {
            "ln_tau": t.ln_tau,
            "temp_m": float(t.adam.m[0][0]),
            "temp_v": float(t.adam.v[0][0]),
            "temp_step_count": t.adam.step_count,
            "temp_lr": t.adam.lr,
            "target_entropy": t.target_entropy,
            "env_steps": self.env_steps,
            "updates": self.updates,
        }
        networks = {
            "actor": self.actor, "critic1": self.critic1, "critic2": self.critic2,
            "target1": self.target1, "target2": self.target2,
        }
        optim = {"actor": self.actor_opt, "critic1": self.critic1_opt, "critic2": self.critic2_opt}
        info = {"obs_dim": self.config.obs_dim, "act_dim": self.config.act_dim}
        info.update(meta or {})
        save_checkpoint(path, networks, optim, scalars, info)

    @classmethod
    def load(cls, path, config: SacConfig = SacConfig(), seed: int = 0) -> "SacAgent":
        from .neural import load_checkpoint

        networks, optim, scalars, _meta = load_checkpoint(path)
        agent = cls(config, seed=seed)
        agent.actor = networks["actor"]
        agent.critic1 = networks["critic1"]
        agent.critic2 = networks["critic2"]
        agent.target1 = networks["target1"]
        agent.target2 = networks["target2"]
        agent.actor_opt = optim["actor"]
        agent.critic1_opt = optim["critic1"]
        agent.critic2_opt = optim["critic2"]
        t = Temperature(scalars["target_entropy"], lr=scalars["temp_lr"])
        t._ln_tau[0] = scalars["ln_tau"]
        t.adam = AdamState([t._ln_tau], lr=scalars["temp_lr"])
        t.adam.m[0][0] = scalars["temp_m"]
        t.adam.v[0][0] = scalars["temp_v"]
        t.adam.step_count = int(scalars["temp_step_count"])
        agent.temperature = t
        agent.env_steps = int(scalars["env_steps"])
        agent.updates = int(scalars["updates"])
        return agent

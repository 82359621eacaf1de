"""Multi-agent PPO with a centralized critic and decentralized actors.

One parameter-shared actor drives every UAV (an agent one-hot in the
observation breaks symmetry); the critic sees the joint state during
training only. The compound action factorizes into a masked categorical
device head, a tanh-squashed Gaussian heading head and a Bernoulli speed
head; the joint log-probability is the sum over heads.

All gradients are hand-derived (see nn.py) and checked against finite
differences in the tests.
"""

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .mdp_env import CorridorEnv, JointAction, RewardConfig
from .nn import Adam, Linear, log_softmax_masked, softplus
from .scenario import Scenario, rng_stream

LOG_2PI = np.log(2.0 * np.pi)
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class MappoConfig:
    hidden: int = 256
    actor_lr: float = 1e-4
    critic_lr: float = 3e-4
    clip_ratio: float = 0.2
    entropy_coef: float = 0.01
    discount: float = 0.99
    gae_lambda: float = 0.95
    rollout: int = 4096          # agent transitions per update
    minibatch: int = 256
    epochs: int = 10
    max_episodes: int = 1500
    smooth_window: int = 20
    seed: int = 0


class ActorNet:
    """Shared two-layer trunk with device, heading and speed heads."""

    def __init__(self, rng, obs_dim, n_actions, hidden=256):
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.hidden = hidden
        self.l1 = Linear(rng, obs_dim, hidden, gain=np.sqrt(2.0))
        self.l2 = Linear(rng, hidden, hidden, gain=np.sqrt(2.0))
        self.head_md = Linear(rng, hidden, n_actions, gain=0.01)
        self.head_mu = Linear(rng, hidden, 1, gain=0.01)
        self.head_speed = Linear(rng, hidden, 1, gain=0.01)
        self.log_std = np.zeros(1)

    @property
    def params(self):
        return (self.l1.params + self.l2.params + self.head_md.params
                + self.head_mu.params + self.head_speed.params + [self.log_std])

    def trunk(self, obs):
        h1 = np.tanh(self.l1.forward(obs))
        h2 = np.tanh(self.l2.forward(h1))
        return h1, h2

    def heads(self, h2):
        return (self.head_md.forward(h2),
                self.head_mu.forward(h2)[:, 0],
                self.head_speed.forward(h2)[:, 0])


class CriticNet:
    def __init__(self, rng, state_dim, hidden=256):
        self.state_dim = state_dim
        self.hidden = hidden
        self.l1 = Linear(rng, state_dim, hidden, gain=np.sqrt(2.0))
        self.l2 = Linear(rng, hidden, hidden, gain=np.sqrt(2.0))
        self.out = Linear(rng, hidden, 1, gain=1.0)

    @property
    def params(self):
        return self.l1.params + self.l2.params + self.out.params


def actor_forward(actor: ActorNet, obs, mask):
    """Distribution parameters for a batch of observations.

    Returns masked per-action log-probabilities, heading mean, heading std
    and the speed logit.
    """
    obs = np.atleast_2d(obs)
    _, h2 = actor.trunk(obs)
    md_logits, mu, z_speed = actor.heads(h2)
    logp_md = log_softmax_masked(md_logits, np.atleast_2d(mask))
    return logp_md, mu, float(np.exp(actor.log_std[0])), z_speed


def critic_forward(critic: CriticNet, state):
    state = np.atleast_2d(state)
    h1 = np.tanh(critic.l1.forward(state))
    h2 = np.tanh(critic.l2.forward(h1))
    return critic.out.forward(h2)[:, 0]


def sample_actions(actor: ActorNet, obs, mask, rng: np.random.Generator):
    """One action tuple per row: (md index or -1, pre-squash u, heading, speed, logp)."""
    logp_md, mu, sigma, z_speed = actor_forward(actor, obs, mask)
    batch = logp_md.shape[0]
    md = np.empty(batch, dtype=int)
    probs = np.exp(logp_md)
    for b in range(batch):
        md[b] = rng.choice(logp_md.shape[1], p=probs[b] / probs[b].sum())
    u = mu + sigma * rng.standard_normal(batch)
    heading = np.pi * np.tanh(u)
    p_speed = 1.0 / (1.0 + np.exp(-z_speed))
    speed = (rng.random(batch) < p_speed).astype(np.uint8)
    logp = joint_log_prob(logp_md, mu, sigma, z_speed, md, u, speed)
    return md, u, heading, speed, logp


def greedy_actions(actor: ActorNet, obs, mask):
    logp_md, mu, _, z_speed = actor_forward(actor, obs, mask)
    md = logp_md.argmax(axis=1)
    heading = np.pi * np.tanh(mu)
    speed = (z_speed > 0).astype(np.uint8)
    return md, heading, speed


def joint_log_prob(logp_md, mu, sigma, z_speed, md, u, speed):
    """Sum of the three heads' log-probabilities (tanh correction included)."""
    batch = logp_md.shape[0]
    lp_md = logp_md[np.arange(batch), md]
    lp_gauss = (-0.5 * ((u - mu) / sigma) ** 2 - np.log(sigma) - 0.5 * LOG_2PI)
    tanh_corr = np.log(np.pi * (1.0 - np.tanh(u) ** 2) + 1e-12)
    lp_heading = lp_gauss - tanh_corr
    lp_speed = speed * z_speed - softplus(z_speed)
    return lp_md + lp_heading + lp_speed


def gae(rewards, values, dones, discount, lam):
    """Generalized advantage estimates by backward recursion.

    ``values`` has one entry per reward; episode boundaries (dones) cut both
    the bootstrap and the accumulation.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    adv = np.zeros(n)
    acc = 0.0
    for t in reversed(range(n)):
        next_v = 0.0 if (t == n - 1 or dones[t]) else values[t + 1]
        delta = rewards[t] + discount * next_v * (1.0 - dones[t]) - values[t]
        acc = delta + discount * lam * acc * (1.0 - dones[t])
        adv[t] = acc
    return adv


def actor_loss_and_grads(actor: ActorNet, batch, clip_ratio, entropy_coef):
    """Clipped-surrogate loss (to minimize) and gradients for every actor param.

    ``batch`` carries obs, mask, md, u, speed, logp_old and normalized adv.
    """
    obs = batch["obs"]
    mask = batch["mask"]
    md = batch["md"]
    u = batch["u"]
    speed = batch["speed"]
    logp_old = batch["logp_old"]
    adv = batch["adv"]
    n = len(obs)

    h1 = np.tanh(actor.l1.forward(obs))
    h2 = np.tanh(actor.l2.forward(h1))
    md_logits, mu, z_speed = actor.heads(h2)
    logp_all = log_softmax_masked(md_logits, mask)
    sigma = float(np.exp(actor.log_std[0]))

    logp = joint_log_prob(logp_all, mu, sigma, z_speed, md, u, speed)
    ratio = np.exp(logp - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv
    surrogate = np.minimum(unclipped, clipped)

    probs = np.exp(logp_all)
    probs[~mask] = 0.0
    with np.errstate(invalid="ignore"):
        plogp = np.where(probs > 0.0, probs * logp_all, 0.0)
    ent_md = -plogp.sum(axis=1)
    ent_heading = 0.5 * (LOG_2PI + 1.0) + actor.log_std[0]
    sig_speed = 1.0 / (1.0 + np.exp(-z_speed))
    ent_speed = softplus(z_speed) - z_speed * sig_speed
    entropy = ent_md + ent_heading + ent_speed

    loss = -surrogate.mean() - entropy_coef * entropy.mean()

    # d(-surrogate)/d logp: gradient passes only where the unclipped branch
    # is the active minimum
    active = (unclipped <= clipped).astype(float)
    g_logp = -(active * ratio * adv) / n

    # categorical head: d logp/d logits = onehot - p ; entropy adds -p(lp + H)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), md] = 1.0
    g_md = g_logp[:, None] * (onehot - probs)
    g_md += -(entropy_coef / n) * (-probs * (np.where(probs > 0, logp_all, 0.0)
                                             + ent_md[:, None]))

    # heading head (Gaussian over the pre-squash variable)
    inv_var = 1.0 / sigma ** 2
    g_mu = g_logp * (u - mu) * inv_var
    g_logstd = float(np.sum(g_logp * (((u - mu) ** 2) * inv_var - 1.0))
                     - entropy_coef)

    # speed head
    g_z = g_logp * (speed - sig_speed)
    g_z += -(entropy_coef / n) * (-z_speed * sig_speed * (1.0 - sig_speed))

    # backprop heads into the trunk
    gh2_md, gw_md, gb_md = actor.head_md.backward(h2, g_md)
    gh2_mu, gw_mu, gb_mu = actor.head_mu.backward(h2, g_mu[:, None])
    gh2_sp, gw_sp, gb_sp = actor.head_speed.backward(h2, g_z[:, None])
    gh2 = gh2_md + gh2_mu + gh2_sp
    gz2 = gh2 * (1.0 - h2 ** 2)
    gh1, gw2, gb2 = actor.l2.backward(h1, gz2)
    gz1 = gh1 * (1.0 - h1 ** 2)
    _, gw1, gb1 = actor.l1.backward(obs, gz1)

    grads = [gw1, gb1, gw2, gb2, gw_md, gb_md, gw_mu, gb_mu, gw_sp, gb_sp,
             np.array([g_logstd])]
    diag = {"ratio_mean": float(ratio.mean()),
            "clip_fraction": float((active == 0.0).mean()),
            "entropy": float(entropy.mean())}
    return float(loss), grads, diag


def critic_loss_and_grads(critic: CriticNet, states, targets):
    """Mean squared error against the frozen value targets."""
    n = len(states)
    h1 = np.tanh(critic.l1.forward(states))
    h2 = np.tanh(critic.l2.forward(h1))
    v = critic.out.forward(h2)[:, 0]
    err = v - targets
    loss = float(np.mean(err ** 2))
    gv = (2.0 / n) * err
    gh2, gw3, gb3 = critic.out.backward(h2, gv[:, None])
    gz2 = gh2 * (1.0 - h2 ** 2)
    gh1, gw2, gb2 = critic.l2.backward(h1, gz2)
    gz1 = gh1 * (1.0 - h1 ** 2)
    _, gw1, gb1 = critic.l1.backward(states, gz1)
    return loss, [gw1, gb1, gw2, gb2, gw3, gb3]


def ppo_actor_update(actor: ActorNet, optimizer: Adam, batch,
                     clip_ratio=0.2, entropy_coef=0.01):
    loss, grads, diag = actor_loss_and_grads(actor, batch, clip_ratio, entropy_coef)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite actor gradient; update aborted")
    optimizer.step(actor.params, grads)
    diag["loss"] = loss
    return diag


def critic_update(critic: CriticNet, optimizer: Adam, states, targets):
    loss, grads = critic_loss_and_grads(critic, states, targets)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite critic loss; update aborted")
    optimizer.step(critic.params, grads)
    return loss


# -- policy bundle -------------------------------------------------------------


class MappoPolicy:
    def __init__(self, actor: ActorNet, critic: CriticNet, config: MappoConfig):
        self.actor = actor
        self.critic = critic
        self.config = config

    def save(self, path):
        arrays = {f"actor_{i}": p for i, p in enumerate(self.actor.params)}
        arrays.update({f"critic_{i}": p for i, p in enumerate(self.critic.params)})
        meta = {
            "version": CHECKPOINT_VERSION,
            "obs_dim": self.actor.obs_dim,
            "n_actions": self.actor.n_actions,
            "state_dim": self.critic.state_dim,
            "hidden": self.actor.hidden,
            "config": asdict(self.config),
        }
        np.savez(path, meta=json.dumps(meta), **arrays)

    @classmethod
    def load(cls, path):
        data = np.load(path, allow_pickle=False)
        meta = json.loads(str(data["meta"]))
        if meta["version"] != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta['version']}")
        cfg = MappoConfig(**meta["config"])
        rng = np.random.default_rng(0)
        actor = ActorNet(rng, meta["obs_dim"], meta["n_actions"], meta["hidden"])
        critic = CriticNet(rng, meta["state_dim"], meta["hidden"])
        for i, p in enumerate(actor.params):
            p[...] = data[f"actor_{i}"]
        for i, p in enumerate(critic.params):
            p[...] = data[f"critic_{i}"]
        return cls(actor, critic, cfg)


def act_in_env(policy: MappoPolicy, env: CorridorEnv, obs,
               rng: np.random.Generator | None):
    """Sequential per-agent action selection under the claim-order masks.

    Deterministic (greedy) when ``rng`` is None. Returns the joint action
    plus everything the trainer stores per agent.
    """
    m_agents = env.n_agents
    md = np.empty(m_agents, dtype=int)
    u = np.zeros(m_agents)
    heading = np.zeros(m_agents)
    speed = np.zeros(m_agents, dtype=np.uint8)
    logp = np.zeros(m_agents)
    masks = np.zeros((m_agents, env.n_actions), dtype=bool)
    claimed = []
    for m in range(m_agents):
        mask = env.action_mask(m, claimed)
        masks[m] = mask
        if rng is None:
            md_m, head_m, sp_m = greedy_actions(policy.actor, obs[m], mask[None])
            md[m], heading[m], speed[m] = md_m[0], head_m[0], sp_m[0]
            u[m] = np.arctanh(np.clip(heading[m] / np.pi, -0.999999, 0.999999))
        else:
            md_m, u_m, head_m, sp_m, lp = sample_actions(
                policy.actor, obs[m], mask[None], rng)
            md[m], u[m], heading[m], speed[m], logp[m] = (
                md_m[0], u_m[0], head_m[0], sp_m[0], lp[0])
        md[m] = md[m] if md[m] < env.n_mds else -1
        claimed.append(int(md[m]))
    action = JointAction(md_choice=md, heading=heading, speed=speed)
    return action, masks, u, logp


# -- training loop --------------------------------------------------------------


@dataclass
class LearningCurve:
    episode: list = field(default_factory=list)
    reward: list = field(default_factory=list)
    smoothed: list = field(default_factory=list)
    value_loss: list = field(default_factory=list)
    success: list = field(default_factory=list)

    def write_csv(self, path):
        lines = ["episode,reward,smoothed_reward,value_loss,success"]
        for i in range(len(self.episode)):
            lines.append(f"{self.episode[i]},{self.reward[i]:.6f},"
                         f"{self.smoothed[i]:.6f},{self.value_loss[i]:.6f},"
                         f"{int(self.success[i])}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


class _Buffer:
    """Rollout storage: per-step shared quantities plus per-agent samples."""

    def __init__(self):
        self.clear()

    def clear(self):
        self.obs = []        # (M, obs_dim) at action time
        self.mask = []       # (M, A)
        self.md = []         # (M,) head indices (no-op = A-1)
        self.u = []          # (M,) pre-squash heading draws
        self.speed = []      # (M,)
        self.logp = []       # (M,)
        self.states = []     # (S,)
        self.values = []     # scalar V(s)
        self.rewards = []    # shared reward
        self.dones = []
        self.agent_samples = 0

    def store(self, obs, masks, md_head, u, speed, logp, critic_state,
              value, reward, done):
        self.obs.append(obs)
        self.mask.append(masks)
        self.md.append(md_head)
        self.u.append(u)
        self.speed.append(speed)
        self.logp.append(logp)
        self.states.append(critic_state)
        self.values.append(value)
        self.rewards.append(reward)
        self.dones.append(done)
        self.agent_samples += len(md_head)


def _update(policy: MappoPolicy, opt_actor: Adam, opt_critic: Adam,
            buf: _Buffer, config: MappoConfig, shuffle_rng) -> float:
    """PPO epochs over one rollout; returns the mean critic loss."""
    adv_step = gae(buf.rewards, buf.values, buf.dones,
                   config.discount, config.gae_lambda)
    targets = adv_step + np.asarray(buf.values)

    m_agents = buf.md[0].shape[0]
    obs = np.concatenate(buf.obs)                       # (T*M, obs_dim)
    mask = np.concatenate(buf.mask)
    md = np.concatenate(buf.md)
    u = np.concatenate(buf.u)
    speed = np.concatenate(buf.speed).astype(float)
    logp_old = np.concatenate(buf.logp)
    adv = np.repeat(adv_step, m_agents)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    states = np.stack(buf.states)

    n_actor = len(obs)
    n_critic = len(states)
    losses = []
    for _ in range(config.epochs):
        order = shuffle_rng.permutation(n_actor)
        for lo in range(0, n_actor, config.minibatch):
            sel = order[lo:lo + config.minibatch]
            ppo_actor_update(policy.actor, opt_actor, {
                "obs": obs[sel], "mask": mask[sel], "md": md[sel],
                "u": u[sel], "speed": speed[sel],
                "logp_old": logp_old[sel], "adv": adv[sel]},
                config.clip_ratio, config.entropy_coef)
        order_c = shuffle_rng.permutation(n_critic)
        for lo in range(0, n_critic, config.minibatch):
            sel = order_c[lo:lo + config.minibatch]
            losses.append(critic_update(policy.critic, opt_critic,
                                        states[sel], targets[sel]))
    return float(np.mean(losses))


def train(scenario: Scenario, config: MappoConfig = MappoConfig(),
          reward: RewardConfig = RewardConfig(),
          progress=None) -> tuple[MappoPolicy, LearningCurve]:
    """Episode loop: sample, per-slot link feasibility, store, PPO epochs.

    Single-worker and bit-deterministic for a fixed config (seed included).
    ``progress`` is an optional callback(episode, curve).
    """
    sdr_cache: dict = {}
    env = CorridorEnv(scenario, reward=reward, sdr_cache=sdr_cache)
    actor = ActorNet(rng_stream(config.seed, "init-actor"),
                     env.obs_dim, env.n_actions, config.hidden)
    critic = CriticNet(rng_stream(config.seed, "init-critic"),
                       env.state_dim, config.hidden)
    policy = MappoPolicy(actor, critic, config)
    opt_actor = Adam(actor.params, config.actor_lr)
    opt_critic = Adam(critic.params, config.critic_lr)
    sample_rng = rng_stream(config.seed, "policy-sample")
    shuffle_rng = rng_stream(config.seed, "minibatch")

    buf = _Buffer()
    curve = LearningCurve()
    last_value_loss = 0.0
    info = {"success": False}

    for episode in range(config.max_episodes):
        _, obs, critic_state = env.reset(config.seed * 1_000_003 + episode)
        done = False
        ep_reward = 0.0
        while not done:
            value = float(critic_forward(critic, critic_state)[0])
            action, masks, u, logp = act_in_env(policy, env, obs, sample_rng)
            md_head = np.where(action.md_choice >= 0, action.md_choice,
                               env.n_mds)
            _, rew, next_obs, done, info = env.step(action)
            buf.store(obs, masks, md_head, u, action.speed, logp,
                      critic_state, value, rew.total, done)
            obs = next_obs
            critic_state = env.critic_state()
            ep_reward += rew.total

        curve.episode.append(episode)
        curve.reward.append(ep_reward)
        window = curve.reward[-config.smooth_window:]
        curve.smoothed.append(float(np.mean(window)))
        curve.value_loss.append(last_value_loss)
        curve.success.append(bool(info["success"]))
        if progress is not None:
            progress(episode, curve)

        if buf.agent_samples >= config.rollout:
            last_value_loss = _update(policy, opt_actor, opt_critic, buf,
                                      config, shuffle_rng)
            buf.clear()
            curve.value_loss[-1] = last_value_loss
    return policy, curve


def run_policy_episode(policy: MappoPolicy, env: CorridorEnv, seed: int,
                       deterministic: bool = True,
                       sample_rng: np.random.Generator | None = None):
    """Roll one evaluation episode; returns (success, slots, energy, collected)."""
    rng = None if deterministic else (sample_rng or rng_stream(seed, "eval"))
    _, obs, _ = env.reset(seed)
    done = False
    info = {"success": False}
    while not done:
        action, _, _, _ = act_in_env(policy, env, obs, rng)
        state, _, obs, done, info = env.step(action)
    return (info["success"], state.slot, state.cumulative_energy,
            int(state.collected.sum()))

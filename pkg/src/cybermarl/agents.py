"""Policies for either side: the random-valid baseline, tabular Q-learning and
from-scratch actor-critic learners (A2C and clipped-surrogate PPO) over factored
categorical action heads."""
from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .nn import MLP, Adam, clip_grad_norm

ALGOS = ("none", "basic", "tabular_q", "a2c", "ppo")
LEARNABLE = ("tabular_q", "a2c", "ppo")


class NoValidAction(RuntimeError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class CheckpointError(Exception):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptFile(CheckpointError):
    pass


class AgentPolicy:
    """act / observe / end_episode interface shared by every agent."""

    algo = "none"

    def act(self, obs: np.ndarray, explore: bool = True) -> np.ndarray:
        raise NotImplementedError

    def observe(self, obs, action, reward: float, next_obs, terminal: bool) -> None:
        pass

    def end_episode(self) -> None:
        pass

    def finish(self) -> None:
        """Flush any partially collected data into a final update."""


# ---------------------------------------------------------------------------
# basic agent


def basic_act(valid: Sequence, rng: np.random.Generator):
    """Uniform draw from a non-empty list of valid actions."""
    if not valid:
        raise NoValidAction("no valid action in the current state")
    return valid[int(rng.integers(len(valid)))]


class BasicAgent(AgentPolicy):
    algo = "basic"

    def __init__(self, valid_actions: Callable[[], list], encode: Callable, rng: np.random.Generator):
        self.valid_actions = valid_actions
        self.encode = encode
        self.rng = rng

    def act(self, obs=None, explore: bool = True) -> np.ndarray:
        return np.asarray(self.encode(basic_act(self.valid_actions(), self.rng)))


# ---------------------------------------------------------------------------
# tabular Q-learning


class QTable:
    """Sparse Q(s, a); missing entries read as 0."""

    def __init__(self, n_actions: int, alpha: float = 0.1, gamma: float = 0.9):
        if not 0 < alpha <= 1:
            raise ValueError("alpha must be in (0, 1]")
        if not 0 <= gamma < 1:
            raise ValueError("gamma must be in [0, 1)")
        self.n_actions = n_actions
        self.alpha = alpha
        self.gamma = gamma
        self.table: dict[tuple, dict[int, float]] = {}

    def get(self, key: tuple, action: int) -> float:
        return self.table.get(key, {}).get(action, 0.0)

    def max_value(self, key: tuple) -> float:
        row = self.table.get(key)
        if not row:
            return 0.0
        best = max(row.values())
        return best if len(row) == self.n_actions else max(best, 0.0)

    def greedy(self, key: tuple) -> int:
        """Best action; ties (including unvisited zero entries) go to the lowest index."""
        row = self.table.get(key, {})
        best = self.max_value(key)
        candidates = [a for a, v in row.items() if v == best]
        if best == 0.0 and len(row) < self.n_actions:
            unvisited = next(a for a in range(self.n_actions) if a not in row)
            candidates.append(unvisited)
        return min(candidates)

    def update(self, key: tuple, action: int, reward: float, next_key: Optional[tuple],
               terminal: bool = False) -> float:
        q = self.get(key, action)
        target = reward if terminal or next_key is None else reward + self.gamma * self.max_value(next_key)
        q += self.alpha * (target - q)
        self.table.setdefault(key, {})[action] = q
        return q


def attacker_q_key(obs: np.ndarray, max_nodes: int, max_credentials: int) -> tuple:
    """(discovered_count, owned_count, known-credential popcount)."""
    return (int(obs[3]), int(obs[4]), int(obs[-max_credentials:].sum()))


def defender_q_key(obs: np.ndarray, max_nodes: int, num_ports: int) -> tuple:
    """(infected count, closed firewall rules, stopped-or-absent services)."""
    block = max_nodes * num_ports
    fw = obs[max_nodes:max_nodes + 2 * block]
    return (int(obs[:max_nodes].sum()), int(block * 2 - fw.sum()),
            int(block - obs[max_nodes + 2 * block:].sum()))


class QLearningAgent(AgentPolicy):
    algo = "tabular_q"

    def __init__(self, dims: Sequence[int], key_fn: Callable[[np.ndarray], tuple], rng: np.random.Generator,
                 alpha: float = 0.1, gamma: float = 0.9, epsilon: float = 1.0,
                 epsilon_min: float = 0.05, epsilon_decay: float = 0.9999):
        self.dims = tuple(dims)
        self.key_fn = key_fn
        self.rng = rng
        self.q = QTable(int(np.prod(self.dims)), alpha, gamma)
        self.epsilon = epsilon
        self.epsilon_min = epsilon_min
        self.epsilon_decay = epsilon_decay

    def act(self, obs: np.ndarray, explore: bool = True) -> np.ndarray:
        if explore and self.rng.random() < self.epsilon:
            idx = int(self.rng.integers(self.q.n_actions))
        else:
            idx = self.q.greedy(self.key_fn(obs))
        return np.array(np.unravel_index(idx, self.dims))

    def observe(self, obs, action, reward, next_obs, terminal) -> None:
        idx = int(np.ravel_multi_index(tuple(int(a) for a in action), self.dims))
        self.q.update(self.key_fn(obs), idx, reward, self.key_fn(next_obs), terminal)
        self.epsilon = max(self.epsilon_min, self.epsilon * self.epsilon_decay)


# ---------------------------------------------------------------------------
# actor-critic learners


@dataclass
class Hyperparams:
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    ent_coef: float = 0.01
    vf_coef: float = 0.5
    rollout_length: int = 2048
    n_minibatches: int = 32
    n_epochs: int = 4
    step_size: float = 3e-4
    max_grad_norm: float = 0.5
    hidden: int = 64
    normalize_advantage: bool = True

    def __post_init__(self):
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must be in (0, 1)")
        if self.rollout_length < 1:
            raise ValueError("rollout_length must be >= 1")

    @classmethod
    def defaults(cls, algo: str) -> "Hyperparams":
        if algo == "a2c":
            # one gradient step per rollout, so rollouts are short
            return cls(gae_lambda=1.0, rollout_length=8, n_minibatches=1, n_epochs=1,
                       step_size=7e-4, normalize_advantage=False)
        return cls()


class FactoredCategorical:
    """Independent categorical per action dimension, parameterised by concatenated logits."""

    def __init__(self, dims: Sequence[int]):
        self.dims = tuple(dims)
        self.offsets = np.concatenate([[0], np.cumsum(self.dims)])

    def log_probs(self, logits: np.ndarray) -> list[np.ndarray]:
        out = []
        for d in range(len(self.dims)):
            z = logits[:, self.offsets[d]:self.offsets[d + 1]]
            z = z - z.max(axis=1, keepdims=True)
            out.append(z - np.log(np.exp(z).sum(axis=1, keepdims=True)))
        return out

    def log_prob(self, logps: list[np.ndarray], actions: np.ndarray) -> np.ndarray:
        rows = np.arange(actions.shape[0])
        return sum(lp[rows, actions[:, d]] for d, lp in enumerate(logps))

    @staticmethod
    def entropy(logps: list[np.ndarray]) -> np.ndarray:
        return sum(-(np.exp(lp) * lp).sum(axis=1) for lp in logps)

    def max_entropy(self) -> float:
        return float(sum(np.log(d) for d in self.dims))


@dataclass
class LossInfo:
    policy_loss: float
    value_loss: float
    entropy: float
    total: float
    clip_fraction: float = 0.0


def actor_critic_loss(pi: MLP, vf: MLP, dist: FactoredCategorical, obs: np.ndarray, actions: np.ndarray,
                      advantages: np.ndarray, returns: np.ndarray, hp: Hyperparams,
                      old_logp: Optional[np.ndarray] = None):
    """Loss and analytic gradients for both networks.

    With ``old_logp`` the policy term is the clipped surrogate
    ``-mean(min(rho*A, clip(rho)*A))``; without it, ``-mean(logp*A)``.
    Returns (LossInfo, pi_grads, vf_grads).
    """
    n = obs.shape[0]
    logits, pi_acts = pi.forward(obs)
    values, vf_acts = vf.forward(obs)
    values = values[:, 0]
    logps = dist.log_probs(logits)
    logp = dist.log_prob(logps, actions)
    ent = dist.entropy(logps)

    clip_frac = 0.0
    if old_logp is None:
        weight = advantages
        policy_loss = -float(np.mean(logp * advantages))
    else:
        ratio = np.exp(logp - old_logp)
        clipped = np.clip(ratio, 1.0 - hp.clip_eps, 1.0 + hp.clip_eps)
        surr = np.minimum(ratio * advantages, clipped * advantages)
        policy_loss = -float(np.mean(surr))
        # gradient flows only where the unclipped branch is the active minimum
        active = ratio * advantages <= clipped * advantages
        weight = np.where(active, ratio * advantages, 0.0)
        clip_frac = float(np.mean(np.abs(ratio - 1.0) > hp.clip_eps))
    value_err = values - returns
    value_loss = float(np.mean(value_err ** 2))
    entropy = float(np.mean(ent))
    total = policy_loss - hp.ent_coef * entropy + hp.vf_coef * value_loss
    if not np.isfinite(total):
        raise NonFiniteLoss(f"non-finite loss {total}")

    dlogits = np.empty_like(logits)
    rows = np.arange(n)
    for d, lp in enumerate(logps):
        p = np.exp(lp)
        a, b = dist.offsets[d], dist.offsets[d + 1]
        onehot = np.zeros_like(p)
        onehot[rows, actions[:, d]] = 1.0
        h = -(p * lp).sum(axis=1, keepdims=True)
        g = -(weight[:, None] / n) * (onehot - p)
        g += (hp.ent_coef / n) * p * (lp + h)
        dlogits[:, a:b] = g
    dvalues = (2.0 * hp.vf_coef / n) * value_err[:, None]
    pi_grads = pi.backward(pi_acts, dlogits)
    vf_grads = vf.backward(vf_acts, dvalues)
    for g in list(pi_grads.values()) + list(vf_grads.values()):
        if not np.all(np.isfinite(g)):
            raise NonFiniteLoss("non-finite gradient")
    return LossInfo(policy_loss, value_loss, entropy, total, clip_frac), pi_grads, vf_grads


def compute_gae(rewards: np.ndarray, values: np.ndarray, next_values: np.ndarray, terminals: np.ndarray,
                boundaries: np.ndarray, gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """GAE(lambda) advantages and returns.

    ``terminals[t]`` zeroes the bootstrap from ``next_values[t]``; ``boundaries[t]``
    (episode ended after t, terminal or truncated) stops the recursion.
    """
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in reversed(range(n)):
        delta = rewards[t] + gamma * next_values[t] * (1.0 - terminals[t]) - values[t]
        last = delta + gamma * lam * (1.0 - boundaries[t]) * last
        adv[t] = last
    return adv, adv + values


class _Rollout:
    def __init__(self):
        self.obs: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []
        self.rewards: list[float] = []
        self.next_obs: list[np.ndarray] = []
        self.terminals: list[bool] = []
        self.boundaries: list[bool] = []
        self.logp: list[float] = []

    def __len__(self) -> int:
        return len(self.rewards)


class ActorCriticAgent(AgentPolicy):
    """Shared machinery for the A2C and PPO learners (separate policy and value MLPs)."""

    algo = "ac"

    def __init__(self, obs_size: int, dims: Sequence[int], rng: np.random.Generator,
                 hp: Optional[Hyperparams] = None):
        self.hp = hp or Hyperparams.defaults(self.algo)
        self.obs_size = obs_size
        self.dims = tuple(dims)
        self.dist = FactoredCategorical(self.dims)
        self.rng = rng
        h = self.hp.hidden
        self.pi = MLP([obs_size, h, h, sum(self.dims)], rng, out_scale=0.01)
        self.vf = MLP([obs_size, h, h, 1], rng, out_scale=1.0)
        self.pi_opt = Adam(self.pi.params, lr=self.hp.step_size)
        self.vf_opt = Adam(self.vf.params, lr=self.hp.step_size)
        self.buffer = _Rollout()
        self._last_logp = 0.0
        self.updates = 0
        self.last_info: Optional[LossInfo] = None

    # -- acting

    def act(self, obs: np.ndarray, explore: bool = True) -> np.ndarray:
        logits = self.pi(obs[None, :])[0]
        off = self.dist.offsets
        action = np.empty(len(self.dims), dtype=np.int64)
        logp = 0.0
        for d in range(len(self.dims)):
            z = logits[off[d]:off[d + 1]]
            if explore:
                z = z - z.max()
                p = np.exp(z)
                total = p.sum()
                a = int(np.searchsorted(np.cumsum(p), self.rng.random() * total, side="right"))
                a = min(a, len(p) - 1)
                logp += z[a] - np.log(total)
            else:
                a = int(np.argmax(z))
            action[d] = a
        self._last_logp = logp
        return action

    def action_probabilities(self, obs: np.ndarray) -> list[np.ndarray]:
        logps = self.dist.log_probs(self.pi(np.atleast_2d(obs)))
        return [np.exp(lp) for lp in logps]

    # -- learning

    def observe(self, obs, action, reward, next_obs, terminal) -> None:
        b = self.buffer
        b.obs.append(obs)
        b.actions.append(np.asarray(action))
        b.rewards.append(float(reward))
        b.next_obs.append(next_obs)
        b.terminals.append(bool(terminal))
        b.boundaries.append(bool(terminal))
        b.logp.append(self._last_logp)
        if len(b) >= self.hp.rollout_length:
            self.update()

    def end_episode(self) -> None:
        if self.buffer.boundaries:
            self.buffer.boundaries[-1] = True

    def finish(self) -> None:
        if len(self.buffer):
            self.update()

    def _batch(self):
        b = self.buffer
        obs = np.asarray(b.obs)
        next_obs = np.asarray(b.next_obs)
        values = self.vf(obs)[:, 0]
        next_values = self.vf(next_obs)[:, 0]
        adv, ret = compute_gae(np.asarray(b.rewards), values, next_values,
                               np.asarray(b.terminals, dtype=float), np.asarray(b.boundaries, dtype=float),
                               self.hp.gamma, self.hp.gae_lambda)
        return obs, np.asarray(b.actions, dtype=np.int64), adv, ret, np.asarray(b.logp)

    def _apply(self, pi_grads, vf_grads) -> None:
        clip_grad_norm(pi_grads, self.hp.max_grad_norm)
        clip_grad_norm(vf_grads, self.hp.max_grad_norm)
        self.pi_opt.step(self.pi.params, pi_grads)
        self.vf_opt.step(self.vf.params, vf_grads)

    def update(self) -> LossInfo:
        raise NotImplementedError

    # -- parameters

    def parameters(self) -> dict[str, np.ndarray]:
        out = {f"pi.{k}": v for k, v in self.pi.params.items()}
        out.update({f"vf.{k}": v for k, v in self.vf.params.items()})
        return out

    def load_parameters(self, params: dict[str, np.ndarray]) -> None:
        for k, v in params.items():
            net, name = k.split(".", 1)
            getattr(self, net).params[name][...] = v


class A2CAgent(ActorCriticAgent):
    algo = "a2c"

    def update(self) -> LossInfo:
        obs, actions, adv, ret, _ = self._batch()
        if self.hp.normalize_advantage and len(adv) > 1:
            adv = (adv - adv.mean()) / (adv.std() + 1e-8)
        try:
            info, gp, gv = actor_critic_loss(self.pi, self.vf, self.dist, obs, actions, adv, ret, self.hp)
        except NonFiniteLoss:
            self.buffer = _Rollout()
            raise
        self._apply(gp, gv)
        self.buffer = _Rollout()
        self.updates += 1
        self.last_info = info
        return info


class PPOAgent(ActorCriticAgent):
    algo = "ppo"

    def update(self) -> LossInfo:
        obs, actions, adv, ret, old_logp = self._batch()
        n = len(adv)
        n_mb = max(1, min(self.hp.n_minibatches, n))
        info = None
        try:
            for _ in range(self.hp.n_epochs):
                perm = self.rng.permutation(n)
                for idx in np.array_split(perm, n_mb):
                    a = adv[idx]
                    if self.hp.normalize_advantage and len(a) > 1:
                        a = (a - a.mean()) / (a.std() + 1e-8)
                    info, gp, gv = actor_critic_loss(self.pi, self.vf, self.dist, obs[idx], actions[idx],
                                                     a, ret[idx], self.hp, old_logp=old_logp[idx])
                    self._apply(gp, gv)
        finally:
            self.buffer = _Rollout()
        self.updates += 1
        self.last_info = info
        return info


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"MRLN"
FORMAT_VERSION = 1


def _params_of(agent: AgentPolicy) -> dict[str, np.ndarray]:
    if isinstance(agent, ActorCriticAgent):
        return agent.parameters()
    if isinstance(agent, QLearningAgent):
        keys, actions, values = [], [], []
        for k, row in sorted(agent.q.table.items()):
            for a, v in sorted(row.items()):
                keys.append(k)
                actions.append(a)
                values.append(v)
        width = len(keys[0]) if keys else 3
        return {"keys": np.asarray(keys, dtype=np.int64).reshape(-1, width),
                "actions": np.asarray(actions, dtype=np.int64),
                "values": np.asarray(values, dtype=np.float64)}
    raise TypeError(f"{type(agent).__name__} has no parameters to save")


def save_model(agent: AgentPolicy, path: str, *, side: str, bounds: dict) -> None:
    """Write a checksummed checkpoint: magic, version, JSON header, npz blob, 64-bit digest."""
    params = _params_of(agent)
    for k, v in params.items():
        if not np.all(np.isfinite(v)):
            raise ValueError(f"parameter {k} is not finite")
    header = {"algo": agent.algo, "side": side, "bounds": bounds, "dims": list(agent.dims)}
    if isinstance(agent, ActorCriticAgent):
        header["obs_size"] = agent.obs_size
        header["hyperparams"] = asdict(agent.hp)
    else:
        q = agent.q
        header["q"] = {"alpha": q.alpha, "gamma": q.gamma, "epsilon": agent.epsilon}
    hbytes = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    np.savez(buf, **params)
    blob = buf.getvalue()
    body = MAGIC + struct.pack("<HI", FORMAT_VERSION, len(hbytes)) + hbytes + struct.pack("<Q", len(blob)) + blob
    digest = hashlib.blake2b(body, digest_size=8).digest()
    with open(path, "wb") as fh:
        fh.write(body + digest)


def read_checkpoint(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise CorruptFile(f"{path}: bad magic bytes")
    if len(data) < 10:
        raise CorruptFile(f"{path}: truncated header")
    version, hlen = struct.unpack_from("<HI", data, 4)
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
    if len(data) < 26 + hlen:
        raise CorruptFile(f"{path}: truncated")
    body, digest = data[:-8], data[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CorruptFile(f"{path}: checksum mismatch")
    header = json.loads(body[10:10 + hlen])
    (blen,) = struct.unpack_from("<Q", body, 10 + hlen)
    blob = body[18 + hlen:]
    if len(blob) != blen:
        raise CorruptFile(f"{path}: parameter blob length mismatch")
    with np.load(io.BytesIO(blob), allow_pickle=False) as npz:
        params = {k: npz[k] for k in npz.files}
    return header, params


def load_model(path: str, *, bounds: Optional[dict] = None, side: Optional[str] = None,
               rng: Optional[np.random.Generator] = None, key_fn: Optional[Callable] = None) -> AgentPolicy:
    """Rebuild an agent from a checkpoint, optionally checking it against scenario bounds."""
    header, params = read_checkpoint(path)
    if bounds is not None and header["bounds"] != bounds:
        raise VersionMismatch(f"{path}: trained for bounds {header['bounds']}, scenario has {bounds}")
    if side is not None and header["side"] != side:
        raise VersionMismatch(f"{path}: checkpoint is for side {header['side']!r}, not {side!r}")
    rng = rng if rng is not None else np.random.default_rng(0)
    algo = header["algo"]
    if algo in ("a2c", "ppo"):
        cls = A2CAgent if algo == "a2c" else PPOAgent
        hp = Hyperparams(**header["hyperparams"])
        agent = cls(header["obs_size"], header["dims"], rng, hp)
        agent.load_parameters(params)
        return agent
    if algo == "tabular_q":
        if key_fn is None:
            raise CheckpointError("tabular_q checkpoints need a key function")
        q = header["q"]
        agent = QLearningAgent(header["dims"], key_fn, rng, alpha=q["alpha"], gamma=q["gamma"],
                               epsilon=q["epsilon"])
        for k, a, v in zip(params["keys"], params["actions"], params["values"]):
            agent.q.table.setdefault(tuple(int(x) for x in k), {})[int(a)] = float(v)
        return agent
    raise CorruptFile(f"{path}: unknown algorithm tag {algo!r}")


def make_agent(algo: str, obs_size: int, dims: Sequence[int], rng: np.random.Generator,
               hp: Optional[Hyperparams] = None, key_fn: Optional[Callable] = None) -> AgentPolicy:
    if algo == "a2c":
        return A2CAgent(obs_size, dims, rng, hp)
    if algo == "ppo":
        return PPOAgent(obs_size, dims, rng, hp)
    if algo == "tabular_q":
        return QLearningAgent(dims, key_fn, rng)
    raise ValueError(f"{algo!r} is not a learnable algorithm")

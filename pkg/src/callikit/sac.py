"""Soft Actor-Critic in plain numpy.

Dense ReLU networks with hand-written backward passes, a tanh-squashed
Gaussian actor, twin critics with slowly tracking target copies, Adam, and a
FIFO replay buffer. Everything is deterministic for a fixed seed.
"""
from __future__ import annotations

import ctypes
import ctypes.util
import json
import math
import struct
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG2 = math.log(2.0)


# -------------------------------------------------------------------- config

@dataclass(frozen=True)
class SacConfig:
    alpha: float = 0.95
    gamma: float = 0.95
    tau: float = 0.95  # target <- tau * target + (1 - tau) * online
    policy_lr: float = 1e-4
    q_lr: float = 1e-4
    batch: int = 2 ** 10
    buffer: int = 2 ** 20
    epochs: int = 150
    steps_per_epoch: int = 10000
    warmup: int | None = None  # default 10 * batch
    actor_hidden: tuple = (64, 128)
    critic_hidden: tuple = (128, 128, 128)
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.policy_lr <= 0 or self.q_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch < 1 or self.buffer < self.batch:
            raise ValueError("need 1 <= batch <= buffer")
        if self.epochs < 0 or self.steps_per_epoch < 1:
            raise ValueError("bad epoch settings")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        object.__setattr__(self, "actor_hidden", tuple(self.actor_hidden))
        object.__setattr__(self, "critic_hidden", tuple(self.critic_hidden))
        object.__setattr__(self, "betas", tuple(self.betas))

    @property
    def warmup_steps(self) -> int:
        return 10 * self.batch if self.warmup is None else self.warmup

    @classmethod
    def from_dict(cls, d: dict) -> "SacConfig":
        names = cls.__dataclass_fields__.keys()
        return cls(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in d.items() if k in names})

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("actor_hidden", "critic_hidden", "betas"):
            d[k] = list(d[k])
        if d["warmup"] is None:
            del d["warmup"]
        return d


# ------------------------------------------------------------------ networks

class DenseNet:
    """Affine layers with ReLU between them and a linear output."""

    def __init__(self, sizes, rng: np.random.Generator | None = None, dtype=np.float64):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"bad layer sizes {sizes}")
        self.sizes = sizes
        self.dtype = np.dtype(dtype)
        rng = rng or np.random.default_rng(0)
        self.W, self.b = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            lim = 1.0 / math.sqrt(fan_in)
            self.W.append(rng.uniform(-lim, lim, (fan_in, fan_out)).astype(self.dtype))
            self.b.append(rng.uniform(-lim, lim, fan_out).astype(self.dtype))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.W, self.b):
            out += [W, b]
        return out

    def copy(self) -> "DenseNet":
        twin = DenseNet.__new__(DenseNet)
        twin.sizes, twin.dtype = list(self.sizes), self.dtype
        twin.W = [w.copy() for w in self.W]
        twin.b = [b.copy() for b in self.b]
        return twin

    def forward(self, x):
        """Returns ``(output, cache)``; ``cache`` feeds :meth:`backward`."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.sizes[0]}")
        acts = [x]
        h = x
        last = len(self.W) - 1
        for k, (W, b) in enumerate(zip(self.W, self.b)):
            h = h @ W
            h += b
            if k < last:
                np.maximum(h, 0.0, out=h)
            acts.append(h)
        return h, acts

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, cache, grad_out, param_grads: bool = True, input_grad: bool = True):
        """Parameter gradients (``params`` order) and the input gradient.

        Either part can be skipped; skipped parts come back as ``None``.
        """
        acts = cache
        g = np.asarray(grad_out, dtype=self.dtype)
        grads = [None] * (2 * len(self.W)) if param_grads else None
        last = len(self.W) - 1
        for k in range(last, -1, -1):
            if k < last:
                # g is a fresh array from the previous layer, so mask in place
                np.multiply(g, acts[k + 1] > 0, out=g)
            if param_grads:
                a = acts[k]
                g2 = g.reshape(-1, g.shape[-1])
                grads[2 * k] = a.reshape(-1, a.shape[-1]).T @ g2
                # a ones-vector product sums columns faster than sum(axis=0)
                grads[2 * k + 1] = np.ones(len(g2), dtype=g2.dtype) @ g2
            if k > 0 or input_grad:
                W = self.W[k]
                # matmul's outer-product path is slow; broadcasting gives the same products
                g = g * W[:, 0] if W.shape[1] == 1 else g @ W.T
            else:
                g = None
        return grads, g


def net_forward(net: DenseNet, x):
    return net.forward(x)


def net_backward(net: DenseNet, cache, grad_out):
    return net.backward(cache, grad_out)


# ----------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """In-place bias-corrected Adam update."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def soft_update(targets, onlines, tau: float):
    """``target <- tau * target + (1 - tau) * online`` for matching parameter lists."""
    targets, onlines = list(targets), list(onlines)
    if len(targets) != len(onlines):
        raise ValueError("parameter lists differ in length")
    for t, o in zip(targets, onlines):
        if t.shape != o.shape:
            raise ValueError(f"shape mismatch {t.shape} vs {o.shape}")
        t *= tau
        t += (1.0 - tau) * o


# -------------------------------------------------------------------- policy

class GaussianPolicy:
    """``a = bound * tanh(mu + sigma * xi)`` with ``(mu, log sigma)`` from a dense trunk."""

    def __init__(self, state_dim: int, action_dim: int, bound, hidden=(64, 128),
                 rng: np.random.Generator | None = None, dtype=np.float64):
        self.state_dim, self.action_dim = state_dim, action_dim
        self.bound = np.broadcast_to(np.asarray(bound, dtype=float), (action_dim,)).copy()
        if np.any(self.bound <= 0):
            raise ValueError("action bounds must be positive")
        self.trunk = DenseNet([state_dim, *hidden, 2 * action_dim], rng, dtype)
        self._log_bound = float(np.log(self.bound).sum())

    @property
    def params(self):
        return self.trunk.params

    def _heads(self, states):
        out, cache = self.trunk.forward(np.atleast_2d(states))
        A = self.action_dim
        mu, raw = out[:, :A], out[:, A:]
        log_std = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
        return mu, raw, log_std, cache

    def forward(self, states, xi):
        """Squashed sample ``u in (-1, 1)`` and its log-density (in env units) for given noise."""
        mu, raw, log_std, cache = self._heads(states)
        std = np.exp(log_std)
        pre = mu + std * xi
        u = np.tanh(pre)
        log_det = 2.0 * (_LOG2 - pre - np.logaddexp(0.0, -2.0 * pre))  # log(1 - tanh^2)
        logp = (-0.5 * xi * xi - log_std - _HALF_LOG_2PI - log_det).sum(axis=1) - self._log_bound
        return u, logp, (mu, raw, log_std, std, pre, u, xi, cache)

    def backward(self, aux, g_u, g_logp):
        """Trunk gradients given dL/du (per sample) and dL/dlogp (per sample), noise held fixed."""
        mu, raw, log_std, std, pre, u, xi, cache = aux
        g_logp = np.asarray(g_logp)[:, None]
        # d logp / d pre = 2 tanh(pre); d u / d pre = 1 - u^2
        g_pre = g_u * (1.0 - u * u) + g_logp * 2.0 * u
        g_mu = g_pre
        g_ls = g_pre * std * xi - g_logp
        g_ls = g_ls * ((raw > LOG_STD_MIN) & (raw < LOG_STD_MAX))
        grads, _ = self.trunk.backward(cache, np.concatenate([g_mu, g_ls], axis=1), input_grad=False)
        return grads

    def sample(self, states, rng: np.random.Generator, deterministic: bool = False):
        """Env-scale actions and log-probabilities for a batch of states."""
        states = np.atleast_2d(states)
        if deterministic:
            mu, _, _, _ = self._heads(states)
            return self.bound * np.tanh(mu), np.full(len(states), np.nan)
        xi = rng.standard_normal((len(states), self.action_dim)).astype(self.trunk.dtype)
        u, logp, _ = self.forward(states, xi)
        return self.bound * u, logp


def policy_sample(policy: GaussianPolicy, state, rng: np.random.Generator, mode: str = "stochastic"):
    if mode not in ("stochastic", "deterministic"):
        raise ValueError("mode must be 'stochastic' or 'deterministic'")
    a, logp = policy.sample(state, rng, deterministic=(mode == "deterministic"))
    return a[0], float(logp[0])


def squashed_log_prob(a, mu, log_std, bound) -> float:
    """Log-density of a scalar action under the squashed Gaussian (closed form)."""
    u = a / bound
    pre = math.atanh(u)
    std = math.exp(log_std)
    z = (pre - mu) / std
    return -0.5 * z * z - log_std - _HALF_LOG_2PI - math.log(1.0 - u * u) - math.log(bound)


# -------------------------------------------------------------------- replay

class ReplayBuffer:
    """FIFO ring of transitions with uniform sampling.

    Storage grows on demand up to ``capacity``. A lock keeps writers and the
    sampler from interleaving.
    """

    def __init__(self, capacity: int, state_dim: int, action_dim: int, dtype=np.float32):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.state_dim, self.action_dim = state_dim, action_dim
        self.dtype = np.dtype(dtype)
        self.size = 0
        self.head = 0
        self._lock = threading.Lock()
        self._alloc(min(capacity, 4096))

    def _alloc(self, n):
        def grow(old, shape):
            new = np.zeros(shape, dtype=self.dtype)
            if old is not None:
                new[:len(old)] = old
            return new

        get = lambda name: getattr(self, name, None)
        self.s = grow(get("s"), (n, self.state_dim))
        self.a = grow(get("a"), (n, self.action_dim))
        self.r = grow(get("r"), (n,))
        self.s2 = grow(get("s2"), (n, self.state_dim))
        self.d = grow(get("d"), (n,))

    def __len__(self):
        return self.size

    def push(self, s, a, r, s2, done) -> None:
        with self._lock:
            if self.head >= len(self.r) and len(self.r) < self.capacity:
                self._alloc(min(self.capacity, 2 * len(self.r)))
            i = self.head
            self.s[i], self.a[i], self.r[i], self.s2[i], self.d[i] = s, a, r, s2, float(done)
            self.head = (i + 1) % self.capacity
            self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, self.size, n)

    def sample(self, n: int, rng: np.random.Generator):
        with self._lock:
            idx = self.sample_indices(n, rng)
            return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.d[idx]


# --------------------------------------------------------------------- agent

class SacAgent:
    """Actor, twin critics and their targets.

    Critics see the squashed action ``u = a / bound`` so their inputs stay
    in ``[-1, 1]`` whatever the environment's action scale.
    """

    def __init__(self, state_dim: int, action_dim: int, bound, config: SacConfig = SacConfig(),
                 rng: np.random.Generator | None = None):
        self.config = config
        self.rng = rng or np.random.default_rng(0)
        dtype = np.dtype(config.dtype)
        self.dtype = dtype
        self.actor = GaussianPolicy(state_dim, action_dim, bound, config.actor_hidden, self.rng, dtype)
        sizes = [state_dim + action_dim, *config.critic_hidden, 1]
        self.q1 = DenseNet(sizes, self.rng, dtype)
        self.q2 = DenseNet(sizes, self.rng, dtype)
        self.q1_t, self.q2_t = self.q1.copy(), self.q2.copy()
        self.opt_actor = AdamState.zeros_like(self.actor.params)
        self.opt_q1 = AdamState.zeros_like(self.q1.params)
        self.opt_q2 = AdamState.zeros_like(self.q2.params)

    @property
    def bound(self):
        return self.actor.bound

    def act(self, state, deterministic: bool = False) -> np.ndarray:
        a, _ = self.actor.sample(np.asarray(state, dtype=self.dtype)[None], self.rng, deterministic)
        return a[0].astype(float)

    # critic ------------------------------------------------------------
    def critic_targets(self, r, s2, d, xi2):
        cfg = self.config
        u2, logp2, _ = self.actor.forward(s2, xi2)
        x2 = np.concatenate([s2, u2], axis=1)
        q_next = np.minimum(self.q1_t(x2)[:, 0], self.q2_t(x2)[:, 0])
        return r + cfg.gamma * (1.0 - d) * (q_next - cfg.alpha * logp2)

    def critic_loss_grads(self, batch, xi2):
        """Summed squared-error losses of both critics and their gradients."""
        s, u, r, s2, d = batch
        y = self.critic_targets(r, s2, d, xi2)
        x = np.concatenate([s, u], axis=1)
        out = []
        total = 0.0
        for q in (self.q1, self.q2):
            pred, cache = q.forward(x)
            diff = pred[:, 0] - y
            total += float(np.mean(diff * diff))
            g, _ = q.backward(cache, (2.0 / len(y)) * diff[:, None], input_grad=False)
            out.append(g)
        return total, out[0], out[1]

    def critic_update(self, batch, xi2=None) -> float:
        s = batch[0]
        if len(s) == 0:
            raise ValueError("empty batch")
        cfg = self.config
        if xi2 is None:
            xi2 = self.rng.standard_normal((len(s), self.actor.action_dim)).astype(self.dtype)
        loss, g1, g2 = self.critic_loss_grads(batch, xi2)
        adam_step(self.q1.params, g1, self.opt_q1, cfg.q_lr, cfg.betas, cfg.adam_eps)
        adam_step(self.q2.params, g2, self.opt_q2, cfg.q_lr, cfg.betas, cfg.adam_eps)
        soft_update(self.q1_t.params, self.q1.params, cfg.tau)
        soft_update(self.q2_t.params, self.q2.params, cfg.tau)
        return loss

    # actor -------------------------------------------------------------
    def actor_loss_grads(self, s, xi):
        """``mean(alpha * logp - min(Q1, Q2))`` with reparameterized samples."""
        alpha = self.config.alpha
        B = len(s)
        u, logp, aux = self.actor.forward(s, xi)
        x = np.concatenate([s, u], axis=1)
        q1, c1 = self.q1.forward(x)
        q2, c2 = self.q2.forward(x)
        use1 = q1[:, 0] <= q2[:, 0]
        qmin = np.where(use1, q1[:, 0], q2[:, 0])
        loss = float(np.mean(alpha * logp - qmin))
        # only the smaller critic carries gradient for each sample
        g_x = np.zeros_like(x)
        for net, cache, sel in ((self.q1, c1, use1), (self.q2, c2, ~use1)):
            if sel.any():
                sub = [a[sel] for a in cache]
                _, g_x[sel] = net.backward(sub, np.full((int(sel.sum()), 1), -1.0 / B, dtype=self.dtype),
                                           param_grads=False)
        g_u = g_x[:, self.actor.state_dim:]
        grads = self.actor.backward(aux, g_u, np.full(B, alpha / B, dtype=self.dtype))
        return loss, grads

    def actor_update(self, s, xi=None) -> float:
        if len(s) == 0:
            raise ValueError("empty batch")
        cfg = self.config
        if xi is None:
            xi = self.rng.standard_normal((len(s), self.actor.action_dim)).astype(self.dtype)
        loss, grads = self.actor_loss_grads(s, xi)
        adam_step(self.actor.params, grads, self.opt_actor, cfg.policy_lr, cfg.betas, cfg.adam_eps)
        return loss

    def update(self, batch) -> tuple[float, float]:
        batch = tuple(np.asarray(x, dtype=self.dtype) for x in batch)
        lc = self.critic_update(batch)
        la = self.actor_update(batch[0])
        return lc, la


# ------------------------------------------------------------------ training

@dataclass
class EpochStats:
    epoch: int
    mean_return: float
    actor_loss: float
    critic_loss: float


@dataclass
class TrainResult:
    agent: SacAgent
    curve: list[EpochStats] = field(default_factory=list)

    def curve_csv(self) -> str:
        lines = ["epoch,mean_return,actor_loss,critic_loss"]
        lines += [f"{e.epoch},{e.mean_return!r},{e.actor_loss!r},{e.critic_loss!r}" for e in self.curve]
        return "\n".join(lines) + "\n"


def _nanmean(xs) -> float:
    return float(np.mean(xs)) if xs else float("nan")


_M_TRIM_THRESHOLD, _M_TOP_PAD, _M_MMAP_THRESHOLD = -1, -2, -3


def _keep_heap_warm() -> None:
    """Stop glibc from returning batch-sized temporaries to the kernel.

    Each update allocates and frees a few dozen ~0.5 MB arrays; by default
    they are mmapped and unmapped every time, and the page faults cost about
    a third of the update. No-op where glibc is unavailable.
    """
    name = ctypes.util.find_library("c")
    if not name:
        return
    try:
        mallopt = ctypes.CDLL(name).mallopt
    except (OSError, AttributeError):
        return
    mallopt(_M_MMAP_THRESHOLD, 64 << 20)
    mallopt(_M_TRIM_THRESHOLD, 128 << 20)
    mallopt(_M_TOP_PAD, 64 << 20)


def train(env_factory, config: SacConfig = SacConfig(), seed: int = 0, log=None,
          buffer: ReplayBuffer | None = None) -> TrainResult:
    """Collect experience and update once per environment step after warmup.

    ``env_factory(seed)`` builds the environment. It must expose
    ``state_dim``, ``action_dim``, ``action_bound``, ``reset()`` and
    ``step(action) -> (state, reward, done)``. The curve's ``mean_return``
    averages the undiscounted returns of training episodes finished in
    each epoch.
    """
    _keep_heap_warm()
    rng = np.random.default_rng(seed)
    env = env_factory(int(rng.integers(2 ** 31)))
    agent = SacAgent(env.state_dim, env.action_dim, env.action_bound, config, rng)
    buf = buffer if buffer is not None else ReplayBuffer(config.buffer, env.state_dim, env.action_dim)
    result = TrainResult(agent)
    s = np.asarray(env.reset(), dtype=float)
    ep_ret = 0.0
    step = 0
    for epoch in range(config.epochs):
        returns, la, lc = [], [], []
        for _ in range(config.steps_per_epoch):
            if step < config.warmup_steps:
                a = rng.uniform(-env.action_bound, env.action_bound)
            else:
                a = agent.act(s)
            s2, r, done = env.step(a)
            s2 = np.asarray(s2, dtype=float)
            buf.push(s, a / env.action_bound, r, s2, done)
            ep_ret += r
            step += 1
            if done:
                returns.append(ep_ret)
                ep_ret = 0.0
                s = np.asarray(env.reset(), dtype=float)
            else:
                s = s2
            if step >= config.warmup_steps:
                c, a_loss = agent.update(buf.sample(config.batch, rng))
                lc.append(c)
                la.append(a_loss)
        stats = EpochStats(epoch, _nanmean(returns), _nanmean(la), _nanmean(lc))
        result.curve.append(stats)
        if log is not None:
            log(stats)
    return result


def evaluate(agent: SacAgent, env, episodes: int, deterministic: bool = True) -> float:
    """Mean undiscounted return over full episodes."""
    totals = []
    for _ in range(episodes):
        s = env.reset()
        done, total = False, 0.0
        while not done:
            s, r, done = env.step(agent.act(np.asarray(s, dtype=float), deterministic))
            total += r
        totals.append(total)
    return float(np.mean(totals))


# --------------------------------------------------------------- checkpoints

MAGIC = b"CLKSAC\x00\x01"
VERSION = 1


def save_checkpoint(agent: SacAgent, path) -> None:
    """Binary layout (little endian).

    ``MAGIC`` (8 bytes), ``u32`` version, ``u32`` header length, UTF-8 JSON
    header (config, action bounds, state/action sizes), ``u32`` network
    count, then per network ``u32`` layer count, ``u32`` sizes and its
    float64 parameters row-major in ``W0, b0, W1, b1, ...`` order.
    Networks: actor, critic 1, critic 2, target 1, target 2.
    """
    header = json.dumps({
        "config": agent.config.to_dict(),
        "state_dim": agent.actor.state_dim,
        "action_dim": agent.actor.action_dim,
        "bound": [float(b) for b in agent.bound],
    }, sort_keys=True).encode()
    nets = [agent.actor.trunk, agent.q1, agent.q2, agent.q1_t, agent.q2_t]
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", VERSION, len(header)))
        f.write(header)
        f.write(struct.pack("<I", len(nets)))
        for net in nets:
            f.write(struct.pack("<I", len(net.sizes)))
            f.write(struct.pack(f"<{len(net.sizes)}I", *net.sizes))
            for p in net.params:
                f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path) -> SacAgent:
    data = Path(path).read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    off = len(MAGIC)
    version, hlen = struct.unpack_from("<II", data, off)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    off += 8
    header = json.loads(data[off:off + hlen])
    off += hlen
    config = SacConfig.from_dict(header["config"])
    agent = SacAgent(header["state_dim"], header["action_dim"], header["bound"], config)
    (n_nets,) = struct.unpack_from("<I", data, off)
    off += 4
    nets = [agent.actor.trunk, agent.q1, agent.q2, agent.q1_t, agent.q2_t]
    if n_nets != len(nets):
        raise ValueError(f"{path}: expected {len(nets)} networks, found {n_nets}")
    for net in nets:
        (n_layers,) = struct.unpack_from("<I", data, off)
        off += 4
        sizes = list(struct.unpack_from(f"<{n_layers}I", data, off))
        off += 4 * n_layers
        if sizes != net.sizes:
            raise ValueError(f"{path}: layer sizes {sizes} do not match {net.sizes}")
        for p in net.params:
            n = p.size
            p[...] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(p.shape)
            off += 8 * n
    return agent

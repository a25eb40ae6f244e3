"""Implicit Q-Learning: expectile-regressed V, one-step Bellman Q.

Update order per step is V then Q, each against the other's live values
(no target networks, no Polyak averaging, no double-Q): the V loss sees
Q(s, a) held fixed, the Q loss regresses onto r + gamma (1 - done) V(s')
with V held fixed. Terminal transitions mask the bootstrap term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingDivergedError
from .nn import Mlp
from .optim import Adam
from .tensor import Tensor, concat


def expectile_loss(u, tau: float) -> Tensor:
    """Mean of |tau - 1(u <= 0)| u^2; tau = 0.5 is exactly half-MSE.

    The asymmetric weight is a constant of the residual's sign, so the
    gradient treats it as fixed within the step.
    """
    if not 0.0 < tau < 1.0:
        raise ValueError("tau must lie strictly inside (0, 1)")
    ut = u if isinstance(u, Tensor) else Tensor(np.asarray(u, dtype=float))
    w = np.abs(tau - (ut.data <= 0.0).astype(ut.data.dtype))
    return (ut.square() * w).mean()


@dataclass
class CriticConfig:
    tau: float = 0.7
    gamma: float = 0.99
    lr: float = 1e-4
    hidden: tuple = (256, 256, 256)
    steps: int = 20_000
    batch_size: int = 256


class Critic:
    """Q(s||a) and V(s) heads over the shared tensor engine."""

    def __init__(self, state_dim: int, action_dim: int, config: CriticConfig,
                 rng: np.random.Generator):
        if not 0.0 < config.tau < 1.0:
            raise ValueError("tau must lie strictly inside (0, 1)")
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.config = config
        self.q_net = Mlp([state_dim + action_dim, *config.hidden, 1], rng)
        self.v_net = Mlp([state_dim, *config.hidden, 1], rng)

    # -- tensor paths (differentiable) --------------------------------

    def q_tensor(self, s, a: Tensor) -> Tensor:
        s_t = s if isinstance(s, Tensor) else Tensor(np.asarray(s, dtype=float))
        return self.q_net(concat([s_t, a], axis=1))

    def v_tensor(self, s) -> Tensor:
        s_t = s if isinstance(s, Tensor) else Tensor(np.asarray(s, dtype=float))
        return self.v_net(s_t)

    # -- array evaluation ----------------------------------------------

    def q_values(self, s, a) -> np.ndarray:
        return self.q_tensor(np.asarray(s, dtype=float), Tensor(np.asarray(a, dtype=float))).data[:, 0]

    def v_values(self, s) -> np.ndarray:
        return self.v_tensor(np.asarray(s, dtype=float)).data[:, 0]

    def advantage(self, s, a) -> np.ndarray:
        """Q(s, a) - V(s), batched; ordering in a equals Q ordering at fixed s."""
        return self.q_values(s, a) - self.v_values(s)

    def parameters(self):
        return self.q_net.parameters() + self.v_net.parameters()

    def freeze(self):
        self.q_net.freeze()
        self.v_net.freeze()


def iql_step(critic: Critic, batch, opt_v: Adam, opt_q: Adam) -> tuple[float, float]:
    """One IQL update (V step, then Q step). Returns (v_loss, q_loss)."""
    s, a, r, s2, done = (np.asarray(x, dtype=float) for x in batch)
    r = r.reshape(-1, 1)
    done = done.reshape(-1, 1)

    q_fixed = critic.q_tensor(s, Tensor(a)).detach()
    opt_v.zero_grad()
    v_loss = expectile_loss(q_fixed - critic.v_tensor(s), critic.config.tau)
    v_loss.backward()
    opt_v.step()

    target = r + critic.config.gamma * (1.0 - done) * critic.v_tensor(s2).data
    opt_q.zero_grad()
    q_loss = (critic.q_tensor(s, Tensor(a)) - target).square().mean()
    q_loss.backward()
    opt_q.step()

    vl, ql = float(v_loss.data), float(q_loss.data)
    if not (np.isfinite(vl) and np.isfinite(ql)):
        raise TrainingDivergedError("IQL loss went non-finite")
    return vl, ql


def train_critic(dataset, config: CriticConfig, rng: np.random.Generator,
                 on_step=None) -> Critic:
    """Fit a critic on an offline dataset by mini-batch IQL."""
    critic = Critic(dataset.state_dim, dataset.action_dim, config, rng)
    opt_v = Adam(critic.v_net.parameters(), lr=config.lr)
    opt_q = Adam(critic.q_net.parameters(), lr=config.lr)
    n = dataset.n
    for step in range(config.steps):
        idx = rng.integers(0, n, size=min(config.batch_size, n))
        losses = iql_step(critic, (dataset.s[idx], dataset.a[idx], dataset.r[idx],
                                   dataset.s2[idx], dataset.done[idx]), opt_v, opt_q)
        if on_step is not None:
            on_step(step, losses)
    return critic

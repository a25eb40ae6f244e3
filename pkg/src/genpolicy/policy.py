"""Generative policies and the two extraction schemes.

A policy is a conditional generative model over actions given states. The
network operates on z-scored actions (normalizer fixed from the dataset at
construction); generated samples are mapped back to raw action space and
log-likelihoods carry the constant -sum(log std) correction, which cancels
inside the reverse-KL ratio when policy and behavior share the normalizer.

Training schemes:

* behavior pretraining — the plain matching loss on dataset (s, a) pairs;
* advantage-weighted matching (exponentially tilted regression toward
  high-advantage actions, exponential-clamped or softmax-over-candidates
  weights) — runs the same trainer as pretraining with a different weight
  rule, so zero temperature reproduces pretraining bit for bit;
* reverse-KL policy gradient — actions sampled through the differentiable
  solver, with the policy's log-likelihood accumulated on the same grid
  and the frozen behavior model's log-likelihood integrated back through
  its own flow; plus the importance-weighted static-sampling variant whose
  surrogate gradient is weight * bracket * grad(log pi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import TrainingDivergedError
from .likelihood import TraceMode, generate_with_log_prob, log_prob
from .matching import MatchingConfig, matching_loss
from .model import GenerativeModel
from .nn import FieldNetwork
from .optim import Adam
from .sampler import SolverSpec, generate
from .schedules import PathSchedule
from .tensor import Tensor

WEIGHT_MODES = ("exp_clamp", "softmax")


@dataclass
class PolicyConfig:
    state_dim: int = 1
    action_dim: int = 1
    hidden: tuple = (256, 256, 256)
    t_emb_width: int = 32
    t_emb_scale: float = 1.0
    activation: str = "tanh"
    parameterization: str = "velocity"
    schedule: PathSchedule = field(default_factory=PathSchedule)
    eval_solver: SolverSpec = field(default_factory=lambda: SolverSpec("euler", 32))


class GenerativePolicy:
    def __init__(self, config: PolicyConfig, rng: np.random.Generator,
                 action_mean=None, action_std=None):
        self.config = config
        net = FieldNetwork(config.action_dim, config.state_dim, list(config.hidden), rng,
                           t_emb_width=config.t_emb_width, activation=config.activation,
                           t_emb_scale=config.t_emb_scale)
        self.model = GenerativeModel(net, config.parameterization, config.schedule)
        self.action_mean = np.zeros(config.action_dim) if action_mean is None else np.asarray(action_mean, float)
        self.action_std = np.ones(config.action_dim) if action_std is None else np.asarray(action_std, float)

    # -- normalizer ------------------------------------------------------

    def set_normalizer_from(self, dataset) -> None:
        self.action_mean = dataset.a.mean(axis=0)
        self.action_std = np.maximum(dataset.a.std(axis=0), 1e-6)

    def normalize(self, a: np.ndarray) -> np.ndarray:
        return (np.asarray(a, float) - self.action_mean) / self.action_std

    def denormalize(self, z):
        if isinstance(z, Tensor):
            return z * self.action_std + self.action_mean
        return np.asarray(z) * self.action_std + self.action_mean

    @property
    def log_norm_correction(self) -> float:
        """log pi(a) = log p_z(z) - sum log std (change of variables)."""
        return float(np.log(self.action_std).sum())

    # -- inference ---------------------------------------------------------

    def sample_actions(self, states, rng: np.random.Generator,
                       solver: SolverSpec | None = None) -> np.ndarray:
        """One action per state row (the single-draw inference rule)."""
        states = np.atleast_2d(np.asarray(states, float))
        z = generate(self.model, states.shape[0], solver or self.config.eval_solver,
                     condition=states, rng=rng)
        return self.denormalize(z)

    def act(self, state, rng: np.random.Generator, solver: SolverSpec | None = None) -> np.ndarray:
        return self.sample_actions(np.atleast_2d(state), rng, solver)[0]

    def log_prob_actions(self, states, actions, solver: SolverSpec,
                         trace: TraceMode = TraceMode(), rng=None):
        """(log pi(a|s), stderr) for raw actions, numpy."""
        states = np.atleast_2d(np.asarray(states, float))
        z = self.normalize(actions)
        res = log_prob(self.model, z, solver, trace, rng, condition=states)
        return res.logp_values - self.log_norm_correction, res.stderr

    def parameters(self):
        return self.model.parameters()

    def clone(self) -> "GenerativePolicy":
        twin = object.__new__(GenerativePolicy)
        twin.config = self.config
        twin.model = self.model.clone()
        twin.action_mean = self.action_mean.copy()
        twin.action_std = self.action_std.copy()
        return twin


# -- weighting ---------------------------------------------------------------


def gmpo_weight(critic, s, a, beta: float, weight_mode: str = "exp_clamp",
                w_max: float = 100.0) -> np.ndarray:
    """Per-sample regression weights from the critic.

    Exponential mode: min(exp(beta * (Q - V)), w_max) with the per-state
    normalizer taken as 1 (intractable; the clamp bounds the scale).
    beta = 0 gives exactly 1, which is what collapses the scheme onto
    plain pretraining. Softmax mode normalizes exp(beta * Q) across the
    candidate set with max subtraction; see ``softmax_candidate_weights``.
    """
    if beta < 0:
        raise ValueError("temperature beta must be >= 0")
    if weight_mode not in WEIGHT_MODES:
        raise ValueError(f"unknown weight mode {weight_mode!r}")
    if weight_mode == "exp_clamp":
        adv = critic.advantage(s, a)
        return np.minimum(np.exp(beta * adv), w_max)
    raise ValueError("softmax weights are computed per candidate set; use softmax_candidate_weights")


def softmax_candidate_weights(critic, s, candidates, beta: float) -> np.ndarray:
    """Stable softmax of beta * Q(s, a_i) over K candidates per state.

    ``candidates`` has shape (batch, K, action_dim); returns (batch, K)
    weights summing to 1 per row (invariant to adding a constant to Q).
    """
    if beta < 0:
        raise ValueError("temperature beta must be >= 0")
    b, k, da = candidates.shape
    s_rep = np.repeat(np.atleast_2d(s), k, axis=0)
    q = critic.q_values(s_rep, candidates.reshape(b * k, da)).reshape(b, k)
    logits = beta * q
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


# -- advantage-weighted matching trainer --------------------------------------


@dataclass
class GmpoConfig:
    beta: float = 1.0
    weight_mode: str = "exp_clamp"
    w_max: float = 100.0
    k_candidates: int = 8
    matching: MatchingConfig = field(default_factory=MatchingConfig)
    steps: int = 2000
    batch_size: int = 64
    lr: float = 1e-4
    lr_schedule: tuple = ()  # (step, new_lr) pairs applied mid-run

    def __post_init__(self):
        if self.w_max <= 0:
            raise ValueError("w_max must be > 0")
        if self.weight_mode == "softmax" and self.k_candidates < 2:
            raise ValueError("softmax mode needs K >= 2 candidates")


def _run_weighted_matching(dataset, policy: GenerativePolicy, weight_fn, config: GmpoConfig,
                           rng: np.random.Generator, on_step=None) -> None:
    """Shared loop for pretraining (unit weights) and weighted regression.

    One rng stream drives batch indices and loss draws, so two runs with
    identical seeds and identical weight values are bit-identical.
    """
    opt = Adam(policy.parameters(), lr=config.lr)
    lr_changes = dict(config.lr_schedule)
    for step in range(config.steps):
        if step in lr_changes:
            opt.lr = lr_changes[step]
        idx = rng.integers(0, dataset.n, size=min(config.batch_size, dataset.n))
        s, a = dataset.s[idx], dataset.a[idx]
        w, mean_adv = weight_fn(s, a)
        opt.zero_grad()
        loss = matching_loss(policy.model, policy.config.schedule, policy.normalize(a),
                             w, rng, condition=s, config=config.matching)
        loss.backward()
        opt.step()
        val = float(loss.data)
        if not np.isfinite(val):
            raise TrainingDivergedError(f"matching loss non-finite at step {step}")
        if on_step is not None:
            on_step(step, {"loss": val, "mean_weight": float(np.mean(w)),
                           "mean_advantage": mean_adv})


def pretrain_behavior(dataset, policy: GenerativePolicy, config: GmpoConfig,
                      rng: np.random.Generator, on_step=None) -> GenerativePolicy:
    """Fit the behavior model mu by the plain matching loss on (s, a)."""
    if dataset.n == 0:
        raise ValueError("cannot pretrain on an empty dataset")

    def unit_weights(s, a):
        return np.ones(s.shape[0]), 0.0

    _run_weighted_matching(dataset, policy, unit_weights, config, rng, on_step)
    return policy


def train_gmpo(dataset, critic, policy: GenerativePolicy, config: GmpoConfig,
               rng: np.random.Generator, behavior: GenerativePolicy | None = None,
               on_step=None) -> GenerativePolicy:
    """Advantage-weighted matching regression (no pretraining required).

    Exponential mode weights dataset actions; softmax mode draws
    k_candidates actions per state from a pretrained behavior model and
    regresses onto them under softmax(beta Q) weights.
    """
    if config.weight_mode == "exp_clamp":
        def weights(s, a):
            w = gmpo_weight(critic, s, a, config.beta, "exp_clamp", config.w_max)
            return w, float(np.mean(critic.advantage(s, a)))

        _run_weighted_matching(dataset, policy, weights, config, rng, on_step)
        return policy

    if behavior is None:
        raise ValueError("softmax weight mode needs a pretrained behavior policy")
    opt = Adam(policy.parameters(), lr=config.lr)
    k = config.k_candidates
    for step in range(config.steps):
        idx = rng.integers(0, dataset.n, size=min(config.batch_size, dataset.n))
        s = dataset.s[idx]
        s_rep = np.repeat(s, k, axis=0)
        cand = behavior.sample_actions(s_rep, rng).reshape(len(idx), k, -1)
        w = softmax_candidate_weights(critic, s, cand, config.beta)
        opt.zero_grad()
        loss = matching_loss(policy.model, policy.config.schedule,
                             policy.normalize(cand.reshape(len(idx) * k, -1)),
                             w.reshape(-1), rng, condition=s_rep, config=config.matching)
        loss.backward()
        opt.step()
        if not np.isfinite(float(loss.data)):
            raise TrainingDivergedError(f"matching loss non-finite at step {step}")
        if on_step is not None:
            on_step(step, {"loss": float(loss.data), "mean_weight": float(w.mean()),
                           "mean_advantage": float(np.mean(critic.advantage(s_rep, cand.reshape(-1, cand.shape[-1]))))})
    return policy


# -- reverse-KL policy gradient ------------------------------------------------


@dataclass
class GmpgConfig:
    beta: float = 1.0
    t_train: int = 1000
    scheme: str = "euler"
    trace: TraceMode = field(default_factory=TraceMode)
    steps: int = 200
    batch_size: int = 512
    lr: float = 1e-4
    variant: str = "dynamic"  # "dynamic" | "static"

    def __post_init__(self):
        if self.t_train < 1:
            raise ValueError("t_train must be >= 1")
        if self.variant not in ("dynamic", "static"):
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def solver(self) -> SolverSpec:
        return SolverSpec(self.scheme, self.t_train)


def _check_gmpg_models(policy: GenerativePolicy, behavior: GenerativePolicy) -> None:
    if policy.model.parameterization != "velocity" or behavior.model.parameterization != "velocity":
        raise ValueError("reverse-KL training requires velocity-parameterized models "
                         "(noise heads blow up as g^2/(2 sigma) near the data endpoint)")
    if not (np.array_equal(policy.action_mean, behavior.action_mean)
            and np.array_equal(policy.action_std, behavior.action_std)):
        raise ValueError("policy and behavior must share the action normalizer")


def gmpg_per_sample(policy: GenerativePolicy, behavior: GenerativePolicy, critic, states,
                    config: GmpgConfig, rng: np.random.Generator) -> Tensor:
    """Per-sample -beta Q(s, a) + log pi(a|s) - log mu(a|s) with a ~ pi.

    The action is produced by the differentiable solver; its log-density
    accumulates on the same grid during generation, and log mu re-integrates
    the action through the frozen behavior flow. Gradients flow through the
    action into Q and both log terms, and through log pi's parameters.
    """
    _check_gmpg_models(policy, behavior)
    states = np.atleast_2d(np.asarray(states, float))
    b = states.shape[0]
    spec = config.solver
    z, logp_pi, _ = generate_with_log_prob(policy.model, b, spec, config.trace, rng,
                                           condition=states)
    a_raw = policy.denormalize(z)
    q = critic.q_tensor(states, a_raw).sum(axis=1)  # (B,1) -> (B,)
    logp_mu = log_prob(behavior.model, z, spec, config.trace, rng, condition=states).logp
    # the -sum(log std) corrections cancel between the two log terms
    return q * (-config.beta) + logp_pi - logp_mu


def gmpg_loss(policy: GenerativePolicy, behavior: GenerativePolicy, critic, states,
              config: GmpgConfig, rng: np.random.Generator) -> Tensor:
    """Batch mean of ``gmpg_per_sample``, the reverse-KL objective."""
    return gmpg_per_sample(policy, behavior, critic, states, config, rng).mean()


def gmpg_static_surrogate(policy: GenerativePolicy, behavior: GenerativePolicy, critic,
                          states, config: GmpgConfig, rng: np.random.Generator,
                          weight_mode: str = "exp_clamp", w_max: float = 100.0) -> Tensor:
    """Surrogate scalar whose gradient is the importance-weighted
    score-function estimator: w(s,a) * (-beta Q + log pi - log mu) * grad log pi
    with a drawn from the frozen behavior model."""
    _check_gmpg_models(policy, behavior)
    states = np.atleast_2d(np.asarray(states, float))
    spec = config.solver
    a_raw = behavior.sample_actions(states, rng, spec)
    z = policy.normalize(a_raw)
    logp_pi_t = log_prob(policy.model, z, spec, config.trace, rng, condition=states).logp
    logp_mu = log_prob(behavior.model, z, spec, config.trace, rng, condition=states).logp_values
    q = critic.q_values(states, a_raw)
    w = gmpo_weight(critic, states, a_raw, config.beta, weight_mode, w_max)
    bracket = -config.beta * q + logp_pi_t.data - logp_mu  # constants
    return (logp_pi_t * (w * bracket)).mean()


def train_gmpg(dataset, critic, policy: GenerativePolicy, behavior: GenerativePolicy,
               config: GmpgConfig, rng: np.random.Generator, on_step=None) -> GenerativePolicy:
    """Reverse-KL fine-tuning; the policy must start as a copy of mu."""
    _check_gmpg_models(policy, behavior)
    behavior.model.freeze()
    critic.freeze()
    opt = Adam(policy.parameters(), lr=config.lr)
    for step in range(config.steps):
        idx = rng.integers(0, dataset.n, size=min(config.batch_size, dataset.n))
        states = dataset.s[idx]
        opt.zero_grad()
        if config.variant == "dynamic":
            loss = gmpg_loss(policy, behavior, critic, states, config, rng)
        else:
            loss = gmpg_static_surrogate(policy, behavior, critic, states, config, rng)
        loss.backward()
        opt.step()
        val = float(loss.data)
        if not np.isfinite(val):
            raise TrainingDivergedError(f"policy-gradient loss non-finite at step {step}")
        if on_step is not None:
            on_step(step, {"loss": val})
    return policy

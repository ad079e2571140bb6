"""Masked DDPG with stochastic oracle guidance.

Each slot the trainer either asks the oracle for the optimal first action
(probability ``r_pg``) or takes the actor's action plus Gaussian noise in the
normalised [-1, 1] space, pushed through the action mask.  The executed (and
post-processed) action is stored normalised.  The actor update differentiates
Q(s, normalise(mask(s, denormalise(pi(s))))) through the mask.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..core import ChargerSpec, ConfigError, Episode, V2BError
from ..mask import MaskInputs, mask, mask_backward, mask_forward, post_process_soc
from ..sim import (N_FEATURES, AssignmentPolicy, NormConstants, SimState, Simulator, featurize,
                   rollout)
from .mlp import Adam, Mlp
from .reward import reward

CHECKPOINT_FORMAT = "v2b-actor/1"
SOURCE_ACTOR = 0
SOURCE_ORACLE = 1


class NumericError(V2BError):
    """Non-finite loss or parameters during training."""

    def __init__(self, message: str, diagnostics: dict):
        super().__init__(message)
        self.diagnostics = diagnostics


@dataclass
class DdpgConfig:
    gamma: float = 1.0
    lr_actor: float = 1e-5
    lr_critic: float = 1e-3
    batch_size: int = 64
    buffer_size: int = 1_000_000
    noise_std: float = 0.2
    r_pg: float = 0.5
    lambdas: tuple = (1.0, 1.0, 3.0)
    train_step: int = 5
    update_step: int = 5
    tau: float = 0.005
    hidden: tuple = (96, 96)
    max_steps: int = 5000
    eval_every: int = 0          # env steps between evaluations; 0 disables
    patience: int = 0            # evaluations without improvement; 0 disables
    seed: int = 0

    def __post_init__(self):
        self.lambdas = tuple(float(x) for x in self.lambdas)
        self.hidden = tuple(int(h) for h in self.hidden)
        positive = ("lr_actor", "lr_critic", "batch_size", "buffer_size", "train_step",
                    "update_step", "max_steps")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0.0 <= self.r_pg <= 1.0:
            raise ConfigError(f"r_pg must lie in [0, 1], got {self.r_pg}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must lie in (0, 1], got {self.tau}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError("gamma must lie in [0, 1]")
        if self.noise_std < 0 or len(self.lambdas) != 3 or min(self.lambdas) < 0:
            raise ConfigError("noise_std and lambdas must be non-negative")
        if self.eval_every < 0 or self.patience < 0:
            raise ConfigError("eval_every and patience must be non-negative")

    @classmethod
    def from_dict(cls, data: dict) -> "DdpgConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown training keys: {sorted(unknown)}")
        return cls(**data)


def normalize_action(action, c_min, c_max) -> np.ndarray:
    c_min = np.asarray(c_min, dtype=float)
    c_max = np.asarray(c_max, dtype=float)
    return 2.0 * (np.asarray(action, dtype=float) - c_min) / (c_max - c_min) - 1.0


def denormalize_action(action, c_min, c_max) -> np.ndarray:
    c_min = np.asarray(c_min, dtype=float)
    c_max = np.asarray(c_max, dtype=float)
    return c_min + (np.asarray(action, dtype=float) + 1.0) * (c_max - c_min) / 2.0


def greedy_offpeak(state: SimState) -> np.ndarray:
    """Move every plugged-in EV straight toward its requirement, as fast as allowed."""
    need_rate = state.energy_need_kwh / state.delta
    rate = np.where(need_rate > 0, np.minimum(state.c_max, need_rate),
                    np.maximum(state.c_min, need_rate))
    return np.where(state.occupied, rate, 0.0)


class ActorPolicy:
    """Trained actor as a ``SimState -> kW`` policy.

    The raw output is denormalised and masked; ``select_action`` adds SoC
    post-processing and, when ``greedy_override`` is set, hands off-peak and
    weekend slots to ``greedy_offpeak``.
    """

    name = "ddpg"

    def __init__(self, actor: Mlp, norm: NormConstants, greedy_override: bool = True):
        self.actor = actor
        self.norm = norm
        self.greedy_override = greedy_override

    def raw(self, state: SimState) -> np.ndarray:
        return denormalize_action(self.actor(featurize(state, self.norm)), state.c_min,
                                  state.c_max)

    def __call__(self, state: SimState) -> np.ndarray:
        return mask(MaskInputs.from_state(state), self.raw(state))

    @property
    def offpeak_override(self):
        return greedy_offpeak if self.greedy_override else None


class ReplayBuffer:
    """Uniform replay with batched mask inputs for both ends of a transition."""

    def __init__(self, capacity: int, n_features: int, n_actions: int):
        self.capacity = int(capacity)
        self.n_features, self.n_actions = n_features, n_actions
        self.size = 0
        self._next = 0
        self._alloc = 0
        self._data: dict = {}
        self.oracle_added = 0
        self.total_added = 0

    def _fields(self):
        f, a = self.n_features, self.n_actions
        return {"s": (f,), "a": (a,), "r": (), "s2": (f,), "done": (),
                "need": (a,), "tau": (a,), "building": (), "peak": (),
                "need2": (a,), "tau2": (a,), "building2": (), "peak2": (), "source": ()}

    def _grow(self) -> None:
        new = min(self.capacity, max(256, 2 * self._alloc))
        for name, shape in self._fields().items():
            arr = np.zeros((new,) + shape)
            if name in self._data:
                arr[:self._alloc] = self._data[name]
            self._data[name] = arr
        self._alloc = new

    def add(self, s, a, r, s2, done, inputs: MaskInputs, inputs2: MaskInputs, source) -> None:
        if self._next >= self._alloc and self._alloc < self.capacity:
            self._grow()
        i = self._next
        row = {"s": s, "a": a, "r": r, "s2": s2, "done": float(done),
               "need": inputs.energy_need_kwh, "tau": inputs.remaining_slots,
               "building": inputs.building_kw, "peak": inputs.estimated_peak_kw,
               "need2": inputs2.energy_need_kwh, "tau2": inputs2.remaining_slots,
               "building2": inputs2.building_kw, "peak2": inputs2.estimated_peak_kw,
               "source": source}
        for name, value in row.items():
            self._data[name][i] = value
        self._next = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        self.total_added += 1
        self.oracle_added += int(source == SOURCE_ORACLE)

    def __len__(self) -> int:
        return self.size

    def sample(self, batch: int, rng: np.random.Generator) -> dict:
        idx = rng.choice(self.size, size=min(batch, self.size), replace=False)
        return {name: arr[idx] for name, arr in self._data.items()}

    def oracle_fraction(self) -> float:
        """Fraction of stored transitions whose action came from the oracle."""
        if self.size == 0:
            return 0.0
        return float(self._data["source"][:self.size].mean())


def _batch_inputs(batch: dict, suffix: str, c_min, c_max, bidirectional, delta) -> MaskInputs:
    return MaskInputs(batch["need" + suffix], batch["tau" + suffix], c_max, c_min, bidirectional,
                      batch["building" + suffix], batch["peak" + suffix], delta)


@dataclass
class TrainResult:
    policy: ActorPolicy
    critic: Mlp
    log: list = field(default_factory=list)
    steps: int = 0
    oracle_fraction: float = 0.0
    stopped_early: bool = False


class DdpgTrainer:
    def __init__(self, chargers: Sequence[ChargerSpec], norm: NormConstants, config: DdpgConfig,
                 assignment: AssignmentPolicy = AssignmentPolicy()):
        self.chargers = tuple(chargers)
        self.norm = norm
        self.config = config
        self.assignment = assignment
        self.rng = np.random.default_rng(config.seed)
        n = len(self.chargers)
        self.c_min = np.array([c.p_min for c in self.chargers])
        self.c_max = np.array([c.p_max for c in self.chargers])
        self.bidirectional = np.array([c.bidirectional for c in self.chargers])
        self.actor = Mlp([N_FEATURES, *config.hidden, n], "tanh", self.rng)
        self.critic = Mlp([N_FEATURES + n, *config.hidden, 1], "linear", self.rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Adam(self.actor.params, config.lr_actor)
        self.critic_opt = Adam(self.critic.params, config.lr_critic)
        self.buffer = ReplayBuffer(min(config.buffer_size, 10 ** 7), N_FEATURES, n)
        self.steps = 0

    # -- acting -------------------------------------------------------------

    def explore(self, state: SimState) -> np.ndarray:
        a = self.actor(featurize(state, self.norm))
        a = np.clip(a + self.rng.normal(0.0, self.config.noise_std, a.shape), -1.0, 1.0)
        return mask(MaskInputs.from_state(state), denormalize_action(a, self.c_min, self.c_max))

    # -- learning -----------------------------------------------------------

    def _masked_target_action(self, batch: dict, delta: float) -> np.ndarray:
        inputs2 = _batch_inputs(batch, "2", self.c_min, self.c_max, self.bidirectional, delta)
        a2 = denormalize_action(self.actor_target(batch["s2"]), self.c_min, self.c_max)
        return normalize_action(mask(inputs2, a2), self.c_min, self.c_max)

    def update(self, delta: float) -> dict:
        cfg = self.config
        batch = self.buffer.sample(cfg.batch_size, self.rng)
        b = batch["s"].shape[0]

        a2 = self._masked_target_action(batch, delta)
        q2 = self.critic_target(np.hstack([batch["s2"], a2]))[:, 0]
        y = batch["r"] + cfg.gamma * (1.0 - batch["done"]) * q2
        q, acts = self.critic.forward(np.hstack([batch["s"], batch["a"]]), cache=True)
        err = q[:, 0] - y
        critic_loss = float(np.mean(err ** 2))
        grads, _ = self.critic.backward(acts, (2.0 / b) * err[:, None])
        self.critic_opt.step(grads)

        actor_q, actor_grads = self.actor_objective(batch, delta)
        self.actor_opt.step([-g for g in actor_grads])

        if not (math.isfinite(critic_loss) and math.isfinite(actor_q)
                and self.actor.is_finite() and self.critic.is_finite()):
            raise NumericError("non-finite value during DDPG update", {
                "step": self.steps, "critic_loss": critic_loss, "actor_q": actor_q,
                "reward_min": float(np.min(batch["r"])), "reward_max": float(np.max(batch["r"])),
                "target_min": float(np.nanmin(y)) if np.any(np.isfinite(y)) else None,
            })
        return {"critic_loss": critic_loss, "actor_q": actor_q}

    def actor_objective(self, batch: dict, delta: float):
        """Mean Q of the masked actor action and its gradient w.r.t. actor parameters."""
        n_feat = batch["s"].shape[1]
        b = batch["s"].shape[0]
        scale = (self.c_max - self.c_min) / 2.0
        inputs = _batch_inputs(batch, "", self.c_min, self.c_max, self.bidirectional, delta)
        a_norm, actor_acts = self.actor.forward(batch["s"], cache=True)
        masked, tape = mask_forward(inputs, denormalize_action(a_norm, self.c_min, self.c_max))
        m_norm = normalize_action(masked, self.c_min, self.c_max)
        q, critic_acts = self.critic.forward(np.hstack([batch["s"], m_norm]), cache=True)
        _, dq_dx = self.critic.backward(critic_acts, np.full((b, 1), 1.0 / b))
        d_masked = dq_dx[:, n_feat:] / scale
        d_raw = mask_backward(tape, d_masked) * scale
        grads, _ = self.actor.backward(actor_acts, d_raw)
        return float(q.mean()), grads

    def soft_update(self) -> None:
        self.actor_target.soft_update_from(self.actor, self.config.tau)
        self.critic_target.soft_update_from(self.critic, self.config.tau)

    # -- loop ---------------------------------------------------------------

    def run_episode(self, episode: Episode, oracle: Optional[Callable]) -> float:
        cfg = self.config
        sim = Simulator(episode, self.chargers, self.assignment)
        state = sim.reset()
        total = 0.0
        while not sim.done(state) and self.steps < cfg.max_steps:
            use_oracle = oracle is not None and self.rng.random() < cfg.r_pg
            proposal = oracle(state, sim) if use_oracle else self.explore(state)
            action = post_process_soc(state, proposal)
            r = reward(state, action, episode.tariff, cfg.lambdas)
            nxt = sim.step(state, action)
            self.buffer.add(
                featurize(state, self.norm), normalize_action(action, self.c_min, self.c_max), r,
                featurize(nxt, self.norm), sim.done(nxt), MaskInputs.from_state(state),
                MaskInputs.from_state(nxt), SOURCE_ORACLE if use_oracle else SOURCE_ACTOR)
            self.steps += 1
            total += r
            if self.steps % cfg.train_step == 0 and len(self.buffer) >= cfg.batch_size:
                self.update(episode.tariff.delta)
            if self.steps % cfg.update_step == 0:
                self.soft_update()
            state = nxt
        return total

    def policy(self, greedy_override: bool = True) -> ActorPolicy:
        return ActorPolicy(self.actor, self.norm, greedy_override)


def evaluate_weighted(policy, episodes: Sequence[Episode], chargers, weights,
                      assignment: AssignmentPolicy = AssignmentPolicy()) -> float:
    """Mean weighted bill of ``policy`` over ``episodes``."""
    return float(np.mean([rollout(ep, chargers, policy, assignment, weights, record=False)
                          .weighted(weights) for ep in episodes]))


def train(episodes: Sequence[Episode], chargers: Sequence[ChargerSpec],
          config: DdpgConfig = DdpgConfig(), oracle: Optional[Callable] = None,
          eval_episodes: Optional[Sequence[Episode]] = None,
          norm: Optional[NormConstants] = None,
          assignment: AssignmentPolicy = AssignmentPolicy(),
          greedy_override: bool = True) -> TrainResult:
    """Train an actor on ``episodes`` until ``config.max_steps`` slots have been played.

    ``oracle(state, simulator)`` supplies guidance actions; pass
    ``v2blab.oracle.lp.guidance_action`` (or ``None`` for plain DDPG).  When
    ``eval_every`` is set the actor is scored on ``eval_episodes`` (default: the
    training episodes) and the best snapshot is returned; ``patience`` turns
    that into early stopping.
    """
    if not episodes:
        raise ConfigError("no training episodes")
    norm = norm or NormConstants.from_episodes(list(episodes) + list(eval_episodes or []))
    trainer = DdpgTrainer(chargers, norm, config, assignment)
    eval_set = list(eval_episodes or episodes)
    weights = config.lambdas
    log = []
    best_bill, best_actor, stale = math.inf, None, 0
    next_eval = config.eval_every or None
    stopped = False
    episode_no = 0
    while trainer.steps < config.max_steps and not stopped:
        for k in trainer.rng.permutation(len(episodes)):
            if trainer.steps >= config.max_steps:
                break
            ep_reward = trainer.run_episode(episodes[k], oracle)
            row = {"step": trainer.steps, "episode": episode_no, "reward": ep_reward,
                   "eval_bill": None}
            episode_no += 1
            if next_eval is not None and trainer.steps >= next_eval:
                next_eval += config.eval_every
                bill = evaluate_weighted(trainer.policy(greedy_override), eval_set, chargers,
                                         weights, assignment)
                row["eval_bill"] = bill
                if bill < best_bill - 1e-9:
                    best_bill, best_actor, stale = bill, trainer.actor.copy(), 0
                else:
                    stale += 1
                    if config.patience and stale >= config.patience:
                        stopped = True
            log.append(row)
            if stopped:
                break
    actor = best_actor if best_actor is not None else trainer.actor
    return TrainResult(
        policy=ActorPolicy(actor, norm, greedy_override),
        critic=trainer.critic,
        log=log,
        steps=trainer.steps,
        oracle_fraction=trainer.buffer.oracle_fraction(),
        stopped_early=stopped,
    )


def save_checkpoint(path, policy: ActorPolicy, config: Optional[DdpgConfig] = None,
                    critic: Optional[Mlp] = None) -> None:
    data = {
        "format": CHECKPOINT_FORMAT,
        "actor": policy.actor.to_dict(),
        "norm": policy.norm.as_dict(),
        "greedy_override": policy.greedy_override,
    }
    if critic is not None:
        data["critic"] = critic.to_dict()
    if config is not None:
        data["config"] = asdict(config)
    text = json.dumps(data, sort_keys=True)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def load_checkpoint(path) -> ActorPolicy:
    with open(path) as fh:
        data = json.load(fh)
    if data.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} checkpoint")
    return ActorPolicy(Mlp.from_dict(data["actor"]), NormConstants(**data["norm"]),
                       data.get("greedy_override", True))

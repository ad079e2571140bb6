"""Finite-difference checks shared by the unit and acceptance tests."""

import numpy as np

from v2blab.core import ChargerSpec
from v2blab.mask import mask_forward
from v2blab.rl.ddpg import DdpgConfig, DdpgTrainer, _batch_inputs, denormalize_action
from v2blab.rl.mlp import Mlp
from v2blab.sim import N_FEATURES, NormConstants

FLEET = (ChargerSpec(0, -20.0, 20.0), ChargerSpec(1, -20.0, 20.0), ChargerSpec(2, 0.0, 20.0))


def _signature(trainer, batch, delta):
    """Branch pattern of every piecewise-linear unit: mask steps and ReLUs."""
    inputs = _batch_inputs(batch, "", trainer.c_min, trainer.c_max, trainer.bidirectional, delta)
    a_norm, actor_acts = trainer.actor.forward(batch["s"], cache=True)
    a = denormalize_action(a_norm, trainer.c_min, trainer.c_max)
    masked, tape = mask_forward(inputs, a)
    m_norm = 2 * (masked - trainer.c_min) / (trainer.c_max - trainer.c_min) - 1
    _, critic_acts = trainer.critic.forward(np.hstack([batch["s"], m_norm]), cache=True)
    relus = [h > 0 for h in actor_acts[1:-1] + critic_acts[1:-1]]
    return np.concatenate([tape.signature().ravel()] + [r.ravel() for r in relus])


def _random_batch(rng, n):
    tau = rng.integers(0, 10, n).astype(float)
    return {
        "s": rng.random((1, N_FEATURES)),
        "need": np.where(tau > 0, rng.uniform(-10, 30, n), 0.0)[None, :],
        "tau": tau[None, :],
        "building": np.array([rng.uniform(10, 60)]),
        "peak": np.array([rng.uniform(20, 90)]),
    }


def actor_directional_checks(n_points, seed=0, h=1e-5, floor=1e-6):
    """(analytic, finite-difference) directional derivatives of Q(s, mask(pi(s)))
    with respect to the actor parameters, at ``n_points`` smooth points.

    Points whose derivative is below ``floor`` are skipped: there the central
    difference is dominated by rounding, not by the gradient.
    """
    rng = np.random.default_rng(seed)
    norm = NormConstants(100.0, 62.0, 96, 96)
    trainer = DdpgTrainer(FLEET, norm, DdpgConfig(hidden=(16, 16), seed=seed))
    delta = 0.25
    out = []
    while len(out) < n_points:
        # re-draw both networks with large output layers so the mask sees varied actions
        trainer.actor = Mlp([N_FEATURES, 16, 16, len(FLEET)], "tanh", rng, final_scale=1.0)
        trainer.critic = Mlp([N_FEATURES + len(FLEET), 16, 16, 1], "linear", rng, final_scale=1.0)
        batch = _random_batch(rng, len(FLEET))
        _, grads = trainer.actor_objective(batch, delta)
        direction = [rng.normal(size=p.shape) for p in trainer.actor.params]
        analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, direction))
        base = _signature(trainer, batch, delta)
        values, smooth = [], True
        for sign in (1.0, -1.0):
            for p, d in zip(trainer.actor.params, direction):
                p += sign * h * d
            values.append(trainer.actor_objective(batch, delta)[0])
            smooth &= np.array_equal(_signature(trainer, batch, delta), base)
            for p, d in zip(trainer.actor.params, direction):
                p -= sign * h * d
        if smooth and abs(analytic) > floor:
            out.append((analytic, (values[0] - values[1]) / (2 * h)))
    return out


def mlp_relative_errors(seed, output="tanh", h=1e-6):
    """Relative error between backprop and central differences for every parameter."""
    rng = np.random.default_rng(seed)
    net = Mlp([5, 7, 6, 3], output, rng, final_scale=0.5)
    x = rng.normal(size=(4, 5))
    w = rng.normal(size=(4, 3))
    out, acts = net.forward(x, cache=True)
    grads, gx = net.backward(acts, w)
    errors = []
    for p, g in zip(net.params, grads):
        fd = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = float(np.sum(w * net(x)))
            p[idx] = old - h
            dn = float(np.sum(w * net(x)))
            p[idx] = old
            fd[idx] = (up - dn) / (2 * h)
        errors.append(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
    fdx = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = h
        fdx[idx] = (np.sum(w * net(x + e)) - np.sum(w * net(x - e))) / (2 * h)
    errors.append(np.linalg.norm(gx - fdx) / max(np.linalg.norm(fdx), 1e-12))
    return errors

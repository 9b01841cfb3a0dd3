"""Dynamic noise-contrastive estimation: minibatch assembly, the class
posterior, stochastic gradients over (lambda, theta, zeta), Adam updates
with per-group learning rates, the halving schedules, and joint noise
updates."""

from __future__ import annotations

import math
import pickle
import time
from dataclasses import dataclass, field

import numpy as np

from . import features as feats
from . import neural
from . import noise as noise_mod


class TrainerError(ValueError):
    pass


@dataclass
class DnceConfig:
    alpha: float = 0.25
    nu: float = 1.0
    batch_size: int = 100
    lr_lambda: float = 0.003
    lr_theta: float = 0.003
    lr_zeta: float = 0.01
    lr_noise: float = 1.0
    halving_threshold: float = 0.001  # relative dev improvement below this halves lr
    stop_ratio: float = 0.1  # stop once the lambda/theta lr falls below this fraction
    max_epochs: int = 100
    seed: int = 0
    schedule: str = "dev-halving"  # or "per-epoch-halving"
    halve_every: int = 1  # epoch stride for the per-epoch schedule
    average_tail: int = 0  # average parameter iterates over the last N steps

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise TrainerError("alpha must be in (0, 1)")
        if self.nu <= 0:
            raise TrainerError("nu must be positive")
        for name in ("lr_lambda", "lr_theta", "lr_zeta", "lr_noise"):
            if getattr(self, name) <= 0:
                raise TrainerError("%s must be positive" % name)
        if self.schedule not in ("dev-halving", "per-epoch-halving"):
            raise TrainerError("unknown schedule %r" % self.schedule)
        if self.average_tail < 0:
            raise TrainerError("average_tail must be >= 0")


def minibatch_sizes(alpha, nu, d_size):
    """|B1| = (1-alpha)/alpha |D| and |B2| = nu/alpha |D|, rounded, min 1."""
    if not 0.0 < alpha < 1.0:
        raise TrainerError("alpha must be in (0, 1)")
    if nu <= 0 or d_size < 1:
        raise TrainerError("nu must be positive and d_size >= 1")
    b1 = max(1, int(math.floor((1.0 - alpha) / alpha * d_size + 0.5)))
    b2 = max(1, int(math.floor(nu / alpha * d_size + 0.5)))
    return b1, b2


def posterior_c0(score_m, log_p_ar, nu):
    """P(C = 0 | x): model vs scaled noise, in the log domain.

    score_m is (potential - zeta_l); log_p_ar the noise word-sequence
    log-probability. The length prior cancels in the ratio, so neither
    input includes it.
    """
    delta = score_m - log_p_ar - math.log(nu)
    if delta >= 0:
        return 1.0 / (1.0 + math.exp(-delta))
    e = math.exp(delta)
    return e / (1.0 + e)


@dataclass
class GradientBundle:
    g_lambda: np.ndarray | None
    g_theta: dict | None
    g_zeta: np.ndarray


def grad_estimate(model, noise, D, B1, B2, alpha, nu) -> GradientBundle:
    """Stochastic ascent gradient on the discrimination objective.

    Sentences in D u B1 contribute +P(C=1) * g, sentences in B2
    contribute -P(C=0) * g, everything scaled by alpha/|D|, where g is
    (f(x^l), dphi/dtheta, -delta(l = k)).
    """
    if not D:
        raise TrainerError("empty data minibatch")
    mixture = list(D) + list(B1)
    sents = mixture + list(B2)
    lengths = np.array([len(s) for s in sents], dtype=np.int64)
    score_m = model.log_weight_batch(sents) - model.zeta[lengths - 1]
    log_ar = noise_mod.seq_log_prob_batch(noise, sents)
    scale = alpha / len(D)
    weights = np.empty(len(sents))
    for j in range(len(sents)):
        p0 = posterior_c0(score_m[j], log_ar[j], nu)
        if j < len(mixture):
            weights[j] = scale * (1.0 - p0)
        else:
            weights[j] = -scale * p0

    g_lambda = None
    if model.has_discrete:
        g_lambda = np.zeros(model.feature_index.n_features)
        for j, s in enumerate(sents):
            wj = weights[j]
            if wj == 0.0:
                continue
            for fid, c in feats.extract(s, model.feature_index):
                g_lambda[fid] += wj * c
    g_theta = None
    if model.has_neural:
        _, cache = neural.phi_forward_batch(sents, model.phi_params)
        g_theta = neural.phi_backward_batch(cache, weights)
    g_zeta = np.zeros(model.max_length)
    np.subtract.at(g_zeta, lengths - 1, weights)
    return GradientBundle(g_lambda, g_theta, g_zeta)


class AdamState:
    """Per-group first/second moment estimates; ascent on the objective."""

    BETA1, BETA2, EPS = 0.9, 0.999, 1e-8

    def __init__(self):
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params: dict, grads: dict, lr):
        self.t += 1
        b1, b2 = self.BETA1, self.BETA2
        corr1 = 1.0 - b1**self.t
        corr2 = 1.0 - b2**self.t
        for k, g in grads.items():
            if k not in self.m:
                self.m[k] = np.zeros_like(params[k])
                self.v[k] = np.zeros_like(params[k])
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            mhat = self.m[k] / corr1
            vhat = self.v[k] / corr2
            params[k] += lr * mhat / (np.sqrt(vhat) + self.EPS)


def adam_step(param: np.ndarray, grad: np.ndarray, lr, state: AdamState):
    """Single-array convenience wrapper around AdamState.step."""
    holder = {"p": param}
    state.step(holder, {"p": grad}, lr)
    return holder["p"]


def dev_log_likelihood(model, dev_sentences) -> float:
    """Mean per-sentence log-probability with the model's own zeta.

    A surrogate while zeta is still an estimate; used only for the
    halving schedule and for reporting.
    """
    return float(model.log_prob_batch(dev_sentences).mean())


@dataclass
class TrainState:
    epoch: int = 0
    lr_factor: float = 1.0
    best_dev: float = -math.inf
    dev_history: list = field(default_factory=list)


def _checkpoint(path, model, noise, adam_states, state, rng):
    payload = {
        "model_arrays": {
            "zeta": model.zeta,
            "lam": model.lam,
            "phi": model.phi_params,
        },
        "noise_params": noise.params,
        "adam": adam_states,
        "state": state,
        "rng_state": rng.bit_generator.state,
    }
    with open(path, "wb") as fh:
        pickle.dump(payload, fh)


def _restore(path, model, noise, rng):
    with open(path, "rb") as fh:
        payload = pickle.load(fh)
    model.zeta = payload["model_arrays"]["zeta"]
    model.lam = payload["model_arrays"]["lam"]
    model.phi_params = payload["model_arrays"]["phi"]
    noise.params = payload["noise_params"]
    rng.bit_generator.state = payload["rng_state"]
    return payload["adam"], payload["state"]


def train(
    config: DnceConfig,
    train_sentences,
    dev_sentences,
    model,
    noise,
    log_sink=None,
    checkpoint_path=None,
    resume=False,
    max_steps=None,
):
    """Run DNCE until the schedule stops it; returns the trained model.

    Per step: draw D by shuffled epoch traversal, sample B1 and B2 from
    the noise model, apply the Adam ascent updates to lambda, theta and
    zeta, then one KL step on the noise model using the same D. Per
    epoch: evaluate the dev surrogate, apply the halving schedule, and
    checkpoint if a path is given.
    """
    if not train_sentences or not dev_sentences:
        raise TrainerError("training and dev corpora must be nonempty")
    rng = np.random.default_rng(config.seed)
    adam_states = {"lambda": AdamState(), "theta": AdamState(), "zeta": AdamState()}
    state = TrainState()
    if resume:
        adam_states, state = _restore(checkpoint_path, model, noise, rng)

    n = len(train_sentences)
    steps_per_epoch = math.ceil(n / config.batch_size)
    step_count = state.epoch * steps_per_epoch
    lr0 = config.lr_theta if model.has_neural else config.lr_lambda

    # Polyak tail averaging: the stochastic iterates hover around the
    # optimum at a radius set by the learning rate; averaging the last
    # average_tail iterates shrinks that radius without freezing the run.
    budget = max_steps if max_steps is not None else config.max_epochs * steps_per_epoch
    avg_start = budget - config.average_tail
    avg_sums = {}
    avg_n = 0

    while state.epoch < config.max_epochs:
        if state.lr_factor * lr0 < config.stop_ratio * lr0:
            break
        t0 = time.time()
        order = rng.permutation(n)
        for b in range(steps_per_epoch):
            D = [train_sentences[i] for i in order[b * config.batch_size : (b + 1) * config.batch_size]]
            b1, b2 = minibatch_sizes(config.alpha, config.nu, len(D))
            drawn = noise_mod.sample(noise, b1 + b2, rng)
            B1, B2 = drawn[:b1], drawn[b1:]
            bundle = grad_estimate(model, noise, D, B1, B2, config.alpha, config.nu)
            if bundle.g_lambda is not None:
                adam_states["lambda"].step(
                    {"lam": model.lam},
                    {"lam": bundle.g_lambda},
                    config.lr_lambda * state.lr_factor,
                )
            if bundle.g_theta is not None:
                adam_states["theta"].step(
                    model.phi_params, bundle.g_theta, config.lr_theta * state.lr_factor
                )
            adam_states["zeta"].step(
                {"zeta": model.zeta}, {"zeta": bundle.g_zeta}, config.lr_zeta
            )
            noise_mod.noise_train_step(noise, D, config.lr_noise)
            step_count += 1
            if config.average_tail > 0 and step_count > avg_start:
                groups = {"zeta": model.zeta}
                if model.has_discrete:
                    groups["lam"] = model.lam
                if model.has_neural:
                    groups.update({"phi." + k: v for k, v in model.phi_params.items()})
                for key, value in groups.items():
                    if key in avg_sums:
                        avg_sums[key] += value
                    else:
                        avg_sums[key] = value.copy()
                avg_n += 1
            if max_steps is not None and step_count >= max_steps:
                break
        state.epoch += 1
        dev_ll = dev_log_likelihood(model, dev_sentences)
        state.dev_history.append(dev_ll)
        if config.schedule == "per-epoch-halving":
            if state.epoch % config.halve_every == 0:
                state.lr_factor *= 0.5
        else:
            if state.best_dev > -math.inf:
                rel = (dev_ll - state.best_dev) / abs(state.best_dev)
                if rel < config.halving_threshold:
                    state.lr_factor *= 0.5
        state.best_dev = max(state.best_dev, dev_ll)
        if log_sink is not None:
            log_sink.write(
                "%d\t%.6f\t%.6g\t%.6g\t%.6g\t%.3f\n"
                % (
                    state.epoch,
                    dev_ll,
                    config.lr_lambda * state.lr_factor,
                    config.lr_theta * state.lr_factor,
                    config.lr_zeta,
                    time.time() - t0,
                )
            )
            log_sink.flush()
        if checkpoint_path is not None:
            _checkpoint(checkpoint_path, model, noise, adam_states, state, rng)
        if max_steps is not None and step_count >= max_steps:
            break
    if avg_n > 0:
        model.zeta[:] = avg_sums["zeta"] / avg_n
        if model.has_discrete:
            model.lam[:] = avg_sums["lam"] / avg_n
        if model.has_neural:
            for k in model.phi_params:
                model.phi_params[k][:] = avg_sums["phi." + k] / avg_n
    return model, state

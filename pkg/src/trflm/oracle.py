"""Exact brute-force references for tiny configurations.

Everything here enumerates all V + V^2 + ... + V^L sentences, so a hard
guard refuses configurations past V^L = 10^7. These functions generate
the ground truth the test suite checks the fast paths against; nothing
in here is used by training itself.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from . import features as feats
from .noise import seq_log_prob_batch

ENUM_GUARD = 10**7


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class EnumSpace:
    V: int
    L: int

    def __post_init__(self):
        if self.V**self.L > ENUM_GUARD:
            raise OracleError(
                "V^L = %d exceeds the enumeration guard %d" % (self.V**self.L, ENUM_GUARD)
            )

    def sentences_of_length(self, l):
        return itertools.product(range(self.V), repeat=l)

    def all_sentences(self):
        for l in range(1, self.L + 1):
            yield from self.sentences_of_length(l)


def exact_log_z(model, space: EnumSpace) -> np.ndarray:
    """Per-length log normalizers via log-domain accumulation."""
    zeta = np.empty(space.L)
    for l in range(1, space.L + 1):
        sents = list(space.sentences_of_length(l))
        lw = model.log_weight_batch(sents)
        zeta[l - 1] = _logsumexp(lw)
    return zeta


def _logsumexp(values):
    values = np.asarray(values, dtype=np.float64)
    m = values.max()
    return float(m + np.log(np.exp(values - m).sum()))


def exact_sentence_probs(model, space: EnumSpace, zeta=None):
    """dict (sentence tuple) -> exact probability under the model."""
    if zeta is None:
        zeta = exact_log_z(model, space)
    probs = {}
    for l in range(1, space.L + 1):
        pi_l = model.prior.prob(l)
        if pi_l == 0.0:
            continue
        sents = list(space.sentences_of_length(l))
        lw = model.log_weight_batch(sents)
        p = pi_l * np.exp(lw - zeta[l - 1])
        for s, ps in zip(sents, p):
            probs[s] = float(ps)
    return probs


def exact_expectations(model, space: EnumSpace, feature_index) -> np.ndarray:
    """E_model[f] with exact normalizers, mixing over lengths by pi."""
    out = np.zeros(feature_index.n_features)
    if feature_index.n_features == 0:
        return out
    for s, p in exact_sentence_probs(model, space).items():
        for fid, c in feats.extract(s, feature_index):
            out[fid] += p * c
    return out


def empirical_expectations(sentences, feature_index) -> np.ndarray:
    out = np.zeros(feature_index.n_features)
    for s in sentences:
        for fid, c in feats.extract(s, feature_index):
            out[fid] += c
    return out / max(1, len(sentences))


def finite_diff(fn, params: np.ndarray, epsilon=1e-5) -> np.ndarray:
    """Central differences of a scalar function, coordinate by coordinate."""
    if epsilon <= 0:
        raise OracleError("epsilon must be positive")
    params = np.asarray(params, dtype=np.float64)
    grad = np.empty_like(params)
    for i in range(params.size):
        plus = params.copy()
        minus = params.copy()
        plus.flat[i] += epsilon
        minus.flat[i] -= epsilon
        grad.flat[i] = (fn(plus) - fn(minus)) / (2.0 * epsilon)
    return grad


def noise_sentence_probs(noise_model, space: EnumSpace):
    """dict sentence -> exact probability under the noise distribution."""
    probs = {}
    for l in range(1, space.L + 1):
        pi_l = noise_model.prior.prob(l)
        if pi_l == 0.0:
            continue
        sents = list(space.sentences_of_length(l))
        lp = seq_log_prob_batch(noise_model, sents)
        for s, v in zip(sents, lp):
            probs[s] = pi_l * math.exp(v)
    return probs


def exact_dnce_objective(model, noise_model, data_probs, alpha, nu, space: EnumSpace):
    """The exact discrimination objective, summing over every sentence.

    data_probs maps sentence tuples to empirical data probabilities;
    the mixture q = alpha * p_data + (1 - alpha) * p_noise.
    """
    pn = noise_sentence_probs(noise_model, space)
    J = 0.0
    for l in range(1, space.L + 1):
        pi_l = model.prior.prob(l)
        if pi_l == 0.0:
            continue
        sents = list(space.sentences_of_length(l))
        score_m = model.log_weight_batch(sents) - model.zeta[l - 1]
        seq_lp = seq_log_prob_batch(noise_model, sents)
        for s, sm, sn in zip(sents, score_m, seq_lp):
            q = alpha * data_probs.get(s, 0.0) + (1.0 - alpha) * pn[s]
            delta = sm - sn - math.log(nu)
            log_p0 = -np.logaddexp(0.0, -delta)  # log sigmoid(delta)
            log_p1 = -np.logaddexp(0.0, delta)
            J += q * log_p0 + nu * pn[s] * log_p1
    return float(J)


def exact_dnce_gradient(model, noise_model, data_probs, alpha, nu, space: EnumSpace):
    """Exact ascent gradient of the objective w.r.t. (lambda, theta, zeta).

    Returns (g_lambda, g_theta, g_zeta); entries for absent potentials
    are None. Per-sentence weights:
        + q(x) P(C=1|x)   for the mixture term
        - nu p_n(x) P(C=0|x) for the noise term
    applied to (f(x), dphi/dtheta, -delta(l)).
    """
    from . import neural
    from .trainer import posterior_c0

    pn = noise_sentence_probs(noise_model, space)
    g_lam = np.zeros(model.feature_index.n_features) if model.has_discrete else None
    g_theta = neural.zero_grads(model.phi_params) if model.has_neural else None
    g_zeta = np.zeros(space.L)
    for l in range(1, space.L + 1):
        pi_l = model.prior.prob(l)
        if pi_l == 0.0:
            continue
        sents = list(space.sentences_of_length(l))
        score_m = model.log_weight_batch(sents) - model.zeta[l - 1]
        seq_lp = seq_log_prob_batch(noise_model, sents)
        weights = np.empty(len(sents))
        for j, s in enumerate(sents):
            p0 = posterior_c0(score_m[j], seq_lp[j], nu)
            q = alpha * data_probs.get(s, 0.0) + (1.0 - alpha) * pn[s]
            weights[j] = q * (1.0 - p0) - nu * pn[s] * p0
        if model.has_discrete:
            for j, s in enumerate(sents):
                for fid, c in feats.extract(s, model.feature_index):
                    g_lam[fid] += weights[j] * c
        if model.has_neural:
            _, cache = neural.phi_forward_batch(sents, model.phi_params)
            for k, g in neural.phi_backward_batch(cache, weights).items():
                g_theta[k] += g
        g_zeta[l - 1] -= weights.sum()
    return g_lam, g_theta, g_zeta

"""The trans-dimensional random field model: per-length globally normalized
sentence distributions sharing a linear discrete-feature potential and a
nonlinear recurrent potential.

log p(l, x^l) = log pi_l + lambda^T f(x^l) + phi(x^l; theta) - zeta_l

Either potential may be absent: discrete-only and neural-only models are
the same type with one part disabled.
"""

from __future__ import annotations

import math

import numpy as np

from . import features as feats
from . import neural
from .container import read_container, write_container
from .corpus import ClassMap, CorpusError, LengthPrior, Vocabulary


class ModelError(ValueError):
    pass


def zeta_init(V, L) -> np.ndarray:
    """zeta_l = l * log V: exact for the all-zero-potential model."""
    if V < 1:
        raise ModelError("V must be >= 1")
    return np.arange(1, L + 1, dtype=np.float64) * math.log(V)


class TrfModel:
    def __init__(
        self,
        vocab: Vocabulary,
        prior: LengthPrior,
        zeta: np.ndarray,
        feature_index=None,
        lam=None,
        phi_params=None,
        class_map: ClassMap | None = None,
        template_spec: str = "",
    ):
        self.vocab = vocab
        self.prior = prior
        self.zeta = np.asarray(zeta, dtype=np.float64)
        self.feature_index = feature_index
        self.lam = None if lam is None else np.asarray(lam, dtype=np.float64)
        self.phi_params = phi_params
        self.class_map = class_map
        self.template_spec = template_spec
        if len(self.zeta) != prior.max_length:
            raise ModelError("zeta length != length-prior length")
        if feature_index is not None and lam is not None:
            if len(self.lam) != feature_index.n_features:
                raise ModelError("lambda dimension != feature count")

    @property
    def max_length(self):
        return self.prior.max_length

    @property
    def has_discrete(self):
        return self.feature_index is not None and self.lam is not None

    @property
    def has_neural(self):
        return self.phi_params is not None

    def log_weight(self, sentence) -> float:
        """Unnormalized potential lambda^T f + phi."""
        return float(self.log_weight_batch([tuple(sentence)])[0])

    def log_weight_batch(self, sentences) -> np.ndarray:
        vals = np.zeros(len(sentences))
        if self.has_discrete:
            vals += np.array(
                [feats.linear_potential(s, self.feature_index, self.lam) for s in sentences]
            )
        if self.has_neural:
            phis, _ = neural.phi_forward_batch(sentences, self.phi_params)
            vals += phis
        return vals

    def log_prob(self, sentence) -> float:
        l = len(sentence)
        return self.prior.log_prob(l) + self.log_weight(sentence) - self.zeta[l - 1]

    def log_prob_batch(self, sentences) -> np.ndarray:
        lengths = np.array([len(s) for s in sentences], dtype=np.int64)
        if (lengths < 1).any() or (lengths > self.max_length).any():
            raise CorpusError("sentence length outside 1..L")
        priors = self.prior.probs[lengths - 1]
        if (priors <= 0).any():
            bad = sorted(set(int(l) for l in lengths[priors <= 0]))
            raise CorpusError("lengths with zero prior probability: %s" % bad)
        return np.log(priors) + self.log_weight_batch(sentences) - self.zeta[lengths - 1]

    def save(self, path):
        manifest = {
            "kind": "trf-model",
            "vocab": self.vocab.words,
            "unk_token": self.vocab.unk_token,
            "template_spec": self.template_spec,
            "has_discrete": self.has_discrete,
            "has_neural": self.has_neural,
            "n_layers": neural.n_layers_of(self.phi_params) if self.has_neural else 0,
            "feature_keys": (
                [[tid, list(vals)] for tid, vals in self.feature_index.keys]
                if self.has_discrete
                else None
            ),
            "templates": (
                [[t.source, list(t.offsets)] for t in self.feature_index.template_set.templates]
                if self.has_discrete
                else None
            ),
            "max_order": (
                self.feature_index.template_set.max_order if self.has_discrete else 0
            ),
            "class_map": (
                None if self.class_map is None else [int(c) for c in self.class_map.word_to_class]
            ),
            "n_classes": None if self.class_map is None else self.class_map.n_classes,
        }
        arrays = {"zeta": self.zeta, "pi": self.prior.probs}
        if self.has_discrete:
            arrays["lam"] = self.lam
        if self.has_neural:
            for k, v in self.phi_params.items():
                arrays["phi." + k] = v
        write_container(path, manifest, arrays)

    @classmethod
    def load(cls, path) -> "TrfModel":
        manifest, arrays = read_container(path)
        if manifest.get("kind") != "trf-model":
            raise ModelError("%s is not a model file (kind=%r)" % (path, manifest.get("kind")))
        vocab = Vocabulary(manifest["vocab"], unk_token=manifest["unk_token"])
        prior = LengthPrior(arrays["pi"])
        class_map = None
        if manifest["class_map"] is not None:
            class_map = ClassMap(
                np.array(manifest["class_map"], dtype=np.int64), manifest["n_classes"]
            )
        feature_index = None
        lam = None
        if manifest["has_discrete"]:
            templates = [
                feats.Template(src, tuple(offs)) for src, offs in manifest["templates"]
            ]
            tset = feats.TemplateSet(templates, manifest["max_order"])
            keys = [(tid, tuple(vals)) for tid, vals in manifest["feature_keys"]]
            feature_index = feats.FeatureIndex(tset, keys, class_map)
            lam = arrays["lam"]
        phi_params = None
        if manifest["has_neural"]:
            phi_params = {
                k[len("phi."):]: v for k, v in arrays.items() if k.startswith("phi.")
            }
        return cls(
            vocab,
            prior,
            arrays["zeta"],
            feature_index=feature_index,
            lam=lam,
            phi_params=phi_params,
            class_map=class_map,
            template_spec=manifest["template_spec"],
        )


def save_noise_model(model, vocab: Vocabulary, path):
    """Noise-model sidecar file in the same container format."""
    manifest = {
        "kind": "noise-model",
        "vocab": vocab.words,
        "unk_token": vocab.unk_token,
        "V": model.V,
    }
    arrays = {"pi": model.prior.probs}
    for k, v in model.params.items():
        arrays["mu." + k] = v
    write_container(path, manifest, arrays)


def load_noise_model(path):
    from .noise import NoiseModel

    manifest, arrays = read_container(path)
    if manifest.get("kind") != "noise-model":
        raise ModelError("%s is not a noise-model file" % path)
    params = {k[len("mu."):]: v for k, v in arrays.items() if k.startswith("mu.")}
    vocab = Vocabulary(manifest["vocab"], unk_token=manifest["unk_token"])
    return NoiseModel(params, LengthPrior(arrays["pi"]), manifest["V"]), vocab

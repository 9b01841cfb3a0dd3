"""Discrete feature templates, the indexed feature table, and the linear potential."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .corpus import ClassMap


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class Template:
    source: str  # "word" or "class"
    offsets: tuple  # relative positions observed; (0,1,2) = contiguous trigram

    @property
    def order(self):
        return len(self.offsets)

    @property
    def span(self):
        return self.offsets[-1] + 1


@dataclass
class TemplateSet:
    templates: list
    max_order: int


_SKIP_BIGRAM_GAPS = (1, 2, 3)
_SKIP_TRIGRAM_GAPS = (1, 2)


def compile_templates(spec: str, class_map_present=False, max_order=5) -> TemplateSet:
    """Build templates from a spec string like "w+c" or "w+c+ws+cs:5".

    "w"/"c": contiguous word/class n-grams of orders 1..max_order.
    "ws"/"cs": skip bigrams (x_i, x_{i+k+1}) for gaps k in 1..3 and skip
    trigrams (x_i, x_{i+1}, x_{i+k+2}) for gaps k in 1..2.
    """
    if ":" in spec:
        spec, order_str = spec.rsplit(":", 1)
        max_order = int(order_str)
    if max_order < 1:
        raise FeatureError("max order must be >= 1")
    parts = spec.split("+") if spec else []
    known = {"w", "c", "ws", "cs"}
    for p in parts:
        if p not in known:
            raise FeatureError("unknown feature type %r" % p)
        if p in ("c", "cs") and not class_map_present:
            raise FeatureError("feature type %r requires a class map" % p)
    templates = []
    for p in parts:
        source = "word" if p in ("w", "ws") else "class"
        if p in ("w", "c"):
            for n in range(1, max_order + 1):
                templates.append(Template(source, tuple(range(n))))
        else:
            for k in _SKIP_BIGRAM_GAPS:
                templates.append(Template(source, (0, k + 1)))
            for k in _SKIP_TRIGRAM_GAPS:
                templates.append(Template(source, (0, 1, k + 2)))
    if len(set(templates)) != len(templates):
        raise FeatureError("duplicate templates in spec %r" % spec)
    return TemplateSet(templates, max_order)


def parse_cutoffs(cutoff_str: str):
    """"00225" -> [0, 0, 2, 2, 5]: order-n features kept iff count > digit n."""
    if not cutoff_str.isdigit():
        raise FeatureError("cutoff string must be digits, got %r" % cutoff_str)
    return [int(c) for c in cutoff_str]


class FeatureIndex:
    """Compiled (template, value-tuple) -> dense index map.

    Keys surviving the per-order count cutoffs are indexed in (template
    id, value tuple) order, so the layout is independent of corpus
    traversal order.
    """

    def __init__(self, template_set: TemplateSet, keys, class_map: ClassMap | None):
        self.template_set = template_set
        self.class_map = class_map
        self.keys = list(keys)  # list of (template_id, value_tuple)
        self.key_to_id = {k: i for i, k in enumerate(self.keys)}

    @property
    def n_features(self):
        return len(self.keys)

    def _values(self, sentence, template: Template):
        """Yield the value tuple of each in-bounds placement."""
        if template.source == "class":
            seq = [self.class_of(w) for w in sentence]
        else:
            seq = sentence
        span = template.span
        offs = template.offsets
        for start in range(len(seq) - span + 1):
            yield tuple(seq[start + o] for o in offs)

    def class_of(self, word_id):
        if self.class_map is None:
            raise FeatureError("class features requested but no class map present")
        return self.class_map.class_of(word_id)


def build_feature_index(
    sentences, template_set: TemplateSet, cutoffs, class_map=None
) -> FeatureIndex:
    """Count every template placement over the corpus and keep keys with
    count strictly greater than the cutoff for their order."""
    if isinstance(cutoffs, str):
        cutoffs = parse_cutoffs(cutoffs)
    if len(cutoffs) < template_set.max_order:
        raise FeatureError(
            "need %d cutoffs, got %d" % (template_set.max_order, len(cutoffs))
        )
    needs_classes = any(t.source == "class" for t in template_set.templates)
    if needs_classes and class_map is None:
        raise FeatureError("templates use class features but no class map given")
    scratch = FeatureIndex(template_set, [], class_map)
    counts = Counter()
    for s in sentences:
        for tid, template in enumerate(template_set.templates):
            for values in scratch._values(s, template):
                counts[(tid, values)] += 1
    keys = [
        key
        for key, c in counts.items()
        if c > cutoffs[template_set.templates[key[0]].order - 1]
    ]
    keys.sort()
    return FeatureIndex(template_set, keys, class_map)


def extract(sentence, index: FeatureIndex):
    """Sparse feature vector f(x^l) as (feature id, count) pairs, ids increasing."""
    counts = Counter()
    for tid, template in enumerate(index.template_set.templates):
        for values in index._values(sentence, template):
            fid = index.key_to_id.get((tid, values))
            if fid is not None:
                counts[fid] += 1
    return sorted(counts.items())


def feature_counts_dense(sentence, index: FeatureIndex) -> np.ndarray:
    out = np.zeros(index.n_features, dtype=np.float64)
    for fid, c in extract(sentence, index):
        out[fid] = c
    return out


def linear_potential(sentence, index: FeatureIndex, lam: np.ndarray) -> float:
    """lambda^T f(x^l) over the sparse extraction."""
    if len(lam) != index.n_features:
        raise FeatureError(
            "lambda has %d entries, feature index has %d" % (len(lam), index.n_features)
        )
    return float(sum(c * lam[fid] for fid, c in extract(sentence, index)))

"""Generate the bundled synthetic corpus under data/.

Sentences come from a topic-conditioned class bigram process: each
sentence draws one of 6 topics; a topic reweights which of the 40 word
classes are available, and adjacent classes follow a sparse transition
matrix. Words are emitted from their class with a mildly skewed
distribution. Local class transitions give n-gram features something to
learn; the sentence-wide topic coherence is invisible to bigrams and
rewards a recurrent potential.

Fully deterministic (fixed seed); rerunning reproduces data/train.txt and
data/dev.txt byte for byte.
"""

import pathlib

import numpy as np

SEED = 20240811
N_CLASSES = 40
N_TOPICS = 6
VOCAB = 1999  # distinct surface words; CLI vocab of 2000 includes <unk>
TRAIN_TOKENS = 100_000
DEV_TOKENS = 10_000
MIN_LEN, MAX_LEN = 5, 14


def _zipf_probs(n, s=1.0):
    w = 1.0 / np.arange(1, n + 1) ** s
    return w / w.sum()


def build_generator(rng):
    words = ["w%04d" % i for i in range(VOCAB)]
    class_of = rng.integers(0, N_CLASSES, size=VOCAB)
    # guarantee every class is nonempty
    class_of[:N_CLASSES] = np.arange(N_CLASSES)
    members = [np.flatnonzero(class_of == c) for c in range(N_CLASSES)]
    emit = []
    for m in members:
        p = _zipf_probs(len(m), s=0.6)
        emit.append((m, p / p.sum()))

    # sparse class-transition matrix: each class prefers a handful of successors
    trans = np.full((N_CLASSES, N_CLASSES), 0.02)
    for c in range(N_CLASSES):
        favored = rng.choice(N_CLASSES, size=6, replace=False)
        trans[c, favored] += rng.dirichlet(np.ones(6)) * 8.0
    trans /= trans.sum(axis=1, keepdims=True)

    # topics: each strongly prefers ~12 classes for the whole sentence
    topic_w = np.full((N_TOPICS, N_CLASSES), 0.05)
    for t in range(N_TOPICS):
        core = rng.choice(N_CLASSES, size=12, replace=False)
        topic_w[t, core] = 1.0
    start = rng.dirichlet(np.ones(N_CLASSES) * 0.5)
    return words, emit, trans, topic_w, start


def sample_sentence(rng, emit, trans, topic_w, start):
    length = int(rng.integers(MIN_LEN, MAX_LEN + 1))
    topic = int(rng.integers(N_TOPICS))
    w = topic_w[topic]
    p0 = start * w
    c = rng.choice(N_CLASSES, p=p0 / p0.sum())
    out = []
    for _ in range(length):
        m, p = emit[c]
        out.append(int(m[rng.choice(len(m), p=p)]))
        pt = trans[c] * w
        c = rng.choice(N_CLASSES, p=pt / pt.sum())
    return out


def write_split(path, rng, words, emit, trans, topic_w, start, n_tokens):
    lines = []
    total = 0
    while total < n_tokens:
        ids = sample_sentence(rng, emit, trans, topic_w, start)
        lines.append(" ".join(words[i] for i in ids))
        total += len(ids)
    path.write_text("\n".join(lines) + "\n")
    return len(lines), total


def main():
    rng = np.random.default_rng(SEED)
    words, emit, trans, topic_w, start = build_generator(rng)
    data = pathlib.Path(__file__).resolve().parent.parent / "data"
    data.mkdir(exist_ok=True)
    n, t = write_split(
        data / "train.txt", rng, words, emit, trans, topic_w, start, TRAIN_TOKENS
    )
    print("train: %d sentences, %d tokens" % (n, t))
    n, t = write_split(
        data / "dev.txt", rng, words, emit, trans, topic_w, start, DEV_TOKENS
    )
    print("dev: %d sentences, %d tokens" % (n, t))


if __name__ == "__main__":
    main()

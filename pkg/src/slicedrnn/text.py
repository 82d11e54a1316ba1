"""Corpus ingestion: tokenization, vocabulary, padding/truncation to a
fixed length, embedding initialization, 80/10/10 splits, and a seeded
synthetic keyword corpus for desk-scale training tests.

Reserved ids: 0 is padding, 1 is the unknown word. Vocabularies are
always built from the training split only, so validation/test words
outside it map to the unknown id rather than leaking into the index.
Sequences are padded with zeros at the end and truncated from the tail
(the first tokens are kept).
"""

import string
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParseError
from .tensor import SeededRng

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_STRIP = string.punctuation

# word pools for the synthetic corpus; class labels are decided by which
# keyword group dominates, so a simple keyword counter is Bayes-optimal
FILLER_WORDS = (
    "the a an and or but if then while place time people thing way day food "
    "service staff order table menu price visit spot location city street "
    "again really quite just some very that this with from they were was is "
    "be has had have went came asked told said near by on in at of for"
).split()
POSITIVE_WORDS = "superb delicious wonderful friendly amazing perfect lovely great".split()
NEGATIVE_WORDS = "terrible awful rude bland disappointing dirty slow horrible".split()


def tokenize(text: str) -> list:
    """Lowercase, split on whitespace, strip punctuation off token ends."""
    tokens = []
    for raw in text.lower().split():
        word = raw.strip(_STRIP)
        if word:
            tokens.append(word)
    return tokens


@dataclass
class Vocabulary:
    """Dense word index: ids 0/1 reserved, 2.. assigned by frequency rank."""

    word_to_id: dict
    id_to_word: list
    frequencies: list

    @property
    def size(self) -> int:
        return len(self.id_to_word)

    def encode_word(self, word: str) -> int:
        return self.word_to_id.get(word, UNK_ID)

    def decode(self, ids) -> list:
        return [self.id_to_word[int(i)] for i in ids]


def build_vocab(token_docs, cap: int = 30_000) -> Vocabulary:
    """Top-cap words by frequency; equal counts break ties lexicographically."""
    counts = Counter()
    for tokens in token_docs:
        counts.update(tokens)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty training split")
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))[:cap]
    id_to_word = [PAD_TOKEN, UNK_TOKEN] + [word for word, _ in ranked]
    frequencies = [0, 0] + [count for _, count in ranked]
    word_to_id = {word: i for i, word in enumerate(id_to_word)}
    return Vocabulary(word_to_id, id_to_word, frequencies)


def encode_pad(tokens, vocab: Vocabulary, T: int) -> np.ndarray:
    """Length-T id sequence: unknowns -> 1, zero-padded at the end,
    truncated to the first T tokens."""
    if T < 1:
        raise ValueError(f"target length must be >= 1, got {T}")
    ids = np.full(T, PAD_ID, dtype=np.int64)
    for i, token in enumerate(tokens[:T]):
        ids[i] = vocab.encode_word(token)
    return ids


@dataclass
class Document:
    label: int
    ids: np.ndarray


@dataclass
class Corpus:
    train: list
    val: list
    test: list

    @property
    def classes(self) -> int:
        return 1 + max(doc.label for split in (self.train, self.val, self.test) for doc in split)


def split_counts(total: int) -> tuple:
    """80/10/10 split sizes: floor for val/test, remainder to train."""
    val = total // 10
    test = total // 10
    return total - val - test, val, test


def build_corpus(labeled_texts, T: int, cap: int = 30_000) -> tuple:
    """Split (in given order), build the vocabulary from train only,
    encode everything to length T. Returns (corpus, vocabulary)."""
    token_docs = [(label, tokenize(text)) for label, text in labeled_texts]
    n_train, n_val, _ = split_counts(len(token_docs))
    train_part = token_docs[:n_train]
    val_part = token_docs[n_train : n_train + n_val]
    test_part = token_docs[n_train + n_val :]
    vocab = build_vocab((tokens for _, tokens in train_part), cap)

    def encode_split(part):
        return [Document(label, encode_pad(tokens, vocab, T)) for label, tokens in part]

    corpus = Corpus(encode_split(train_part), encode_split(val_part), encode_split(test_part))
    return corpus, vocab


def encode_with_vocab(labeled_texts, vocab: Vocabulary, T: int) -> Corpus:
    """Split and encode with an existing vocabulary (evaluation path:
    the index must come from the training run, never be rebuilt)."""
    n_train, n_val, _ = split_counts(len(labeled_texts))

    def encode_part(part):
        return [Document(label, encode_pad(tokenize(text), vocab, T)) for label, text in part]

    return Corpus(
        encode_part(labeled_texts[:n_train]),
        encode_part(labeled_texts[n_train : n_train + n_val]),
        encode_part(labeled_texts[n_train + n_val :]),
    )


def init_embeddings(vocab_size: int, dim: int, rng: SeededRng) -> np.ndarray:
    """Uniform(-0.05, 0.05) rows, padding row forced to zero."""
    embed = rng.uniform(-0.05, 0.05, (vocab_size, dim))
    embed[PAD_ID] = 0.0
    return embed


def load_word_vectors(path, vocab: Vocabulary, dim: int, rng: SeededRng) -> np.ndarray:
    """Embedding matrix initialized from a `word v1 .. v_dim` text file.

    Words found in the file get their file rows verbatim; missing words
    and the unknown row are drawn uniform(-0.05, 0.05) from rng in
    ascending id order; the padding row is zero.
    """
    file_rows = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.split()
            word = fields[0]
            if len(fields) - 1 != dim:
                raise DimensionError(
                    f"line {lineno}: expected {dim} vector components, got {len(fields) - 1}"
                )
            try:
                values = [float(v) for v in fields[1:]]
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if word in vocab.word_to_id:
                file_rows[vocab.word_to_id[word]] = np.array(values)
    embed = np.empty((vocab.size, dim))
    embed[PAD_ID] = 0.0
    for word_id in range(1, vocab.size):
        if word_id in file_rows:
            embed[word_id] = file_rows[word_id]
        else:
            embed[word_id] = rng.uniform(-0.05, 0.05, (dim,))
    return embed


def _class_keywords(classes: int) -> list:
    pools = [list(POSITIVE_WORDS), list(NEGATIVE_WORDS)]
    for c in range(2, classes):
        pools.append([f"flavor{c}mark{i}" for i in range(8)])
    return pools[:classes]


def keyword_label_oracle(tokens, classes: int = 2) -> int:
    """Count planted keywords per class and pick the majority; this is
    the Bayes-optimal rule on the synthetic corpus."""
    pools = [set(pool) for pool in _class_keywords(classes)]
    counts = [sum(token in pool for token in tokens) for pool in pools]
    return int(np.argmax(counts))


def toy_labeled_texts(seed: int, docs: int = 2000, T: int = 64, classes: int = 2) -> list:
    """Raw (label, text) pairs of the synthetic review corpus.

    Labels alternate so every split is balanced. Each document is exactly
    T words: 4-10 keywords of its class, at least two fewer off-class
    keywords, and shared filler elsewhere, so the keyword-count rule is
    always right while both network arms see live tokens at every step
    (a padding tail would starve the plain sequential baseline of signal
    until its gates learn to remember).
    """
    if docs < 10:
        raise ValueError(f"need at least 10 documents, got {docs}")
    if T < 16:
        raise ValueError(f"toy documents need T >= 16, got {T}")
    rng = SeededRng(seed)
    pools = _class_keywords(classes)
    labeled = []
    for i in range(docs):
        label = i % classes
        own = 4 + rng.integer(7)  # 4..10 keywords of the true class
        other = rng.integer(max(1, own - 1))  # at most own - 2 confounders
        tokens = [pools[label][rng.integer(len(pools[label]))] for _ in range(own)]
        wrong = (label + 1 + rng.integer(classes - 1)) % classes if classes > 1 else label
        tokens += [pools[wrong][rng.integer(len(pools[wrong]))] for _ in range(other)]
        tokens += [FILLER_WORDS[rng.integer(len(FILLER_WORDS))] for _ in range(T - len(tokens))]
        order = rng.permutation(len(tokens))
        labeled.append((label, " ".join(tokens[i] for i in order)))
    return labeled


def make_toy_corpus(seed: int, docs: int = 2000, T: int = 64, classes: int = 2) -> tuple:
    """Seeded synthetic review corpus; returns (corpus, vocabulary)."""
    return build_corpus(toy_labeled_texts(seed, docs, T, classes), T)


def dump_vocab(vocab: Vocabulary) -> str:
    """Tab-separated `id word frequency` lines, one per vocabulary entry."""
    return "\n".join(
        f"{i}\t{word}\t{freq}"
        for i, (word, freq) in enumerate(zip(vocab.id_to_word, vocab.frequencies))
    )


def save_vocab(vocab: Vocabulary, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_vocab(vocab) + "\n")


def load_vocab(path) -> Vocabulary:
    id_to_word, frequencies = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t")
            if len(fields) != 3:
                raise ParseError(f"line {lineno}: expected `id\\tword\\tfrequency`")
            try:
                word_id, freq = int(fields[0]), int(fields[2])
            except ValueError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
            if word_id != len(id_to_word):
                raise ParseError(f"line {lineno}: ids must be dense and ascending")
            id_to_word.append(fields[1])
            frequencies.append(freq)
    word_to_id = {word: i for i, word in enumerate(id_to_word)}
    return Vocabulary(word_to_id, id_to_word, frequencies)


def read_tsv(path) -> list:
    """`label<TAB>text` per line; returns [(label, text)] preserving order."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            fields = line.rstrip("\n").split("\t", 1)
            if len(fields) != 2:
                raise ParseError(f"line {lineno}: expected `label<TAB>text`")
            try:
                label = int(fields[0])
            except ValueError:
                raise ParseError(f"line {lineno}: label {fields[0]!r} is not an integer") from None
            if label < 0:
                raise ParseError(f"line {lineno}: label must be >= 0")
            pairs.append((label, fields[1]))
    return pairs

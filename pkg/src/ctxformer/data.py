"""Synthetic parallel corpus with deterministic POS/NER tags, plus the
word-level vocabulary, a small byte-pair-encoding trainer, and
equal-length batching.

The source language follows determiner-adjective-noun-verb patterns with
named-entity slots. The target language is a deterministic token-level
mapping of the source with one reordering rule: the verb moves to the end
of the sentence. POS tags are the syntactic slot of each token and NER
tags come from the entity lexicon, so both auxiliary tasks have exact
ground truth and translation quality can be scored by exact match.
"""

from __future__ import annotations

import collections
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
RESERVED_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")
IGNORE_ID = -1  # cross-entropy skip marker for positions without a label

POS_TAGS = ("ADJ", "ADV", "DET", "NOUN", "PROPN", "VERB")
NER_TAGS = ("LOC", "O", "PER")

# -- source lexicon, one syntactic slot per word --------------------------

DETERMINERS = ("the", "a", "every")
ADJECTIVES = ("red", "big", "old", "tiny", "green", "shiny", "quiet", "brave")
NOUNS = ("fox", "dog", "river", "stone", "bird", "tree", "house", "cloud")
VERBS = ("sees", "likes", "follows", "finds", "guards", "paints", "chases", "greets")
ADVERBS = ("quickly", "slowly", "quietly", "bravely")
PERSONS = ("anna", "boris", "clara", "dmitri", "elena", "felix")
LOCATIONS = ("oslo", "cairo", "lima", "quito", "minsk", "tunis")


def _build_lexicon():
    lex = {}
    for w in DETERMINERS:
        lex[w] = ("DET", "O")
    for w in ADJECTIVES:
        lex[w] = ("ADJ", "O")
    for w in NOUNS:
        lex[w] = ("NOUN", "O")
    for w in VERBS:
        lex[w] = ("VERB", "O")
    for w in ADVERBS:
        lex[w] = ("ADV", "O")
    for w in PERSONS:
        lex[w] = ("PROPN", "PER")
    for w in LOCATIONS:
        lex[w] = ("PROPN", "LOC")
    return lex


SOURCE_LEXICON = _build_lexicon()

# Target words are the reversed source words with an "-o" suffix, which
# keeps the mapping bijective and the vocabularies disjoint.
TARGET_OF = {w: w[::-1] + "o" for w in SOURCE_LEXICON}
assert len(set(TARGET_OF.values())) == len(TARGET_OF), "target mapping must be bijective"


# ------------------------------------------------------------- vocabulary


class Vocabulary:
    """Token <-> id bijection with fixed reserved ids 0..3."""

    def __init__(self, tokens):
        self.tokens = list(RESERVED_TOKENS) + sorted(set(tokens) - set(RESERVED_TOKENS))
        self.index = {t: i for i, t in enumerate(self.tokens)}
        if len(self.index) != len(self.tokens):
            raise DataError("vocabulary tokens are not unique")

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.index

    def encode(self, words) -> list[int]:
        return [self.index.get(w, UNK_ID) for w in words]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]


def source_vocabulary() -> Vocabulary:
    return Vocabulary(SOURCE_LEXICON)


def target_vocabulary() -> Vocabulary:
    return Vocabulary(TARGET_OF.values())


def vocab_from_corpus(token_lines) -> Vocabulary:
    seen = set()
    for line in token_lines:
        seen.update(line)
    return Vocabulary(seen)


# ------------------------------------------------------------ tagged pairs


@dataclass
class TaggedPair:
    src: list[int]
    tgt: list[int]
    pos_tags: list[int]
    ner_tags: list[int]

    def __post_init__(self):
        if len(self.pos_tags) != len(self.src) or len(self.ner_tags) != len(self.src):
            raise DataError(
                f"tag sequences must match source length {len(self.src)}, got "
                f"pos={len(self.pos_tags)} ner={len(self.ner_tags)}"
            )
        if not self.src or not self.tgt:
            raise DataError("pairs must be nonempty on both sides")


def translate_tokens(src_words) -> list[str]:
    """Deterministic reference translation: map every token, verb to the end."""
    mapped, verbs = [], []
    for w in src_words:
        if w not in SOURCE_LEXICON:
            raise DataError(f"word {w!r} is not in the source lexicon")
        if SOURCE_LEXICON[w][0] == "VERB":
            verbs.append(TARGET_OF[w])
        else:
            mapped.append(TARGET_OF[w])
    return mapped + verbs


def _sample_noun_phrase(rng):
    words = [DETERMINERS[rng.integers(len(DETERMINERS))]]
    if rng.random() < 0.55:
        words.append(ADJECTIVES[rng.integers(len(ADJECTIVES))])
    roll = rng.random()
    if roll < 0.5:
        words.append(NOUNS[rng.integers(len(NOUNS))])
    elif roll < 0.75:
        words.append(PERSONS[rng.integers(len(PERSONS))])
    else:
        words.append(LOCATIONS[rng.integers(len(LOCATIONS))])
    return words


def sample_sentence(rng) -> list[str]:
    words = _sample_noun_phrase(rng)
    words.append(VERBS[rng.integers(len(VERBS))])
    if rng.random() < 0.4:
        words.append(ADVERBS[rng.integers(len(ADVERBS))])
    words.extend(_sample_noun_phrase(rng))
    return words


def generate_corpus(grammar_seed: int, n_pairs: int, max_len: int = 12):
    """Sample tagged pairs; returns (pairs, corpus-format text lines)."""
    if n_pairs < 1:
        raise ConfigError(f"n_pairs must be >= 1, got {n_pairs}")
    rng = np.random.default_rng((grammar_seed, 0x5EED))
    src_vocab, tgt_vocab = source_vocabulary(), target_vocabulary()
    pairs, lines = [], []
    for _ in range(n_pairs):
        src_words = sample_sentence(rng)
        while len(src_words) > max_len:
            src_words = sample_sentence(rng)
        tgt_words = translate_tokens(src_words)
        pos_names = [SOURCE_LEXICON[w][0] for w in src_words]
        ner_names = [SOURCE_LEXICON[w][1] for w in src_words]
        pairs.append(
            TaggedPair(
                src=src_vocab.encode(src_words),
                tgt=tgt_vocab.encode(tgt_words),
                pos_tags=[POS_TAGS.index(t) for t in pos_names],
                ner_tags=[NER_TAGS.index(t) for t in ner_names],
            )
        )
        lines.append(format_record(src_words, tgt_words, pos_names, ner_names))
    return pairs, lines


# ----------------------------------------------------------- corpus files


def format_record(src_words, tgt_words, pos_names, ner_names) -> str:
    return " ||| ".join(
        " ".join(part) for part in (src_words, tgt_words, pos_names, ner_names)
    )


def parse_record(line: str):
    parts = [p.strip() for p in line.split("|||")]
    if len(parts) != 4:
        raise DataError(f"corpus record needs 4 fields, got {len(parts)}: {line!r}")
    src, tgt, pos, ner = (p.split() for p in parts)
    if len(pos) != len(src) or len(ner) != len(src):
        raise DataError(f"tag fields must match source length in record {line!r}")
    return src, tgt, pos, ner


def write_corpus(path, lines) -> None:
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def read_corpus(path):
    text = Path(path).read_text(encoding="utf-8")
    return [parse_record(line) for line in text.splitlines() if line.strip()]


def records_to_pairs(records, src_vocab: Vocabulary, tgt_vocab: Vocabulary):
    pairs = []
    for src, tgt, pos, ner in records:
        try:
            pos_ids = [POS_TAGS.index(t) for t in pos]
            ner_ids = [NER_TAGS.index(t) for t in ner]
        except ValueError as exc:
            raise DataError(f"unknown tag in record {src}: {exc}") from exc
        pairs.append(
            TaggedPair(src_vocab.encode(src), tgt_vocab.encode(tgt), pos_ids, ner_ids)
        )
    return pairs


# ------------------------------------------------------------------- BPE


END_OF_WORD = "</w>"


@dataclass
class BpeModel:
    merges: list  # ordered (left_symbol, right_symbol) rules

    def merged(self):
        return [a + b for a, b in self.merges]


def _word_symbols(word: str) -> tuple:
    if not word:
        return ()
    return tuple(word[:-1]) + (word[-1] + END_OF_WORD,)


def _count_pairs(word_freqs):
    counts = collections.Counter()
    for symbols, freq in word_freqs.items():
        for a, b in zip(symbols, symbols[1:]):
            counts[(a, b)] += freq
    return counts


def _merge_word(symbols: tuple, pair) -> tuple:
    a, b = pair
    out, i = [], 0
    while i < len(symbols):
        if i + 1 < len(symbols) and symbols[i] == a and symbols[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(symbols[i])
            i += 1
    return tuple(out)


def bpe_train(texts, n_merges: int) -> BpeModel:
    """Greedy highest-frequency pair merges, ties broken lexicographically."""
    if n_merges < 0:
        raise ConfigError(f"n_merges must be >= 0, got {n_merges}")
    word_freqs = collections.Counter()
    for line in texts:
        for word in line.split():
            word_freqs[_word_symbols(word)] += 1
    if not word_freqs:
        raise DataError("cannot train byte-pair encoding on an empty corpus")
    merges = []
    for _ in range(n_merges):
        counts = _count_pairs(word_freqs)
        if not counts:
            break
        top = max(counts.values())
        best_pair = min(p for p, c in counts.items() if c == top)
        merges.append(best_pair)
        word_freqs = collections.Counter(
            {_merge_word(sym, best_pair): f for sym, f in word_freqs.items()}
        )
    return BpeModel(merges=merges)


def bpe_segment(word: str, model: BpeModel) -> list[str]:
    symbols = _word_symbols(word)
    for pair in model.merges:
        symbols = _merge_word(symbols, pair)
    return list(symbols)


def bpe_vocabulary(texts, model: BpeModel) -> Vocabulary:
    seen = set()
    for line in texts:
        for word in line.split():
            seen.update(bpe_segment(word, model))
    return Vocabulary(seen)


def bpe_encode(text: str, model: BpeModel, vocab: Vocabulary) -> list[int]:
    ids = []
    for word in text.split():
        ids.extend(vocab.encode(bpe_segment(word, model)))
    return ids


def bpe_decode(ids, vocab: Vocabulary) -> str:
    words, current = [], []
    for token in vocab.decode(ids):
        if token.endswith(END_OF_WORD):
            current.append(token[: -len(END_OF_WORD)])
            words.append("".join(current))
            current = []
        else:
            current.append(token)
    if current:
        words.append("".join(current))
    return " ".join(words)


# ---------------------------------------------------------------- batching


def pair_cost(pair: TaggedPair) -> int:
    return len(pair.src) + len(pair.tgt)


def make_batches(pairs, max_tokens: int, seed: int):
    """Group pairs so each batch has uniform source and target lengths.

    Batches respect the token budget, and the pair order inside groups as
    well as the final batch order are shuffled deterministically by seed.
    """
    for idx, pair in enumerate(pairs):
        if pair_cost(pair) > max_tokens:
            raise DataError(
                f"pair {idx} needs {pair_cost(pair)} tokens, over budget {max_tokens}"
            )
    groups = collections.defaultdict(list)
    for pair in pairs:
        groups[(len(pair.src), len(pair.tgt))].append(pair)
    rng = np.random.default_rng((seed, 0xBA7C4))
    batches = []
    for key in sorted(groups):
        members = groups[key]
        order = rng.permutation(len(members))
        members = [members[i] for i in order]
        per_batch = max(1, max_tokens // (key[0] + key[1]))
        for start in range(0, len(members), per_batch):
            batches.append(members[start : start + per_batch])
    final_order = rng.permutation(len(batches))
    return [batches[i] for i in final_order]


@dataclass
class Batch:
    src: np.ndarray  # (B, T_src+1) source plus end marker
    tgt_in: np.ndarray  # (B, T_tgt+1) begin marker plus target
    tgt_out: np.ndarray  # (B, T_tgt+1) target plus end marker
    pos: np.ndarray  # (B, T_src+1) tags, IGNORE_ID at the end-marker slot
    ner: np.ndarray  # (B, T_src+1)

    @property
    def n_pairs(self):
        return self.src.shape[0]

    @property
    def n_target_tokens(self):
        return int(self.tgt_out.size)


def collate(batch_pairs) -> Batch:
    if not batch_pairs:
        raise DataError("cannot collate an empty batch")
    src_lens = {len(p.src) for p in batch_pairs}
    tgt_lens = {len(p.tgt) for p in batch_pairs}
    if len(src_lens) != 1 or len(tgt_lens) != 1:
        raise DataError(
            f"equal-length batching violated: src lengths {sorted(src_lens)}, "
            f"tgt lengths {sorted(tgt_lens)}"
        )
    src = np.array([p.src + [EOS_ID] for p in batch_pairs], dtype=np.int64)
    tgt_in = np.array([[BOS_ID] + p.tgt for p in batch_pairs], dtype=np.int64)
    tgt_out = np.array([p.tgt + [EOS_ID] for p in batch_pairs], dtype=np.int64)
    pos = np.array([p.pos_tags + [IGNORE_ID] for p in batch_pairs], dtype=np.int64)
    ner = np.array([p.ner_tags + [IGNORE_ID] for p in batch_pairs], dtype=np.int64)
    return Batch(src=src, tgt_in=tgt_in, tgt_out=tgt_out, pos=pos, ner=ner)


def split_corpus(lines, ratios=(0.9, 0.05, 0.05)):
    """Deterministic train/valid/test split honoring exact ratios."""
    n = len(lines)
    n_train = int(n * ratios[0])
    n_valid = int(n * ratios[1])
    return lines[:n_train], lines[n_train : n_train + n_valid], lines[n_train + n_valid :]

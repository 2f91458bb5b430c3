"""Beam-search decoding, corpus BLEU, and the embedding-similarity probe.

Beam search ranks finished hypotheses by log-probability divided by the
length penalty ((5 + |Y|) / 6)^alpha, where |Y| counts generated tokens
including the end marker. Expansion ties break deterministically by token
id, then hypothesis index, so decoding is reproducible bit for bit.
"""

from __future__ import annotations

import collections
import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .data import BOS_ID, EOS_ID, NER_TAGS, POS_TAGS
from .errors import ConfigError, DataError, NumericsError
from .tensor import Tensor


@dataclass
class DecodeConfig:
    beam_size: int = 5
    alpha: float = 0.5
    max_decode_len: int = 32

    def validate(self) -> None:
        if self.beam_size < 1:
            raise ConfigError(f"beam_size must be >= 1, got {self.beam_size}")
        if self.max_decode_len < 1:
            raise ConfigError(f"max_decode_len must be >= 1, got {self.max_decode_len}")


@dataclass
class Hypothesis:
    tokens: tuple  # generated ids (no begin marker; end marker kept when finished)
    log_prob: float
    finished: bool


@dataclass
class BeamResult:
    tokens: list  # generated ids, begin/end markers stripped
    log_prob: float
    score: float  # length-normalized ranking score
    finished: bool  # False: budget exhausted before the end marker (warning)


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


def _log_softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def beam_search(src_ids, model, config: DecodeConfig) -> BeamResult:
    """Decode one source sentence; deterministic for a fixed checkpoint."""
    config.validate()
    src = np.asarray(list(src_ids) + [EOS_ID], dtype=np.int64)
    budget = min(config.max_decode_len, model.config.max_len - 1)
    with tn.no_grad():
        memory = model.encode(src).memory
        active = [Hypothesis(tokens=(), log_prob=0.0, finished=False)]
        finished: list[Hypothesis] = []
        for _ in range(budget):
            prefix = np.array(
                [(BOS_ID,) + h.tokens for h in active], dtype=np.int64
            )
            mem_b = Tensor(
                np.broadcast_to(
                    memory.data, (len(active),) + memory.data.shape
                ).copy()
            )
            logits = model.decode(prefix, mem_b).data[:, -1, :]
            logp = _log_softmax_rows(logits)
            n_active, vocab = logp.shape
            scores = np.array([h.log_prob for h in active])[:, None] + logp
            flat = scores.reshape(-1)
            hyp_idx = np.repeat(np.arange(n_active), vocab)
            tok_idx = np.tile(np.arange(vocab), n_active)
            order = np.lexsort((hyp_idx, tok_idx, -flat))
            keep = order[: config.beam_size]
            next_active = []
            for pos in keep:
                h = active[hyp_idx[pos]]
                token = int(tok_idx[pos])
                cand = Hypothesis(
                    tokens=h.tokens + (token,),
                    log_prob=float(flat[pos]),
                    finished=token == EOS_ID,
                )
                if cand.finished:
                    finished.append(cand)
                else:
                    next_active.append(cand)
            active = next_active
            if not active:
                break
    pool = finished if finished else active
    best, best_score = None, -math.inf
    for h in pool:
        score = h.log_prob / length_penalty(len(h.tokens), config.alpha)
        if score > best_score or (score == best_score and h.tokens < best.tokens):
            best, best_score = h, score
    tokens = [t for t in best.tokens if t != EOS_ID]
    return BeamResult(
        tokens=tokens,
        log_prob=best.log_prob,
        score=best_score,
        finished=best.finished,
    )


def translate_corpus(src_sentences, model, config: DecodeConfig):
    return [beam_search(ids, model, config) for ids in src_sentences]


# --------------------------------------------------------------------- BLEU


def _ngrams(tokens, n):
    return collections.Counter(
        tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)
    )


def bleu(candidates, references) -> float:
    """Corpus BLEU-4: clipped n-gram precision with brevity penalty.

    Orders n >= 2 with zero clipped matches get add-1 smoothing
    ((m+1)/(t+1)); a zero unigram precision yields a score of exactly 0.
    Returned on the 0..100 scale.
    """
    candidates, references = list(candidates), list(references)
    if not candidates:
        raise DataError("bleu needs at least one candidate")
    if len(candidates) != len(references):
        raise DataError(
            f"candidate count {len(candidates)} != reference count {len(references)}"
        )
    if any(len(r) == 0 for r in references):
        raise DataError("references must be nonempty")
    matches = [0] * 4
    totals = [0] * 4
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        cand, ref = list(cand), list(ref)
        cand_len += len(cand)
        ref_len += len(ref)
        for n in range(1, 5):
            c_counts = _ngrams(cand, n)
            r_counts = _ngrams(ref, n)
            totals[n - 1] += sum(c_counts.values())
            matches[n - 1] += sum(min(c, r_counts[g]) for g, c in c_counts.items())
    if cand_len == 0 or totals[0] == 0 or matches[0] == 0:
        return 0.0
    log_sum = 0.0
    for n in range(4):
        m, t = matches[n], totals[n]
        if n >= 1 and m == 0:
            m, t = m + 1, t + 1
        if m == 0 or t == 0:
            return 0.0
        log_sum += math.log(m / t)
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return 100.0 * brevity * math.exp(log_sum / 4.0)


def exact_match(candidates, references) -> float:
    candidates, references = list(candidates), list(references)
    if len(candidates) != len(references):
        raise DataError(
            f"candidate count {len(candidates)} != reference count {len(references)}"
        )
    if not candidates:
        raise DataError("exact_match needs at least one pair")
    hits = sum(1 for c, r in zip(candidates, references) if list(c) == list(r))
    return hits / len(candidates)


def tag_accuracies(records, model, src_vocab) -> tuple[float, float]:
    """Per-token accuracy of the auxiliary POS/NER heads on tagged records."""
    hits_pos = hits_ner = total = 0
    with tn.no_grad():
        for src, _tgt, pos, ner in records:
            ids = np.asarray(src_vocab.encode(src) + [EOS_ID], dtype=np.int64)
            enc = model.encode(ids)
            pred_pos = enc.pos_logits.data.argmax(-1)[: len(src)]
            pred_ner = enc.ner_logits.data.argmax(-1)[: len(src)]
            gold_pos = [POS_TAGS.index(t) for t in pos]
            gold_ner = [NER_TAGS.index(t) for t in ner]
            hits_pos += int((pred_pos == gold_pos).sum())
            hits_ner += int((pred_ner == gold_ner).sum())
            total += len(src)
    if total == 0:
        raise DataError("no tagged tokens to evaluate")
    return hits_pos / total, hits_ner / total


# -------------------------------------------------------------------- probe


PROBE_LAYERS = ("embedding", "self_head", "conv_local")


def cosine_probe(
    word_a: str,
    word_b: str,
    sentence_words,
    model,
    vocab,
    layer: str = "conv_local",
) -> float:
    """Cosine similarity of two word representations inside one sentence.

    `layer` selects raw embeddings, the first dot-product head's output, or
    the first conv head's local-context output (all taken in the first base
    encoder layer). Same word and position gives exactly 1.
    """
    if layer not in PROBE_LAYERS:
        raise ConfigError(f"unknown probe layer {layer!r}; expected one of {PROBE_LAYERS}")
    words = list(sentence_words)
    try:
        idx_a = words.index(word_a)
        idx_b = words.index(word_b)
    except ValueError as exc:
        raise DataError(f"word not found in sentence: {exc}") from exc
    ids = np.asarray(vocab.encode(words) + [EOS_ID], dtype=np.int64)
    capture: dict = {}
    with tn.no_grad():
        model.encode(ids, capture=capture)
    reps = capture[layer]
    vec_a, vec_b = reps[idx_a], reps[idx_b]
    norm_a, norm_b = float(np.linalg.norm(vec_a)), float(np.linalg.norm(vec_b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise NumericsError("zero-norm representation; cosine undefined")
    return float(vec_a @ vec_b / (norm_a * norm_b))

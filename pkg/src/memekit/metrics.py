"""Label extraction from generated text and classification/generation metrics.

Tokenization for the generation metrics splits on whitespace and breaks
Unicode punctuation into separate tokens; the same rule serves both
languages. BLEU is corpus-level (n-grams up to 4, brevity penalty) with
add-epsilon smoothing on zero higher-order n-gram numerators so short gold
texts do not zero the corpus score; a zero unigram numerator still yields 0.
METEOR is the mean of per-sentence scores with exact + stem matching for
English (exact-only for Arabic) and the fragmentation penalty
gamma * (chunks / matches) ** beta. The embedding-similarity F1 greedily
matches each token to its max-cosine counterpart in both directions and
averages the harmonic mean over pairs; no IDF weighting or rescaling.
"""

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .instructions import split_label_explanation
from .records import LabelSet
from .stemmer import stem as porter_stem

TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)

LABEL_LINE_RE = re.compile(r"label\s*:\s*", re.IGNORECASE)

BLEU_EPSILON = 1e-9

METEOR_ALPHA = 0.9
METEOR_BETA = 3.0
METEOR_GAMMA = 0.5


def tokenize(text: str) -> list:
    """Whitespace split with Unicode punctuation as separate tokens."""
    return TOKEN_RE.findall(text)


@dataclass
class MetricReport:
    accuracy: float = 0.0
    weighted_f1: float = 0.0
    macro_f1: float = 0.0
    support: dict = field(default_factory=dict)  # label -> gold count
    bleu: Optional[float] = None
    meteor: Optional[float] = None
    embed_sim_f1: Optional[float] = None
    unparsed: int = 0
    fallback_label: Optional[str] = None
    bleu_variant: str = "corpus, add-epsilon(1e-9) on zero n>=2 numerators"
    embed_variant: str = "plain greedy-match F1, no idf, no rescaling"

    def to_dict(self):
        out = {
            "accuracy": self.accuracy,
            "weighted_f1": self.weighted_f1,
            "macro_f1": self.macro_f1,
            "support": dict(self.support),
            "unparsed": self.unparsed,
            "fallback_label": self.fallback_label,
        }
        if self.bleu is not None:
            out["bleu"] = self.bleu
            out["bleu_variant"] = self.bleu_variant
        if self.meteor is not None:
            out["meteor"] = self.meteor
        if self.embed_sim_f1 is not None:
            out["embed_sim_f1"] = self.embed_sim_f1
            out["embed_variant"] = self.embed_variant
        return out


def extract_label(response: str, label_set: LabelSet, fallback: Optional[str] = None):
    """Pull the predicted label out of generated text.

    Looks for a case-insensitive "Label:" line whose remainder starts with a
    known label (longest label first, so "Not propaganda" wins over
    "Propaganda"); failing that, scans the whole response for any label
    string; failing that, returns the fallback with parsed=False.

    Returns (label, parsed).
    """
    by_length = sorted(label_set.labels, key=len, reverse=True)
    for match in LABEL_LINE_RE.finditer(response):
        remainder = response[match.end():].casefold()
        for label in by_length:
            if remainder.startswith(label.casefold()):
                return label, True
    folded = response.casefold()
    for label in by_length:
        if label.casefold() in folded:
            return label, True
    if fallback is None:
        fallback = label_set.labels[0]
    return fallback, False


def classification_metrics(preds: Sequence[str], golds: Sequence[str], label_set: LabelSet) -> dict:
    """Accuracy plus support-weighted and macro-averaged F1.

    Macro-F1 averages over the declared label set, so classes absent from
    the gold data still contribute an F1 of 0.
    """
    if len(preds) != len(golds):
        raise ValueError(f"length mismatch: {len(preds)} preds vs {len(golds)} golds")
    unknown = sorted({g for g in golds} - set(label_set.labels))
    if unknown:
        raise ValueError(f"gold labels outside label set: {unknown}")
    n = len(golds)
    correct = sum(p == g for p, g in zip(preds, golds))
    tp = Counter()
    fp = Counter()
    fn = Counter()
    support = Counter(golds)
    for p, g in zip(preds, golds):
        if p == g:
            tp[g] += 1
        else:
            fp[p] += 1
            fn[g] += 1
    f1 = {}
    for label in label_set.labels:
        denom = 2 * tp[label] + fp[label] + fn[label]
        f1[label] = (2 * tp[label] / denom) if denom else 0.0
    macro = sum(f1[label] for label in label_set.labels) / len(label_set.labels)
    weighted = (
        sum(f1[label] * support[label] for label in label_set.labels) / n if n else 0.0
    )
    return {
        "accuracy": correct / n if n else 0.0,
        "weighted_f1": weighted,
        "macro_f1": macro,
        "per_class_f1": f1,
        "support": {label: support[label] for label in label_set.labels},
    }


def _ngram_counts(tokens, n):
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(
    candidates: Sequence[str],
    references: Sequence[str],
    tokenizer: Callable = tokenize,
    max_n: int = 4,
    sentence_mean: bool = False,
) -> float:
    """Corpus BLEU with one reference per candidate.

    Orders whose denominator is zero across the whole corpus (every
    candidate shorter than n) are dropped and the uniform weights are
    renormalized over the remaining orders.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references must have equal length")
    if not candidates:
        raise ValueError("empty corpus")
    if sentence_mean:
        return sum(
            bleu([c], [r], tokenizer=tokenizer, max_n=max_n)
            for c, r in zip(candidates, references)
        ) / len(candidates)

    cand_tokens = [tokenizer(c) for c in candidates]
    ref_tokens = [tokenizer(r) for r in references]
    log_precisions = []
    for n in range(1, max_n + 1):
        matched = 0
        total = 0
        for cand, ref in zip(cand_tokens, ref_tokens):
            cand_counts = _ngram_counts(cand, n)
            ref_counts = _ngram_counts(ref, n)
            matched += sum(min(count, ref_counts[gram]) for gram, count in cand_counts.items())
            total += max(len(cand) - n + 1, 0)
        if total == 0:
            continue
        if matched == 0:
            if n == 1:
                return 0.0
            matched = BLEU_EPSILON
        log_precisions.append(math.log(matched / total))
    if not log_precisions:
        return 0.0
    cand_len = sum(len(t) for t in cand_tokens)
    ref_len = sum(len(t) for t in ref_tokens)
    if cand_len == 0:
        return 0.0
    brevity = 1.0 if cand_len > ref_len else math.exp(1.0 - ref_len / cand_len)
    return brevity * math.exp(sum(log_precisions) / len(log_precisions))


def _greedy_stage_align(cand, ref, key):
    """In-order greedy matching: each unmatched candidate token takes the
    first unmatched reference token with an equal key."""
    pairs = []
    taken = set()
    for i, c_tok in cand:
        c_key = key(c_tok)
        for j, r_tok in ref:
            if j in taken:
                continue
            if c_key == key(r_tok):
                pairs.append((i, j))
                taken.add(j)
                break
    matched_c = {i for i, _ in pairs}
    cand_rest = [(i, t) for i, t in cand if i not in matched_c]
    ref_rest = [(j, t) for j, t in ref if j not in taken]
    return pairs, cand_rest, ref_rest


def _count_chunks(pairs):
    pairs = sorted(pairs)
    chunks = 0
    prev = None
    for i, j in pairs:
        if prev is None or (i, j) != (prev[0] + 1, prev[1] + 1):
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_sentence(candidate_tokens, reference_tokens, language: str = "en") -> float:
    cand = list(enumerate(t.casefold() for t in candidate_tokens))
    ref = list(enumerate(t.casefold() for t in reference_tokens))
    if not cand or not ref:
        return 0.0
    pairs, cand_rest, ref_rest = _greedy_stage_align(cand, ref, lambda t: t)
    if language == "en":
        stem_pairs, _, _ = _greedy_stage_align(cand_rest, ref_rest, porter_stem)
        pairs = pairs + stem_pairs
    matches = len(pairs)
    if matches == 0:
        return 0.0
    precision = matches / len(cand)
    recall = matches / len(ref)
    fmean = (precision * recall) / (METEOR_ALPHA * precision + (1 - METEOR_ALPHA) * recall)
    penalty = METEOR_GAMMA * (_count_chunks(pairs) / matches) ** METEOR_BETA
    return fmean * (1.0 - penalty)


def meteor(
    candidates: Sequence[str],
    references: Sequence[str],
    language: str = "en",
    tokenizer: Callable = tokenize,
) -> float:
    """Mean per-sentence METEOR. Stem matching applies to English only."""
    if len(candidates) != len(references):
        raise ValueError("candidates and references must have equal length")
    if not candidates:
        raise ValueError("empty corpus")
    return sum(
        meteor_sentence(tokenizer(c), tokenizer(r), language=language)
        for c, r in zip(candidates, references)
    ) / len(candidates)


class HashingEmbedder:
    """Deterministic offline token embedder (pseudo-random unit vectors).

    A stand-in so evaluation runs without model downloads; production
    profiles name real language-specific encoder models in configuration.
    Identical tokens always map to identical vectors.
    """

    def __init__(self, dim: int = 64):
        self.dim = dim
        self._cache = {}

    def __call__(self, tokens):
        out = []
        for tok in tokens:
            if tok not in self._cache:
                seed = int.from_bytes(tok.encode("utf-8")[:8].ljust(8, b"\0"), "big") % (2**32)
                rng = np.random.default_rng(seed)
                vec = rng.standard_normal(self.dim)
                self._cache[tok] = vec / np.linalg.norm(vec)
            out.append(self._cache[tok])
        return np.array(out)


def embed_sim_f1(
    candidates: Sequence[str],
    references: Sequence[str],
    embedder: Callable,
    tokenizer: Callable = tokenize,
) -> float:
    """Greedy-match cosine F1 averaged over pairs.

    Recall takes each reference token's max cosine similarity against the
    candidate tokens; precision is symmetric; the pair score is their
    harmonic mean, floored at 0 when either side is non-positive (keeps the
    report within [0, 1] even for adversarial embeddings).
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references must have equal length")
    if not candidates:
        raise ValueError("empty corpus")
    scores = []
    for cand, ref in zip(candidates, references):
        cand_tokens = tokenizer(cand)
        ref_tokens = tokenizer(ref)
        if not cand_tokens or not ref_tokens:
            raise ValueError(f"empty text after tokenization: {cand!r} / {ref!r}")
        c_vecs = np.asarray(embedder(cand_tokens), dtype=float)
        r_vecs = np.asarray(embedder(ref_tokens), dtype=float)
        c_norm = _normalize_rows(c_vecs)
        r_norm = _normalize_rows(r_vecs)
        sims = r_norm @ c_norm.T
        recall = float(sims.max(axis=1).mean())
        precision = float(sims.max(axis=0).mean())
        if precision <= 0 or recall <= 0:
            scores.append(0.0)
        else:
            scores.append(2 * precision * recall / (precision + recall))
    return sum(scores) / len(scores)


def _normalize_rows(matrix):
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return matrix / norms


def evaluate_model(
    model,
    test: Sequence,
    label_set: LabelSet,
    embedder: Optional[Callable] = None,
    language: str = "en",
    dump_path: Optional[Path] = None,
) -> MetricReport:
    """Generate one response per sample, extract labels, compute metrics.

    Generation metrics are computed only for classify_explain samples whose
    targets carry a gold explanation; the embedding metric additionally
    needs an embedder.
    """
    if not test:
        raise ValueError("empty test set")
    golds = []
    for sample in test:
        gold, parsed = extract_label(sample.target, label_set)
        if not parsed:
            raise ValueError(f"sample {sample.id} has no extractable gold label")
        golds.append(gold)
    fallback = Counter(golds).most_common(1)[0][0]

    rows = []
    preds = []
    unparsed = 0
    gold_expls = []
    pred_expls = []
    try:
        for sample, gold in zip(test, golds):
            response = model.evaluate_generate(sample.image_ref, sample.instruction)
            pred, parsed = extract_label(response, label_set, fallback=fallback)
            if not parsed:
                unparsed += 1
            preds.append(pred)
            rows.append(
                {"id": sample.id, "gold": gold, "pred": pred, "response": response,
                 "parsed": parsed}
            )
            if sample.task_mode == "classify_explain":
                _, gold_expl = split_label_explanation(sample.target)
                _, pred_expl = split_label_explanation(response)
                if gold_expl:
                    gold_expls.append(gold_expl)
                    pred_expls.append(pred_expl or "")
    except Exception:
        if dump_path is not None and rows:
            _dump_rows(rows, dump_path)
        raise

    if dump_path is not None:
        _dump_rows(rows, dump_path)

    cls = classification_metrics(preds, golds, label_set)
    report = MetricReport(
        accuracy=cls["accuracy"],
        weighted_f1=cls["weighted_f1"],
        macro_f1=cls["macro_f1"],
        support=cls["support"],
        unparsed=unparsed,
        fallback_label=fallback,
    )
    if gold_expls:
        usable = [(p, g) for p, g in zip(pred_expls, gold_expls) if tokenize(p)]
        report.bleu = bleu(pred_expls, gold_expls) if usable else 0.0
        report.meteor = meteor(pred_expls, gold_expls, language=language)
        if embedder is not None:
            if len(usable) == len(gold_expls):
                report.embed_sim_f1 = embed_sim_f1(pred_expls, gold_expls, embedder)
            else:
                kept = [p for p, _ in usable]
                kept_refs = [g for _, g in usable]
                report.embed_sim_f1 = (
                    embed_sim_f1(kept, kept_refs, embedder) * len(usable) / len(gold_expls)
                    if usable
                    else 0.0
                )
    return report


def _dump_rows(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")

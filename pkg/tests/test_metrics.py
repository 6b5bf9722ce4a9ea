import math
import random

import numpy as np
import pytest

from memekit.metrics import (
    HashingEmbedder,
    bleu,
    classification_metrics,
    embed_sim_f1,
    extract_label,
    meteor,
    tokenize,
)
from memekit.records import ARMEME_LABELS, HATEFUL_LABELS, LabelSet

from metric_oracles import (
    bleu_oracle,
    classification_oracle,
    greedy_embed_f1_oracle,
    meteor_oracle,
)

# fixed mini corpus shared by the BLEU/METEOR conformance checks
MINI_CANDS = [
    "the meme mocks a public figure with dark humor",
    "this image shows a crowd waving flags in the street",
    "text and visuals together ridicule the opposing party",
    "a harmless joke about cats, nothing hateful here",
    "the caption praising the leader as a savior figure",
]
MINI_REFS = [
    "the meme mocks a political figure using dark humor",
    "the image depicts a large crowd waving national flags",
    "the text and the visuals ridicule the rival party",
    "a harmless joke about cats with no hateful intent",
    "the caption praises the leader as a heroic savior",
]
# frozen outputs of the independent oracles in metric_oracles.py
MINI_BLEU = 0.2903918116461909
MINI_METEOR_EN = 0.6462157645477603
MINI_METEOR_AR = 0.619259982234835

WORDS = ["meme", "image", "text", "flag", "crowd", "joke", "dark", "humor",
         "caption", "leader", "party", "street", "symbol", "banner"]


class TestTokenize:
    def test_punctuation_split_off(self):
        assert tokenize("cats, dogs!") == ["cats", ",", "dogs", "!"]

    def test_unicode(self):
        assert tokenize("كلمة، ثانية") == ["كلمة", "،", "ثانية"]


class TestExtractLabel:
    def test_plain_format(self):
        assert extract_label("Label: Propaganda", ARMEME_LABELS) == ("Propaganda", True)

    def test_case_insensitive_and_longest_match(self):
        label, parsed = extract_label("label:  not propaganda\nExplanation: ...", ARMEME_LABELS)
        assert (label, parsed) == ("Not propaganda", True)

    def test_prefix_ambiguity(self):
        # "Not propaganda" must not be read as "Propaganda"
        assert extract_label("Label: Not propaganda", ARMEME_LABELS)[0] == "Not propaganda"
        assert extract_label("Label: Propaganda", ARMEME_LABELS)[0] == "Propaganda"
        assert extract_label("Label: Not Hateful", HATEFUL_LABELS)[0] == "Not Hateful"
        assert extract_label("Label: Hateful", HATEFUL_LABELS)[0] == "Hateful"

    def test_scan_fallback_finds_label_in_prose(self):
        label, parsed = extract_label("I think this is clearly propaganda.", ARMEME_LABELS)
        assert (label, parsed) == ("Propaganda", True)

    def test_unparseable_returns_fallback_flagged(self):
        label, parsed = extract_label("I cannot classify this.", ARMEME_LABELS, fallback="Other")
        assert (label, parsed) == ("Other", False)

    def test_label_line_preferred_over_scan(self):
        text = "The meme is Hateful overall.\nLabel: Not Hateful"
        assert extract_label(text, HATEFUL_LABELS)[0] == "Not Hateful"


class TestClassificationMetrics:
    def test_hand_built_confusion_matrix(self):
        labels = LabelSet("toy", ("A", "B"))
        out = classification_metrics(["A", "A", "B", "B"], ["A", "B", "B", "B"], labels)
        # by hand: A has tp=1 fp=1 fn=0 -> F1 = 2/3; B has tp=2 fp=0 fn=1 -> F1 = 0.8
        assert out["accuracy"] == pytest.approx(0.75)
        assert out["macro_f1"] == pytest.approx((2 / 3 + 0.8) / 2)  # 0.7333...
        assert out["weighted_f1"] == pytest.approx((2 / 3 * 1 + 0.8 * 3) / 4)  # 0.7667
        assert out["support"] == {"A": 1, "B": 3}

    def test_perfect_predictions(self):
        labels = LabelSet("toy", ("A", "B"))
        out = classification_metrics(["A", "B"], ["A", "B"], labels)
        assert out["accuracy"] == 1.0
        assert out["macro_f1"] == 1.0
        assert out["weighted_f1"] == 1.0

    def test_absent_class_counts_zero_in_macro(self):
        labels = LabelSet("toy", ("A", "B", "C"))
        out = classification_metrics(["A", "A"], ["A", "A"], labels)
        assert out["macro_f1"] == pytest.approx(1 / 3)
        assert out["weighted_f1"] == 1.0

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            classification_metrics(["A"], ["A", "B"], LabelSet("toy", ("A", "B")))

    def test_randomized_brute_force_equivalence(self):
        rng = random.Random(101)
        for _ in range(200):
            k = rng.randint(2, 4)
            labels = tuple(f"class {i}" for i in range(k))
            label_set = LabelSet("toy", labels)
            n = rng.randint(10, 300)
            golds = [rng.choice(labels) for _ in range(n)]
            preds = [rng.choice(labels) for _ in range(n)]
            out = classification_metrics(preds, golds, label_set)
            acc, weighted, macro = classification_oracle(preds, golds, labels)
            assert out["accuracy"] == pytest.approx(acc, abs=1e-9)
            assert out["weighted_f1"] == pytest.approx(weighted, abs=1e-9)
            assert out["macro_f1"] == pytest.approx(macro, abs=1e-9)

    def test_sklearn_crosscheck(self):
        from sklearn.metrics import accuracy_score, f1_score

        rng = random.Random(7)
        labels = list(ARMEME_LABELS.labels)
        golds = [rng.choice(labels) for _ in range(250)]
        preds = [rng.choice(labels) for _ in range(250)]
        out = classification_metrics(preds, golds, ARMEME_LABELS)
        assert out["accuracy"] == pytest.approx(accuracy_score(golds, preds), abs=1e-9)
        assert out["macro_f1"] == pytest.approx(
            f1_score(golds, preds, labels=labels, average="macro", zero_division=0), abs=1e-9
        )
        assert out["weighted_f1"] == pytest.approx(
            f1_score(golds, preds, labels=labels, average="weighted", zero_division=0), abs=1e-9
        )

    def test_macro_equals_weighted_under_equal_support(self):
        labels = LabelSet("toy", ("A", "B"))
        out = classification_metrics(["A", "B", "B", "A"], ["A", "A", "B", "B"], labels)
        assert out["macro_f1"] == pytest.approx(out["weighted_f1"])


class TestBleu:
    def test_identity_corpus(self):
        assert bleu(MINI_REFS, MINI_REFS) == pytest.approx(1.0)

    def test_disjoint_vocabulary_is_exactly_zero(self):
        assert bleu(["aa bb cc dd"], ["xx yy zz ww"]) == 0.0

    def test_mini_corpus_matches_reference(self):
        assert bleu(MINI_CANDS, MINI_REFS) == pytest.approx(MINI_BLEU, abs=1e-6)

    def test_hand_computed_single_pair(self):
        # cand "a b c d" vs ref "a b x d": p1=3/4, p2=1/3, p3=eps/2, p4=eps/1, BP=1
        expected = (0.75 * (1 / 3) * (1e-9 / 2) * 1e-9) ** 0.25
        assert bleu(["a b c d"], ["a b x d"]) == pytest.approx(expected, rel=1e-9)
        assert bleu_oracle([["a", "b", "c", "d"]], [["a", "b", "x", "d"]]) == pytest.approx(
            expected, rel=1e-9
        )

    def test_randomized_oracle_equivalence(self):
        rng = random.Random(31)
        for _ in range(50):
            pairs = rng.randint(1, 6)
            cands, refs = [], []
            for _ in range(pairs):
                cands.append(" ".join(rng.choices(WORDS, k=rng.randint(1, 12))))
                refs.append(" ".join(rng.choices(WORDS, k=rng.randint(1, 12))))
            if all(not set(tokenize(c)) & set(tokenize(r)) for c, r in zip(cands, refs)):
                continue
            mine = bleu(cands, refs)
            theirs = bleu_oracle([tokenize(c) for c in cands], [tokenize(r) for r in refs])
            assert mine == pytest.approx(theirs, abs=1e-9)

    def test_permutation_invariance(self):
        rng = random.Random(13)
        order = list(range(len(MINI_CANDS)))
        rng.shuffle(order)
        shuffled = bleu([MINI_CANDS[i] for i in order], [MINI_REFS[i] for i in order])
        assert shuffled == pytest.approx(bleu(MINI_CANDS, MINI_REFS), abs=1e-12)

    def test_brevity_penalty_direction(self):
        # shorter candidate than reference must be penalized
        full = bleu(["the cat sat on the mat"], ["the cat sat on the mat"])
        short = bleu(["the cat sat"], ["the cat sat on the mat"])
        assert short < full

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            bleu([], [])

    def test_sentence_mean_flag(self):
        per_pair = [bleu([c], [r]) for c, r in zip(MINI_CANDS, MINI_REFS)]
        assert bleu(MINI_CANDS, MINI_REFS, sentence_mean=True) == pytest.approx(
            sum(per_pair) / len(per_pair)
        )


class TestMeteor:
    def test_identity_high(self):
        assert meteor(MINI_REFS, MINI_REFS) >= 0.99

    def test_identity_single_chunk_penalty(self):
        # 6 identical tokens: fmean 1, chunks 1 -> 1 - 0.5/6**3
        expected = 1 - 0.5 * (1 / 6) ** 3
        assert meteor(["the cat sat on the mat"], ["the cat sat on the mat"]) == pytest.approx(
            expected
        )

    def test_disjoint_zero(self):
        assert meteor(["aa bb cc"], ["xx yy zz"]) == 0.0

    def test_mini_corpus_en(self):
        assert meteor(MINI_CANDS, MINI_REFS, language="en") == pytest.approx(
            MINI_METEOR_EN, abs=1e-4
        )

    def test_mini_corpus_ar_exact_only(self):
        assert meteor(MINI_CANDS, MINI_REFS, language="ar") == pytest.approx(
            MINI_METEOR_AR, abs=1e-4
        )

    def test_stemming_helps_english_only(self):
        cands = ["the crowd is waving banners loudly today"]
        refs = ["the crowd waved banners loudly yesterday"]
        assert meteor(cands, refs, "en") > meteor(cands, refs, "ar")

    def test_swapped_order_penalized(self):
        # two tokens fully crossed: fmean 1, chunks 2 of 2 -> penalty 0.5
        assert meteor(["b a"], ["a b"]) == pytest.approx(0.5)

    def test_randomized_oracle_equivalence(self):
        rng = random.Random(97)
        for _ in range(60):
            cands = [" ".join(rng.choices(WORDS, k=rng.randint(1, 10)))]
            refs = [" ".join(rng.choices(WORDS, k=rng.randint(1, 10)))]
            for lang in ("en", "ar"):
                mine = meteor(cands, refs, lang)
                theirs = meteor_oracle([tokenize(cands[0])], [tokenize(refs[0])], lang)
                assert mine == pytest.approx(theirs, abs=1e-9)

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            meteor([], [])


class OrthogonalEmbedder:
    """Toy embedder: each distinct word is its own basis vector."""

    def __init__(self):
        self.index = {}

    def __call__(self, tokens):
        for tok in tokens:
            if tok not in self.index:
                self.index[tok] = len(self.index)
        dim = max(len(self.index), 1)
        out = np.zeros((len(tokens), max(dim, 32)))
        for row, tok in enumerate(tokens):
            out[row, self.index[tok]] = 1.0
        return out


class TestEmbedSimF1:
    def test_identity_pairs_score_one(self):
        for embedder in (OrthogonalEmbedder(), HashingEmbedder()):
            assert embed_sim_f1(MINI_REFS, MINI_REFS, embedder) == pytest.approx(1.0)

    def test_disjoint_orthogonal_zero(self):
        embedder = OrthogonalEmbedder()
        assert embed_sim_f1(["aa bb cc"], ["xx yy zz"], embedder) == pytest.approx(0.0)

    def test_brute_force_equivalence_on_random_pairs(self):
        rng = random.Random(57)
        embedder = HashingEmbedder(dim=16)
        for _ in range(50):
            cand = " ".join(rng.choices(WORDS, k=rng.randint(1, 8)))
            ref = " ".join(rng.choices(WORDS, k=rng.randint(1, 8)))
            mine = embed_sim_f1([cand], [ref], embedder)
            theirs = greedy_embed_f1_oracle(
                [list(v) for v in embedder(tokenize(cand))],
                [list(v) for v in embedder(tokenize(ref))],
            )
            assert mine == pytest.approx(theirs, abs=1e-12)

    def test_scale_invariance(self):
        base = HashingEmbedder(dim=16)

        def scaled(tokens):
            return 7.5 * base(tokens)

        a = embed_sim_f1(MINI_CANDS, MINI_REFS, base)
        b = embed_sim_f1(MINI_CANDS, MINI_REFS, scaled)
        assert a == pytest.approx(b, abs=1e-12)

    def test_empty_text_raises(self):
        with pytest.raises(ValueError):
            embed_sim_f1([""], ["hello there"], HashingEmbedder())

    def test_permutation_invariance(self):
        embedder = HashingEmbedder(dim=16)
        rng = random.Random(3)
        order = list(range(len(MINI_CANDS)))
        rng.shuffle(order)
        a = embed_sim_f1(MINI_CANDS, MINI_REFS, embedder)
        b = embed_sim_f1([MINI_CANDS[i] for i in order], [MINI_REFS[i] for i in order], embedder)
        assert a == pytest.approx(b, abs=1e-12)


class TestEvaluateModel:
    @staticmethod
    def samples(n=8, label_set=HATEFUL_LABELS, seed=9):
        from memekit.instructions import build_stage_dataset
        from memekit.records import ExplainedRecord, MemeRecord

        rng = random.Random(seed)
        records = [
            ExplainedRecord(
                MemeRecord(f"e{i:02d}", f"img/{i}.png", "t",
                           rng.choice(label_set.labels), "test"),
                {"en": f"the meme shows a specific scene number {i} in detail"},
            )
            for i in range(n)
        ]
        return build_stage_dataset(records, "classify_explain", language="en")

    def test_echo_mock_scores_perfect(self, tmp_path):
        from memekit.adapters import MockAdapter
        from memekit.metrics import evaluate_model

        samples = self.samples()
        answers = {s.image_ref: s.target for s in samples}
        model = MockAdapter(label_set=HATEFUL_LABELS, respond=answers)
        report = evaluate_model(model, samples, HATEFUL_LABELS,
                                embedder=HashingEmbedder(dim=16),
                                dump_path=tmp_path / "preds.jsonl")
        assert report.accuracy == 1.0
        assert report.weighted_f1 == 1.0
        assert report.embed_sim_f1 == pytest.approx(1.0)
        assert report.bleu == pytest.approx(1.0)
        assert report.meteor >= 0.99
        assert report.unparsed == 0
        assert sum(report.support.values()) == len(samples)

    def test_fixed_wrong_label_accuracy_is_class_share(self):
        # constant prediction: accuracy equals that class's share of golds
        from memekit.adapters import MockAdapter
        from memekit.metrics import evaluate_model

        samples = self.samples(n=40, seed=3)
        golds = [extract_label(s.target, HATEFUL_LABELS)[0] for s in samples]
        share = golds.count("Hateful") / len(golds)
        model = MockAdapter(label_set=HATEFUL_LABELS,
                            respond=lambda image, prompt: "Label: Hateful")
        report = evaluate_model(model, samples, HATEFUL_LABELS)
        assert report.accuracy == pytest.approx(share)

    def test_unparseable_responses_use_majority_fallback(self):
        from memekit.adapters import MockAdapter
        from memekit.metrics import evaluate_model

        samples = self.samples(n=10, seed=4)
        golds = [extract_label(s.target, HATEFUL_LABELS)[0] for s in samples]
        majority = max(set(golds), key=golds.count)
        model = MockAdapter(label_set=HATEFUL_LABELS,
                            respond=lambda image, prompt: "no idea at all")
        report = evaluate_model(model, samples, HATEFUL_LABELS)
        assert report.unparsed == len(samples)
        assert report.fallback_label == majority
        assert report.accuracy == pytest.approx(golds.count(majority) / len(golds))

    def test_generation_failure_dumps_partial_report(self, tmp_path):
        import json as json_mod

        from memekit.adapters import MockAdapter
        from memekit.metrics import evaluate_model

        samples = self.samples(n=6, seed=5)
        calls = {"n": 0}

        def flaky(image, prompt):
            calls["n"] += 1
            if calls["n"] > 3:
                raise RuntimeError("backend died")
            return "Label: Hateful"

        model = MockAdapter(label_set=HATEFUL_LABELS, respond=flaky)
        dump = tmp_path / "partial.jsonl"
        with pytest.raises(RuntimeError):
            evaluate_model(model, samples, HATEFUL_LABELS, dump_path=dump)
        rows = [json_mod.loads(l) for l in dump.read_text().splitlines()]
        assert len(rows) == 3  # the three completed generations survive

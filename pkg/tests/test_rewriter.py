"""Essential-term tagger: features, BiLSTM, CRF loss, training, metrics, persistence."""

import numpy as np
import pytest
import torch
from pydantic import ValidationError

from agents.embeddings import (KgEmbeddingTable, KgLexicon, LinkSpan, WordEmbeddingTable,
                               link_entities, load_kg_embeddings, load_kg_lexicon,
                               load_word_embeddings)
from agents.layers import BiLSTM, seeded_generator
from agents.rewriter import (EssentialTermsExample, PassthroughSelector, TaggerModel, TrainConfig, bilstm_forward,
                             binarize_ratings, crf_nll_and_gradient, encode_tokens, eval_tagger,
                             load_tagger, save_tagger, select_terms, token_metrics, train_tagger)
from agents.text import tokenize, tokens_from_words
from backend.errors import ConfigurationError, DataError, ModelLoadError, ParseError


def tiny_kg_setup(seed=0):
    rng = np.random.default_rng(seed)
    words = WordEmbeddingTable.from_vectors(
        {w: rng.normal(size=3) for w in ["solar", "panel", "cell", "light"]}, seed=seed)
    kg = KgEmbeddingTable.from_vectors({"e:solar_panel": rng.normal(size=2),
                                        "e:light": rng.normal(size=2)}, seed=seed + 1)
    lexicon = KgLexicon({"solar panel": "e:solar_panel", "light": "e:light"})
    return words, kg, lexicon


class TestRatings:

    @pytest.mark.parametrize("ratings, threshold, expected", [
        ([3, 5, 1], 3, [1, 1, 0]),
        ([1, 1, 1], 3, [0, 0, 0]),
        ([1, 2, 5], 1, [1, 1, 1]),
    ])
    def test_binarize(self, ratings, threshold, expected):
        assert binarize_ratings(ratings, threshold) == expected

    @pytest.mark.parametrize("bad", [[0, 3], [3, 6]])
    def test_out_of_range(self, bad):
        with pytest.raises(ParseError):
            binarize_ratings(bad)

    def test_example_lengths_must_agree(self):
        with pytest.raises(ParseError):
            EssentialTermsExample(tokens=tokens_from_words(["a", "b"])[0], ratings=[3])


class TestEntityLinking:

    def test_greedy_longest_match(self):
        lexicon = KgLexicon({"solar panel": "solar-panel", "panel cell": "panel-cell"})
        assert link_entities(["solar", "panel", "cell"], lexicon) == [LinkSpan(0, 2, "solar-panel")]

    def test_empty_lexicon(self):
        assert link_entities(["water"], KgLexicon()) == []

    def test_single_token(self):
        assert link_entities(tokenize("Water"), KgLexicon({"water": "water"})) == [LinkSpan(0, 1, "water")]

    def test_spans_sorted_and_disjoint(self):
        lexicon = KgLexicon({"a b c": "x", "c d": "y", "d": "z", "e": "w"})
        spans = link_entities(["a", "b", "c", "d", "e"], lexicon)
        assert [(s.start, s.end) for s in spans] == [(0, 3), (3, 4), (4, 5)]

    def test_span_width_limit(self):
        with pytest.raises(ValueError):
            LinkSpan(0, 4, "too-long")


class TestEmbeddingFiles:

    def test_header_line_skipped(self, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("2 3\nWater 0.1 0.2 0.3\nsun 1 2 3\n", encoding="utf-8")
        table = load_word_embeddings(path)
        assert table.dim == 3 and len(table) == 2
        np.testing.assert_array_equal(table.vector("water"), [0.1, 0.2, 0.3])
        assert table.vector("unknown") is table.oov_vector

    def test_width_mismatch(self, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("water 0.1 0.2 0.3\nsun 1 2\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_word_embeddings(path)

    def test_declared_dim_mismatch(self, tmp_path):
        path = tmp_path / "vec.txt"
        path.write_text("water 0.1 0.2 0.3\n", encoding="utf-8")
        with pytest.raises(ConfigurationError):
            load_word_embeddings(path, dim=4)

    def test_kg_files(self, tmp_path):
        lex = tmp_path / "lexicon.tsv"
        lex.write_text("Solar Panel\te:solar_panel\nwater\te:water\n", encoding="utf-8")
        emb = tmp_path / "kg.txt"
        emb.write_text("e:solar_panel 1 0\ne:water 0 1\n", encoding="utf-8")
        lexicon = load_kg_lexicon(lex)
        table = load_kg_embeddings(emb)
        assert lexicon.entries == {"solar panel": "e:solar_panel", "water": "e:water"}
        assert table.unk_vector.shape == (2,)

    def test_lexicon_form_too_long(self, tmp_path):
        lex = tmp_path / "lexicon.tsv"
        lex.write_text("water\te:water\none two three four\te:x\n", encoding="utf-8")
        with pytest.raises(ParseError) as info:
            load_kg_lexicon(lex)
        assert info.value.line == 2


class TestEncodeTokens:

    def test_kg_disabled(self):
        words, _, _ = tiny_kg_setup()
        model = TaggerModel(words, hidden=2)
        tokens = tokenize("solar panel cell")
        assert encode_tokens(tokens, [], model).shape == (3, words.dim)

    def test_kg_features(self):
        words, kg, lexicon = tiny_kg_setup()
        model = TaggerModel(words, kg, lexicon, hidden=2, link_dim=10)
        tokens = tokenize("solar panel cell")
        spans = link_entities(tokens, lexicon)
        enc = encode_tokens(tokens, spans, model).detach().numpy()
        assert enc.shape == (3, words.dim + 10 + kg.dim)
        np.testing.assert_array_equal(enc[0, -2:], kg.vector("e:solar_panel"))
        np.testing.assert_array_equal(enc[1, -2:], kg.vector("e:solar_panel"))
        np.testing.assert_array_equal(enc[2, -2:], kg.unk_vector)
        link = model.link_vectors.detach().numpy()
        np.testing.assert_array_equal(enc[0, 3:13], link[1])
        np.testing.assert_array_equal(enc[2, 3:13], link[0])

    def test_oov_word(self):
        words, _, _ = tiny_kg_setup()
        model = TaggerModel(words, hidden=2)
        enc = encode_tokens(tokenize("zzz"), [], model).numpy()
        np.testing.assert_array_equal(enc[0], words.oov_vector)


class TestBiLSTM:

    def test_single_step_shape(self):
        lstm = BiLSTM(3, 4, generator=seeded_generator(0))
        out = lstm(torch.ones(1, 3, dtype=torch.float64))
        assert out.shape == (1, 8)

    def test_zero_parameters_give_zero_states(self):
        lstm = BiLSTM(3, 4)
        with torch.no_grad():
            for p in lstm.parameters():
                p.zero_()
        out = lstm(torch.randn(5, 3, dtype=torch.float64))
        assert torch.count_nonzero(out) == 0

    def test_tagger_states(self):
        words, kg, lexicon = tiny_kg_setup()
        model = TaggerModel(words, kg, lexicon, hidden=5, link_dim=2)
        tokens = tokenize("solar panel light")
        states = bilstm_forward(model, encode_tokens(tokens, model.spans(tokens), model))
        assert states.shape == (3, 10)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError):
            BiLSTM(3, 4)(torch.zeros(0, 3, dtype=torch.float64))

    def test_input_gradient(self):
        lstm = BiLSTM(3, 2, generator=seeded_generator(1))
        x = torch.randn(3, 3, dtype=torch.float64, generator=seeded_generator(2)).requires_grad_(True)
        weights = torch.randn(3, 4, dtype=torch.float64, generator=seeded_generator(3))
        (lstm(x) * weights).sum().backward()
        eps = 1e-5
        for i in range(3):
            for j in range(3):
                with torch.no_grad():
                    x[i, j] += eps
                    up = float((lstm(x) * weights).sum())
                    x[i, j] -= 2 * eps
                    down = float((lstm(x) * weights).sum())
                    x[i, j] += eps
                numeric = (up - down) / (2 * eps)
                analytic = float(x.grad[i, j])
                assert abs(numeric - analytic) / max(1e-4, abs(numeric) + abs(analytic)) < 1e-4


class TestCrfLoss:

    def test_gradient_matches_finite_differences(self):
        words, kg, lexicon = tiny_kg_setup()
        model = TaggerModel(words, kg, lexicon, hidden=2, link_dim=2, seed=4)
        rng = np.random.default_rng(4)
        with torch.no_grad():
            for p in model.crf.parameters():
                p.copy_(torch.as_tensor(rng.normal(size=tuple(p.shape))))
        example = EssentialTermsExample.from_ratings(tokenize("solar panel light cell"), [4, 4, 2, 5])

        loss, grads = crf_nll_and_gradient(model, example)
        assert loss >= 0.0
        assert set(grads) == {name for name, _ in model.named_parameters()}

        eps = 1e-5
        checked = 0
        params = dict(model.named_parameters())
        for name, grad in grads.items():
            flat = params[name].detach().view(-1)
            for i in map(int, rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False)):
                orig = float(flat[i])
                with torch.no_grad():
                    flat[i] = orig + eps
                    up = float(model.nll(example))
                    flat[i] = orig - eps
                    down = float(model.nll(example))
                    flat[i] = orig
                numeric = (up - down) / (2 * eps)
                analytic = float(grad.view(-1)[i])
                assert abs(numeric - analytic) / max(1e-4, abs(numeric) + abs(analytic)) < 1e-4, name
                checked += 1
        assert checked >= 20


class TestTraining:

    def test_learns_toy_set(self, toy_examples, toy_word_table):
        config = TrainConfig(epochs=50, lr0=0.015, lr_decay=0.05, rng_seed=3, hidden=16)
        model = train_tagger(toy_examples, config, toy_word_table)
        assert eval_tagger(model, toy_examples).f1 >= 0.95
        assert len(model.loss_history) == 50

    def test_same_seed_same_model(self, toy_examples, toy_word_table):
        config = TrainConfig(epochs=2, rng_seed=9, hidden=4)
        a = train_tagger(toy_examples, config, toy_word_table)
        b = train_tagger(toy_examples, config, toy_word_table)
        for (name, ta), (_, tb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert torch.equal(ta, tb), name

    def test_returns_best_dev_snapshot(self, toy_examples, toy_word_table):
        train, dev = toy_examples[:15], toy_examples[15:]
        config = TrainConfig(epochs=6, rng_seed=1, hidden=4)
        model = train_tagger(train, config, toy_word_table, dev=dev)
        assert len(model.dev_history) == 6
        assert eval_tagger(model, dev).f1 == max(model.dev_history)

        # the snapshot is the model as it stood after the first best epoch
        best_epoch = int(np.argmax(model.dev_history))
        replay = train_tagger(train, config.model_copy(update={"epochs": best_epoch + 1}), toy_word_table)
        for (name, ta), (_, tb) in zip(model.state_dict().items(), replay.state_dict().items()):
            assert torch.equal(ta, tb), name

    def test_no_dev_keeps_final_epoch(self, toy_examples, toy_word_table):
        model = train_tagger(toy_examples[:4], TrainConfig(epochs=2, rng_seed=1, hidden=4), toy_word_table)
        assert model.dev_history == []

    def test_single_example_loss_decreases(self, toy_examples, toy_word_table):
        config = TrainConfig(epochs=10, lr0=1e-3, lr_decay=0.0, rng_seed=0, hidden=4)
        history = train_tagger(toy_examples[:1], config, toy_word_table).loss_history
        assert all(later <= earlier + 1e-12 for earlier, later in zip(history, history[1:]))

    def test_zero_epochs_rejected(self):
        with pytest.raises(ValidationError):
            TrainConfig(epochs=0)

    def test_learning_rate_schedule(self):
        config = TrainConfig(lr0=0.015, lr_decay=0.05)
        assert config.lr_at(0) == 0.015
        assert config.lr_at(10) == pytest.approx(0.015 / 1.5)

    def test_dimension_mismatch(self, toy_examples, toy_word_table):
        with pytest.raises(ConfigurationError):
            train_tagger(toy_examples, TrainConfig(epochs=1, word_dim=300, hidden=2), toy_word_table)

    def test_empty_dataset(self, toy_word_table):
        with pytest.raises(DataError):
            train_tagger([], TrainConfig(epochs=1, hidden=2), toy_word_table)


class TestMetrics:

    def test_confusion_fixture(self):
        m = token_metrics([1, 0, 1, 0], [1, 1, 0, 0])
        assert (m.accuracy, m.precision, m.recall, m.f1) == (0.5, 0.5, 0.5, 0.5)

    def test_perfect(self):
        m = token_metrics([1, 0, 1], [1, 0, 1])
        assert (m.accuracy, m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0, 1.0)

    def test_all_zero_predictions(self):
        m = token_metrics([1, 0, 0], [0, 0, 0])
        assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)
        assert m.accuracy == pytest.approx(2 / 3)


class _FixedTagger:
    def __init__(self, labels):
        self.labels = labels

    def predict(self, tokens):
        return [self.labels[i % len(self.labels)] for i in range(len(tokens))]


class TestSelectTerms:

    def test_mask_applied_in_order(self):
        assert select_terms(_FixedTagger([1, 0, 1]), "Which gas plants") == ["which", "plants"]

    def test_all_kept(self):
        assert select_terms(_FixedTagger([1]), "Which gas do plants absorb?") == \
            ["which", "gas", "do", "plants", "absorb"]

    def test_nothing_kept_falls_back(self):
        assert select_terms(_FixedTagger([0]), "Which gas?") == ["which", "gas"]

    def test_passthrough(self):
        assert PassthroughSelector().select("Which gas do plants absorb?") == \
            ["which", "gas", "do", "plants", "absorb"]


class TestPersistence:

    def test_round_trip_tags_identically(self, tmp_path, toy_examples):
        words, kg, lexicon = tiny_kg_setup()
        model = TaggerModel(words, kg, lexicon, hidden=3, link_dim=4, seed=5, variant="complex")
        path = save_tagger(model, tmp_path / "tagger.safetensors")
        loaded = load_tagger(path)
        assert loaded.variant == "complex"
        assert loaded.lexicon.entries == lexicon.entries
        for ex in toy_examples[:5]:
            assert torch.equal(loaded.emissions(ex.tokens), model.emissions(ex.tokens))
            assert loaded.predict(ex.tokens) == model.predict(ex.tokens)

    def test_round_trip_without_kg(self, tmp_path, toy_examples, toy_word_table):
        model = TaggerModel(toy_word_table, hidden=3, seed=2)
        loaded = load_tagger(save_tagger(model, tmp_path / "t.safetensors"))
        assert not loaded.kg_enabled
        assert loaded.predict(toy_examples[0].tokens) == model.predict(toy_examples[0].tokens)

    def test_not_a_model(self, tmp_path):
        path = tmp_path / "junk.safetensors"
        path.write_bytes(b"junk")
        with pytest.raises(ModelLoadError):
            load_tagger(path)

"""Shared fixtures: the toy essential-terms set, seeded embeddings, a synthetic
entailment set and a planted-evidence exam."""

import json
from pathlib import Path

import numpy as np
import pytest

from agents.corpus_index import build_index
from agents.embeddings import WordEmbeddingTable
from agents.entailment import LexicalScorer, PremiseHypothesisPair
from agents.qa_dataset import load_essential_terms
from agents.rewriter import PassthroughSelector
from backend.pipeline import Components
from backend.schemas import EntailmentLabel

FIXTURES = Path(__file__).parent / "fixtures"
LABELS = ["A", "B", "C", "D"]


# -----------------------------------------------------------------------
# Essential terms
# -----------------------------------------------------------------------


@pytest.fixture
def toy_terms_path():
    return FIXTURES / "essential_terms_toy.tsv"


@pytest.fixture
def toy_examples(toy_terms_path):
    return load_essential_terms(toy_terms_path)


def signal_embeddings(examples, dim=8, seed=0):
    """Essential words point one way along the first four axes, the rest the other way."""
    rng = np.random.default_rng(seed)
    vectors = {}
    for ex in examples:
        for tok, label in zip(ex.tokens, ex.labels):
            if tok.norm in vectors:
                continue
            vec = rng.normal(0.0, 0.1, size=dim)
            vec[:4] += 1.5 if label == 1 else -1.5
            vectors[tok.norm] = vec
    return WordEmbeddingTable.from_vectors(vectors, dim=dim, seed=seed)


@pytest.fixture
def toy_word_table(toy_examples):
    return signal_embeddings(toy_examples)


# -----------------------------------------------------------------------
# Entailment
# -----------------------------------------------------------------------


def synthetic_entailment(n=50, vocab_size=24, dim=16, seed=0):
    """
    Entailing hypotheses are sub-bags of their premise; neutral ones share
    no word with it. Returns (pairs, word_table).
    """
    rng = np.random.default_rng(seed)
    vocab = [f"w{i}" for i in range(vocab_size)]
    table = WordEmbeddingTable.from_vectors({w: rng.normal(0.0, 0.5, size=dim) for w in vocab},
                                            dim=dim, seed=seed)
    pairs = []
    for i in range(n):
        premise = list(rng.choice(vocab, size=4, replace=False))
        if i % 2 == 0:
            hypothesis = list(rng.choice(premise, size=2, replace=False))
            label = EntailmentLabel.ENTAILS
        else:
            rest = [w for w in vocab if w not in premise]
            hypothesis = list(rng.choice(rest, size=2, replace=False))
            label = EntailmentLabel.NEUTRAL
        pairs.append(PremiseHypothesisPair(premise=[str(w) for w in premise],
                                           hypothesis=[str(w) for w in hypothesis],
                                           gold_label=label))
    return pairs, table


@pytest.fixture
def entailment_data():
    return synthetic_entailment()


# -----------------------------------------------------------------------
# Planted exam
# -----------------------------------------------------------------------


def planted_exam(n=20):
    """
    Question i asks what `zorb{i}` produces; exactly one sentence in the
    corpus contains every content word of the gold hypothesis.
    Returns (records, corpus, gold).
    """
    records, corpus, gold = [], [], {}
    for i in range(n):
        texts = [f"alpha{i}", f"beta{i}", f"gamma{i}", f"delta{i}"]
        key = LABELS[i % 4]
        answer = texts[LABELS.index(key)]
        records.append({
            "id": f"Q{i:02d}",
            "question": {"stem": f"What does zorb{i} produce?",
                         "choices": [{"label": l, "text": t} for l, t in zip(LABELS, texts)]},
            "answerKey": key,
        })
        corpus.append(f"{answer} does zorb{i} produce daily")
        gold[f"Q{i:02d}"] = key
    corpus += ["rivers carry sediment to the ocean", "volcanoes release ash and gas"]
    return records, corpus, gold


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(r) + "\n")
    return path


@pytest.fixture
def exam(tmp_path):
    records, corpus, gold = planted_exam()
    questions_file = write_jsonl(tmp_path / "questions.jsonl", records)
    components = Components(index=build_index(corpus), selector=PassthroughSelector(),
                            scorer=LexicalScorer())
    return questions_file, components, gold, records, corpus

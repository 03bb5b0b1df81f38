import itertools

import numpy as np
import pytest

from cipherner import nn
from cipherner.cipher import build_codebook, encrypt_corpus, encrypt_tokens, parse_scheme
from cipherner.corpus import (ConfigInvalid, Corpus, EmptyCorpus, Sentence, SynthConfig,
                              Vocabulary, generate_synthetic, is_bioes_valid, split)
from cipherner.ner import (EmptyInput, IncompleteTagset, SchemeMismatch, TrainConfig, TrainedModel,
                           build_constraint_mask, build_tagset, evaluate, predict, train)

FAST = TrainConfig(embed_dim=8, hidden_dim=8, epochs=3, seed=1)


def grammar_allows(prev, nxt):
    """BIOES successor relation written from the tag grammar, START/STOP as None."""
    p = "O" if prev in (None, "O") else prev[0]
    n = "O" if nxt in (None, "O") else nxt[0]
    if p in "BI":
        return nxt is not None and n in "IE" and nxt[2:] == prev[2:]
    return nxt is None or n not in "IE"


@pytest.fixture(scope="module")
def data():
    c = generate_synthetic(SynthConfig(n_sentences=60, vocab_size=80, max_len=10), 2)
    return split(c, (0.75, 0.0, 0.25), 2)


def test_tagset_and_mask_examples():
    tags = build_tagset([["B-L", "E-L", "O"]])
    assert tags == ("O", "B-L", "I-L", "E-L", "S-L")
    m = build_constraint_mask(tags)
    ix = {t: i for i, t in enumerate(tags)}
    assert not m[ix["O"], ix["I-L"]] and not m[ix["O"], ix["E-L"]]
    assert m[ix["O"], ix["B-L"]]
    for bad in ("B-L", "S-L", "O"):
        assert not m[ix["B-L"], ix[bad]] and not m[ix["I-L"], ix[bad]]
    assert not m[ix["E-L"], ix["E-L"]] and not m[ix["E-L"], ix["I-L"]]


def test_mask_matches_grammar_two_types():
    tags = build_tagset([["S-A", "S-B"]])
    m = build_constraint_mask(tags)
    K = len(tags)
    for i, a in enumerate(tags):
        assert m[K, i] == grammar_allows(None, a)
        assert m[i, K + 1] == grammar_allows(a, None)
        for j, b in enumerate(tags):
            assert m[i, j] == grammar_allows(a, b), (a, b)


@pytest.mark.parametrize("T", [1, 2, 3, 4])
def test_allowed_paths_are_exactly_valid_sequences(T):
    tags = build_tagset([["S-L"]])
    m = build_constraint_mask(tags)
    K = len(tags)
    for path in itertools.product(range(K), repeat=T):
        moves = [(K, path[0])] + list(zip(path, path[1:])) + [(path[-1], K + 1)]
        allowed = all(m[a, b] for a, b in moves)
        assert allowed == is_bioes_valid([tags[i] for i in path])


def test_incomplete_tagset():
    with pytest.raises(IncompleteTagset):
        build_constraint_mask(("O", "B-L", "E-L"))
    with pytest.raises(IncompleteTagset):
        build_constraint_mask(("S-L",))


def test_overfit_single_sentence():
    sent = Corpus((Sentence.from_pairs(list("张三在北京工作"),
                                       ["B-PER", "E-PER", "O", "B-LOC", "E-LOC", "O", "O"]),))
    model = train(sent, config=TrainConfig(epochs=200, seed=0))
    assert predict(model, sent.token_sequences[0]) == sent.label_sequences[0]
    assert evaluate(model, sent).f1 == 1.0


def test_training_is_deterministic(data):
    tr, _, _ = data
    assert train(tr, config=FAST).checkpoint() == train(tr, config=FAST).checkpoint()
    assert train(tr, config=FAST).checkpoint() != train(tr, config=TrainConfig(
        embed_dim=8, hidden_dim=8, epochs=3, seed=2)).checkpoint()


@pytest.mark.parametrize("spec", ["md5", "shift:3", "sha256b64"])
def test_ciphertext_training_is_bit_identical(data, spec):
    tr, _, te = data
    vocab = Vocabulary.from_sequences(tr.token_sequences + te.token_sequences)
    cb = build_codebook(vocab, parse_scheme(spec))
    plain = train(tr, config=FAST)
    cipher = train(encrypt_corpus(tr, cb), config=FAST)
    assert plain.checkpoint() == cipher.checkpoint()
    assert plain.loss_history == cipher.loss_history
    assert evaluate(plain, te) == evaluate(cipher, encrypt_corpus(te, cb))


def test_lex_mode_breaks_bit_identity(data):
    tr, _, _ = data
    cfg = TrainConfig(embed_dim=8, hidden_dim=8, epochs=1, seed=1, vocab_mode="lex")
    cb = build_codebook(Vocabulary.from_corpus(tr), parse_scheme("md5"))
    assert train(tr, config=cfg).checkpoint() != train(encrypt_corpus(tr, cb), config=cfg).checkpoint()


def test_predict_contract(data):
    tr, _, te = data
    model = train(tr, config=FAST)
    for toks in te.token_sequences:
        out = predict(model, toks)
        assert len(out) == len(toks) and is_bioes_valid(out)
    unk = predict(model, ["未知"] * 6)
    assert len(unk) == 6 and is_bioes_valid(unk)
    with pytest.raises(EmptyInput):
        predict(model, [])


def test_predict_with_prediction_time_encryption(data):
    tr, _, te = data
    cb = build_codebook(Vocabulary.from_sequences(tr.token_sequences + te.token_sequences),
                        parse_scheme("md5"))
    plain, cipher = train(tr, config=FAST), train(encrypt_corpus(tr, cb), config=FAST)
    for toks in te.token_sequences[:5]:
        assert predict(cipher, encrypt_tokens(toks, cb)) == predict(plain, toks)


def test_all_o_predictor(data):
    tr, _, te = data
    model = train(tr, config=FAST)
    model.params.proj_b[:] = -100.0
    model.params.proj_b[0] = 100.0
    m = evaluate(model, te)
    assert m.recall == 0.0 and m.tp == 0 and m.fp == 0


def test_scheme_mismatch(data):
    tr, _, te = data
    cb = build_codebook(Vocabulary.from_sequences(tr.token_sequences + te.token_sequences),
                        parse_scheme("md5"))
    model = train(encrypt_corpus(tr, cb), config=FAST)
    with pytest.raises(SchemeMismatch):
        evaluate(model, te)


def test_empty_and_bad_config(data):
    with pytest.raises(EmptyCorpus):
        train(Corpus(()), config=FAST)
    with pytest.raises(ConfigInvalid):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigInvalid):
        TrainConfig(vocab_mode="random")
    with pytest.raises(ConfigInvalid):
        train(data[0], config=TrainConfig(epochs=1, dev_selection=True))
    assert TrainConfig.from_kv({"vocab_mode": "lexicographic", "epochs": "4"}).vocab_mode == "lex"


def test_dev_selection_keeps_a_recorded_epoch(data):
    tr, _, te = data
    cfg = TrainConfig(embed_dim=8, hidden_dim=8, epochs=3, seed=1, dev_selection=True)
    model = train(tr, te, cfg)
    assert 1 <= model.epoch <= 3 and len(model.loss_history) == 3


def test_nll_is_finite_and_decreasing(data):
    tr, _, _ = data
    hist = []
    train(tr, config=TrainConfig(embed_dim=8, hidden_dim=8, epochs=5),
          on_epoch=lambda e, nll: hist.append(nll))
    assert all(np.isfinite(hist)) and hist[-1] < hist[0]


def test_model_directory_round_trip(data, tmp_path):
    tr, _, te = data
    cb = build_codebook(Vocabulary.from_corpus(tr), parse_scheme("base64"))
    model = train(encrypt_corpus(tr, cb), config=FAST)
    model.save(tmp_path / "m")
    again = TrainedModel.load(tmp_path / "m")
    assert again.checkpoint() == model.checkpoint()
    assert again.vocab.tokens == model.vocab.tokens and again.tagset == model.tagset
    assert again.config == model.config and again.loss_history == model.loss_history
    assert again.data_fingerprint == cb.fingerprint

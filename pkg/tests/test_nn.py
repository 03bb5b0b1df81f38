import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cipherner import nn
from cipherner.ner import build_constraint_mask, build_tagset

from conftest import brute_force_paths, brute_path_score


def random_crf(rng, K, mask=None, scale=1.0):
    mask = nn.open_mask(K) if mask is None else mask
    return nn.CrfParams(rng.normal(0, scale, (K + 2, K + 2)), mask)


def brute_log_z(E, crf):
    S = crf.scores()
    scores = [brute_path_score(E, S, p) for p in brute_force_paths(E.shape[1], len(E))]
    return np.logaddexp.reduce(scores), scores


def random_model(rng, V=7, K=5, d=3, h=4, mask=None, seed=0):
    p = nn.init_params(V, K, mask, d, h, seed)
    for t in p.tensors():  # larger weights give a sharper gradient check
        t[...] = rng.normal(0, 0.5, t.shape)
    return p


# --- numerics ----------------------------------------------------------------

@given(st.lists(st.floats(-50, 50), min_size=1, max_size=10), st.floats(-100, 100))
def test_logsumexp_shift_invariance(xs, c):
    x = np.array(xs)
    assert abs(nn.logsumexp(x + c) - (nn.logsumexp(x) + c)) <= 1e-12 * max(1.0, abs(c) + 60)


def test_logsumexp_handles_neg_inf():
    assert nn.logsumexp(np.array([-np.inf, -np.inf])) == -np.inf
    assert nn.logsumexp(np.array([-np.inf, 0.0])) == 0.0


# --- LSTM ---------------------------------------------------------------------

def zero_lstm(d=3, h=2):
    return nn.LstmParams(np.zeros((4 * h, d)), np.zeros((4 * h, h)), np.zeros(4 * h))


def test_lstm_zero_weights():
    p = zero_lstm()
    h, c = nn.lstm_cell(np.ones(3), np.ones(2), np.zeros(2), p)
    assert np.all(c == 0) and np.all(h == 0)
    v = np.array([0.7, -2.0])
    h, c = nn.lstm_cell(np.ones(3), np.ones(2), v, p)
    np.testing.assert_allclose(c, 0.5 * v, rtol=0, atol=1e-15)
    np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * v), rtol=0, atol=1e-15)


def test_lstm_gate_layout():
    p = zero_lstm()
    p.b[:2] = 100.0  # forget gate saturates at 1; input gate stays 0.5 with c~ = 0
    _, c = nn.lstm_cell(np.zeros(3), np.zeros(2), np.array([1.0, 2.0]), p)
    np.testing.assert_allclose(c, [1.0, 2.0])
    assert p.gate("F")[2] is not None and p.gate("C")[2].shape == (2,)


def test_lstm_input_validation():
    p = zero_lstm()
    with pytest.raises(nn.ShapeMismatch):
        nn.lstm_cell(np.ones(4), np.ones(2), np.zeros(2), p)
    with pytest.raises(nn.NonFiniteInput):
        nn.lstm_cell(np.array([np.nan, 0, 0]), np.ones(2), np.zeros(2), p)


def test_lstm_cell_jacobian(np_rng):
    d, h = 3, 4
    p = nn.LstmParams(np_rng.normal(0, 0.5, (4 * h, d)), np_rng.normal(0, 0.5, (4 * h, h)),
                      np_rng.normal(0, 0.5, 4 * h))
    x, hp, cp = np_rng.normal(size=d), np_rng.normal(size=h), np_rng.normal(size=h)
    wh, wc = np_rng.normal(size=h), np_rng.normal(size=h)

    def loss(x, hp, cp, p):
        hh, cc = nn.lstm_cell(x, hp, cp, p)
        return wh @ hh + wc @ cc

    dx, dhp, dcp, g = nn.lstm_cell_backward(x, hp, cp, p, wh, wc)
    eps = 1e-5

    def fd(arr, rebuild):
        out = np.zeros_like(arr)
        for i in np.ndindex(arr.shape):
            plus, minus = arr.copy(), arr.copy()
            plus[i] += eps
            minus[i] -= eps
            out[i] = (loss(*rebuild(plus)) - loss(*rebuild(minus))) / (2 * eps)
        return out

    checks = [
        (dx, fd(x, lambda a: (a, hp, cp, p))),
        (dhp, fd(hp, lambda a: (x, a, cp, p))),
        (dcp, fd(cp, lambda a: (x, hp, a, p))),
        (g.Wa, fd(p.Wa, lambda a: (x, hp, cp, nn.LstmParams(a, p.Wb, p.b)))),
        (g.Wb, fd(p.Wb, lambda a: (x, hp, cp, nn.LstmParams(p.Wa, a, p.b)))),
        (g.b, fd(p.b, lambda a: (x, hp, cp, nn.LstmParams(p.Wa, p.Wb, a)))),
    ]
    for analytic, numeric in checks:
        rel = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert rel <= 1e-6


# --- encoder ----------------------------------------------------------------

def test_encode_shapes_and_zero_params():
    p = nn.init_params(10, 5, embed_dim=4, hidden_dim=3, seed=1)
    assert nn.bilstm_encode([3], p).shape == (1, 5)
    z = p.zeros_like()
    z.proj_b[:] = np.arange(5.0)
    np.testing.assert_array_equal(nn.bilstm_encode([1, 2, 3], z), np.tile(np.arange(5.0), (3, 1)))


def test_reverse_symmetry():
    p = nn.init_params(12, 4, embed_dim=5, hidden_dim=6, seed=3)
    x = [1, 5, 2, 9, 0, 3]
    fwd = nn.bilstm_encode(x, p)
    rev = nn.bilstm_encode(x[::-1], p.swapped_directions())
    np.testing.assert_allclose(rev, fwd[::-1], rtol=0, atol=1e-14)


def test_index_validation():
    p = nn.init_params(4, 3, embed_dim=2, hidden_dim=2)
    with pytest.raises(nn.IndexOutOfRange):
        nn.bilstm_encode([4], p)
    with pytest.raises(nn.NNError):
        nn.bilstm_encode([], p)


# --- CRF ----------------------------------------------------------------------

def test_partition_examples():
    crf = nn.CrfParams(np.zeros((4, 4)), nn.open_mask(2))
    assert nn.crf_log_partition(np.zeros((1, 2)), crf) == pytest.approx(np.log(2), abs=1e-15)
    assert nn.crf_log_partition(np.zeros((2, 2)), crf) == pytest.approx(np.log(4), abs=1e-15)
    assert nn.crf_nll(np.zeros((1, 2)), crf, [0]) == pytest.approx(np.log(2), abs=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_crf_against_enumeration(seed):
    rng = np.random.default_rng(seed)
    K, T = 3, 4
    E = rng.normal(size=(T, K))
    crf = random_crf(rng, K)
    log_z, scores = brute_log_z(E, crf)
    assert abs(nn.crf_log_partition(E, crf) - log_z) <= 1e-10 * abs(log_z)
    assert np.sum(np.exp(np.array(scores) - log_z)) == pytest.approx(1.0, abs=1e-9)
    assert all(s <= log_z for s in scores)
    paths = list(brute_force_paths(K, T))
    gold = paths[rng.integers(len(paths))]
    nll = nn.crf_nll(E, crf, gold)
    prob = np.exp(brute_path_score(E, crf.scores(), gold) - log_z)
    assert nll >= 0 and abs(np.exp(-nll) - prob) <= 1e-10 * prob
    path, score = nn.viterbi(E, crf)
    best = int(np.argmax(scores))
    assert path == paths[best] and abs(score - scores[best]) <= 1e-10 * abs(scores[best])
    assert nn.path_score(E, crf, path) == pytest.approx(score, rel=1e-12)


def test_single_feasible_path_has_zero_nll():
    K = 2
    mask = nn.open_mask(K)
    mask[K, 1] = False  # must start with 0
    mask[0, 0] = False  # 0 -> 1 only
    mask[1, 1] = False
    mask[1, 0] = False
    crf = nn.CrfParams(np.zeros((4, 4)), mask)
    E = np.zeros((2, K))
    assert nn.crf_nll(E, crf, [0, 1]) == pytest.approx(0.0, abs=1e-12)
    assert nn.viterbi(E, crf)[0] == [0, 1]
    with pytest.raises(nn.GoldViolatesConstraints):
        nn.crf_nll(E, crf, [1, 0])
    with pytest.raises(nn.NoFeasiblePath):
        nn.viterbi(np.zeros((3, K)), crf)


def test_viterbi_follows_strong_emissions():
    E = np.full((4, 3), -5.0)
    target = [2, 0, 1, 1]
    E[np.arange(4), target] = 5.0
    assert nn.viterbi(E, nn.CrfParams(np.zeros((5, 5)), nn.open_mask(3)))[0] == target


def test_masked_decodes_never_use_forbidden_moves():
    tags = build_tagset([["B-L", "E-L"]])
    mask = build_constraint_mask(tags)
    rng = np.random.default_rng(0)
    o, i_l = tags.index("O"), tags.index("I-L")
    crf = nn.CrfParams(rng.normal(size=mask.shape), mask)
    for _ in range(1000):
        path, _ = nn.viterbi(rng.normal(0, 3, (8, len(tags))), crf)
        assert all((a, b) != (o, i_l) for a, b in zip(path, path[1:]))
        assert all(mask[a, b] for a, b in zip(path, path[1:]))


# --- gradients ------------------------------------------------------------------

def fd_check(params, idx, gold, eps=1e-5):
    grads = nn.backward(params, idx, gold)
    worst = 0.0
    for (name, p), g in zip(params.named_tensors(), grads.tensors()):
        num = np.zeros_like(p)
        for i in np.ndindex(p.shape):
            old = p[i]
            p[i] = old + eps
            up = nn.crf_nll(nn.bilstm_encode(idx, params), params.crf, gold)
            p[i] = old - eps
            down = nn.crf_nll(nn.bilstm_encode(idx, params), params.crf, gold)
            p[i] = old
            num[i] = (up - down) / (2 * eps)
        rel = np.linalg.norm(g - num) / max(np.linalg.norm(num), 1e-8)
        worst = max(worst, rel)
        assert rel <= 1e-4, name
    return worst


def test_gradient_check_t5(np_rng):
    tags = build_tagset([["B-L", "E-L", "S-P"]])
    params = random_model(np_rng, V=6, K=len(tags), mask=build_constraint_mask(tags))
    gold = [tags.index(t) for t in ["B-L", "I-L", "E-L", "O", "S-P"]]
    fd_check(params, [1, 2, 3, 1, 5], gold)


def test_unused_embedding_rows_have_zero_gradient(np_rng):
    params = random_model(np_rng, V=9, K=3)
    g = nn.backward(params, [1, 4, 4], [0, 2, 1])
    unused = [r for r in range(9) if r not in (1, 4)]
    assert np.all(g.embeddings[unused] == 0.0)
    assert np.any(g.embeddings[4] != 0.0)


def test_certain_gold_gives_zero_gradients():
    K = 2
    mask = nn.open_mask(K)
    mask[K, 1] = False
    mask[0, 0] = mask[1, 1] = mask[1, 0] = False
    p = nn.init_params(4, K, mask, 3, 2, seed=0)
    g = nn.backward(p, [1, 2], [0, 1])
    assert all(np.all(t == 0.0) for t in g.tensors())


def test_sgd_examples():
    p = nn.init_params(3, 2, None, 2, 2, 0)
    before = p.copy()
    nn.sgd_step(p, p.zeros_like(), lr=0.1)
    assert p.equal(before)

    g = p.zeros_like()
    g.proj_b[0] = 0.5
    p.proj_b[0] = 2.0
    nn.sgd_step(p, g, lr=1.0)
    assert p.proj_b[0] == 1.5

    g = p.zeros_like()
    g.embeddings[0, 0] = 6.0
    g.proj_W[0, 0] = 8.0
    assert nn.global_norm(g) == 10.0
    ref = p.copy()
    nn.sgd_step(p, g, lr=0.3, clip=1.0)
    update = np.sqrt(sum(np.sum((a - b) ** 2) for a, b in zip(p.tensors(), ref.tensors())))
    assert update == pytest.approx(0.3, rel=1e-12)


def test_training_steps_are_deterministic():
    def run():
        p = nn.init_params(6, 3, None, 4, 3, seed=5)
        for _ in range(5):
            _, g = nn.loss_and_grads(p, [1, 2, 3], [0, 1, 2])
            nn.sgd_step(p, g, 0.1, 5.0)
        return nn.dump_checkpoint(p)
    assert run() == run()


def test_checkpoint_round_trip():
    tags = build_tagset([["S-L"]])
    p = nn.init_params(11, len(tags), build_constraint_mask(tags), 4, 3, seed=9)
    blob = nn.dump_checkpoint(p, seed=9, epoch=12)
    assert blob[:4] == b"NER1"
    q, seed, epoch = nn.load_checkpoint(blob)
    assert q.equal(p) and (seed, epoch) == (9, 12)
    assert nn.dump_checkpoint(q, 9, 12) == blob
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(blob[:-8])
    with pytest.raises(nn.CheckpointError):
        nn.load_checkpoint(b"XXXX" + blob[4:])


def test_init_is_seeded_uniform():
    a = nn.init_params(50, 5, None, 8, 8, seed=1)
    b = nn.init_params(50, 5, None, 8, 8, seed=1)
    c = nn.init_params(50, 5, None, 8, 8, seed=2)
    assert a.equal(b) and not a.equal(c)
    assert all(np.all(np.abs(t) < 0.1) for t in a.tensors())

"""BiLSTM-CRF building blocks in float64 numpy with hand-written gradients.

Gate order everywhere is forget, input, output, candidate: the stacked
input weights ``Wa`` have shape (4h, d), the recurrent weights ``Wb``
(4h, h) and the bias ``b`` (4h,), with rows ``[0:h]`` for the forget gate,
``[h:2h]`` input, ``[2h:3h]`` output and ``[3h:4h]`` the cell candidate.

The CRF works over K tags plus two virtual states, START (index K) and
STOP (index K + 1).  ``transitions[i, j]`` scores moving from i to j.
Forbidden moves score ``MASKED_SCORE`` in the training objective and are
hard-rejected by Viterbi.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .rng import Xoshiro256

MASKED_SCORE = -1.0e4
INIT_SCALE = 0.1


class NNError(ValueError):
    pass


class ShapeMismatch(NNError):
    pass


class NonFiniteInput(NNError):
    pass


class IndexOutOfRange(NNError):
    pass


class GoldViolatesConstraints(NNError):
    pass


class NoFeasiblePath(NNError):
    pass


class CheckpointError(NNError):
    pass


def sigmoid(z):
    return 0.5 * np.tanh(0.5 * z) + 0.5


def logsumexp(x: np.ndarray, axis=None) -> np.ndarray:
    """Max-shifted log-sum-exp; rows that are entirely -inf give -inf."""
    m = np.max(x, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(x - m_safe), axis=axis, keepdims=True)) + m_safe
    return np.squeeze(out, axis=axis) if axis is not None else out.reshape(())[()]


def _lse_cols(M: np.ndarray) -> np.ndarray:
    # finite inputs only (training path): skips the -inf guard of logsumexp
    m = M.max(axis=0)
    return m + np.log(np.exp(M - m).sum(axis=0))


def _lse_rows(M: np.ndarray) -> np.ndarray:
    m = M.max(axis=1)
    return m + np.log(np.exp(M - m[:, None]).sum(axis=1))


# ---------------------------------------------------------------------------
# parameters

@dataclass
class LstmParams:
    Wa: np.ndarray
    Wb: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.Wb.shape[1]

    def gate(self, name: str) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(W_alpha, W_beta, B)`` views for gate ``F``, ``I``, ``O`` or ``C``."""
        h = self.hidden
        k = "FIOC".index(name)
        sl = slice(k * h, (k + 1) * h)
        return self.Wa[sl], self.Wb[sl], self.b[sl]

    def copy(self) -> "LstmParams":
        return LstmParams(self.Wa.copy(), self.Wb.copy(), self.b.copy())


@dataclass
class CrfParams:
    transitions: np.ndarray
    mask: np.ndarray

    @property
    def num_tags(self) -> int:
        return self.transitions.shape[0] - 2

    def scores(self) -> np.ndarray:
        """Transition matrix with forbidden entries pinned to MASKED_SCORE."""
        return np.where(self.mask, self.transitions, MASKED_SCORE)

    def hard_scores(self) -> np.ndarray:
        return np.where(self.mask, self.transitions, -np.inf)


def open_mask(num_tags: int) -> np.ndarray:
    """Mask allowing every tag move; START can only be left, STOP only entered."""
    k = num_tags
    mask = np.ones((k + 2, k + 2), dtype=bool)
    mask[:, k] = False
    mask[k + 1, :] = False
    mask[k, k + 1] = False
    return mask


@dataclass
class ModelParams:
    embeddings: np.ndarray
    fwd: LstmParams
    bwd: LstmParams
    proj_W: np.ndarray
    proj_b: np.ndarray
    crf: CrfParams

    TENSOR_NAMES = ("embeddings", "fwd.Wa", "fwd.Wb", "fwd.b", "bwd.Wa", "bwd.Wb", "bwd.b",
                    "proj_W", "proj_b", "transitions")

    def tensors(self) -> list[np.ndarray]:
        """Trainable tensors in checkpoint order (see TENSOR_NAMES)."""
        return [self.embeddings, self.fwd.Wa, self.fwd.Wb, self.fwd.b,
                self.bwd.Wa, self.bwd.Wb, self.bwd.b, self.proj_W, self.proj_b,
                self.crf.transitions]

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        return list(zip(self.TENSOR_NAMES, self.tensors()))

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """``(d, h, V, K)``."""
        return (self.embeddings.shape[1], self.fwd.hidden, self.embeddings.shape[0],
                self.proj_W.shape[0])

    def copy(self) -> "ModelParams":
        return ModelParams(self.embeddings.copy(), self.fwd.copy(), self.bwd.copy(),
                           self.proj_W.copy(), self.proj_b.copy(),
                           CrfParams(self.crf.transitions.copy(), self.crf.mask.copy()))

    def zeros_like(self) -> "ModelParams":
        z = self.copy()
        for t in z.tensors():
            t.fill(0.0)
        return z

    def swapped_directions(self) -> "ModelParams":
        """Same model with the two LSTMs (and their projection columns) exchanged."""
        h = self.fwd.hidden
        W = np.concatenate([self.proj_W[:, h:], self.proj_W[:, :h]], axis=1)
        return ModelParams(self.embeddings.copy(), self.bwd.copy(), self.fwd.copy(), W,
                           self.proj_b.copy(),
                           CrfParams(self.crf.transitions.copy(), self.crf.mask.copy()))

    def equal(self, other: "ModelParams") -> bool:
        """Bit-for-bit equality of every tensor and the mask."""
        return (all(a.shape == b.shape and a.tobytes() == b.tobytes()
                    for a, b in zip(self.tensors(), other.tensors()))
                and np.array_equal(self.crf.mask, other.crf.mask))


def init_params(vocab_size: int, num_tags: int, mask: np.ndarray | None = None,
                embed_dim: int = 32, hidden_dim: int = 64, seed: int = 0) -> ModelParams:
    """Uniform(-0.1, 0.1) initialisation from Xoshiro256(seed), tensors filled
    one after another in checkpoint order."""
    rng = Xoshiro256(seed)
    d, h, V, K = embed_dim, hidden_dim, vocab_size, num_tags
    if mask is None:
        mask = open_mask(K)
    if mask.shape != (K + 2, K + 2):
        raise ShapeMismatch(f"mask shape {mask.shape} for {K} tags")

    def u(*shape):
        return rng.uniform_array(shape, -INIT_SCALE, INIT_SCALE)

    emb = u(V, d)
    fwd = LstmParams(u(4 * h, d), u(4 * h, h), u(4 * h))
    bwd = LstmParams(u(4 * h, d), u(4 * h, h), u(4 * h))
    W, b = u(K, 2 * h), u(K)
    trans = u(K + 2, K + 2)
    return ModelParams(emb, fwd, bwd, W, b, CrfParams(trans, mask.copy()))


# ---------------------------------------------------------------------------
# LSTM

def lstm_cell(x, h_prev, c_prev, params: LstmParams):
    """One LSTM step: returns ``(h, c)``.

    f, i, o = sigmoid(W_alpha x + W_beta h_prev + B) per gate,
    c~ = tanh(...), c = f * c_prev + i * c~, h = o * tanh(c).
    """
    h_dim = params.hidden
    x, h_prev, c_prev = (np.asarray(v, dtype=np.float64) for v in (x, h_prev, c_prev))
    if x.shape != (params.Wa.shape[1],) or h_prev.shape != (h_dim,) or c_prev.shape != (h_dim,):
        raise ShapeMismatch(f"x{x.shape} h{h_prev.shape} c{c_prev.shape} "
                            f"vs params d={params.Wa.shape[1]} h={h_dim}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(h_prev)) and np.all(np.isfinite(c_prev))):
        raise NonFiniteInput("lstm_cell input contains NaN or Inf")
    z = params.Wa @ x + params.Wb @ h_prev + params.b
    g = np.empty_like(z)
    g[:3 * h_dim] = sigmoid(z[:3 * h_dim])
    g[3 * h_dim:] = np.tanh(z[3 * h_dim:])
    f, i, o, cc = np.split(g, 4)
    c = f * c_prev + i * cc
    return o * np.tanh(c), c


def lstm_cell_backward(x, h_prev, c_prev, params: LstmParams, dh, dc):
    """Gradients of a scalar loss through one :func:`lstm_cell` step.

    Given dL/dh and dL/dc at the output, returns
    ``(dx, dh_prev, dc_prev, LstmParams-of-gradients)``.
    """
    h_dim = params.hidden
    z = params.Wa @ x + params.Wb @ h_prev + params.b
    g = np.empty_like(z)
    g[:3 * h_dim] = sigmoid(z[:3 * h_dim])
    g[3 * h_dim:] = np.tanh(z[3 * h_dim:])
    f, i, o, cc = np.split(g, 4)
    c = f * c_prev + i * cc
    tc = np.tanh(c)
    dc_total = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([dc_total * c_prev * f * (1 - f),
                         dc_total * cc * i * (1 - i),
                         dh * tc * o * (1 - o),
                         dc_total * i * (1 - cc * cc)])
    grads = LstmParams(np.outer(dz, x), np.outer(dz, h_prev), dz.copy())
    return params.Wa.T @ dz, params.Wb.T @ dz, dc_total * f, grads


def _gate_scale(h: int) -> tuple[np.ndarray, np.ndarray]:
    # sigmoid(z) = 0.5 * tanh(z / 2) + 0.5, so one tanh covers all four gates
    scale = np.concatenate([np.full(3 * h, 0.5), np.ones(h)])
    shift = np.concatenate([np.full(3 * h, 0.5), np.zeros(h)])
    return scale, shift


def _lstm_forward(X: np.ndarray, p: LstmParams):
    T = X.shape[0]
    h = p.hidden
    scale, shift = _gate_scale(h)
    xa = (X @ p.Wa.T + p.b) * scale
    Wb = p.Wb * scale[:, None]
    H = np.zeros((T + 1, h))
    C = np.zeros((T + 1, h))
    G = np.empty((T, 4 * h))
    for t in range(T):
        g = G[t]
        np.tanh(xa[t] + Wb @ H[t], out=g)
        g *= scale
        g += shift
        C[t + 1] = g[:h] * C[t] + g[h:2 * h] * g[3 * h:]
        H[t + 1] = g[2 * h:3 * h] * np.tanh(C[t + 1])
    return H, C, G


def _lstm_backward(X, p: LstmParams, cache, dH: np.ndarray, grad: LstmParams) -> np.ndarray:
    """Accumulate parameter gradients into ``grad``; return dL/dX."""
    H, C, G = cache
    T = X.shape[0]
    h = p.hidden
    F, I, O, CC = G[:, :h], G[:, h:2 * h], G[:, 2 * h:3 * h], G[:, 3 * h:]
    TC = np.tanh(C[1:])
    # dz = Q[t] * [dc, dc, dh, dc]: gate input times activation derivative
    Q = np.concatenate([C[:T] * F * (1.0 - F), CC * I * (1.0 - I),
                        TC * O * (1.0 - O), I * (1.0 - CC * CC)], axis=1)
    OdT = O * (1.0 - TC * TC)
    dZ = np.empty((T, 4 * h))
    dh_next = np.zeros(h)
    dc_next = np.zeros(h)
    WbT = p.Wb.T
    for t in range(T - 1, -1, -1):
        dh = dH[t] + dh_next
        dc = dc_next + dh * OdT[t]
        np.multiply(Q[t], np.concatenate((dc, dc, dh, dc)), out=dZ[t])
        dc_next = dc * F[t]
        dh_next = WbT @ dZ[t]
    grad.Wa += dZ.T @ X
    grad.Wb += dZ.T @ H[:T]
    grad.b += dZ.sum(axis=0)
    return dZ @ p.Wa


# ---------------------------------------------------------------------------
# BiLSTM encoder

def _check_indices(indices, vocab_size: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1 or idx.size == 0:
        raise ShapeMismatch("need a non-empty 1-D index sequence")
    if idx.min() < 0 or idx.max() >= vocab_size:
        raise IndexOutOfRange(f"token index outside [0, {vocab_size})")
    return idx


def encoder_forward(indices, params: ModelParams):
    """Emissions (T x K) plus the cache :func:`encoder_backward` needs."""
    idx = _check_indices(indices, params.embeddings.shape[0])
    X = params.embeddings[idx]
    cf = _lstm_forward(X, params.fwd)
    cb = _lstm_forward(X[::-1], params.bwd)
    Hcat = np.concatenate([cf[0][1:], cb[0][1:][::-1]], axis=1)
    emissions = Hcat @ params.proj_W.T + params.proj_b
    return emissions, (idx, X, cf, cb, Hcat)


def bilstm_encode(indices, params: ModelParams) -> np.ndarray:
    return encoder_forward(indices, params)[0]


def encoder_backward(params: ModelParams, cache, d_emissions: np.ndarray, grads: ModelParams) -> None:
    """Accumulate gradients of everything below the emissions into ``grads``."""
    idx, X, cf, cb, Hcat = cache
    h = params.fwd.hidden
    grads.proj_W += d_emissions.T @ Hcat
    grads.proj_b += d_emissions.sum(axis=0)
    dH = d_emissions @ params.proj_W
    dXf = _lstm_backward(X, params.fwd, cf, dH[:, :h], grads.fwd)
    dXb = _lstm_backward(X[::-1], params.bwd, cb, dH[::-1, h:], grads.bwd)
    np.add.at(grads.embeddings, idx, dXf + dXb[::-1])


# ---------------------------------------------------------------------------
# CRF

def path_score(emissions: np.ndarray, crf: CrfParams, path: Sequence[int]) -> float:
    """Score of one tag path including START and STOP moves (soft mask)."""
    K = crf.num_tags
    S = crf.scores()
    path = list(path)
    total = S[K, path[0]] + S[path[-1], K + 1]
    for t, y in enumerate(path):
        total += emissions[t, y]
        if t:
            total += S[path[t - 1], y]
    return float(total)


def _forward_alphas(E: np.ndarray, S: np.ndarray) -> np.ndarray:
    T, K = E.shape
    A = S[:K, :K]
    alpha = np.empty((T, K))
    alpha[0] = S[K, :K] + E[0]
    for t in range(1, T):
        alpha[t] = _lse_cols(alpha[t - 1][:, None] + A) + E[t]
    return alpha


def crf_log_partition(emissions: np.ndarray, crf: CrfParams) -> float:
    """log of the summed exp-score over all tag paths (forward algorithm)."""
    E = np.asarray(emissions, dtype=np.float64)
    if E.ndim != 2 or E.shape[0] < 1 or E.shape[1] != crf.num_tags:
        raise ShapeMismatch(f"emissions {E.shape} for {crf.num_tags} tags")
    S = crf.scores()
    K = crf.num_tags
    alpha = _forward_alphas(E, S)
    return float(logsumexp(alpha[-1] + S[:K, K + 1]))


def _check_gold(crf: CrfParams, gold: Sequence[int]) -> None:
    K = crf.num_tags
    m = crf.mask
    if any(not 0 <= y < K for y in gold):
        raise ShapeMismatch("gold tag index out of range")
    moves = [(K, gold[0])] + list(zip(gold[:-1], gold[1:])) + [(gold[-1], K + 1)]
    for a, b in moves:
        if not m[a, b]:
            raise GoldViolatesConstraints(f"gold path uses forbidden move {a}->{b}")


def crf_nll(emissions: np.ndarray, crf: CrfParams, gold_path: Sequence[int]) -> float:
    gold = list(gold_path)
    if len(gold) != len(emissions):
        raise ShapeMismatch("gold path length differs from emissions")
    _check_gold(crf, gold)
    return crf_log_partition(emissions, crf) - path_score(emissions, crf, gold)


def crf_nll_grad(emissions: np.ndarray, crf: CrfParams, gold_path: Sequence[int]):
    """NLL together with its gradients w.r.t. emissions and transitions.

    Uses forward-backward marginals: d logZ / d score = expected count.
    Gradients for forbidden entries are zero since they never change.
    """
    E = np.asarray(emissions, dtype=np.float64)
    T, K = E.shape
    gold = list(gold_path)
    if len(gold) != T:
        raise ShapeMismatch("gold path length differs from emissions")
    _check_gold(crf, gold)
    S = crf.scores()
    A = S[:K, :K]
    alpha = _forward_alphas(E, S)
    beta = np.empty((T, K))
    beta[-1] = S[:K, K + 1]
    for t in range(T - 2, -1, -1):
        beta[t] = _lse_rows(A + (E[t + 1] + beta[t + 1])[None, :])
    log_z = float(logsumexp(alpha[-1] + S[:K, K + 1]))

    node = np.exp(alpha + beta - log_z)
    d_trans = np.zeros_like(S)
    d_trans[K, :K] = node[0]
    d_trans[:K, K + 1] = node[-1]
    if T > 1:
        pair = np.exp(alpha[:-1, :, None] + A[None] + (E[1:] + beta[1:])[:, None, :] - log_z)
        d_trans[:K, :K] = pair.sum(axis=0)

    dE = node
    gold_score = S[K, gold[0]] + S[gold[-1], K + 1]
    d_trans[K, gold[0]] -= 1.0
    d_trans[gold[-1], K + 1] -= 1.0
    for t, y in enumerate(gold):
        gold_score += E[t, y]
        dE[t, y] -= 1.0
        if t:
            gold_score += S[gold[t - 1], y]
            d_trans[gold[t - 1], y] -= 1.0
    d_trans[~crf.mask] = 0.0
    return log_z - float(gold_score), dE, d_trans


def viterbi(emissions: np.ndarray, crf: CrfParams) -> tuple[list[int], float]:
    """Best tag path and its score; forbidden moves are never taken.

    Ties go to the lowest tag index, both for the final tag and at every
    back-pointer.
    """
    E = np.asarray(emissions, dtype=np.float64)
    T, K = E.shape
    if K != crf.num_tags:
        raise ShapeMismatch(f"emissions {E.shape} for {crf.num_tags} tags")
    S = crf.hard_scores()
    A = S[:K, :K]
    delta = S[K, :K] + E[0]
    back = np.empty((T, K), dtype=np.int64)
    for t in range(1, T):
        cand = delta[:, None] + A
        back[t] = np.argmax(cand, axis=0)
        delta = cand[back[t], np.arange(K)] + E[t]
    final = delta + S[:K, K + 1]
    best = int(np.argmax(final))
    score = float(final[best])
    if not np.isfinite(score):
        raise NoFeasiblePath("every tag path uses a forbidden transition")
    path = [best]
    for t in range(T - 1, 0, -1):
        path.append(int(back[t, path[-1]]))
    path.reverse()
    return path, score


# ---------------------------------------------------------------------------
# full model loss / gradient and SGD

def loss_and_grads(params: ModelParams, indices, gold_path, grads: ModelParams | None = None):
    """CRF negative log-likelihood of one sentence and its gradient for every
    parameter tensor.  ``grads`` is zeroed and reused when given."""
    if grads is None:
        grads = params.zeros_like()
    else:
        for g in grads.tensors():
            g.fill(0.0)
    emissions, cache = encoder_forward(indices, params)
    nll, dE, d_trans = crf_nll_grad(emissions, params.crf, gold_path)
    grads.crf.transitions += d_trans
    encoder_backward(params, cache, dE, grads)
    return nll, grads


def backward(params: ModelParams, indices, gold_path) -> ModelParams:
    """Gradients of :func:`crf_nll` through the whole BiLSTM-CRF."""
    return loss_and_grads(params, indices, gold_path)[1]


def global_norm(grads: ModelParams) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.tensors())))


def sgd_step(params: ModelParams, grads: ModelParams, lr: float, clip: float = np.inf) -> ModelParams:
    """Clip by global gradient norm, then ``p -= lr * g`` in place."""
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    norm = global_norm(grads)
    scale = lr
    if np.isfinite(clip) and norm > clip:
        scale = lr * clip / norm
    for p, g in zip(params.tensors(), grads.tensors()):
        p -= scale * g
    return params


# ---------------------------------------------------------------------------
# checkpoint

CKPT_MAGIC = b"NER1"
_HEADER = struct.Struct("<6Q")


def dump_checkpoint(params: ModelParams, seed: int = 0, epoch: int = 0) -> bytes:
    """``NER1`` + six little-endian u64 (d, h, V, K, seed, epoch) + tensors as
    little-endian float64 in checkpoint order + the transition mask as 0/1
    float64."""
    d, h, V, K = params.dims
    parts = [CKPT_MAGIC, _HEADER.pack(d, h, V, K, seed, epoch)]
    for t in params.tensors():
        parts.append(np.ascontiguousarray(t, dtype="<f8").tobytes())
    parts.append(params.crf.mask.astype("<f8").tobytes())
    return b"".join(parts)


def load_checkpoint(blob: bytes) -> tuple[ModelParams, int, int]:
    """Inverse of :func:`dump_checkpoint`; returns ``(params, seed, epoch)``."""
    if blob[:4] != CKPT_MAGIC:
        raise CheckpointError("not an NER1 checkpoint")
    if len(blob) < 4 + _HEADER.size:
        raise CheckpointError("truncated header")
    d, h, V, K, seed, epoch = _HEADER.unpack_from(blob, 4)
    shapes = [(V, d), (4 * h, d), (4 * h, h), (4 * h,), (4 * h, d), (4 * h, h), (4 * h,),
              (K, 2 * h), (K,), (K + 2, K + 2), (K + 2, K + 2)]
    need = 4 + _HEADER.size + 8 * sum(int(np.prod(s)) for s in shapes)
    if len(blob) != need:
        raise CheckpointError(f"checkpoint is {len(blob)} bytes, expected {need}")
    pos = 4 + _HEADER.size
    arrays = []
    for s in shapes:
        n = int(np.prod(s))
        arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=pos).astype(np.float64).reshape(s))
        pos += 8 * n
    emb, fa, fb, fbias, ba, bb, bbias, W, b, trans, mask = arrays
    params = ModelParams(emb, LstmParams(fa, fb, fbias), LstmParams(ba, bb, bbias), W, b,
                         CrfParams(trans, mask != 0.0))
    return params, seed, epoch

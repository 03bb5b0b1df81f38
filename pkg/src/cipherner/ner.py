"""Train, decode and score BiLSTM-CRF taggers on plaintext or encrypted data.

Tokens are opaque strings, so a Text1/Text2/Text3 bundle trains exactly like
a plaintext corpus.  With first-occurrence vocabularies an injective
encryption only renames vocabulary entries: the integer index stream, and
therefore every parameter update, is the same as for the plaintext.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import nn
from .cipher import EncryptedBundle
from .cipher.codebook import BundleInvalid
from .corpus import (ConfigInvalid, Corpus, CorpusError, EmptyCorpus, Metrics, Vocabulary,
                     parse_kv, span_f1)

log = logging.getLogger(__name__)

BIOES_PREFIXES = "BIES"


class IncompleteTagset(CorpusError):
    pass


class SchemeMismatch(CorpusError):
    pass


class EmptyInput(CorpusError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    embed_dim: int = 32
    hidden_dim: int = 64
    lr: float = 0.01
    clip: float = 5.0
    epochs: int = 30
    seed: int = 0
    # parity-critical: "first" keeps plaintext and ciphertext index streams identical
    vocab_mode: str = "first"
    dev_selection: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigInvalid("epochs must be >= 1")
        if self.lr <= 0 or self.clip <= 0:
            raise ConfigInvalid("lr and clip must be positive")
        if self.vocab_mode not in ("first", "lex"):
            raise ConfigInvalid(f"vocab_mode must be 'first' or 'lex', not {self.vocab_mode!r}")
        if self.embed_dim < 1 or self.hidden_dim < 1:
            raise ConfigInvalid("dimensions must be positive")

    @classmethod
    def from_kv(cls, kv: dict[str, str], **overrides) -> "TrainConfig":
        conv = {"embed_dim": int, "hidden_dim": int, "lr": float, "clip": float, "epochs": int,
                "seed": int, "vocab_mode": str,
                "dev_selection": lambda v: v.lower() in ("1", "true", "yes")}
        args = {}
        try:
            for key, fn in conv.items():
                if key in kv:
                    args[key] = fn(kv[key])
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from None
        if args.get("vocab_mode") in ("first_occurrence",):
            args["vocab_mode"] = "first"
        if args.get("vocab_mode") in ("lexicographic",):
            args["vocab_mode"] = "lex"
        args.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**args)


@dataclass
class TrainedModel:
    params: nn.ModelParams
    vocab: Vocabulary
    tagset: tuple[str, ...]
    config: TrainConfig
    data_fingerprint: bytes | None = None
    loss_history: list[float] = field(default_factory=list)
    epoch: int = 0

    @property
    def tag_index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tagset)}

    def checkpoint(self) -> bytes:
        return nn.dump_checkpoint(self.params, self.config.seed, self.epoch)

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "model.ner1").write_bytes(self.checkpoint())
        (out / "vocab.txt").write_text("".join(t + "\n" for t in self.vocab.tokens),
                                       encoding="utf-8", newline="\n")
        (out / "tags.txt").write_text("".join(t + "\n" for t in self.tagset), encoding="utf-8")
        cfg = asdict(self.config)
        cfg["data_fingerprint"] = self.data_fingerprint.hex() if self.data_fingerprint else ""
        cfg["loss_history"] = ",".join(repr(x) for x in self.loss_history)
        (out / "config.txt").write_text("".join(f"{k}={v}\n" for k, v in cfg.items()),
                                        encoding="utf-8")

    @classmethod
    def load(cls, in_dir) -> "TrainedModel":
        d = Path(in_dir)
        params, _seed, epoch = nn.load_checkpoint((d / "model.ner1").read_bytes())
        vocab = Vocabulary((d / "vocab.txt").read_text(encoding="utf-8").splitlines())
        tagset = tuple((d / "tags.txt").read_text(encoding="utf-8").splitlines())
        kv = parse_kv((d / "config.txt").read_text(encoding="utf-8"))
        config = TrainConfig.from_kv(kv)
        fp = bytes.fromhex(kv.get("data_fingerprint", "")) or None
        history = [float(x) for x in kv.get("loss_history", "").split(",") if x]
        return cls(params, vocab, tagset, config, fp, history, epoch)


# ---------------------------------------------------------------------------
# tags and constraints

def build_tagset(label_sequences: Sequence[Sequence[str]]) -> tuple[str, ...]:
    """``O`` followed by B/I/E/S for every entity type seen, types sorted."""
    types = sorted({lab[2:] for seq in label_sequences for lab in seq if lab != "O"})
    return ("O",) + tuple(f"{p}-{t}" for t in types for p in BIOES_PREFIXES)


def build_constraint_mask(tagset: Sequence[str]) -> np.ndarray:
    """Allowed-move matrix over tags + START + STOP (True = allowed).

    Forbidden: O -> I/E; B-X or I-X -> anything but I-X/E-X; E-X and S-X ->
    I/E of any type; START -> I/E; B/I -> STOP.
    """
    tags = list(tagset)
    if "O" not in tags:
        raise IncompleteTagset("tagset lacks O")
    types = {t[2:] for t in tags if t != "O"}
    for etype in types:
        missing = [p for p in BIOES_PREFIXES if f"{p}-{etype}" not in tags]
        if missing:
            raise IncompleteTagset(f"type {etype} lacks {missing}")
    K = len(tags)
    START, STOP = K, K + 1
    mask = nn.open_mask(K)

    def allowed(prev: str | None, nxt: str | None) -> bool:
        # None stands for START (as prev) or STOP (as nxt)
        p_prefix, p_type = ("O", None) if prev in (None, "O") else (prev[0], prev[2:])
        if nxt is None:
            return p_prefix not in ("B", "I")
        n_prefix, n_type = ("O", None) if nxt == "O" else (nxt[0], nxt[2:])
        if p_prefix in ("B", "I"):
            return n_prefix in ("I", "E") and n_type == p_type
        return n_prefix not in ("I", "E")

    for i, a in enumerate(tags):
        for j, b in enumerate(tags):
            mask[i, j] = allowed(a, b)
        mask[START, i] = allowed(None, a)
        mask[i, STOP] = allowed(a, None)
    return mask


# ---------------------------------------------------------------------------
# training

def _as_sequences(data) -> tuple[list[list[str]], list[list[str]], bytes | None]:
    if isinstance(data, EncryptedBundle):
        data.validate()
        return data.token_sequences, data.label_sequences, data.codebook_fingerprint
    if isinstance(data, Corpus):
        return data.token_sequences, data.label_sequences, None
    raise BundleInvalid(f"cannot train on {type(data).__name__}")


def _build_model(tokens, labels, fp, config: TrainConfig) -> TrainedModel:
    vocab = Vocabulary.from_sequences(tokens, config.vocab_mode)
    tagset = build_tagset(labels)
    mask = build_constraint_mask(tagset)
    params = nn.init_params(len(vocab), len(tagset), mask, config.embed_dim,
                            config.hidden_dim, config.seed)
    return TrainedModel(params, vocab, tagset, config, fp)


def encode_data(model: TrainedModel, tokens, labels) -> list[tuple[np.ndarray, list[int]]]:
    tix = model.tag_index
    out = []
    for toks, labs in zip(tokens, labels):
        try:
            gold = [tix[l] for l in labs]
        except KeyError as exc:
            raise SchemeMismatch(f"label {exc.args[0]} not in the model's tagset") from None
        out.append((np.array(model.vocab.encode(toks), dtype=np.int64), gold))
    return out


def train(train_data, dev=None, config: TrainConfig = TrainConfig(),
          on_epoch=None) -> TrainedModel:
    """Sentence-level SGD in fixed corpus order; deterministic given
    ``(train_data, config)``.

    ``on_epoch(epoch, mean_nll)`` is called after each epoch when given.
    With ``config.dev_selection`` the parameters of the epoch with the best
    dev F1 are kept (earliest epoch on ties).
    """
    tokens, labels, fp = _as_sequences(train_data)
    if not tokens:
        raise EmptyCorpus("training data has no sentences")
    if config.dev_selection and dev is None:
        raise ConfigInvalid("dev_selection needs a dev set")
    model = _build_model(tokens, labels, fp, config)
    stream = encode_data(model, tokens, labels)
    params = model.params
    grads = params.zeros_like()
    best_f1, best = -1.0, None
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for idx, gold in stream:
            nll, grads = nn.loss_and_grads(params, idx, gold, grads)
            if not np.isfinite(nll):
                raise FloatingPointError(f"non-finite NLL in epoch {epoch}")
            total += nll
            nn.sgd_step(params, grads, config.lr, config.clip)
        mean = total / len(stream)
        model.loss_history.append(mean)
        model.epoch = epoch
        log.debug("epoch %d mean nll %.6f", epoch, mean)
        if on_epoch is not None:
            on_epoch(epoch, mean)
        if config.dev_selection:
            f1 = evaluate(model, dev).f1
            if f1 > best_f1:
                best_f1, best = f1, (params.copy(), epoch)
    if best is not None:
        model.params, model.epoch = best
    return model


# ---------------------------------------------------------------------------
# inference

def predict(model: TrainedModel, tokens: Sequence[str]) -> list[str]:
    """Constrained Viterbi labels.  Unseen tokens use the unknown embedding.

    A ciphertext-trained model expects tokens already encrypted with the
    provider's scheme.
    """
    if not tokens:
        raise EmptyInput("cannot tag an empty token sequence")
    idx = model.vocab.encode(tokens)
    emissions = nn.bilstm_encode(idx, model.params)
    path, _ = nn.viterbi(emissions, model.params.crf)
    return [model.tagset[i] for i in path]


def evaluate(model: TrainedModel, test) -> Metrics:
    tokens, labels, fp = _as_sequences(test)
    if fp != model.data_fingerprint:
        raise SchemeMismatch("test data and model were not encrypted with the same codebook")
    preds = [predict(model, toks) for toks in tokens]
    return span_f1(labels, preds)


@dataclass
class RunResult:
    model: TrainedModel
    metrics: Metrics
    seconds: float


def train_and_evaluate(train_data, test_data, config: TrainConfig, dev=None) -> RunResult:
    t0 = time.perf_counter()
    model = train(train_data, dev, config)
    metrics = evaluate(model, test_data)
    return RunResult(model, metrics, time.perf_counter() - t0)


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)

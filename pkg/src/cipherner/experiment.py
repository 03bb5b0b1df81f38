"""Plaintext vs ciphertext training runs on one synthetic split."""

from __future__ import annotations

import hashlib
import logging
import time
from dataclasses import dataclass, field, replace

from .cipher import build_codebook, encrypt_corpus, parse_scheme
from .corpus import (ConfigInvalid, Corpus, SynthConfig, Vocabulary, generate_synthetic,
                     parse_kv, split, synth_config_from_kv)
from .ner import TrainConfig, evaluate, train

log = logging.getLogger(__name__)

# (row name, --scheme form); None is the plaintext baseline
VARIANTS = (
    ("plaintext", None),
    ("shift", "shift:7"),
    ("base64", "base64"),
    ("md5", "md5"),
    ("sha256b64", "sha256b64"),
)

# CCKS2017 LSTM-CRF F1 as published, for context in reports only
PUBLISHED_CCKS2017_LSTM_CRF = (
    ("plaintext", 87.90),
    ("serial cipher", 88.18),
    ("base64", 87.88),
    ("md5", 88.07),
    ("sha256b64", 87.61),
)


@dataclass(frozen=True)
class ParityConfig:
    synth: SynthConfig = SynthConfig(n_sentences=600)
    n_train: int = 500
    n_dev: int = 0
    n_test: int = 100
    seed: int = 0
    train: TrainConfig = TrainConfig()
    variants: tuple[tuple[str, str | None], ...] = VARIANTS

    def __post_init__(self):
        if self.n_train < 1 or self.n_test < 1 or self.n_dev < 0:
            raise ConfigInvalid("need n_train >= 1, n_test >= 1, n_dev >= 0")
        if self.n_train + self.n_dev + self.n_test != self.synth.n_sentences:
            raise ConfigInvalid(
                f"n_train + n_dev + n_test = {self.n_train + self.n_dev + self.n_test} "
                f"but n_sentences = {self.synth.n_sentences}")
        if self.variants[0][1] is not None:
            raise ConfigInvalid("the first variant must be the plaintext baseline")

    @classmethod
    def from_kv(cls, kv: dict[str, str], seed: int | None = None, vocab_mode: str | None = None,
                epochs: int | None = None) -> "ParityConfig":
        try:
            n_train = int(kv.get("n_train", 500))
            n_dev = int(kv.get("n_dev", 0))
            n_test = int(kv.get("n_test", 100))
        except ValueError as exc:
            raise ConfigInvalid(str(exc)) from None
        kv = dict(kv)
        kv.setdefault("n_sentences", str(n_train + n_dev + n_test))
        synth, file_seed = synth_config_from_kv(kv)
        run_seed = seed if seed is not None else (file_seed if file_seed is not None else 0)
        tc = TrainConfig.from_kv(kv, seed=run_seed, vocab_mode=vocab_mode, epochs=epochs)
        return cls(synth, n_train, n_dev, n_test, run_seed, tc)

    @classmethod
    def from_file(cls, path, **overrides) -> "ParityConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_kv(parse_kv(fh.read()), **overrides)

    def echo(self) -> dict[str, str]:
        s, t = self.synth, self.train
        return {
            "n_train": str(self.n_train), "n_dev": str(self.n_dev), "n_test": str(self.n_test),
            "entity_types": ",".join(s.entity_types), "vocab_size": str(s.vocab_size),
            "max_len": str(s.max_len), "noise_rate": repr(s.noise_rate),
            "embed_dim": str(t.embed_dim), "hidden_dim": str(t.hidden_dim), "lr": repr(t.lr),
            "clip": repr(t.clip), "epochs": str(t.epochs), "vocab_mode": t.vocab_mode,
            "dev_selection": str(t.dev_selection).lower(),
        }


def make_split(cfg: ParityConfig) -> tuple[Corpus, Corpus, Corpus]:
    corpus = generate_synthetic(cfg.synth, cfg.seed)
    n = cfg.synth.n_sentences
    return split(corpus, (cfg.n_train / n, cfg.n_dev / n, cfg.n_test / n), cfg.seed)


@dataclass
class ParityRow:
    name: str
    scheme: str
    precision: float
    recall: float
    f1: float
    delta_f1: float
    seconds: float
    checkpoint_sha256: str
    loss_history: list[float] = field(default_factory=list)


@dataclass
class ParityReport:
    rows: list[ParityRow]
    config: dict[str, str]
    seed: int

    @property
    def all_f1_identical(self) -> bool:
        return len({r.f1 for r in self.rows}) == 1

    @property
    def all_checkpoints_identical(self) -> bool:
        return len({r.checkpoint_sha256 for r in self.rows}) == 1

    @property
    def max_abs_delta(self) -> float:
        return max(abs(r.delta_f1) for r in self.rows)


def run_parity(cfg: ParityConfig, progress=None) -> ParityReport:
    """Train and test once per variant on the same split and seed.

    The provider builds one codebook over the whole corpus vocabulary and
    encrypts train, dev and test with it.  ``progress(name, row)`` is called
    after each run.
    """
    train_c, dev_c, test_c = make_split(cfg)
    full_vocab = Vocabulary.from_sequences(
        train_c.token_sequences + dev_c.token_sequences + test_c.token_sequences, "first")
    rows: list[ParityRow] = []
    tc = cfg.train
    for name, spec in cfg.variants:
        t0 = time.perf_counter()
        if spec is None:
            tr, dv, te = train_c, dev_c, test_c
        else:
            cb = build_codebook(full_vocab, parse_scheme(spec))
            tr, dv, te = (encrypt_corpus(c, cb) for c in (train_c, dev_c, test_c))
        dev = dv if tc.dev_selection else None
        model = train(tr, dev, tc)
        m = evaluate(model, te)
        seconds = time.perf_counter() - t0
        base = rows[0].f1 if rows else m.f1
        row = ParityRow(name, spec or "identity", m.precision, m.recall, m.f1, m.f1 - base,
                        seconds, hashlib.sha256(model.checkpoint()).hexdigest(), list(model.loss_history))
        rows.append(row)
        log.info("%s: F1=%.4f (%.1fs)", name, m.f1, seconds)
        if progress is not None:
            progress(name, row)
    return ParityReport(rows, cfg.echo(), cfg.seed)


def run_parity_seeds(cfg: ParityConfig, seeds, progress=None) -> list[ParityReport]:
    return [run_parity(replace(cfg, seed=s, train=replace(cfg.train, seed=s)), progress)
            for s in seeds]

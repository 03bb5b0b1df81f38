"""Token-level sequence-labelling corpora: CoNLL I/O, BIOES spans, span F1,
synthetic generation and seeded splitting.

Tokens are opaque strings.  The synthetic generator emits single CJK
characters, but nothing here depends on that.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .rng import Xoshiro256

MAX_SENTENCE_LEN = 512

_LABEL_RE = re.compile(r"^(?:O|[BIES]-[A-Z_][A-Z0-9_]*)$")
_BIO_LABEL_RE = re.compile(r"^(?:O|[BI]-[A-Z_][A-Z0-9_]*)$")
_WS_RE = re.compile(r"\s")


class CorpusError(ValueError):
    """Base class for corpus validation failures."""


class MalformedLine(CorpusError):
    pass


class InvalidLabel(CorpusError):
    pass


class InvalidTransition(CorpusError):
    pass


class EmptyCorpus(CorpusError):
    pass


class ShapeMismatch(CorpusError):
    pass


class ConfigInvalid(CorpusError):
    pass


@dataclass(frozen=True)
class LabeledToken:
    surface: str
    label: str

    def __post_init__(self):
        if not self.surface or _WS_RE.search(self.surface):
            raise MalformedLine(f"bad token surface {self.surface!r}")
        if not _LABEL_RE.match(self.label):
            raise InvalidLabel(f"bad label {self.label!r}")


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[LabeledToken, ...]

    def __post_init__(self):
        if not self.tokens:
            raise MalformedLine("empty sentence")

    @classmethod
    def from_pairs(cls, surfaces: Sequence[str], labels: Sequence[str]) -> "Sentence":
        if len(surfaces) != len(labels):
            raise ShapeMismatch(f"{len(surfaces)} tokens vs {len(labels)} labels")
        return cls(tuple(LabeledToken(s, l) for s, l in zip(surfaces, labels)))

    @property
    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    @property
    def labels(self) -> list[str]:
        return [t.label for t in self.tokens]

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Corpus:
    """Ordered sentences under one tag scheme.

    An empty corpus can exist as the result of a degenerate split; parsing
    and training reject it.
    """

    sentences: tuple[Sentence, ...]
    scheme: str = "BIOES"

    def __len__(self) -> int:
        return len(self.sentences)

    def __iter__(self):
        return iter(self.sentences)

    @property
    def label_sequences(self) -> list[list[str]]:
        return [s.labels for s in self.sentences]

    @property
    def token_sequences(self) -> list[list[str]]:
        return [s.surfaces for s in self.sentences]

    @classmethod
    def from_sequences(cls, tokens: Sequence[Sequence[str]],
                       labels: Sequence[Sequence[str]]) -> "Corpus":
        if len(tokens) != len(labels):
            raise ShapeMismatch(f"{len(tokens)} token rows vs {len(labels)} label rows")
        return cls(tuple(Sentence.from_pairs(t, l) for t, l in zip(tokens, labels)))


@dataclass(frozen=True, order=True)
class EntitySpan:
    start: int
    end: int
    entity_type: str


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int


# ---------------------------------------------------------------------------
# BIOES grammar

def _split_label(label: str) -> tuple[str, str | None]:
    if label == "O":
        return "O", None
    return label[0], label[2:]


def check_bioes(labels: Sequence[str]) -> None:
    """Raise InvalidTransition unless ``labels`` is a well-formed BIOES sequence."""
    open_type = None
    for i, label in enumerate(labels):
        if not _LABEL_RE.match(label):
            raise InvalidLabel(f"bad label {label!r} at position {i}")
        prefix, etype = _split_label(label)
        if open_type is None:
            if prefix in ("I", "E"):
                raise InvalidTransition(f"{label} at position {i} does not continue an entity")
            if prefix == "B":
                open_type = etype
        else:
            if prefix not in ("I", "E") or etype != open_type:
                raise InvalidTransition(
                    f"{label} at position {i} interrupts open B-{open_type}")
            if prefix == "E":
                open_type = None
    if open_type is not None:
        raise InvalidTransition(f"B-{open_type} entity never closed")


def is_bioes_valid(labels: Sequence[str]) -> bool:
    try:
        check_bioes(labels)
    except CorpusError:
        return False
    return True


def bio_to_bioes(labels: Sequence[str]) -> list[str]:
    """Convert BIO (IOB2) tags to BIOES.  A stray I-X opens a new entity."""
    out = []
    n = len(labels)
    for i, label in enumerate(labels):
        if not _BIO_LABEL_RE.match(label):
            raise InvalidLabel(f"bad BIO label {label!r}")
        if label == "O":
            out.append("O")
            continue
        prefix, etype = _split_label(label)
        starts = prefix == "B" or i == 0 or labels[i - 1] == "O" or labels[i - 1][2:] != etype
        nxt = labels[i + 1] if i + 1 < n else "O"
        continues = nxt == f"I-{etype}"
        if starts:
            out.append(f"B-{etype}" if continues else f"S-{etype}")
        else:
            out.append(f"I-{etype}" if continues else f"E-{etype}")
    return out


def extract_spans(labels: Sequence[str], strict: bool = True) -> list[EntitySpan]:
    """Entity spans of a BIOES label sequence, ordered by start.

    With ``strict=False`` malformed fragments are skipped instead of raising.
    """
    if strict:
        check_bioes(labels)
    spans = []
    start = None
    open_type = None
    for i, label in enumerate(labels):
        prefix, etype = _split_label(label)
        if prefix == "S":
            spans.append(EntitySpan(i, i, etype))
            start = open_type = None
        elif prefix == "B":
            start, open_type = i, etype
        elif prefix == "I":
            if etype != open_type:
                start = open_type = None
        elif prefix == "E":
            if start is not None and etype == open_type:
                spans.append(EntitySpan(start, i, etype))
            start = open_type = None
        else:
            start = open_type = None
    return spans


def spans_to_labels(spans: Iterable[EntitySpan], length: int) -> list[str]:
    labels = ["O"] * length
    for sp in spans:
        if not 0 <= sp.start <= sp.end < length:
            raise ShapeMismatch(f"span {sp} outside sentence of length {length}")
        if sp.start == sp.end:
            labels[sp.start] = f"S-{sp.entity_type}"
            continue
        labels[sp.start] = f"B-{sp.entity_type}"
        for k in range(sp.start + 1, sp.end):
            labels[k] = f"I-{sp.entity_type}"
        labels[sp.end] = f"E-{sp.entity_type}"
    return labels


# ---------------------------------------------------------------------------
# CoNLL I/O

def parse_conll(text: str, strict: bool = True, scheme: str = "BIOES",
                max_len: int = MAX_SENTENCE_LEN) -> Corpus:
    """Parse ``token<TAB>label`` lines with blank lines between sentences.

    ``scheme="BIO"`` converts the labels to BIOES on the way in.  Runs of
    tabs and repeated blank lines are tolerated; :func:`write_conll` emits the
    canonical form.
    """
    if scheme not in ("BIOES", "BIO"):
        raise ConfigInvalid(f"unknown tag scheme {scheme!r}")
    sentences = []
    cur_tokens: list[str] = []
    cur_labels: list[str] = []

    def flush(lineno: int):
        if not cur_tokens:
            return
        labels = bio_to_bioes(cur_labels) if scheme == "BIO" else list(cur_labels)
        if len(labels) > max_len:
            raise MalformedLine(
                f"sentence ending at line {lineno} has {len(labels)} tokens (cap {max_len})")
        if strict:
            check_bioes(labels)
        sentences.append(Sentence.from_pairs(cur_tokens, labels))
        cur_tokens.clear()
        cur_labels.clear()

    lines = text.split("\n")
    for lineno, raw in enumerate(lines, 1):
        line = raw.rstrip("\r")
        if not line.strip():
            flush(lineno)
            continue
        parts = re.split(r"\t+", line)
        if len(parts) != 2 or not parts[0] or _WS_RE.search(parts[0]):
            raise MalformedLine(f"line {lineno}: expected token<TAB>label, got {line!r}")
        token, label = parts[0], parts[1].strip()
        pattern = _BIO_LABEL_RE if scheme == "BIO" else _LABEL_RE
        if not pattern.match(label):
            raise InvalidLabel(f"line {lineno}: bad label {label!r}")
        cur_tokens.append(token)
        cur_labels.append(label)
    flush(len(lines))
    if not sentences:
        raise EmptyCorpus("no sentences in input")
    return Corpus(tuple(sentences))


def write_conll(corpus: Corpus) -> str:
    parts = []
    for sent in corpus.sentences:
        for tok in sent.tokens:
            parts.append(f"{tok.surface}\t{tok.label}\n")
        parts.append("\n")
    return "".join(parts)


def read_conll_file(path, **kwargs) -> Corpus:
    with open(path, encoding="utf-8") as fh:
        return parse_conll(fh.read(), **kwargs)


def write_conll_file(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(write_conll(corpus))


# ---------------------------------------------------------------------------
# scoring

def _ratio(num: int, den: int, other_empty: bool) -> float:
    if den == 0:
        return 1.0 if other_empty else 0.0
    return num / den


def span_f1(gold, pred: Sequence[Sequence[str]]) -> Metrics:
    """Micro P/R/F1 over exact (start, end, type) span matches.

    ``gold`` is a Corpus or a list of label sequences.  When a denominator is
    zero the ratio is 1.0 if the opposite set is empty too, else 0.0.
    """
    gold_rows = gold.label_sequences if isinstance(gold, Corpus) else [list(g) for g in gold]
    if len(gold_rows) != len(pred):
        raise ShapeMismatch(f"{len(gold_rows)} gold sentences vs {len(pred)} predicted")
    tp = fp = fn = 0
    for i, (g, p) in enumerate(zip(gold_rows, pred)):
        if len(g) != len(p):
            raise ShapeMismatch(f"sentence {i}: {len(g)} gold labels vs {len(p)} predicted")
        gs = set(extract_spans(g, strict=False))
        ps = set(extract_spans(p, strict=False))
        hit = len(gs & ps)
        tp += hit
        fp += len(ps) - hit
        fn += len(gs) - hit
    precision = _ratio(tp, tp + fp, fn == 0)
    recall = _ratio(tp, tp + fn, fp == 0)
    # count form of 2PR/(P+R): exact, so F1 never exceeds max(P, R) by rounding
    if tp:
        f1 = 2 * tp / (2 * tp + fp + fn)
    else:
        f1 = 1.0 if precision == recall == 1.0 else 0.0
    return Metrics(precision, recall, f1, tp, fp, fn)


# ---------------------------------------------------------------------------
# vocabulary

class Vocabulary:
    """Token surfaces indexed from 1; index 0 is the shared unknown token."""

    UNK_INDEX = 0

    def __init__(self, tokens: Iterable[str]):
        self.tokens = tuple(tokens)
        self._index = {tok: i + 1 for i, tok in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ConfigInvalid("duplicate tokens in vocabulary")

    @classmethod
    def from_sequences(cls, sequences: Iterable[Sequence[str]], mode: str = "first") -> "Vocabulary":
        """Build from token sequences.

        ``mode="first"`` orders by first occurrence, which makes any
        injective relabelling of the tokens produce the same index stream.
        ``mode="lex"`` sorts by codepoint.
        """
        seen: dict[str, None] = {}
        for seq in sequences:
            for tok in seq:
                seen.setdefault(tok, None)
        if mode in ("first", "first_occurrence"):
            return cls(seen)
        if mode in ("lex", "lexicographic"):
            return cls(sorted(seen))
        raise ConfigInvalid(f"unknown vocabulary mode {mode!r}")

    @classmethod
    def from_corpus(cls, corpus: Corpus, mode: str = "first") -> "Vocabulary":
        return cls.from_sequences(corpus.token_sequences, mode)

    def __len__(self) -> int:
        return len(self.tokens) + 1

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, self.UNK_INDEX)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self._index.get(t, self.UNK_INDEX) for t in tokens]


# ---------------------------------------------------------------------------
# synthetic data

CJK_LO, CJK_HI = 0x4E00, 0x9FA5


@dataclass(frozen=True)
class SynthConfig:
    n_sentences: int = 500
    entity_types: tuple[str, ...] = ("PER", "LOC", "ORG", "DAT")
    vocab_size: int = 300
    max_len: int = 20
    noise_rate: float = 0.1

    def validate(self) -> None:
        if self.n_sentences < 1:
            raise ConfigInvalid("n_sentences must be >= 1")
        if self.vocab_size < 16:
            raise ConfigInvalid("vocab_size must be >= 16")
        if not self.entity_types:
            raise ConfigInvalid("need at least one entity type")
        if len(set(self.entity_types)) != len(self.entity_types):
            raise ConfigInvalid("duplicate entity types")
        for t in self.entity_types:
            if not re.match(r"^[A-Z_][A-Z0-9_]*$", t):
                raise ConfigInvalid(f"entity type {t!r} is not an uppercase identifier")
        if self.max_len < 4 or self.max_len > MAX_SENTENCE_LEN:
            raise ConfigInvalid(f"max_len must be in [4, {MAX_SENTENCE_LEN}]")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigInvalid("noise_rate must be in [0, 1)")
        # noise, context, and >= 2 surfaces per type
        if self.vocab_size < 2 + 2 * len(self.entity_types) + 2:
            raise ConfigInvalid("vocab_size too small for the number of entity types")


def _pools(cfg: SynthConfig, rng: Xoshiro256) -> tuple[list[str], list[str], dict[str, list[str]]]:
    chars: list[str] = []
    seen = set()
    while len(chars) < cfg.vocab_size:
        c = chr(rng.randint(CJK_LO, CJK_HI))
        if c not in seen:
            seen.add(c)
            chars.append(c)
    n_noise = max(1, cfg.vocab_size // 10)
    n_types = len(cfg.entity_types)
    per_type = max(2, (cfg.vocab_size - n_noise) * 2 // 5 // n_types)
    noise = chars[:n_noise]
    pos = n_noise
    typed = {}
    for t in cfg.entity_types:
        typed[t] = chars[pos:pos + per_type]
        pos += per_type
    context = chars[pos:]
    return noise, context, typed


def generate_synthetic(config: SynthConfig, seed: int) -> Corpus:
    """Deterministic synthetic BIOES corpus.

    Each entity type owns a sub-vocabulary; context (O) tokens come from a
    separate pool.  With probability ``noise_rate`` an entity token is drawn
    instead from a small pool shared by every type, so type evidence is
    sometimes missing and must come from the neighbouring tokens.
    Sentence ``i`` always contains an entity of type ``i mod n_types``.
    """
    config.validate()
    rng = Xoshiro256(seed)
    noise, context, typed = _pools(config, rng)
    types = list(config.entity_types)
    sentences = []
    for i in range(config.n_sentences):
        length = rng.randint(max(4, config.max_len // 3), config.max_len)
        labels = ["O"] * length
        forced = types[i % len(types)]
        pos = rng.randint(0, 2)
        first = True
        while pos < length:
            etype = forced if first else rng.choice(types)
            elen = min(rng.randint(1, 4), length - pos)
            if elen == 1:
                labels[pos] = f"S-{etype}"
            else:
                labels[pos] = f"B-{etype}"
                for k in range(pos + 1, pos + elen - 1):
                    labels[k] = f"I-{etype}"
                labels[pos + elen - 1] = f"E-{etype}"
            first = False
            pos += elen + rng.randint(1, 6)
        surfaces = []
        for lab in labels:
            if lab == "O":
                surfaces.append(rng.choice(context))
            elif rng.random() < config.noise_rate:
                surfaces.append(rng.choice(noise))
            else:
                surfaces.append(rng.choice(typed[lab[2:]]))
        sentences.append(Sentence.from_pairs(surfaces, labels))
    return Corpus(tuple(sentences))


def split_indices(corpus: Corpus, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> tuple[list[int], ...]:
    """Original sentence indices of each part produced by :func:`split`."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or ratios[0] <= 0:
        raise ConfigInvalid(f"bad split ratios {ratios}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigInvalid(f"split ratios sum to {sum(ratios)}, not 1")
    n = len(corpus)
    order = list(range(n))
    Xoshiro256(seed).shuffle(order)
    n_dev = int(n * ratios[1] + 1e-9)
    n_test = int(n * ratios[2] + 1e-9)
    n_train = n - n_dev - n_test
    return (sorted(order[:n_train]), sorted(order[n_train:n_train + n_dev]),
            sorted(order[n_train + n_dev:]))


def split(corpus: Corpus, ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
          seed: int = 0) -> tuple[Corpus, Corpus, Corpus]:
    """Seeded shuffle, then cut into train/dev/test.

    Dev and test get ``floor(n * ratio)`` sentences; train takes the rest.
    Each part keeps the original relative order of its sentences.
    """
    return tuple(Corpus(tuple(corpus.sentences[i] for i in part), corpus.scheme)
                 for part in split_indices(corpus, ratios, seed))


# ---------------------------------------------------------------------------
# key=value config files

def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigInvalid(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def synth_config_from_kv(kv: dict[str, str]) -> tuple[SynthConfig, int | None]:
    """SynthConfig plus the optional ``seed`` key from a parsed config file."""
    defaults = SynthConfig()
    try:
        cfg = SynthConfig(
            n_sentences=int(kv.get("n_sentences", defaults.n_sentences)),
            entity_types=tuple(t.strip() for t in kv["entity_types"].split(",") if t.strip())
            if "entity_types" in kv else defaults.entity_types,
            vocab_size=int(kv.get("vocab_size", defaults.vocab_size)),
            max_len=int(kv.get("max_len", defaults.max_len)),
            noise_rate=float(kv.get("noise_rate", defaults.noise_rate)),
        )
        seed = int(kv["seed"]) if "seed" in kv else None
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from exc
    cfg.validate()
    return cfg, seed

"""Per-type token encryption: schemes, codebooks and the Text1/2/3 bundle.

Encryption is applied per token *type*: every occurrence of a plaintext
token maps to the same ciphertext token, and the map is checked injective
over the vocabulary.  The codebook stays with the data provider; only its
fingerprint travels with the bundle.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..corpus import Corpus, CorpusError, Vocabulary, check_bioes
from .b64 import base64_encode
from .classical import (CJK, Alphabet, CipherError, NonInvertibleA, affine_decrypt,
                        affine_encrypt, shift_decrypt, shift_encrypt)
from .digests import md5_hex, sha256_digest, sha256_hex


class CollisionDetected(CipherError):
    pass


class UnknownToken(CipherError):
    pass


class UnknownCiphertext(CipherError):
    pass


class FingerprintMismatch(CipherError):
    pass


class BundleInvalid(CipherError):
    pass


class SchemeSyntaxError(CipherError):
    pass


VARIANTS = ("identity", "shift", "affine", "base64", "md5", "sha256", "sha256b64")
KEYED = ("shift", "affine")


@dataclass(frozen=True)
class CipherScheme:
    """One encryption family plus its parameters.

    ``key`` is the shift amount; ``a``/``b`` are the affine coefficients.
    ``alphabet`` and ``passthrough`` only matter for the keyed variants.
    """

    variant: str
    key: int = 0
    a: int = 1
    b: int = 0
    alphabet: Alphabet = CJK
    passthrough: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SchemeSyntaxError(f"unknown scheme {self.variant!r}")
        if self.variant == "shift":
            object.__setattr__(self, "key", self.key % self.alphabet.size)
        if self.variant == "affine":
            m = self.alphabet.size
            if math.gcd(self.a, m) != 1:
                raise NonInvertibleA(f"a={self.a} is not invertible mod {m}")
            object.__setattr__(self, "a", self.a % m)
            object.__setattr__(self, "b", self.b % m)

    @property
    def params(self) -> str:
        """Canonical parameter string used in codebook headers."""
        if self.variant not in KEYED:
            return ""
        al = f"lo={self.alphabet.lo:x},hi={self.alphabet.hi:x},passthrough={int(self.passthrough)}"
        if self.variant == "shift":
            return f"key={self.key},{al}"
        return f"a={self.a},b={self.b},{al}"

    @property
    def spec(self) -> str:
        """The ``--scheme`` form of this scheme (alphabet not included)."""
        if self.variant == "shift":
            return f"shift:{self.key}"
        if self.variant == "affine":
            return f"affine:{self.a}:{self.b}"
        return self.variant

    def apply(self, token: str) -> str:
        v = self.variant
        if v == "identity":
            return token
        if v == "shift":
            return shift_encrypt(token, self.key, self.alphabet, self.passthrough)
        if v == "affine":
            return affine_encrypt(token, self.a, self.b, self.alphabet, self.passthrough)
        data = token.encode("utf-8")
        if v == "base64":
            return base64_encode(data)
        if v == "md5":
            return md5_hex(data)
        if v == "sha256":
            return sha256_hex(data)
        return base64_encode(sha256_digest(data))

    def invert(self, token: str) -> str:
        """Mathematical inverse; only defined for the reversible variants."""
        if self.variant == "identity":
            return token
        if self.variant == "shift":
            return shift_decrypt(token, self.key, self.alphabet, self.passthrough)
        if self.variant == "affine":
            return affine_decrypt(token, self.a, self.b, self.alphabet, self.passthrough)
        raise UnknownCiphertext(f"{self.variant} tokens are only invertible through a codebook")


def parse_scheme(text: str, alphabet: Alphabet = CJK, passthrough: bool = False) -> CipherScheme:
    """Parse ``identity|shift:K|affine:A:B|base64|md5|sha256|sha256b64``."""
    parts = text.strip().split(":")
    name = parts[0].lower()
    try:
        if name == "shift" and len(parts) == 2:
            return CipherScheme("shift", key=int(parts[1]), alphabet=alphabet, passthrough=passthrough)
        if name == "affine" and len(parts) == 3:
            return CipherScheme("affine", a=int(parts[1]), b=int(parts[2]),
                                alphabet=alphabet, passthrough=passthrough)
    except ValueError:
        raise SchemeSyntaxError(f"bad scheme parameters in {text!r}") from None
    if len(parts) == 1 and name in VARIANTS and name not in KEYED:
        return CipherScheme(name)
    raise SchemeSyntaxError(f"cannot parse scheme {text!r}")


def _scheme_from_header(name: str, params: str) -> CipherScheme:
    if name not in KEYED:
        return CipherScheme(name)
    kv = dict(item.split("=", 1) for item in params.split(",") if item)
    alphabet = Alphabet(int(kv["lo"], 16), int(kv["hi"], 16))
    passthrough = kv.get("passthrough", "0") == "1"
    if name == "shift":
        return CipherScheme("shift", key=int(kv["key"]), alphabet=alphabet, passthrough=passthrough)
    return CipherScheme("affine", a=int(kv["a"]), b=int(kv["b"]),
                        alphabet=alphabet, passthrough=passthrough)


@dataclass(frozen=True)
class Codebook:
    scheme: CipherScheme
    entries: dict[str, str]
    fingerprint: bytes
    _reverse: dict[str, str] = field(repr=False, compare=False, default_factory=dict)

    def header(self) -> str:
        return f"#scheme={self.scheme.variant};params={self.scheme.params}"

    def lookup(self, token: str) -> str:
        return self.entries[token]

    def reverse(self, ciphertext: str) -> str:
        return self._reverse[ciphertext]

    def __len__(self) -> int:
        return len(self.entries)

    def dumps(self) -> str:
        lines = [f"{self.header()};fingerprint={self.fingerprint.hex()}"]
        lines.extend(f"{p}\t{c}" for p, c in self.entries.items())
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8", newline="\n")


def _canonical(scheme: CipherScheme, entries: dict[str, str]) -> bytes:
    body = "".join(f"{p}\t{c}\n" for p, c in entries.items())
    return f"#scheme={scheme.variant};params={scheme.params}\n{body}".encode("utf-8")


def _make(scheme: CipherScheme, entries: dict[str, str]) -> Codebook:
    reverse: dict[str, str] = {}
    for p, c in entries.items():
        if not c or any(ch.isspace() for ch in c):
            raise CipherError(f"ciphertext for {p!r} contains whitespace")
        if c in reverse:
            raise CollisionDetected(
                f"{reverse[c]!r} and {p!r} both encrypt to {c!r} under {scheme.spec}")
        reverse[c] = p
    fp = sha256_digest(_canonical(scheme, entries))
    return Codebook(scheme, entries, fp, reverse)


def build_codebook(vocab: Vocabulary | Iterable[str], scheme: CipherScheme) -> Codebook:
    """Encrypt every vocabulary type; raise CollisionDetected on any merge."""
    tokens = vocab.tokens if isinstance(vocab, Vocabulary) else list(dict.fromkeys(vocab))
    if not tokens:
        raise CipherError("empty vocabulary")
    return _make(scheme, {tok: scheme.apply(tok) for tok in tokens})


def loads_codebook(text: str) -> Codebook:
    lines = text.split("\n")
    head = lines[0]
    if not head.startswith("#scheme="):
        raise CipherError("codebook header missing")
    fields = dict(part.split("=", 1) for part in head[1:].split(";"))
    try:
        scheme = _scheme_from_header(fields["scheme"], fields.get("params", ""))
        claimed = bytes.fromhex(fields["fingerprint"])
    except (KeyError, ValueError) as exc:
        raise CipherError(f"bad codebook header: {exc}") from None
    entries = {}
    for line in lines[1:]:
        if not line:
            continue
        p, _, c = line.partition("\t")
        entries[p] = c
    cb = _make(scheme, entries)
    if cb.fingerprint != claimed:
        raise FingerprintMismatch("codebook contents do not match its header fingerprint")
    return cb


def load_codebook(path) -> Codebook:
    return loads_codebook(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Text1/Text2/Text3 bundle

@dataclass(frozen=True)
class EncryptedBundle:
    text1: tuple[tuple[str, ...], ...]
    text2: tuple[tuple[str, ...], ...]
    text3: tuple[int, ...]
    codebook_fingerprint: bytes

    def validate(self) -> None:
        if not (len(self.text1) == len(self.text2) == len(self.text3)):
            raise BundleInvalid(
                f"line counts differ: {len(self.text1)}/{len(self.text2)}/{len(self.text3)}")
        if len(self.codebook_fingerprint) != 32:
            raise BundleInvalid("fingerprint must be 32 bytes")
        for i, (toks, labs, n) in enumerate(zip(self.text1, self.text2, self.text3)):
            if not (len(toks) == len(labs) == n) or n < 1:
                raise BundleInvalid(f"sentence {i}: {len(toks)} tokens, {len(labs)} labels, length {n}")
            try:
                check_bioes(labs)
            except CorpusError as exc:
                raise BundleInvalid(f"sentence {i}: {exc}") from None

    def __len__(self) -> int:
        return len(self.text1)

    @property
    def token_sequences(self) -> list[list[str]]:
        return [list(t) for t in self.text1]

    @property
    def label_sequences(self) -> list[list[str]]:
        return [list(t) for t in self.text2]

    def to_corpus(self) -> Corpus:
        """Ciphertext tokens paired with their labels."""
        return Corpus.from_sequences(self.text1, self.text2)

    # text forms -------------------------------------------------------------

    def text1_str(self) -> str:
        return "".join(" ".join(row) + "\n" for row in self.text1)

    def text2_str(self) -> str:
        return "".join(" ".join(row) + "\n" for row in self.text2)

    def text3_str(self) -> str:
        return "".join(f"{n}\n" for n in self.text3)

    @classmethod
    def from_texts(cls, text1: str, text2: str, text3: str, fingerprint: bytes) -> "EncryptedBundle":
        def rows(text: str) -> list[str]:
            if text and not text.endswith("\n"):
                raise BundleInvalid("file does not end with a newline")
            return text.split("\n")[:-1] if text else []

        try:
            lengths = tuple(int(x) for x in rows(text3))
        except ValueError:
            raise BundleInvalid("Text3 must hold one decimal integer per line") from None
        r1, r2 = rows(text1), rows(text2)
        for r in r1 + r2:
            if not r or r != r.strip(" ") or "  " in r:
                raise BundleInvalid("Text1/Text2 lines must be single-space separated tokens")
        bundle = cls(tuple(tuple(r.split(" ")) for r in r1),
                     tuple(tuple(r.split(" ")) for r in r2),
                     lengths, bytes(fingerprint))
        bundle.validate()
        return bundle

    def write(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, text in self.file_texts().items():
            (out / name).write_text(text, encoding="utf-8", newline="\n")

    def file_texts(self) -> dict[str, str]:
        return {"text1.txt": self.text1_str(), "text2.txt": self.text2_str(),
                "text3.txt": self.text3_str(),
                "fingerprint.txt": self.codebook_fingerprint.hex() + "\n"}

    @classmethod
    def read(cls, in_dir) -> "EncryptedBundle":
        d = Path(in_dir)
        try:
            fp = bytes.fromhex((d / "fingerprint.txt").read_text().strip())
        except ValueError:
            raise BundleInvalid("fingerprint.txt is not hex") from None
        return cls.from_texts(*((d / f"text{i}.txt").read_text(encoding="utf-8") for i in (1, 2, 3)),
                              fingerprint=fp)

    # single-blob container (payload of the ABE envelope) ---------------------

    MAGIC = b"TXB1"

    def pack(self) -> bytes:
        out = bytearray(self.MAGIC)
        for text in (self.text1_str(), self.text2_str(), self.text3_str()):
            data = text.encode("utf-8")
            out += struct.pack(">I", len(data)) + data
        out += struct.pack(">I", 32) + self.codebook_fingerprint
        return bytes(out)

    @classmethod
    def unpack(cls, blob: bytes) -> "EncryptedBundle":
        if blob[:4] != cls.MAGIC:
            raise BundleInvalid("bad bundle magic")
        pos = 4
        sections = []
        for _ in range(4):
            if pos + 4 > len(blob):
                raise BundleInvalid("truncated bundle")
            (n,) = struct.unpack_from(">I", blob, pos)
            pos += 4
            if pos + n > len(blob):
                raise BundleInvalid("truncated bundle")
            sections.append(blob[pos:pos + n])
            pos += n
        if pos != len(blob):
            raise BundleInvalid("trailing bytes after bundle")
        try:
            texts = [s.decode("utf-8") for s in sections[:3]]
        except UnicodeDecodeError:
            raise BundleInvalid("bundle text is not UTF-8") from None
        return cls.from_texts(*texts, fingerprint=sections[3])


def encrypt_corpus(corpus, codebook: Codebook, strict: bool = True) -> EncryptedBundle:
    """Map every token through the codebook; labels and lengths pass through.

    With ``strict=False`` tokens missing from the codebook are encrypted on
    the fly with the codebook's scheme.
    """
    text1 = []
    for i, toks in enumerate(corpus.token_sequences):
        row = []
        for tok in toks:
            c = codebook.entries.get(tok)
            if c is None:
                if strict:
                    raise UnknownToken(f"sentence {i}: token {tok!r} not in codebook")
                c = codebook.scheme.apply(tok)
            row.append(c)
        text1.append(tuple(row))
    labels = tuple(tuple(l) for l in corpus.label_sequences)
    bundle = EncryptedBundle(tuple(text1), labels, tuple(len(l) for l in labels),
                             codebook.fingerprint)
    bundle.validate()
    return bundle


def encrypt_tokens(tokens: Sequence[str], codebook: Codebook) -> list[str]:
    """Encrypt prediction-time input; unseen tokens go through the scheme."""
    return [codebook.entries.get(t) or codebook.scheme.apply(t) for t in tokens]


def decrypt_bundle(bundle: EncryptedBundle, codebook: Codebook) -> Corpus:
    if bundle.codebook_fingerprint != codebook.fingerprint:
        raise FingerprintMismatch("bundle was not produced with this codebook")
    rows = []
    for i, toks in enumerate(bundle.text1):
        row = []
        for c in toks:
            try:
                row.append(codebook.reverse(c))
            except KeyError:
                raise UnknownCiphertext(f"sentence {i}: {c!r} not in codebook") from None
        rows.append(row)
    return Corpus.from_sequences(rows, bundle.text2)

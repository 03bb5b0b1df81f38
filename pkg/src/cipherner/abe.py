"""Policy-gated key encapsulation with the CP-ABE workflow.

Setup / KeyGen / Encrypt / Decrypt follow the ciphertext-policy pattern:
attributes live in user keys, the access tree travels in the clear inside
the ciphertext, and decryption succeeds exactly when the key's attributes
satisfy the tree.  The session secret is split down the tree with Shamir
sharing over GF(2^255 - 19); each leaf share is masked with a key derived
from the leaf's attribute key.

This is a key-authority construction, not pairing-based CP-ABE: users who
pool attribute keys can satisfy policies none of them satisfies alone.
"""

from __future__ import annotations

import hashlib
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

from .rng import Xoshiro256

P = 2 ** 255 - 19
PRIME_ID = "2^255-19"


class AbeError(Exception):
    pass


class PolicySyntaxError(AbeError):
    pass


class ThresholdOutOfRange(PolicySyntaxError):
    pass


class EmptyAttributeSet(AbeError):
    pass


class DuplicateX(AbeError):
    pass


class AccessDenied(AbeError):
    pass


class AuthenticationFailure(AbeError):
    pass


class MalformedCiphertext(AbeError):
    pass


def _sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


# ---------------------------------------------------------------------------
# field arithmetic

def inv(x: int) -> int:
    """Multiplicative inverse mod P by Fermat's little theorem."""
    if x % P == 0:
        raise ZeroDivisionError("zero has no inverse")
    return pow(x, P - 2, P)


def poly_eval(coeffs: Sequence[int], x: int) -> int:
    """Evaluate sum(coeffs[i] * x**i) mod P by Horner's rule."""
    y = 0
    for c in reversed(coeffs):
        y = (y * x + c) % P
    return y


def lagrange_at_zero(points: Sequence[tuple[int, int]]) -> int:
    """Interpolate the polynomial through ``points`` and evaluate it at 0.

    Uses one field inversion for the whole sum (numerators and denominators
    are accumulated separately, then combined).
    """
    if not points:
        raise ValueError("need at least one point")
    xs = [x % P for x, _ in points]
    if len(set(xs)) != len(xs):
        raise DuplicateX("x values must be distinct")
    if 0 in xs:
        raise ValueError("x values must be nonzero")
    num_total, den_total = 0, 1
    for i, (xi, (_, yi)) in enumerate(zip(xs, points)):
        num, den = yi % P, 1
        for j, xj in enumerate(xs):
            if j != i:
                num = num * xj % P
                den = den * (xj - xi) % P
        # num_total/den_total + num/den
        num_total = (num_total * den + num * den_total) % P
        den_total = den_total * den % P
    return num_total * inv(den_total) % P


# ---------------------------------------------------------------------------
# access trees

@dataclass(frozen=True)
class Leaf:
    attribute: str


@dataclass(frozen=True)
class Gate:
    threshold: int
    children: tuple["Node", ...]

    def __post_init__(self):
        n = len(self.children)
        if n == 0:
            raise PolicySyntaxError("gate without children")
        if not 1 <= self.threshold <= n:
            raise ThresholdOutOfRange(f"threshold {self.threshold} not in [1, {n}]")
        leaves = [c.attribute for c in self.children if isinstance(c, Leaf)]
        if len(set(leaves)) != len(leaves):
            raise PolicySyntaxError(f"duplicate sibling attributes in {leaves}")


Node = Union[Leaf, Gate]
AccessTree = Node

_ATTR_RE = re.compile(r"[A-Za-z0-9_.:@-]+")
_KEYWORDS = {"AND", "OR", "THRESHOLD"}


def _tokenize(text: str) -> list[str]:
    tokens = []
    pos = 0
    while pos < len(text):
        ch = text[pos]
        if ch.isspace():
            pos += 1
        elif ch in "(),":
            tokens.append(ch)
            pos += 1
        else:
            m = _ATTR_RE.match(text, pos)
            if not m:
                raise PolicySyntaxError(f"unexpected character {ch!r} at offset {pos}")
            tokens.append(m.group())
            pos = m.end()
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, expected: str | None = None) -> str:
        tok = self.peek()
        if tok is None:
            raise PolicySyntaxError("unexpected end of policy")
        if expected is not None and tok != expected:
            raise PolicySyntaxError(f"expected {expected!r}, got {tok!r}")
        self.i += 1
        return tok

    def expr(self) -> Node:
        first = self.term()
        op = self.peek()
        if op not in ("AND", "OR"):
            return first
        children = [first]
        while self.peek() == op:
            self.take()
            children.append(self.term())
        if self.peek() in ("AND", "OR"):
            raise PolicySyntaxError("mixed AND/OR without parentheses")
        return Gate(len(children) if op == "AND" else 1, tuple(children))

    def term(self) -> Node:
        tok = self.take()
        if tok == "(":
            node = self.expr()
            self.take(")")
            return node
        if tok == "THRESHOLD":
            self.take("(")
            t_tok = self.take()
            if not t_tok.isdigit():
                raise PolicySyntaxError(f"threshold must be a number, got {t_tok!r}")
            children = []
            while self.peek() == ",":
                self.take()
                children.append(self.expr())
            self.take(")")
            if not 1 <= int(t_tok) <= len(children):
                raise ThresholdOutOfRange(f"threshold {t_tok} with {len(children)} children")
            return Gate(int(t_tok), tuple(children))
        if tok in _KEYWORDS or tok in "(),":
            raise PolicySyntaxError(f"unexpected {tok!r}")
        return Leaf(tok)


def parse_policy(text: str) -> AccessTree:
    """Parse ``attr | (e AND e ...) | (e OR e ...) | THRESHOLD(t, e, e, ...)``.

    The outermost AND/OR chain may omit its parentheses; mixing AND and OR in
    one chain is rejected.
    """
    p = _Parser(text)
    node = p.expr()
    if p.peek() is not None:
        raise PolicySyntaxError(f"trailing input at {p.peek()!r}")
    return node


def render_policy(node: AccessTree) -> str:
    """Canonical text form; ``parse_policy(render_policy(t)) == t``."""
    if isinstance(node, Leaf):
        return node.attribute
    parts = [render_policy(c) for c in node.children]
    n = len(parts)
    if n >= 2 and node.threshold == n:
        return "(" + " AND ".join(parts) + ")"
    if n >= 2 and node.threshold == 1:
        return "(" + " OR ".join(parts) + ")"
    return f"THRESHOLD({node.threshold}, " + ", ".join(parts) + ")"


def leaves(node: AccessTree) -> list[Leaf]:
    """Leaves in depth-first (pre-order) position; this is the leaf index."""
    if isinstance(node, Leaf):
        return [node]
    out = []
    for c in node.children:
        out.extend(leaves(c))
    return out


def satisfies(node: AccessTree, attrs: Iterable[str]) -> bool:
    attrs = set(attrs)

    def sat(n: Node) -> bool:
        if isinstance(n, Leaf):
            return n.attribute in attrs
        return sum(sat(c) for c in n.children) >= n.threshold

    return sat(node)


# ---------------------------------------------------------------------------
# secret sharing over the tree

def share_secret(secret: int, tree: AccessTree, rng) -> list[int]:
    """Split ``secret`` down the access tree; returns one share per leaf.

    Each gate with threshold t draws a random polynomial q of degree t-1
    with q(0) equal to the gate's secret and hands q(i) to its i-th child
    (children are numbered from 1).  ``rng`` needs ``randbelow``.
    """
    if not 0 <= secret < P:
        raise ValueError("secret must lie in [0, P)")
    out: list[int] = []

    def walk(node: Node, value: int) -> None:
        if isinstance(node, Leaf):
            out.append(value)
            return
        coeffs = [value] + [rng.randbelow(P) for _ in range(node.threshold - 1)]
        for i, child in enumerate(node.children, 1):
            walk(child, poly_eval(coeffs, i))

    walk(tree, secret)
    return out


def reconstruct(tree: AccessTree, leaf_shares: dict[int, int]) -> int | None:
    """Recover the root secret from the shares of live leaves (by leaf index).

    A gate is live when at least ``threshold`` children are; it interpolates
    over its lowest-numbered live children.  Returns None if the root is
    not live.
    """
    counter = iter(range(10 ** 9))

    def walk(node: Node) -> int | None:
        if isinstance(node, Leaf):
            return leaf_shares.get(next(counter))
        values = [walk(c) for c in node.children]
        live = [(i, v) for i, v in enumerate(values, 1) if v is not None]
        if len(live) < node.threshold:
            return None
        return lagrange_at_zero(live[:node.threshold])

    return walk(tree)


# ---------------------------------------------------------------------------
# keys

class _SystemRandom:
    def randbelow(self, n: int) -> int:
        import secrets
        return secrets.randbelow(n)

    def bytes(self, n: int) -> bytes:
        return os.urandom(n)


def _rng(seed: int | None):
    return _SystemRandom() if seed is None else Xoshiro256(seed)


@dataclass(frozen=True)
class AbePublicKey:
    system_id: bytes
    prime_id: str = PRIME_ID


@dataclass(frozen=True)
class AbeMasterKey:
    master_secret: bytes

    def __repr__(self) -> str:
        return "AbeMasterKey(<redacted>)"


@dataclass(frozen=True)
class AbeSecretKey:
    user_id: str
    attributes: frozenset[str]
    attr_keys: dict[str, bytes]


def setup(rng_seed: int | None = None) -> tuple[AbePublicKey, AbeMasterKey]:
    """Fresh system keys; a seed makes them reproducible (test mode)."""
    rng = _rng(rng_seed)
    system_id = rng.bytes(16)
    master = rng.bytes(32)
    return AbePublicKey(system_id), AbeMasterKey(master)


def attribute_key(mk: AbeMasterKey, attribute: str) -> bytes:
    return _sha256(mk.master_secret, b"\x01", attribute.encode("utf-8"))


def keygen(pk: AbePublicKey, mk: AbeMasterKey, user_id: str,
           attributes: Iterable[str]) -> AbeSecretKey:
    _check_pk(pk)
    attrs = frozenset(attributes)
    if not attrs:
        raise EmptyAttributeSet("a user key needs at least one attribute")
    for a in attrs:
        if not a or not _ATTR_RE.fullmatch(a) or a in _KEYWORDS:
            raise PolicySyntaxError(f"invalid attribute name {a!r}")
    return AbeSecretKey(user_id, attrs, {a: attribute_key(mk, a) for a in sorted(attrs)})


def _check_pk(pk: AbePublicKey) -> None:
    if pk.prime_id != PRIME_ID:
        raise AbeError(f"unsupported field {pk.prime_id!r}")


# ---------------------------------------------------------------------------
# envelope

@dataclass(frozen=True)
class AbeCiphertext:
    policy: str
    nonce: bytes
    leaf_boxes: tuple[tuple[str, bytes], ...]
    payload_ct: bytes
    auth_tag: bytes

    MAGIC = b"ABE1"

    def to_bytes(self) -> bytes:
        boxes = struct.pack(">I", len(self.leaf_boxes))
        for attr, box in self.leaf_boxes:
            boxes += _section(attr.encode("utf-8")) + box
        out = self.MAGIC
        for part in (self.policy.encode("utf-8"), self.nonce, boxes, self.payload_ct, self.auth_tag):
            out += _section(part)
        return out

    @classmethod
    def from_bytes(cls, blob: bytes) -> "AbeCiphertext":
        if blob[:4] != cls.MAGIC:
            raise MalformedCiphertext("bad magic")
        reader = _Reader(blob, 4, MalformedCiphertext)
        policy_b = reader.section()
        nonce = reader.section()
        boxes_b = reader.section()
        payload_ct = reader.section()
        tag = reader.section()
        reader.end()
        if len(nonce) != 16 or len(tag) != 32:
            raise MalformedCiphertext("bad nonce or tag length")
        br = _Reader(boxes_b, 0, MalformedCiphertext)
        count = br.u32()
        boxes = []
        for _ in range(count):
            attr = br.section()
            box = br.take(32)
            try:
                boxes.append((attr.decode("utf-8"), box))
            except UnicodeDecodeError:
                raise MalformedCiphertext("attribute is not UTF-8") from None
        br.end()
        try:
            policy = policy_b.decode("utf-8")
        except UnicodeDecodeError:
            raise AuthenticationFailure("policy bytes are not UTF-8") from None
        return cls(policy, nonce, tuple(boxes), payload_ct, tag)


def _section(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


class _Reader:
    def __init__(self, blob: bytes, pos: int, exc):
        self.blob, self.pos, self.exc = blob, pos, exc

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise self.exc("truncated input")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def section(self) -> bytes:
        return self.take(self.u32())

    def end(self) -> None:
        if self.pos != len(self.blob):
            raise self.exc("trailing bytes")


def _keystream_xor(key: bytes, data: bytes) -> bytes:
    """XOR with the stream ``sha256(key || be64(0)) || sha256(key || be64(1)) || ...``."""
    n_blocks = (len(data) + 31) // 32
    stream = b"".join(_sha256(key, i.to_bytes(8, "big")) for i in range(n_blocks))[:len(data)]
    x = int.from_bytes(data, "big") ^ int.from_bytes(stream, "big")
    return x.to_bytes(len(data), "big")


def _leaf_mask(attr_key: bytes, nonce: bytes, index: int) -> bytes:
    return _sha256(attr_key, nonce, index.to_bytes(4, "big"))


def _xor32(a: bytes, b: bytes) -> bytes:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).to_bytes(32, "big")


def _session_keys(s: int, nonce: bytes) -> tuple[bytes, bytes]:
    s_bytes = s.to_bytes(32, "little")
    return _sha256(s_bytes, nonce), _sha256(s_bytes, b"mac")


def encrypt(pk: AbePublicKey, mk: AbeMasterKey, payload: bytes, policy: AccessTree | str,
            rng_seed: int | None = None) -> AbeCiphertext:
    """Encrypt ``payload`` so that only keys satisfying ``policy`` can open it.

    The data provider holds the master key and derives each leaf's
    attribute key directly.
    """
    _check_pk(pk)
    if not payload:
        raise ValueError("payload must be non-empty")
    tree = parse_policy(policy) if isinstance(policy, str) else policy
    policy_text = render_policy(tree)
    rng = _rng(rng_seed)
    nonce = rng.bytes(16)
    s = rng.randbelow(P)
    shares = share_secret(s, tree, rng)
    boxes = []
    for idx, (leaf, share) in enumerate(zip(leaves(tree), shares)):
        mask = _leaf_mask(attribute_key(mk, leaf.attribute), nonce, idx)
        boxes.append((leaf.attribute, _xor32(share.to_bytes(32, "little"), mask)))
    enc_key, mac_key = _session_keys(s, nonce)
    payload_ct = _keystream_xor(enc_key, bytes(payload))
    tag = _sha256(mac_key, policy_text.encode("utf-8"), payload_ct)
    return AbeCiphertext(policy_text, nonce, tuple(boxes), payload_ct, tag)


def decrypt(ct: AbeCiphertext, sk: AbeSecretKey) -> bytes:
    """Open the envelope or raise AccessDenied / AuthenticationFailure."""
    try:
        tree = parse_policy(ct.policy)
    except PolicySyntaxError as exc:
        raise AuthenticationFailure(f"policy does not parse: {exc}") from None
    tree_leaves = leaves(tree)
    if len(tree_leaves) != len(ct.leaf_boxes) or any(
            leaf.attribute != attr for leaf, (attr, _) in zip(tree_leaves, ct.leaf_boxes)):
        raise AuthenticationFailure("leaf boxes do not match the policy")
    if not satisfies(tree, sk.attributes):
        raise AccessDenied(f"attributes of {sk.user_id!r} do not satisfy {ct.policy}")
    shares = {}
    for idx, (attr, box) in enumerate(ct.leaf_boxes):
        key = sk.attr_keys.get(attr)
        if key is None:
            continue
        shares[idx] = int.from_bytes(_xor32(box, _leaf_mask(key, ct.nonce, idx)), "little") % P
    s = reconstruct(tree, shares)
    if s is None:  # unreachable once satisfies() passed
        raise AccessDenied("policy not satisfied")
    enc_key, mac_key = _session_keys(s, ct.nonce)
    expected = _sha256(mac_key, ct.policy.encode("utf-8"), ct.payload_ct)
    if expected != ct.auth_tag:
        raise AuthenticationFailure("authentication tag mismatch")
    return _keystream_xor(enc_key, ct.payload_ct)


# ---------------------------------------------------------------------------
# key files

KEY_MAGIC = b"ABK1"


def dump_key(key: AbePublicKey | AbeMasterKey | AbeSecretKey) -> bytes:
    if isinstance(key, AbePublicKey):
        parts = [b"pk", key.system_id, key.prime_id.encode()]
    elif isinstance(key, AbeMasterKey):
        parts = [b"mk", key.master_secret]
    elif isinstance(key, AbeSecretKey):
        parts = [b"sk", key.user_id.encode("utf-8"), struct.pack(">I", len(key.attr_keys))]
        for attr in sorted(key.attr_keys):
            parts += [attr.encode("utf-8"), key.attr_keys[attr]]
    else:
        raise TypeError(f"not an ABE key: {type(key).__name__}")
    return KEY_MAGIC + b"".join(_section(p) for p in parts)


def load_key(blob: bytes):
    if blob[:4] != KEY_MAGIC:
        raise MalformedCiphertext("bad key magic")
    r = _Reader(blob, 4, MalformedCiphertext)
    kind = r.section()
    try:
        if kind == b"pk":
            key = AbePublicKey(r.section(), r.section().decode())
        elif kind == b"mk":
            key = AbeMasterKey(r.section())
        elif kind == b"sk":
            user = r.section().decode("utf-8")
            (count,) = struct.unpack(">I", r.section())
            attr_keys = {}
            for _ in range(count):
                attr = r.section().decode("utf-8")
                attr_keys[attr] = r.section()
            key = AbeSecretKey(user, frozenset(attr_keys), attr_keys)
        else:
            raise MalformedCiphertext(f"unknown key kind {kind!r}")
    except UnicodeDecodeError:
        raise MalformedCiphertext("key file is not valid UTF-8") from None
    r.end()
    return key


def save_key(key, path) -> None:
    Path(path).write_bytes(dump_key(key))


def read_key(path):
    return load_key(Path(path).read_bytes())

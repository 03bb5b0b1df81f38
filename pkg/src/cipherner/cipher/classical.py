"""Shift (Caesar / serial-cipher family) and affine ciphers over a contiguous
codepoint range."""

from __future__ import annotations

import math
from dataclasses import dataclass


class CipherError(ValueError):
    pass


class OutOfAlphabet(CipherError):
    pass


class NonInvertibleA(CipherError):
    pass


@dataclass(frozen=True)
class Alphabet:
    lo: int
    hi: int

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi <= 0x10FFFF:
            raise CipherError(f"bad alphabet range [{self.lo:#x}, {self.hi:#x}]")

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    def __contains__(self, cp: int) -> bool:
        return self.lo <= cp <= self.hi


CJK = Alphabet(0x4E00, 0x9FFF)
UPPER_ASCII = Alphabet(ord("A"), ord("Z"))


def _map(token: str, alphabet: Alphabet, fn, passthrough: bool) -> str:
    out = []
    for ch in token:
        cp = ord(ch)
        if cp not in alphabet:
            if passthrough:
                out.append(ch)
                continue
            raise OutOfAlphabet(f"{ch!r} (U+{cp:04X}) outside [{alphabet.lo:#x}, {alphabet.hi:#x}]")
        out.append(chr(alphabet.lo + fn(cp - alphabet.lo)))
    return "".join(out)


def shift_encrypt(token: str, key: int, alphabet: Alphabet = CJK, passthrough: bool = False) -> str:
    m = alphabet.size
    k = key % m
    return _map(token, alphabet, lambda x: (x + k) % m, passthrough)


def shift_decrypt(token: str, key: int, alphabet: Alphabet = CJK, passthrough: bool = False) -> str:
    return shift_encrypt(token, alphabet.size - key % alphabet.size, alphabet, passthrough)


def affine_encrypt(token: str, a: int, b: int, alphabet: Alphabet = CJK,
                   passthrough: bool = False) -> str:
    m = alphabet.size
    if math.gcd(a, m) != 1:
        raise NonInvertibleA(f"a={a} is not invertible mod {m}")
    return _map(token, alphabet, lambda x: (a * x + b) % m, passthrough)


def affine_decrypt(token: str, a: int, b: int, alphabet: Alphabet = CJK,
                   passthrough: bool = False) -> str:
    m = alphabet.size
    if math.gcd(a, m) != 1:
        raise NonInvertibleA(f"a={a} is not invertible mod {m}")
    a_inv = pow(a, -1, m)
    return _map(token, alphabet, lambda y: (a_inv * (y - b)) % m, passthrough)

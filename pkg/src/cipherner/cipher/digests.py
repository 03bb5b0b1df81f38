"""MD5 (RFC 1321) and SHA-256 (FIPS 180-4) in pure Python.

Both are streaming: ``update()`` may be called any number of times before
``digest()``.  Digests feed bit-exact file formats, so they are checked
against the published test vectors in the test suite.
"""

from __future__ import annotations

import math
import struct

_M32 = 0xFFFFFFFF


def _rotl32(x: int, n: int) -> int:
    return ((x << n) | (x >> (32 - n))) & _M32


def _rotr32(x: int, n: int) -> int:
    return ((x >> n) | (x << (32 - n))) & _M32


class _BlockHash:
    block_size = 64
    _length_fmt = ">Q"

    def __init__(self, data: bytes = b""):
        self._buf = b""
        self._count = 0
        self._state = list(self._initial)
        if data:
            self.update(data)

    def update(self, data: bytes) -> "_BlockHash":
        data = bytes(data)
        self._count += len(data)
        buf = self._buf + data
        n = len(buf) - len(buf) % 64
        for off in range(0, n, 64):
            self._compress(buf[off:off + 64])
        self._buf = buf[n:]
        return self

    def copy(self):
        other = type(self).__new__(type(self))
        other._buf = self._buf
        other._count = self._count
        other._state = list(self._state)
        return other

    def digest(self) -> bytes:
        h = self.copy()
        bit_len = (self._count * 8) & 0xFFFFFFFFFFFFFFFF
        pad = b"\x80" + b"\x00" * ((55 - self._count) % 64)
        h.update(pad + struct.pack(self._length_fmt, bit_len))
        return h._pack(h._state)

    def hexdigest(self) -> str:
        return self.digest().hex()


# ---------------------------------------------------------------------------
# MD5

_MD5_K = [int(abs(math.sin(i + 1)) * 2 ** 32) & _M32 for i in range(64)]
_MD5_S = ([7, 12, 17, 22] * 4 + [5, 9, 14, 20] * 4 +
          [4, 11, 16, 23] * 4 + [6, 10, 15, 21] * 4)


class MD5(_BlockHash):
    _initial = (0x67452301, 0xEFCDAB89, 0x98BADCFE, 0x10325476)
    _length_fmt = "<Q"
    digest_size = 16

    def _compress(self, block: bytes) -> None:
        m = struct.unpack("<16I", block)
        a, b, c, d = self._state
        for i in range(64):
            if i < 16:
                f = (b & c) | (~b & d)
                g = i
            elif i < 32:
                f = (d & b) | (~d & c)
                g = (5 * i + 1) % 16
            elif i < 48:
                f = b ^ c ^ d
                g = (3 * i + 5) % 16
            else:
                f = c ^ (b | (~d & _M32))
                g = (7 * i) % 16
            f = (f + a + _MD5_K[i] + m[g]) & _M32
            a, d, c = d, c, b
            b = (b + _rotl32(f, _MD5_S[i])) & _M32
        s = self._state
        self._state = [(s[0] + a) & _M32, (s[1] + b) & _M32,
                       (s[2] + c) & _M32, (s[3] + d) & _M32]

    @staticmethod
    def _pack(state) -> bytes:
        return struct.pack("<4I", *state)


# ---------------------------------------------------------------------------
# SHA-256

_SHA256_K = (
    0x428A2F98, 0x71374491, 0xB5C0FBCF, 0xE9B5DBA5, 0x3956C25B, 0x59F111F1, 0x923F82A4, 0xAB1C5ED5,
    0xD807AA98, 0x12835B01, 0x243185BE, 0x550C7DC3, 0x72BE5D74, 0x80DEB1FE, 0x9BDC06A7, 0xC19BF174,
    0xE49B69C1, 0xEFBE4786, 0x0FC19DC6, 0x240CA1CC, 0x2DE92C6F, 0x4A7484AA, 0x5CB0A9DC, 0x76F988DA,
    0x983E5152, 0xA831C66D, 0xB00327C8, 0xBF597FC7, 0xC6E00BF3, 0xD5A79147, 0x06CA6351, 0x14292967,
    0x27B70A85, 0x2E1B2138, 0x4D2C6DFC, 0x53380D13, 0x650A7354, 0x766A0ABB, 0x81C2C92E, 0x92722C85,
    0xA2BFE8A1, 0xA81A664B, 0xC24B8B70, 0xC76C51A3, 0xD192E819, 0xD6990624, 0xF40E3585, 0x106AA070,
    0x19A4C116, 0x1E376C08, 0x2748774C, 0x34B0BCB5, 0x391C0CB3, 0x4ED8AA4A, 0x5B9CCA4F, 0x682E6FF3,
    0x748F82EE, 0x78A5636F, 0x84C87814, 0x8CC70208, 0x90BEFFFA, 0xA4506CEB, 0xBEF9A3F7, 0xC67178F2,
)


class SHA256(_BlockHash):
    _initial = (0x6A09E667, 0xBB67AE85, 0x3C6EF372, 0xA54FF53A,
                0x510E527F, 0x9B05688C, 0x1F83D9AB, 0x5BE0CD19)
    digest_size = 32

    def _compress(self, block: bytes) -> None:
        w = list(struct.unpack(">16I", block))
        for t in range(16, 64):
            x, y = w[t - 15], w[t - 2]
            s0 = _rotr32(x, 7) ^ _rotr32(x, 18) ^ (x >> 3)
            s1 = _rotr32(y, 17) ^ _rotr32(y, 19) ^ (y >> 10)
            w.append((w[t - 16] + s0 + w[t - 7] + s1) & _M32)
        a, b, c, d, e, f, g, h = self._state
        for t in range(64):
            t1 = (h + (_rotr32(e, 6) ^ _rotr32(e, 11) ^ _rotr32(e, 25))
                  + ((e & f) ^ (~e & g)) + _SHA256_K[t] + w[t]) & _M32
            t2 = ((_rotr32(a, 2) ^ _rotr32(a, 13) ^ _rotr32(a, 22))
                  + ((a & b) ^ (a & c) ^ (b & c))) & _M32
            h, g, f, e, d, c, b, a = g, f, e, (d + t1) & _M32, c, b, a, (t1 + t2) & _M32
        self._state = [(s + v) & _M32 for s, v in zip(self._state, (a, b, c, d, e, f, g, h))]

    @staticmethod
    def _pack(state) -> bytes:
        return struct.pack(">8I", *state)


def md5_digest(data: bytes) -> bytes:
    return MD5(data).digest()


def md5_hex(data: bytes) -> str:
    return MD5(data).hexdigest()


def sha256_digest(data: bytes) -> bytes:
    return SHA256(data).digest()


def sha256_hex(data: bytes) -> str:
    return SHA256(data).hexdigest()

"""Standard-alphabet Base64 with ``=`` padding."""

from __future__ import annotations

ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/"
_DECODE = {c: i for i, c in enumerate(ALPHABET)}


class Base64Error(ValueError):
    pass


def base64_encode(data: bytes) -> str:
    out = []
    n = len(data)
    for i in range(0, n - n % 3, 3):
        v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2]
        out.append(ALPHABET[v >> 18] + ALPHABET[(v >> 12) & 63]
                   + ALPHABET[(v >> 6) & 63] + ALPHABET[v & 63])
    rem = n % 3
    if rem == 1:
        v = data[-1] << 16
        out.append(ALPHABET[v >> 18] + ALPHABET[(v >> 12) & 63] + "==")
    elif rem == 2:
        v = (data[-2] << 16) | (data[-1] << 8)
        out.append(ALPHABET[v >> 18] + ALPHABET[(v >> 12) & 63] + ALPHABET[(v >> 6) & 63] + "=")
    return "".join(out)


def base64_decode(text: str) -> bytes:
    if len(text) % 4:
        raise Base64Error("length is not a multiple of 4")
    out = bytearray()
    for i in range(0, len(text), 4):
        quad = text[i:i + 4]
        pad = len(quad) - len(quad.rstrip("="))
        if pad > 2 or (pad and i + 4 != len(text)):
            raise Base64Error("misplaced padding")
        try:
            vals = [_DECODE[c] for c in quad[:4 - pad]]
        except KeyError as exc:
            raise Base64Error(f"invalid character {exc.args[0]!r}") from None
        v = 0
        for x in vals + [0] * pad:
            v = (v << 6) | x
        chunk = v.to_bytes(3, "big")
        out += chunk[:3 - pad]
    return bytes(out)

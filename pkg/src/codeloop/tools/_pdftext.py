"""Minimal PDF text extraction: Flate-decoded content streams, literal
strings fed to Tj / ' / TJ operators.

This intentionally covers only straightforwardly generated PDFs (the
kind produced by common report generators and most text-first preprint
PDFs): no CID fonts, no encryption, no cross-reference repair. It
exists because the runtime needs a dependency-free fallback when a
paper has no usable HTML rendering; output quality is best-effort.
"""

from __future__ import annotations

import base64
import binascii
import re
import zlib

_STREAM_HEAD = re.compile(rb"<<(.*?)>>\s*stream\r?\n", re.S)
_FILTER = re.compile(rb"/(ASCII85Decode|ASCIIHexDecode|FlateDecode)\b")

_ESCAPES = {
    b"n": "\n",
    b"r": "\r",
    b"t": "\t",
    b"b": "\b",
    b"f": "\f",
    b"(": "(",
    b")": ")",
    b"\\": "\\",
}


def _read_literal(buf: bytes, i: int) -> tuple[str, int]:
    """Read a PDF literal string starting at the '(' at buf[i]."""
    out: list[str] = []
    depth = 1
    i += 1
    n = len(buf)
    while i < n and depth:
        c = buf[i : i + 1]
        if c == b"\\":
            nxt = buf[i + 1 : i + 2]
            if nxt in _ESCAPES:
                out.append(_ESCAPES[nxt])
                i += 2
            elif nxt.isdigit():
                j = i + 1
                while j < min(i + 4, n) and buf[j : j + 1].isdigit():
                    j += 1
                out.append(chr(int(buf[i + 1 : j], 8) & 0xFF))
                i = j
            else:
                i += 2  # line continuation or unknown escape: drop
        elif c == b"(":
            depth += 1
            out.append("(")
            i += 1
        elif c == b")":
            depth -= 1
            if depth:
                out.append(")")
            i += 1
        else:
            out.append(c.decode("latin-1"))
            i += 1
    return "".join(out), i


def _extract_from_content(content: bytes) -> str:
    """Walk one content stream, collecting shown strings in order.
    Positioning operators become newline separators, which matches the
    one-string-per-line layout simple generators emit."""
    parts: list[str] = []
    pending: list[str] = []
    i = 0
    n = len(content)
    while i < n:
        c = content[i : i + 1]
        if c == b"(":
            s, i = _read_literal(content, i)
            pending.append(s)
            continue
        if c == b"%":  # comment to end of line
            j = content.find(b"\n", i)
            i = n if j == -1 else j + 1
            continue
        if c.isalpha() or c in (b"'", b'"'):
            j = i
            while j < n and not content[j : j + 1].isspace() and content[
                j : j + 1
            ] not in (b"(", b"[", b"]", b"/", b"<"):
                j += 1
            op = content[i:j]
            if op in (b"Tj", b"TJ", b"'", b'"'):
                parts.extend(pending)
                pending = []
            elif op in (b"Td", b"TD", b"T*", b"Tm", b"ET"):
                pending = []
                if parts and parts[-1] != "\n":
                    parts.append("\n")
            i = j
            continue
        i += 1
    text = "".join(parts)
    return re.sub(r"\n{2,}", "\n", text).strip("\n")


def _decode_stream(raw: bytes, filters: list[bytes]) -> bytes | None:
    """Apply the filter chain in declaration order; None when any stage
    cannot decode."""
    for name in filters:
        try:
            if name == b"ASCII85Decode":
                raw = base64.a85decode(
                    b"".join(raw.split()), adobe=True, ignorechars=b""
                )
            elif name == b"ASCIIHexDecode":
                hexpart = b"".join(raw.split()).rstrip(b">")
                if len(hexpart) % 2:
                    hexpart += b"0"
                raw = binascii.unhexlify(hexpart)
            elif name == b"FlateDecode":
                raw = zlib.decompressobj().decompress(raw)
        except (ValueError, zlib.error, binascii.Error):
            return None
    return raw


def pdf_extract_text(data: bytes) -> str:
    """Concatenated text of every text-bearing content stream."""
    pages: list[str] = []
    for m in _STREAM_HEAD.finditer(data):
        end = data.find(b"endstream", m.end())
        if end == -1:
            continue
        decoded = _decode_stream(
            data[m.end() : end], _FILTER.findall(m.group(1))
        )
        if decoded is None:
            continue
        raw = decoded
        if b"BT" not in raw:
            continue
        text = _extract_from_content(raw)
        if text:
            pages.append(text)
    return "\n".join(pages)

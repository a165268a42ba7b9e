"""Paired renderings of a problem: numeral/word text, SVG/PNG images, WAV audio."""
from __future__ import annotations

import enum
import hashlib
import io
import json
import struct
import wave
import zlib
from dataclasses import dataclass
from pathlib import Path

from .arith import Problem
from .glyphs import GLYPH_H, GLYPH_W, GLYPHS
from .words import to_words, word_tokens


class Representation(str, enum.Enum):
    NUMERAL_TEXT = "numeral_text"
    WORD_TEXT = "word_text"
    NUMERAL_IMAGE = "numeral_image"
    WORD_IMAGE = "word_image"
    AUDIO = "audio"

    def __str__(self) -> str:
        return self.value

    @property
    def is_text(self) -> bool:
        return self in (Representation.NUMERAL_TEXT, Representation.WORD_TEXT)

    @property
    def is_image(self) -> bool:
        return self in (Representation.NUMERAL_IMAGE, Representation.WORD_IMAGE)


IMAGE_PROMPT = "What is the answer to the multiplication problem shown in the image?"
AUDIO_PROMPT = "Answer the multiplication question in the audio."


def render_prompt(p: Problem, r) -> str:
    r = Representation(r)
    if r is Representation.NUMERAL_TEXT:
        return f"What is {p.a.value} × {p.b.value}?"
    if r is Representation.WORD_TEXT:
        return f"What is {to_words(p.a.value)} times {to_words(p.b.value)}?"
    raise ValueError(f"render_prompt needs a text representation, got {r.value}")


def image_text(p: Problem, r) -> str:
    """The string drawn into the image for ``r``."""
    r = Representation(r)
    if r is Representation.NUMERAL_IMAGE:
        return f"{p.a.value} × {p.b.value} = ?"
    if r is Representation.WORD_IMAGE:
        return render_prompt(p, Representation.WORD_TEXT)
    raise ValueError(f"not an image representation: {r.value}")


@dataclass(frozen=True)
class StyleConfig:
    width: int = 1024
    height: int = 256
    scale: int = 2
    margin: int = 16
    line_gap: int = 2
    ink: str = "#000000"
    paper: str = "#ffffff"

    @property
    def cell_w(self) -> int:
        return (GLYPH_W + 1) * self.scale

    @property
    def line_h(self) -> int:
        return (GLYPH_H + self.line_gap) * self.scale

    @property
    def max_cols(self) -> int:
        return (self.width - 2 * self.margin + self.scale) // self.cell_w

    def to_dict(self) -> dict:
        return dict(self.__dict__)


DEFAULT_STYLE = StyleConfig()


def layout_lines(text: str, style: StyleConfig) -> list:
    """Greedy word wrap; raises if the text does not fit the canvas."""
    missing = sorted({c for c in text if c not in GLYPHS})
    if missing:
        raise ValueError(f"no glyph for {missing!r}")
    cols = style.max_cols
    lines, cur = [], ""
    for word in text.split(" "):
        cand = word if not cur else cur + " " + word
        if len(cand) <= cols:
            cur = cand
            continue
        if cur:
            lines.append(cur)
        if len(word) > cols:
            need_w = 2 * style.margin + len(word) * style.cell_w
            raise ValueError(f"word of {len(word)} chars needs canvas width >= {need_w}px (have {style.width})")
        cur = word
    lines.append(cur)
    need_h = 2 * style.margin + len(lines) * style.line_h
    if need_h > style.height:
        raise ValueError(
            f"text needs {len(lines)} lines: canvas height >= {need_h}px required (have {style.height})"
        )
    return lines


def rasterize(text: str, style: StyleConfig = DEFAULT_STYLE) -> list:
    """Rows of booleans (True = ink), ``style.height`` x ``style.width``."""
    grid = [[False] * style.width for _ in range(style.height)]
    for li, line in enumerate(layout_lines(text, style)):
        y0 = style.margin + li * style.line_h
        for ci, ch in enumerate(line):
            x0 = style.margin + ci * style.cell_w
            for gy, row in enumerate(GLYPHS[ch]):
                for gx, on in enumerate(row):
                    if not on:
                        continue
                    for dy in range(style.scale):
                        r = grid[y0 + gy * style.scale + dy]
                        for dx in range(style.scale):
                            r[x0 + gx * style.scale + dx] = True
    return grid


def _xml_escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;").replace('"', "&quot;")


def to_svg(text: str, style: StyleConfig = DEFAULT_STYLE) -> bytes:
    lines = layout_lines(text, style)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{style.width}" '
        f'height="{style.height}" viewBox="0 0 {style.width} {style.height}">',
        f"<desc>{_xml_escape(text)}</desc>",
        f'<rect x="0" y="0" width="{style.width}" height="{style.height}" fill="{style.paper}"/>',
        f'<g fill="{style.ink}" shape-rendering="crispEdges">',
    ]
    s = style.scale
    for li, line in enumerate(lines):
        y0 = style.margin + li * style.line_h
        for ci, ch in enumerate(line):
            x0 = style.margin + ci * style.cell_w
            for gy, row in enumerate(GLYPHS[ch]):
                gx = 0
                while gx < GLYPH_W:
                    if not row[gx]:
                        gx += 1
                        continue
                    run = gx
                    while run < GLYPH_W and row[run]:
                        run += 1
                    out.append(
                        f'<rect x="{x0 + gx * s}" y="{y0 + gy * s}" width="{(run - gx) * s}" height="{s}"/>'
                    )
                    gx = run
    out.append("</g>")
    out.append("</svg>")
    return ("\n".join(out) + "\n").encode("utf-8")


def _png_chunk(tag: bytes, data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + tag + data + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)


def to_png(text: str, style: StyleConfig = DEFAULT_STYLE) -> bytes:
    """8-bit grayscale PNG, black ink on white."""
    grid = rasterize(text, style)
    raw = b"".join(b"\x00" + bytes(0 if on else 255 for on in row) for row in grid)
    ihdr = struct.pack(">IIBBBBB", style.width, style.height, 8, 0, 0, 0, 0)
    return (
        b"\x89PNG\r\n\x1a\n"
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"IDAT", zlib.compress(raw, 9))
        + _png_chunk(b"IEND", b"")
    )


def decode_png(data: bytes) -> list:
    """Inverse of :func:`to_png` for the grayscale files it writes."""
    if data[:8] != b"\x89PNG\r\n\x1a\n":
        raise ValueError("not a PNG")
    pos, idat, width, height = 8, b"", None, None
    while pos < len(data):
        (length,) = struct.unpack(">I", data[pos:pos + 4])
        tag = data[pos + 4:pos + 8]
        body = data[pos + 8:pos + 8 + length]
        if tag == b"IHDR":
            width, height, depth, ctype = struct.unpack(">IIBB", body[:10])
            if depth != 8 or ctype != 0:
                raise ValueError("only 8-bit grayscale supported")
        elif tag == b"IDAT":
            idat += body
        pos += 12 + length
    raw = zlib.decompress(idat)
    stride = width + 1
    rows = []
    for y in range(height):
        line = raw[y * stride:(y + 1) * stride]
        if line[0] != 0:
            raise ValueError("unsupported PNG filter")
        rows.append([v < 128 for v in line[1:]])
    return rows


def read_text(grid: list, style: StyleConfig = DEFAULT_STYLE) -> str:
    """Recover the drawn text by exact glyph matching on the layout grid."""
    lookup = {g: ch for ch, g in GLYPHS.items()}
    lines = []
    y0 = style.margin
    while y0 + GLYPH_H * style.scale <= style.height - style.margin + style.scale:
        chars = []
        x0 = style.margin
        while x0 + GLYPH_W * style.scale <= style.width:
            cell = tuple(
                tuple(grid[y0 + gy * style.scale][x0 + gx * style.scale] for gx in range(GLYPH_W))
                for gy in range(GLYPH_H)
            )
            ch = lookup.get(cell)
            if ch is None:
                raise ValueError(f"unrecognised glyph at ({x0}, {y0})")
            chars.append(ch)
            x0 += style.cell_w
        line = "".join(chars).rstrip()
        if not line:
            break
        lines.append(line)
        y0 += style.line_h
    return " ".join(lines)


def render_image(p: Problem, r, style: StyleConfig = DEFAULT_STYLE, fmt: str = "svg") -> bytes:
    text = image_text(p, r)
    if fmt == "svg":
        return to_svg(text, style)
    if fmt == "png":
        return to_png(text, style)
    raise ValueError(f"unknown image format {fmt!r}")


# --- audio -------------------------------------------------------------------


def utterance_tokens(p: Problem) -> list:
    return word_tokens(render_prompt(p, Representation.WORD_TEXT).rstrip("?"))


@dataclass
class ClipLibrary:
    """Directory of PCM16 mono WAV clips plus ``index.json`` mapping token -> file."""

    root: Path
    sample_rate: int
    clips: dict

    @classmethod
    def load(cls, root) -> "ClipLibrary":
        root = Path(root)
        index = json.loads((root / "index.json").read_text(encoding="utf-8"))
        return cls(root, int(index.get("sample_rate", 16000)), dict(index.get("clips", {})))

    @classmethod
    def empty(cls, sample_rate: int = 16000) -> "ClipLibrary":
        return cls(Path("."), sample_rate, {})

    def frames(self, token: str) -> bytes:
        with wave.open(str(self.root / self.clips[token]), "rb") as w:
            if w.getnchannels() != 1 or w.getsampwidth() != 2 or w.getframerate() != self.sample_rate:
                raise ValueError(f"clip {token!r}: need mono PCM16 at {self.sample_rate} Hz")
            return w.readframes(w.getnframes())

    def duration(self, token: str) -> float:
        return len(self.frames(token)) / 2 / self.sample_rate


class MissingClipsError(ValueError):
    def __init__(self, missing):
        self.missing = sorted(set(missing))
        super().__init__(f"clip library lacks tokens: {', '.join(self.missing)}")


def render_audio(p: Problem, clips: ClipLibrary, gap_ms: int = 80) -> bytes:
    tokens = utterance_tokens(p)
    missing = [t for t in tokens if t not in clips.clips]
    if missing:
        raise MissingClipsError(missing)
    gap = b"\x00\x00" * (clips.sample_rate * gap_ms // 1000)
    pcm = gap.join(clips.frames(t) for t in tokens)
    buf = io.BytesIO()
    with wave.open(buf, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(clips.sample_rate)
        w.writeframes(pcm)
    return buf.getvalue()


@dataclass(frozen=True)
class RenderedInstance:
    problem_id: str
    representation: Representation
    payload: object
    payload_hash: str
    media_type: str

    @classmethod
    def build(cls, problem_id: str, r: Representation, payload, media_type: str) -> "RenderedInstance":
        raw = payload.encode("utf-8") if isinstance(payload, str) else payload
        return cls(problem_id, r, payload, hashlib.sha256(raw).hexdigest(), media_type)


def render(p: Problem, r, style: StyleConfig = DEFAULT_STYLE, clips: ClipLibrary | None = None,
           image_format: str = "png") -> RenderedInstance:
    r = Representation(r)
    if r.is_text:
        return RenderedInstance.build(p.id, r, render_prompt(p, r), "text/plain")
    if r.is_image:
        media = "image/png" if image_format == "png" else "image/svg+xml"
        return RenderedInstance.build(p.id, r, render_image(p, r, style, image_format), media)
    if clips is None:
        raise MissingClipsError(utterance_tokens(p))
    return RenderedInstance.build(p.id, r, render_audio(p, clips), "audio/wav")

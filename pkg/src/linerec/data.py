"""Synthetic line images, PGM files, and transcript datasets.

Images are grayscale float64 arrays in [0, 1], background 0, ink bright.
Generated pixels are quantized to 8-bit steps so writing a PGM and reading
it back reproduces the array exactly.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ctc import LabelAlphabet
from .errors import DataError

log = logging.getLogger(__name__)

# 7x5 stroke-grid templates for ten digit-like glyphs
GLYPHS_7X5 = {
    "0": ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    "1": ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    "2": ("01110", "10001", "00001", "00010", "00100", "01000", "11111"),
    "3": ("11111", "00010", "00100", "00010", "00001", "10001", "01110"),
    "4": ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    "5": ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    "6": ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    "7": ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    "8": ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    "9": ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}


@dataclass
class Sample:
    """One labeled line image."""

    sample_id: str
    image: np.ndarray
    transcript: str


@dataclass(frozen=True)
class SyntheticFontSpec:
    """Rendering knobs for the synthetic glyph font.

    scale magnifies the 7x5 templates by an integer factor; jitter shifts
    each glyph by up to that many pixels in both axes; noise is the std of
    additive Gaussian pixel noise applied to the whole image.
    """

    scale: int = 2
    margin: int = 1
    spacing: int = 2
    jitter: int = 1
    noise: float = 0.1
    ink: float = 1.0

    def __post_init__(self):
        if self.scale < 1:
            raise ValueError("scale must be at least 1")
        if self.jitter < 0 or self.noise < 0:
            raise ValueError("jitter and noise must be non-negative")

    @property
    def glyph_height(self):
        return 7 * self.scale

    @property
    def glyph_width(self):
        return 5 * self.scale

    @property
    def line_height(self):
        return self.glyph_height + 2 * (self.margin + self.jitter)

    def to_dict(self):
        return {
            "scale": self.scale,
            "margin": self.margin,
            "spacing": self.spacing,
            "jitter": self.jitter,
            "noise": self.noise,
            "ink": self.ink,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def default_alphabet(with_space=True):
    """The ten built-in glyphs, optionally plus the whitespace label."""
    labels = "0123456789"
    return LabelAlphabet(labels + " " if with_space else labels)


def _glyph_bitmap(ch, spec):
    rows = GLYPHS_7X5[ch]
    bits = np.array([[int(c) for c in row] for row in rows], dtype=np.float64)
    return np.repeat(np.repeat(bits, spec.scale, axis=0), spec.scale, axis=1)


def render_line(text, spec, rng):
    """Render a transcript as one noisy line image.

    Each glyph lands at an integer-jittered position; whitespace advances
    the cursor without ink.  The result is quantized to 255ths.
    """
    for ch in text:
        if ch != " " and ch not in GLYPHS_7X5:
            raise ValueError(f"no glyph for character {ch!r}")
    edge = spec.margin + spec.jitter
    width = 2 * edge + len(text) * spec.glyph_width
    if len(text) > 1:
        width += (len(text) - 1) * spec.spacing
    img = np.zeros((spec.line_height, max(width, 1)))
    x = edge
    for ch in text:
        if ch != " ":
            dy = int(rng.integers(-spec.jitter, spec.jitter + 1)) if spec.jitter else 0
            dx = int(rng.integers(-spec.jitter, spec.jitter + 1)) if spec.jitter else 0
            gy = edge + dy
            gx = max(0, min(x + dx, img.shape[1] - spec.glyph_width))
            img[gy : gy + spec.glyph_height, gx : gx + spec.glyph_width] += (
                spec.ink * _glyph_bitmap(ch, spec)
            )
        x += spec.glyph_width + spec.spacing
    if spec.noise > 0:
        img += rng.normal(0.0, spec.noise, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return np.round(img * 255.0) / 255.0


def _random_text(alphabet, length_range, rng, vocabulary):
    lo, hi = length_range
    if lo < 1 or hi < lo:
        raise ValueError(f"bad length range {length_range}")
    if vocabulary is None:
        glyphs = [ch for ch in alphabet.labels if ch != " "]
        n = int(rng.integers(lo, hi + 1))
        return "".join(glyphs[int(rng.integers(len(glyphs)))] for _ in range(n))
    for _ in range(100):
        words = []
        while True:
            w = vocabulary[int(rng.integers(len(vocabulary)))]
            candidate = " ".join(words + [w])
            if len(candidate) > hi:
                break
            words.append(w)
        if words and len(" ".join(words)) >= lo:
            return " ".join(words)
    raise ValueError(f"cannot fit vocabulary words into length range {length_range}")


def generate_synthetic(n, alphabet, length_range, spec, rng, vocabulary=None):
    """n random samples; texts from the vocabulary (space-joined words)
    when one is given, otherwise uniform glyph strings without spaces."""
    if vocabulary is not None:
        for w in vocabulary:
            for ch in w:
                if ch == " " or ch not in alphabet:
                    raise ValueError(f"vocabulary word {w!r} outside alphabet")
    samples = []
    for i in range(n):
        text = _random_text(alphabet, length_range, rng, vocabulary)
        img = render_line(text, spec, rng)
        samples.append(Sample(f"syn{i:05d}", img, text))
    return samples


# ---- PGM ----------------------------------------------------------------


def write_pgm(path, image):
    """Binary PGM (P5), maxval 255."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2:
        raise ValueError(f"PGM wants a 2-D image, got shape {img.shape}")
    raw = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        f.write(raw.tobytes())


def read_pgm(path):
    """Read a binary PGM into floats in [0, 1].  Only maxval 255 files."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P5"):
        raise DataError(f"{path}: not a binary PGM")
    # header: magic, width, height, maxval as whitespace-separated tokens,
    # with # comments running to end of line
    pos = 2
    tokens = []
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DataError(f"{path}: malformed PGM header") from None
    if maxval != 255:
        raise DataError(f"{path}: unsupported maxval {maxval}, need 255")
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise DataError(f"{path}: truncated PGM raster")
    img = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return img.astype(np.float64) / 255.0


# ---- datasets -----------------------------------------------------------


@dataclass
class LoadResult:
    samples: list
    rejected: list  # (filename, reason)


def save_dataset(samples, out_dir):
    """Write images/<id>.pgm plus a transcripts.tsv next to them."""
    out = Path(out_dir)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)
    lines = []
    for s in samples:
        name = f"{s.sample_id}.pgm"
        write_pgm(img_dir / name, s.image)
        lines.append(f"{name}\t{s.transcript}")
    (out / "transcripts.tsv").write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    return img_dir, out / "transcripts.tsv"


def load_dataset(images_dir, transcript_path, alphabet):
    """Read "filename TAB transcript" lines and their images.

    Samples whose transcript falls outside the alphabet are rejected and
    reported, not silently dropped; a missing or unreadable image is a hard
    error.
    """
    images_dir = Path(images_dir)
    transcript_path = Path(transcript_path)
    if not transcript_path.exists():
        raise DataError(f"transcript file {transcript_path} does not exist")
    samples = []
    rejected = []
    text = transcript_path.read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines:
        log.warning("transcript file %s is empty", transcript_path)
    for lineno, line in enumerate(lines, start=1):
        if "\t" not in line:
            raise DataError(f"{transcript_path}:{lineno}: expected 'filename<TAB>transcript'")
        fname, transcript = line.split("\t", 1)
        img_path = images_dir / fname
        if not img_path.exists():
            raise DataError(f"{transcript_path}:{lineno}: image {img_path} does not exist")
        try:
            alphabet.encode(transcript)
        except ValueError as e:
            rejected.append((fname, str(e)))
            continue
        image = read_pgm(img_path)
        samples.append(Sample(Path(fname).stem, image, transcript))
    if rejected:
        log.warning(
            "rejected %d of %d samples with out-of-alphabet transcripts",
            len(rejected),
            len(lines),
        )
    return LoadResult(samples, rejected)

"""Image file I/O, Gaussian kernels and figure rendering.

The codecs are deliberately minimal: 8-bit RGB (or grayscale, expanded on
load) PNG and binary PPM (P6). Written PNGs use filter type 0 on every row;
read PNGs may use any of the five standard filters. Plots are emitted as
plain SVG text so identical inputs produce identical bytes.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from .tensor import DTYPE

_PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


class ImageFormatError(ValueError):
    """Unsupported or malformed image file."""


@dataclass(frozen=True)
class Kernel:
    """Normalized low-pass filter taps on a (2r+1) x (2r+1) window."""

    radius: int
    weights: np.ndarray


def gaussian_kernel(sigma: float, radius: int) -> Kernel:
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if radius < 1:
        raise ValueError(f"radius must be a positive integer, got {radius}")
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    dy, dx = np.meshgrid(coords, coords, indexing="ij")
    weights = np.exp(-(dx**2 + dy**2) / (2.0 * sigma**2))
    weights /= weights.sum()
    return Kernel(radius=int(radius), weights=weights.astype(DTYPE))


# ---------------------------------------------------------------------------
# float <-> byte image conversion


def to_bytes_image(image: np.ndarray) -> np.ndarray:
    """[0,1] floats to uint8, rounding half away from zero."""
    arr = np.asarray(image, dtype=np.float64)
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def from_bytes_image(data: np.ndarray) -> np.ndarray:
    return (np.asarray(data, dtype=DTYPE) / DTYPE(255.0)).astype(DTYPE)


# ---------------------------------------------------------------------------
# PNG


def _png_chunk(tag: bytes, payload: bytes) -> bytes:
    crc = zlib.crc32(payload, zlib.crc32(tag))
    return struct.pack(">I", len(payload)) + tag + payload + struct.pack(">I", crc)


def _write_png(data: np.ndarray, path: Path) -> None:
    h, w, _ = data.shape
    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    raw = bytearray()
    for row in data:
        raw.append(0)  # filter type 0 on every row
        raw.extend(row.tobytes())
    with open(path, "wb") as fh:
        fh.write(_PNG_SIGNATURE)
        fh.write(_png_chunk(b"IHDR", header))
        fh.write(_png_chunk(b"IDAT", zlib.compress(bytes(raw), 6)))
        fh.write(_png_chunk(b"IEND", b""))


def _unfilter_png(raw: bytes, w: int, h: int, channels: int) -> np.ndarray:
    stride = w * channels
    out = np.zeros((h, stride), dtype=np.uint8)
    pos = 0
    for y in range(h):
        ftype = raw[pos]
        row = raw[pos + 1 : pos + 1 + stride]  # modular arithmetic on plain ints
        pos += 1 + stride
        prior = out[y - 1] if y else np.zeros(stride, dtype=np.uint8)
        if ftype == 0:
            out[y] = np.frombuffer(row, dtype=np.uint8)
        elif ftype == 1:
            for i in range(stride):
                left = int(out[y, i - channels]) if i >= channels else 0
                out[y, i] = (row[i] + left) & 0xFF
        elif ftype == 2:
            out[y] = np.frombuffer(row, dtype=np.uint8) + prior
        elif ftype == 3:
            for i in range(stride):
                left = int(out[y, i - channels]) if i >= channels else 0
                out[y, i] = (row[i] + (left + int(prior[i])) // 2) & 0xFF
        elif ftype == 4:
            for i in range(stride):
                a = int(out[y, i - channels]) if i >= channels else 0
                b = int(prior[i])
                c = int(out[y - 1, i - channels]) if (i >= channels and y) else 0
                p = a + b - c
                pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
                if pa <= pb and pa <= pc:
                    pred = a
                elif pb <= pc:
                    pred = b
                else:
                    pred = c
                out[y, i] = (row[i] + pred) & 0xFF
        else:
            raise ImageFormatError(f"unknown PNG filter type {ftype} in row {y}")
    return out.reshape(h, w, channels)


def _read_png(blob: bytes, path: Path) -> np.ndarray:
    if blob[:8] != _PNG_SIGNATURE:
        raise ImageFormatError(f"{path}: not a PNG file (bad signature)")
    pos = 8
    ihdr = None
    idat = bytearray()
    while pos < len(blob):
        if pos + 8 > len(blob):
            raise ImageFormatError(f"{path}: truncated PNG chunk header")
        length = struct.unpack(">I", blob[pos : pos + 4])[0]
        tag = blob[pos + 4 : pos + 8]
        payload = blob[pos + 8 : pos + 8 + length]
        if len(payload) != length:
            raise ImageFormatError(f"{path}: truncated PNG chunk {tag!r}")
        pos += 12 + length  # length + tag + payload + crc
        if tag == b"IHDR":
            ihdr = struct.unpack(">IIBBBBB", payload)
        elif tag == b"IDAT":
            idat.extend(payload)
        elif tag == b"IEND":
            break
    if ihdr is None:
        raise ImageFormatError(f"{path}: PNG without IHDR chunk")
    w, h, depth, color, _comp, _filt, interlace = ihdr
    if depth != 8:
        raise ImageFormatError(f"{path}: unsupported PNG bit depth {depth} (need 8)")
    if color not in (0, 2):
        names = {3: "palette", 4: "grayscale+alpha", 6: "RGBA"}
        raise ImageFormatError(
            f"{path}: unsupported PNG color type {color} "
            f"({names.get(color, 'unknown')}); need RGB or grayscale"
        )
    if interlace:
        raise ImageFormatError(f"{path}: interlaced PNG not supported")
    channels = 3 if color == 2 else 1
    raw = zlib.decompress(bytes(idat))
    if len(raw) != h * (w * channels + 1):
        raise ImageFormatError(f"{path}: PNG pixel data has wrong length")
    data = _unfilter_png(raw, w, h, channels)
    if channels == 1:
        data = np.repeat(data, 3, axis=2)
    return data


# ---------------------------------------------------------------------------
# PPM (P6)


def _write_ppm(data: np.ndarray, path: Path) -> None:
    h, w, _ = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def _read_ppm(blob: bytes, path: Path) -> np.ndarray:
    def tokens():
        i = 0
        while i < len(blob):
            ch = blob[i : i + 1]
            if ch == b"#":
                while i < len(blob) and blob[i : i + 1] != b"\n":
                    i += 1
            elif ch.isspace():
                i += 1
            else:
                start = i
                while i < len(blob) and not blob[i : i + 1].isspace():
                    i += 1
                yield blob[start:i], i
        yield b"", len(blob)

    it = tokens()
    magic, _ = next(it)
    if magic != b"P6":
        raise ImageFormatError(f"{path}: not a binary PPM (magic {magic!r}, need P6)")
    try:
        w = int(next(it)[0])
        h = int(next(it)[0])
        maxval, end = next(it)
        maxval = int(maxval)
    except ValueError:
        raise ImageFormatError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise ImageFormatError(f"{path}: unsupported PPM maxval {maxval} (need 255)")
    data = blob[end + 1 : end + 1 + w * h * 3]  # single whitespace byte after maxval
    if len(data) != w * h * 3:
        raise ImageFormatError(f"{path}: PPM pixel data truncated")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3)


# ---------------------------------------------------------------------------
# public image I/O


def load_image(path) -> np.ndarray:
    """Read a PNG or PPM file into an H x W x 3 float32 array in [0, 1]."""
    path = Path(path)
    blob = path.read_bytes()
    if blob[:8] == _PNG_SIGNATURE:
        data = _read_png(blob, path)
    elif blob[:2] == b"P6":
        data = _read_ppm(blob, path)
    elif blob[:2] in (b"P1", b"P2", b"P3", b"P4", b"P5"):
        raise ImageFormatError(
            f"{path}: unsupported PNM variant {blob[:2].decode()} (only P6 is read)"
        )
    else:
        raise ImageFormatError(f"{path}: unrecognized image format")
    return from_bytes_image(data)


def save_image(image: np.ndarray, path) -> None:
    """Write an H x W x 3 float array in [0, 1] as PNG or PPM (by suffix)."""
    path = Path(path)
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ImageFormatError(f"expected an HxWx3 image, got shape {image.shape}")
    data = to_bytes_image(image)
    if path.suffix.lower() == ".ppm":
        _write_ppm(data, path)
    else:
        _write_png(data, path)


# ---------------------------------------------------------------------------
# figure rendering


def render_montage(
    snapshots: list[np.ndarray], rows: int, cols: int, separator_px: int = 2
) -> np.ndarray:
    """Tile snapshots row-major on a white canvas with uniform gutters.

    Canvas size is rows*H + (rows+1)*separator_px by cols*W + (cols+1)*sep,
    i.e. gutters also frame the outer border.
    """
    if not snapshots:
        raise ValueError("montage needs at least one snapshot")
    if len(snapshots) > rows * cols:
        raise ValueError(f"{len(snapshots)} snapshots do not fit a {rows}x{cols} grid")
    h, w, c = snapshots[0].shape
    for i, snap in enumerate(snapshots):
        if snap.shape != (h, w, c):
            raise ValueError(
                f"snapshot {i} has shape {snap.shape}, expected {(h, w, c)}"
            )
    sep = int(separator_px)
    canvas = np.ones(
        (rows * h + (rows + 1) * sep, cols * w + (cols + 1) * sep, c), dtype=DTYPE
    )
    for i, snap in enumerate(snapshots):
        r, col = divmod(i, cols)
        y = sep + r * (h + sep)
        x = sep + col * (w + sep)
        canvas[y : y + h, x : x + w] = snap
    return canvas


# Plot geometry: a 480x320 viewport with margins left=50, right=20, top=30,
# bottom=45. Blur fraction b in [0,1] maps to x = 50 + b*410 and probability
# p in [0,1] maps to y = 30 + (1-p)*245; both formatted "%.2f".
_SVG_W, _SVG_H = 480, 320
_SVG_ML, _SVG_MR, _SVG_MT, _SVG_MB = 50, 20, 30, 45


def trajectory_plot_xy(blur_fraction: float, prob: float) -> tuple[float, float]:
    """Pixel coordinates of one trajectory point under the documented mapping."""
    x = _SVG_ML + blur_fraction * (_SVG_W - _SVG_ML - _SVG_MR)
    y = _SVG_MT + (1.0 - prob) * (_SVG_H - _SVG_MT - _SVG_MB)
    return x, y


def render_trajectory_plot(traj, class_name: str) -> str:
    """SVG line chart of target-class probability against blur fraction."""
    if not traj.steps:
        raise ValueError("cannot plot an empty trajectory")
    points = " ".join(
        "%.2f,%.2f" % trajectory_plot_xy(s.blur_fraction, float(s.class_probs[traj.target_class]))
        for s in traj.steps
    )
    left, right = _SVG_ML, _SVG_W - _SVG_MR
    top, bottom = _SVG_MT, _SVG_H - _SVG_MB
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_SVG_W}" height="{_SVG_H}" '
        f'viewBox="0 0 {_SVG_W} {_SVG_H}">',
        f'<rect x="0" y="0" width="{_SVG_W}" height="{_SVG_H}" fill="white"/>',
        f'<text x="{(left + right) / 2:.2f}" y="18" font-family="sans-serif" '
        f'font-size="13" text-anchor="middle">{escape(class_name)}</text>',
        f'<line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}" stroke="black"/>',
        f'<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>',
    ]
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        x, _ = trajectory_plot_xy(frac, 0.0)
        lines.append(
            f'<line x1="{x:.2f}" y1="{bottom}" x2="{x:.2f}" y2="{bottom + 4}" stroke="black"/>'
        )
        lines.append(
            f'<text x="{x:.2f}" y="{bottom + 16}" font-family="sans-serif" font-size="10" '
            f'text-anchor="middle">{int(frac * 100)}%</text>'
        )
        _, y = trajectory_plot_xy(0.0, frac)
        lines.append(
            f'<line x1="{left - 4}" y1="{y:.2f}" x2="{left}" y2="{y:.2f}" stroke="black"/>'
        )
        lines.append(
            f'<text x="{left - 7}" y="{y + 3:.2f}" font-family="sans-serif" font-size="10" '
            f'text-anchor="end">{frac:.2f}</text>'
        )
    lines.append(
        f'<text x="{(left + right) / 2:.2f}" y="{_SVG_H - 6}" font-family="sans-serif" '
        f'font-size="11" text-anchor="middle">pixels blurred</text>'
    )
    lines.append(
        f'<text x="14" y="{(top + bottom) / 2:.2f}" font-family="sans-serif" font-size="11" '
        f'text-anchor="middle" transform="rotate(-90 14 {(top + bottom) / 2:.2f})">'
        "class probability</text>"
    )
    lines.append(
        f'<polyline points="{points}" fill="none" stroke="#1f6fb2" stroke-width="1.5"/>'
    )
    lines.append("</svg>")
    return "\n".join(lines) + "\n"

"""Binary PGM (P5) reading/writing and the bundled synthetic test images."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np

from .semantics import GrayImage

BUILTIN_NAMES = ("ramp", "radial", "checker", "stripes", "noise", "clouds")


class PGMError(ValueError):
    pass


class MalformedHeader(PGMError):
    pass


class TruncatedPayload(PGMError):
    pass


class UnsupportedMaxval(PGMError):
    pass


class UnsupportedMagic(PGMError):
    pass


def _header_tokens(data: bytes, count: int):
    tokens = []
    pos = 0
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos:pos + 1].isspace():
            pos += 1
        if pos < n and data[pos:pos + 1] == b"#":
            while pos < n and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not data[pos:pos + 1].isspace() and data[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedHeader("malformed header: unexpected end of header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= n or not data[pos:pos + 1].isspace():
        raise MalformedHeader("malformed header: missing separator before raster")
    return tokens, pos + 1


def parse_pgm(data: bytes) -> GrayImage:
    if data[:2] != b"P5":
        raise UnsupportedMagic(f"unsupported magic {data[:2]!r}; only binary P5 is accepted")
    tokens, offset = _header_tokens(data, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise MalformedHeader(f"malformed header: {exc}") from None
    if width <= 0 or height <= 0:
        raise MalformedHeader(f"malformed header: bad dimensions {width}x{height}")
    if maxval != 255:
        raise UnsupportedMaxval(f"unsupported maxval {maxval}")
    payload = data[offset:offset + width * height]
    if len(payload) < width * height:
        raise TruncatedPayload(f"truncated payload: expected {width * height} bytes, got {len(payload)}")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(height, width).copy()
    return GrayImage(width, height, pixels)


def load_image(path) -> GrayImage:
    """Read an 8-bit binary PGM, or a bundled image by name (``builtin:noise``)."""
    path = str(path)
    if path.startswith("builtin:"):
        return builtin_image(path.split(":", 1)[1])
    return parse_pgm(Path(path).read_bytes())


def save_image(img: GrayImage, path) -> None:
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.pixels.tobytes())


def image_id(path) -> str:
    path = str(path)
    if path.startswith("builtin:"):
        return path.split(":", 1)[1]
    return Path(path).stem


def builtin_image(name: str) -> GrayImage:
    if name not in BUILTIN_NAMES:
        raise KeyError(f"unknown builtin image {name!r}; choose from {', '.join(BUILTIN_NAMES)}")
    res = resources.files("semapower") / "data" / "images" / f"{name}.pgm"
    return parse_pgm(res.read_bytes())


def synthetic_images(size: int = 256, seed: int = 7) -> dict[str, GrayImage]:
    """Regenerate the six bundled test images from scratch."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    out = {}
    out["ramp"] = xx * 255.0 / (size - 1)
    r = np.hypot(xx - size / 2, yy - size / 2)
    out["radial"] = 255.0 * (0.5 + 0.5 * np.cos(r / size * 6 * np.pi))
    tile = (xx % 32) * 4 + (yy % 32) * 3.5
    out["checker"] = np.where(((xx // 32) + (yy // 32)) % 2 == 0, tile, 255.0 - tile)
    out["stripes"] = 127.5 + 127.5 * np.sin(2 * np.pi * (xx + 0.5 * yy) / 23.0)
    out["noise"] = rng.uniform(0, 256, size=(size, size))
    # low-pass filtered noise via FFT
    spec = np.fft.fft2(rng.normal(size=(size, size)))
    f = np.hypot(*np.meshgrid(np.fft.fftfreq(size), np.fft.fftfreq(size)))
    field = np.real(np.fft.ifft2(spec * np.exp(-(f / 0.03) ** 2)))
    field = (field - field.min()) / (field.max() - field.min())
    out["clouds"] = field * 255.0
    return {k: GrayImage.from_array(np.clip(np.floor(v), 0, 255).astype(np.uint8)) for k, v in out.items()}


def write_builtin_images(directory) -> list[Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, img in synthetic_images().items():
        p = directory / f"{name}.pgm"
        save_image(img, p)
        paths.append(p)
    return paths

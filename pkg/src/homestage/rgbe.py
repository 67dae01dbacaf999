"""Radiance RGBE (.hdr) reading and writing.

Files are written with new-style run-length encoded scanlines. Calibration
state is carried in the header: ``EXPOSURE=`` holds the accumulated
calibration factor, and two extra variables (``CALIBRATION=``,
``PROJECTION=``) keep the image tags. Readers accept flat, old-style and
new-style RLE data.
"""
from __future__ import annotations

import io
import os

import numpy as np

from .hdr import RadianceImage

MAGIC = b"#?RADIANCE"


def float_to_rgbe(pixels: np.ndarray) -> np.ndarray:
    px = np.asarray(pixels, dtype=np.float64)
    m = px.max(axis=-1)
    mant, exp = np.frexp(m)
    rgbe = np.zeros(px.shape[:-1] + (4,), dtype=np.uint8)
    ok = m > 1e-32
    scale = np.where(ok, mant * 256.0 / np.where(ok, m, 1.0), 0.0)
    rgbe[..., :3] = np.clip(np.floor(px * scale[..., None]), 0, 255).astype(np.uint8)
    rgbe[..., 3] = np.where(ok, np.clip(exp + 128, 0, 255), 0).astype(np.uint8)
    return rgbe


def rgbe_to_float(rgbe: np.ndarray) -> np.ndarray:
    rgbe = np.asarray(rgbe)
    e = rgbe[..., 3].astype(np.int32)
    f = np.where(e > 0, np.ldexp(1.0, e - 136), 0.0)
    return (rgbe[..., :3].astype(np.float64) + 0.5) * f[..., None] * (e[..., None] > 0)


def _encode_channel(row: np.ndarray, out: bytearray) -> None:
    n = row.size
    # Run starts: positions where the value changes.
    change = np.flatnonzero(np.diff(row)) + 1
    starts = np.concatenate(([0], change))
    lengths = np.diff(np.concatenate((starts, [n])))
    literal: list[int] = []

    def flush():
        for i in range(0, len(literal), 128):
            chunk = literal[i:i + 128]
            out.append(len(chunk))
            out.extend(chunk)
        literal.clear()

    for s, ln in zip(starts.tolist(), lengths.tolist()):
        if ln >= 4:
            flush()
            value = int(row[s])
            while ln > 0:
                k = min(ln, 127)
                out.append(128 + k)
                out.append(value)
                ln -= k
        else:
            literal.extend(row[s:s + ln].tolist())
    flush()


def _encode_scanline(scan: np.ndarray) -> bytes:
    w = scan.shape[0]
    out = bytearray([2, 2, (w >> 8) & 0xFF, w & 0xFF])
    for c in range(4):
        _encode_channel(scan[:, c], out)
    return bytes(out)


def write_hdr(path, image: RadianceImage, extra_header: dict | None = None) -> None:
    """Write ``image`` to ``path`` (or a binary file object)."""
    h, w = image.shape
    lines = [MAGIC.decode(), "FORMAT=32-bit_rle_rgbe"]
    if image.k is not None:
        lines.append(f"EXPOSURE={image.k:.17g}")
    lines.append(f"CALIBRATION={image.calibration}")
    lines.append(f"PROJECTION={image.projection}")
    for key, value in (extra_header or {}).items():
        lines.append(f"{key}={value}")
    header = ("\n".join(lines) + "\n\n" + f"-Y {h} +X {w}\n").encode("ascii")
    rgbe = float_to_rgbe(image.pixels)
    body = bytearray()
    for y in range(h):
        if 8 <= w < 32768:
            body.extend(_encode_scanline(rgbe[y]))
        else:
            body.extend(rgbe[y].tobytes())
    data = header + bytes(body)
    if hasattr(path, "write"):
        path.write(data)
    else:
        with open(path, "wb") as fh:
            fh.write(data)


def read_header(fh) -> tuple[dict, list[str], tuple[int, int]]:
    first = fh.readline().rstrip(b"\n")
    if not first.startswith(b"#?"):
        raise ValueError("not a Radiance file (missing #? magic)")
    variables: dict = {}
    raw: list[str] = []
    while True:
        line = fh.readline()
        if not line:
            raise ValueError("truncated header")
        line = line.rstrip(b"\n")
        if not line:
            break
        text = line.decode("ascii", errors="replace")
        raw.append(text)
        if "=" in text:
            key, value = text.split("=", 1)
            key = key.strip()
            if key == "EXPOSURE":
                variables[key] = variables.get(key, 1.0) * float(value)
            else:
                variables[key] = value.strip()
    res = fh.readline().decode("ascii").split()
    if len(res) != 4 or res[0] != "-Y" or res[2] != "+X":
        raise ValueError(f"unsupported resolution line {' '.join(res)!r}")
    return variables, raw, (int(res[1]), int(res[3]))


def _decode(data: bytes, h: int, w: int) -> np.ndarray:
    out = np.zeros((h, w, 4), dtype=np.uint8)
    buf = memoryview(data)
    pos = 0
    for y in range(h):
        if (8 <= w < 32768 and pos + 4 <= len(buf) and buf[pos] == 2 and buf[pos + 1] == 2
                and (buf[pos + 2] << 8 | buf[pos + 3]) == w and not buf[pos + 2] & 0x80):
            pos += 4
            for c in range(4):
                x = 0
                channel = out[y, :, c]
                while x < w:
                    count = buf[pos]
                    pos += 1
                    if count > 128:
                        count -= 128
                        channel[x:x + count] = buf[pos]
                        pos += 1
                    else:
                        channel[x:x + count] = np.frombuffer(buf[pos:pos + count], dtype=np.uint8)
                        pos += count
                    x += count
        else:
            # flat or old-style RLE
            x = 0
            shift = 0
            while x < w:
                px = bytes(buf[pos:pos + 4])
                pos += 4
                if px[0] == px[1] == px[2] == 1:
                    count = px[3] << shift
                    out[y, x:x + count] = out[y, x - 1]
                    x += count
                    shift += 8
                else:
                    out[y, x] = np.frombuffer(px, dtype=np.uint8)
                    x += 1
                    shift = 0
    return out


def read_hdr(path) -> RadianceImage:
    """Read a Radiance .hdr file into a :class:`RadianceImage`."""
    if hasattr(path, "read"):
        fh = path
    else:
        fh = open(path, "rb")
    try:
        variables, raw, (h, w) = read_header(fh)
        data = fh.read()
    finally:
        if fh is not path:
            fh.close()
    pixels = rgbe_to_float(_decode(data, h, w))
    calibration = variables.get("CALIBRATION", "relative")
    k = variables.get("EXPOSURE")
    if calibration == "absolute" and k is None:
        calibration = "relative"
    projection = variables.get("PROJECTION")
    if projection is None:
        projection = "equirectangular" if w == 2 * h else "perspective"
    meta = {"header": raw, "source": os.fspath(path) if not hasattr(path, "read") else None}
    return RadianceImage(pixels, calibration=calibration, k=k if calibration == "absolute" else None,
                         projection=projection, meta=meta)


def hdr_bytes(image: RadianceImage) -> bytes:
    buf = io.BytesIO()
    write_hdr(buf, image)
    return buf.getvalue()

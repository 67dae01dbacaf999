"""PNG/JPEG masks, LDR frames, label maps and bracket sidecar files."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .hdr import ExposureBracket


def read_ldr(path) -> np.ndarray:
    """Read an 8- or 16-bit image as float RGB in [0, 1]."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64) / 65535.0
            return np.repeat(arr[..., None], 3, axis=2)
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr


def write_ldr(path, rgb: np.ndarray) -> None:
    arr = np.asarray(rgb)
    if arr.dtype != np.uint8:
        arr = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    Image.fromarray(arr).save(path, optimize=False)


def write_png16(path, gray: np.ndarray) -> None:
    arr = np.round(np.clip(gray, 0, 1) * 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def read_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def write_mask(path, mask) -> None:
    data = np.asarray(getattr(mask, "data", mask), dtype=bool)
    Image.fromarray(np.where(data, 255, 0).astype(np.uint8)).save(path)


def read_labels(path) -> np.ndarray:
    """Read an indexed (palette) or grayscale label image as integer class ids."""
    with Image.open(path) as im:
        if im.mode not in ("P", "L", "I", "I;16"):
            im = im.convert("L")
        return np.asarray(im).astype(np.int64)


def write_labels(path, labels: np.ndarray) -> None:
    arr = np.asarray(labels)
    if arr.max(initial=0) > 255:
        raise ValueError("label ids above 255 do not fit an indexed PNG")
    im = Image.fromarray(arr.astype(np.uint8), mode="L").convert("P")
    im.save(path)


def read_class_table(path) -> dict[int, str]:
    """Class table as JSON ``{"0": "floor", "7": "sofa", ...}``."""
    table = json.loads(Path(path).read_text())
    return {int(k): str(v) for k, v in table.items()}


def read_response_table(path) -> tuple[np.ndarray, np.ndarray]:
    """Whitespace table ``value r g b`` (or ``value e``) of the camera response."""
    data = np.loadtxt(path, ndmin=2)
    values = data[:, 0]
    exposures = data[:, 1:] if data.shape[1] > 2 else data[:, 1]
    return values, exposures


def read_bracket(sidecar) -> ExposureBracket:
    """Load a bracket from its JSON sidecar.

    The sidecar lists ``images`` (paths relative to the sidecar),
    ``shutter_speeds`` in seconds and an optional ``response`` table path.
    """
    sidecar = Path(sidecar)
    doc = json.loads(sidecar.read_text())
    base = sidecar.parent
    images = [read_ldr(base / p) for p in doc["images"]]
    speeds = [_parse_speed(s) for s in doc["shutter_speeds"]]
    response = doc.get("response")
    if response is not None:
        response = read_response_table(base / response)
    return ExposureBracket(images, speeds, response)


def _parse_speed(s) -> float:
    if isinstance(s, str) and "/" in s:
        num, den = s.split("/")
        return float(num) / float(den)
    return float(s)


def write_bracket(directory, images, shutter_speeds, stem="exposure", bits=8) -> Path:
    """Write frames as PNGs (8 or 16 bit) plus ``bracket.json``; return the sidecar path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    names = []
    for i, im in enumerate(images):
        name = f"{stem}_{i:02d}.png"
        if bits == 16:
            arr = np.asarray(im)
            write_png16(directory / name, arr if arr.ndim == 2 else arr[..., 1])
        else:
            write_ldr(directory / name, im)
        names.append(name)
    sidecar = directory / "bracket.json"
    sidecar.write_text(json.dumps({"images": names, "shutter_speeds": [float(t) for t in shutter_speeds]}, indent=2))
    return sidecar

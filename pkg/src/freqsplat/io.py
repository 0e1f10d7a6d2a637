"""Images, run configs, checkpoints, metrics CSV, and spectrum heatmaps.

Checkpoint layout (all integers and reals little-endian)::

    b"FREG"                      magic
    u32  version                 (1)
    u32  H, W, C                 canvas
    u64  N                       splat count
    f64  N x (7 + C)             per-splat pos(2) log_scale(2) rotation
                                 opacity_logit color(C) depth
    u64  L, then L bytes         UTF-8 config text (``key = value`` lines)
    u64  iteration
"""

from __future__ import annotations

import dataclasses
import hashlib
import io
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import spectral
from .errors import FormatError, ParameterError
from .field import SplatField
from .fixtures import FIXTURES
from .trainer import RECORD_COLUMNS, TrainConfig

MAGIC = b"FREG"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- images

def _parse_ppm(data: bytes) -> np.ndarray:
    # P6 header: magic, width, height, maxval separated by whitespace; '#' comments allowed
    tokens = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(data):
            raise FormatError("truncated PPM header")
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise FormatError("truncated PPM header")
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        tok = data[start:pos]
        if not tok.isdigit():
            raise FormatError(f"bad PPM header token {tok!r}")
        tokens.append(int(tok))
    if pos >= len(data):
        raise FormatError("truncated PPM header")
    pos += 1  # single whitespace byte before the raster
    width, height, maxval = tokens
    if width < 1 or height < 1 or maxval != 255:
        raise FormatError(f"unsupported PPM geometry {width}x{height}, maxval {maxval}")
    raster = data[pos:pos + width * height * 3]
    if len(raster) != width * height * 3:
        raise FormatError("truncated PPM raster")
    return np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)


def load_image(path) -> np.ndarray:
    """PNG or binary PPM (P6) to float64 (H, W, C) in [0, 1]."""
    path = Path(path)
    data = path.read_bytes()
    if data[:2] == b"P6":
        pixels = _parse_ppm(data)
    elif data[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            with Image.open(io.BytesIO(data)) as im:
                im.load()
                if im.mode not in ("L", "RGB"):
                    im = im.convert("RGB")
                pixels = np.asarray(im)
        except (OSError, SyntaxError, ValueError) as exc:
            raise FormatError(f"corrupt PNG {path}: {exc}") from exc
        if pixels.dtype != np.uint8:
            raise FormatError(f"only 8-bit PNG is supported: {path}")
    else:
        raise FormatError(f"unsupported image format: {path}")
    if pixels.ndim == 2:
        pixels = pixels[:, :, None]
    return pixels.astype(np.float64) / 255.0


def to_uint8(image) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(image, path):
    """Write PNG (or P6 PPM for a ``.ppm`` suffix); grayscale stays single-channel."""
    path = Path(path)
    pixels = to_uint8(image)
    if pixels.ndim == 3 and pixels.shape[2] == 1:
        pixels = pixels[:, :, 0]
    if path.suffix.lower() == ".ppm":
        if pixels.ndim == 2:
            pixels = np.repeat(pixels[:, :, None], 3, axis=2)
        h, w, _ = pixels.shape
        payload = f"P6\n{w} {h}\n255\n".encode() + pixels.tobytes()
    else:
        buf = io.BytesIO()
        Image.fromarray(pixels).save(buf, format="PNG")
        payload = buf.getvalue()
    # write the whole file at once so failures never leave partial output
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(payload)
    tmp.replace(path)


def spectrum_heatmap(image) -> np.ndarray:
    """Centered log-amplitude, min-max normalized to uint8 (H, W)."""
    return _normalize_u8(spectral.log_amplitude_image(image))


def _normalize_u8(values) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.round((values - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_spectrum(image, path, other=None):
    """Write the spectrum heatmap of ``image``, or of ``| |F| - |F_other| |`` when given."""
    if other is None:
        heat = spectrum_heatmap(image)
    else:
        diff = np.abs(np.abs(spectral.dft2(image)) - np.abs(spectral.dft2(other)))
        heat = _normalize_u8(np.log1p(diff).mean(axis=2))
    save_image(heat.astype(np.float64) / 255.0, path)
    return heat


# ---------------------------------------------------------------- configs

@dataclass
class RunConfig:
    """Training parameters plus run-level paths and cadence."""

    train: TrainConfig
    input: str | None = None
    fixture: str | None = None
    fixture_size: int = 256
    output_dir: str = "runs"
    snapshot_every: int = 0
    ablation_seeds: int = 1

    RUN_KEYS = ("input", "fixture", "fixture_size", "output_dir", "snapshot_every",
                "ablation_seeds")

    def validate(self, check_paths=True):
        self.train.validate()
        if (self.input is None) == (self.fixture is None):
            raise ParameterError("exactly one of 'input' and 'fixture' must be set")
        if self.fixture is not None and self.fixture not in FIXTURES:
            raise ParameterError(f"unknown fixture {self.fixture!r}; choose from {FIXTURES}")
        if self.snapshot_every < 0 or self.ablation_seeds < 1 or self.fixture_size < 16:
            raise ParameterError("snapshot_every >= 0, ablation_seeds >= 1, fixture_size >= 16")
        if check_paths and self.input is not None and not Path(self.input).is_file():
            raise ParameterError(f"input image not found: {self.input}")
        if check_paths:
            out = Path(self.output_dir)
            if out.exists() and not out.is_dir():
                raise ParameterError(f"output_dir is not a directory: {out}")

    def train_text(self) -> str:
        """Canonical ``key = value`` text of the result-determining settings."""
        lines = [f"{f.name} = {_fmt(getattr(self.train, f.name))}"
                 for f in dataclasses.fields(TrainConfig)]
        for key in ("input", "fixture", "fixture_size"):
            val = getattr(self, key)
            if val is not None:
                lines.append(f"{key} = {_fmt(val)}")
        return "\n".join(lines) + "\n"

    def to_text(self) -> str:
        lines = [self.train_text().rstrip("\n")]
        for key in ("output_dir", "snapshot_every", "ablation_seeds"):
            lines.append(f"{key} = {_fmt(getattr(self, key))}")
        return "\n".join(lines) + "\n"

    def config_hash(self) -> str:
        return hashlib.sha256(self.train_text().encode()).hexdigest()[:12]


def _fmt(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(kind, raw: str, key: str):
    try:
        if raw == "None":
            return None
        if kind in (int, "int", "int | None"):
            return int(raw)
        if kind in (float, "float", "float | None"):
            return float(raw)
        return raw
    except ValueError as exc:
        raise FormatError(f"bad value for {key!r}: {raw!r}") from exc


_RUN_TYPES = {"input": "str", "fixture": "str", "fixture_size": "int", "output_dir": "str",
              "snapshot_every": "int", "ablation_seeds": "int"}


def parse_config_text(text: str) -> RunConfig:
    train_types = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
    train_kw, run_kw = {}, {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key in train_types:
            train_kw[key] = _coerce(train_types[key], raw, key)
        elif key in _RUN_TYPES:
            run_kw[key] = _coerce(_RUN_TYPES[key], raw, key)
        else:
            raise FormatError(f"line {lineno}: unknown key {key!r}")
    return RunConfig(train=TrainConfig(**train_kw), **run_kw)


def load_config(path) -> RunConfig:
    return parse_config_text(Path(path).read_text())


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, field: SplatField, config_text: str = "", iteration: int = 0):
    h, w, c = field.canvas
    rows = field.to_flat()
    text = config_text.encode("utf-8")
    payload = b"".join([
        MAGIC,
        struct.pack("<IIII", CHECKPOINT_VERSION, h, w, c),
        struct.pack("<Q", len(field)),
        rows.astype("<f8").tobytes(),
        struct.pack("<Q", len(text)),
        text,
        struct.pack("<Q", iteration),
    ])
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(payload)
    tmp.replace(path)


def load_checkpoint(path):
    """``(field, config_text, iteration)``."""
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    try:
        version, h, w, c = struct.unpack_from("<IIII", data, 4)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        (n,) = struct.unpack_from("<Q", data, 20)
        off = 28
        nbytes = n * (7 + c) * 8
        if len(data) < off + nbytes:
            raise FormatError("truncated checkpoint")
        rows = np.frombuffer(data, dtype="<f8", count=n * (7 + c), offset=off)
        off += nbytes
        (tlen,) = struct.unpack_from("<Q", data, off)
        off += 8
        text = data[off:off + tlen].decode("utf-8")
        off += tlen
        (iteration,) = struct.unpack_from("<Q", data, off)
    except struct.error as exc:
        raise FormatError("truncated checkpoint") from exc
    field = SplatField.from_flat(rows.astype(np.float64), (h, w, c))
    return field, text, iteration


# ---------------------------------------------------------------- metrics CSV

def write_records_csv(path, records):
    lines = [",".join(RECORD_COLUMNS)]
    for rec in records:
        vals = []
        for col in RECORD_COLUMNS:
            v = getattr(rec, col)
            if isinstance(v, bool):
                vals.append(str(int(v)))
            elif isinstance(v, float):
                vals.append(repr(v))
            else:
                vals.append(str(v))
        lines.append(",".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")

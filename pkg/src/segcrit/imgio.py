"""Netpbm PGM (P2 ASCII / P5 binary) reading and writing, plus segmentation export.

Header tokens are whitespace separated and ``#`` starts a comment running to
the end of the line. P5 payloads use one byte per sample when maxval < 256 and
two big-endian bytes otherwise.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .core import ObservedImage, Segmentation, format_label_text
from .metrics import fitted_image

PathLike = Union[str, os.PathLike]
MAX_LABEL_PGM = 65536  # label ids 0..65535 fit a 16-bit map


class PgmError(ValueError):
    """Base class for unreadable PGM data."""


class PgmHeaderError(PgmError):
    pass


class PgmTruncatedError(PgmError):
    pass


class PgmMaxvalError(PgmError):
    pass


@dataclass(frozen=True, eq=False)
class PgmImage:
    width: int
    height: int
    maxval: int
    samples: np.ndarray  # (height, width) unsigned integers

    def __post_init__(self):
        if not 1 <= self.maxval <= 65535:
            raise PgmMaxvalError(f"maxval must be in 1..65535, got {self.maxval}")
        s = np.asarray(self.samples)
        if s.shape != (self.height, self.width):
            raise ValueError(f"samples shape {s.shape} != ({self.height}, {self.width})")
        if s.size and (s.min() < 0 or s.max() > self.maxval):
            raise ValueError("samples must lie in 0..maxval")
        object.__setattr__(self, "samples", s.astype(np.uint16 if self.maxval > 255 else np.uint8))

    def __eq__(self, other) -> bool:
        if not isinstance(other, PgmImage):
            return NotImplemented
        return (self.width, self.height, self.maxval) == (other.width, other.height, other.maxval) and np.array_equal(
            self.samples, other.samples
        )


def _header_tokens(data: bytes, count: int, pos: int) -> Tuple[list, int]:
    """Read ``count`` header tokens starting at ``pos``; returns tokens and the
    offset just past the last token."""
    tokens = []
    n = len(data)
    while len(tokens) < count:
        while pos < n and data[pos : pos + 1].isspace():
            pos += 1
        if pos < n and data[pos : pos + 1] == b"#":
            while pos < n and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        if pos >= n:
            raise PgmHeaderError("header ends early")
        start = pos
        while pos < n and not data[pos : pos + 1].isspace() and data[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos


def parse_pgm(data: bytes) -> PgmImage:
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise PgmHeaderError(f"not a PGM file (magic {magic!r}); expected P2 or P5")
    if len(data) < 3 or not (data[2:3].isspace() or data[2:3] == b"#"):
        raise PgmHeaderError("magic number must be followed by whitespace")
    tokens, pos = _header_tokens(data, 3, 2)
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise PgmHeaderError(f"non-numeric header field in {tokens!r}") from None
    if width < 1 or height < 1:
        raise PgmHeaderError(f"bad dimensions {width}x{height}")
    if maxval == 0:
        raise PgmMaxvalError("maxval is 0")
    if not 1 <= maxval <= 65535:
        raise PgmMaxvalError(f"maxval {maxval} outside 1..65535")
    count = width * height

    if magic == b"P5":
        if pos >= len(data) or not data[pos : pos + 1].isspace():
            raise PgmHeaderError("missing whitespace after maxval")
        pos += 1
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = count * dtype.itemsize
        payload = data[pos : pos + need]
        if len(payload) < need:
            raise PgmTruncatedError(f"payload has {len(payload)} bytes, expected {need}")
        samples = np.frombuffer(payload, dtype=dtype).astype(np.int64)
    else:
        fields = data[pos:].split()
        if len(fields) < count:
            raise PgmTruncatedError(f"payload has {len(fields)} samples, expected {count}")
        try:
            samples = np.array([int(t) for t in fields[:count]], dtype=np.int64)
        except ValueError:
            raise PgmError("non-numeric sample in ASCII payload") from None
    if samples.size and (samples.min() < 0 or samples.max() > maxval):
        raise PgmError(f"sample value exceeds maxval {maxval}")
    return PgmImage(width, height, maxval, samples.reshape(height, width))


def read_pgm_raw(path: PathLike) -> PgmImage:
    return parse_pgm(Path(path).read_bytes())


def read_pgm(path: PathLike, log: bool = False) -> ObservedImage:
    """Samples as reals; ``log=True`` applies ``ln(1 + y)`` (variance stabilising,
    tolerant of zero samples)."""
    values = read_pgm_raw(path).samples.astype(np.float64)
    if log:
        values = np.log1p(values)
    return ObservedImage(values)


def encode_pgm(img: PgmImage, binary: bool = True) -> bytes:
    header = f"{'P5' if binary else 'P2'}\n{img.width} {img.height}\n{img.maxval}\n".encode("ascii")
    if binary:
        dtype = ">u2" if img.maxval > 255 else "u1"
        return header + img.samples.astype(dtype).tobytes()
    lines = [" ".join(str(int(v)) for v in row) for row in img.samples]
    return header + ("\n".join(lines) + "\n").encode("ascii")


def write_pgm(path: PathLike, img: PgmImage, binary: bool = True) -> None:
    Path(path).write_bytes(encode_pgm(img, binary))


def quantize(values: np.ndarray, maxval: int) -> np.ndarray:
    """Round half to even and clip into ``0..maxval``."""
    return np.clip(np.rint(values), 0, maxval).astype(np.int64)


def label_pgm(seg: Segmentation) -> PgmImage:
    if seg.m > MAX_LABEL_PGM:
        raise ValueError(f"{seg.m} regions do not fit a 16-bit label map")
    return PgmImage(seg.width, seg.height, 65535, seg.labels)


def write_outputs(seg: Segmentation, img: ObservedImage, out_dir: PathLike, trace=None,
                  maxval: Optional[int] = None, log: bool = False, extra: Optional[dict] = None) -> dict:
    """Write the label map, the piecewise-constant reconstruction, the merge
    trace and a JSON report to ``out_dir``; returns the report.

    The reconstruction is mapped back through ``exp(x) - 1`` when the input was
    log-transformed, then rounded to ``0..maxval`` (default: the smallest
    maxval holding the reconstruction, at least 255).
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_bytes(b"")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"cannot write to {out}: {exc}") from exc

    files = []
    if seg.m <= MAX_LABEL_PGM:
        write_pgm(out / "labels.pgm", label_pgm(seg))
        files.append("labels.pgm")
    else:
        (out / "labels.txt").write_text(format_label_text(seg.labels))
        files.append("labels.txt")

    recon = fitted_image(seg, img)
    if log:
        recon = np.expm1(recon)
    if maxval is None:
        top = float(np.max(recon)) if recon.size else 0.0
        maxval = int(min(65535, max(255, math.ceil(top))))
    write_pgm(out / "recon.pgm", PgmImage(seg.width, seg.height, maxval, quantize(recon, maxval)))
    files.append("recon.pgm")

    report = {"m_hat": seg.m, "n": img.n, "width": seg.width, "height": seg.height}
    if trace is not None:
        (out / "trace.csv").write_text(trace.to_csv())
        files.append("trace.csv")
        report.update(
            criterion=trace.kind.value,
            score=trace.final_score if trace.final_score is not None else trace.best_score,
            merge_score=trace.best_score,
            merges=trace.best_step,
            init=trace.init,
            order=trace.order.value if trace.order is not None else trace.kind.value,
        )
    resid = img.values - fitted_image(seg, img)
    report["rss"] = math.fsum((resid.ravel() ** 2).tolist())
    if extra:
        report.update(extra)
    report["files"] = files + ["report.json"]
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return report

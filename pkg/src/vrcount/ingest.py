"""Frame ingestion from headerless raw RGB24 files or numbered image directories.

A sidecar manifest (JSON) carries all geometry; the raw format itself is
packed RGB24, frame-major, bit-exact. Sources stream frames in index order
with bounded memory and additionally support random access by index, which
the counting pass uses to re-read the few frames it actually needs.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np
from PIL import Image

from .model import Frame, PipelineError, VideoMeta

FRAME_FILE_DIGITS = 6
FRAME_FILE_EXT = ".png"

MANIFEST_KEYS = ("kind", "width", "height", "frame_count", "fps_num", "fps_den", "path")


class ManifestError(PipelineError):
    """Manifest missing, unparseable, or carrying invalid keys/values."""


class GeometryError(PipelineError):
    """On-disk data does not match the geometry the manifest declares."""


class StreamError(PipelineError):
    """I/O failure while reading frames mid-stream."""


@dataclass(frozen=True)
class SourceManifest:
    """Parsed manifest: data kind, resolved data path, and stream geometry."""

    kind: str
    path: Path
    meta: VideoMeta


class FrameSource:
    """Ordered frame stream over one manifest.

    `next_frame` is single-consumer and strictly sequential; `read_frame`
    is independent random access (it does not move the cursor). Open a
    second source over the same manifest for concurrent segment work.
    """

    def __init__(self, manifest: SourceManifest):
        self.manifest = manifest
        self.cursor = 0

    @property
    def meta(self) -> VideoMeta:
        return self.manifest.meta

    def next_frame(self) -> Frame | None:
        """Next frame in index order, or None once the stream is exhausted."""
        if self.cursor >= self.meta.frame_count:
            return None
        frame = self.read_frame(self.cursor)
        self.cursor += 1
        return frame

    def read_frame(self, index: int) -> Frame:
        raise NotImplementedError

    def reopen(self) -> "FrameSource":
        """Independent second source over the same data."""
        raise NotImplementedError

    def close(self) -> None:
        pass

    def __iter__(self) -> Iterator[Frame]:
        while (frame := self.next_frame()) is not None:
            yield frame

    def __enter__(self) -> "FrameSource":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class RawVideoSource(FrameSource):
    """Packed RGB24 file, one seekable handle per source instance."""

    def __init__(self, manifest: SourceManifest):
        super().__init__(manifest)
        self._fh = open(manifest.path, "rb")

    def read_frame(self, index: int) -> Frame:
        meta = self.meta
        if not 0 <= index < meta.frame_count:
            raise IndexError(f"frame {index} outside [0, {meta.frame_count})")
        try:
            self._fh.seek(index * meta.frame_bytes)
            buf = self._fh.read(meta.frame_bytes)
        except OSError as exc:
            raise StreamError(f"read failed at frame {index}: {exc}") from exc
        if len(buf) != meta.frame_bytes:
            raise StreamError(
                f"short read at frame {index}: got {len(buf)} of {meta.frame_bytes} bytes"
            )
        pixels = np.frombuffer(buf, dtype=np.uint8).reshape(
            meta.height_px, meta.width_px, 3
        )
        return Frame(index, pixels)

    def reopen(self) -> "RawVideoSource":
        return RawVideoSource(self.manifest)

    def close(self) -> None:
        self._fh.close()


class FrameDirSource(FrameSource):
    """Directory of zero-padded numbered images, one file per frame."""

    def read_frame(self, index: int) -> Frame:
        meta = self.meta
        if not 0 <= index < meta.frame_count:
            raise IndexError(f"frame {index} outside [0, {meta.frame_count})")
        path = frame_file_path(self.manifest.path, index)
        try:
            with Image.open(path) as img:
                pixels = np.asarray(img.convert("RGB"), dtype=np.uint8)
        except OSError as exc:
            raise StreamError(f"read failed at frame {index} ({path.name}): {exc}") from exc
        if pixels.shape != (meta.height_px, meta.width_px, 3):
            raise GeometryError(
                f"frame {index}: image is {pixels.shape[1]}x{pixels.shape[0]}, "
                f"manifest declares width={meta.width_px} height={meta.height_px}"
            )
        return Frame(index, pixels)

    def reopen(self) -> "FrameDirSource":
        return FrameDirSource(self.manifest)


class ArrayFrameSource(FrameSource):
    """In-memory source over a list of rasters; mainly for tests and docs."""

    def __init__(self, rasters: list[np.ndarray], fps_num: int = 30, fps_den: int = 1):
        if not rasters:
            raise ValueError("ArrayFrameSource needs at least one frame")
        h, w, _ = rasters[0].shape
        meta = VideoMeta(w, h, len(rasters), fps_num, fps_den)
        super().__init__(SourceManifest("array", Path("<memory>"), meta))
        self._rasters = rasters

    def read_frame(self, index: int) -> Frame:
        if not 0 <= index < self.meta.frame_count:
            raise IndexError(f"frame {index} outside [0, {self.meta.frame_count})")
        raster = np.ascontiguousarray(self._rasters[index], dtype=np.uint8)
        return Frame(index, raster)

    def reopen(self) -> "ArrayFrameSource":
        return ArrayFrameSource(self._rasters, self.meta.fps_num, self.meta.fps_den)


def frame_file_path(dir_path: Path, index: int) -> Path:
    return Path(dir_path) / f"{index:0{FRAME_FILE_DIGITS}d}{FRAME_FILE_EXT}"


def _parse_manifest(manifest_path: Path) -> SourceManifest:
    if not manifest_path.is_file():
        raise FileNotFoundError(f"manifest not found: {manifest_path}")
    try:
        raw = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{manifest_path}: not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ManifestError(f"{manifest_path}: expected a JSON object")
    for key in MANIFEST_KEYS:
        if key not in raw:
            raise ManifestError(f"{manifest_path}: missing key '{key}'")
    kind = raw["kind"]
    if kind not in ("raw_video", "frame_dir"):
        raise ManifestError(f"{manifest_path}: kind must be raw_video or frame_dir, got '{kind}'")
    try:
        meta = VideoMeta(
            width_px=int(raw["width"]),
            height_px=int(raw["height"]),
            frame_count=int(raw["frame_count"]),
            fps_num=int(raw["fps_num"]),
            fps_den=int(raw["fps_den"]),
        )
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{manifest_path}: {exc}") from exc
    data_path = Path(raw["path"])
    if not data_path.is_absolute():
        data_path = manifest_path.parent / data_path
    return SourceManifest(kind, data_path, meta)


def _validate_raw(manifest: SourceManifest) -> None:
    if not manifest.path.is_file():
        raise FileNotFoundError(f"raw video not found: {manifest.path}")
    expected = manifest.meta.frame_count * manifest.meta.frame_bytes
    actual = os.path.getsize(manifest.path)
    if actual != expected:
        raise GeometryError(
            f"{manifest.path}: frame_count mismatch: file is {actual} bytes, "
            f"frame_count={manifest.meta.frame_count} at "
            f"{manifest.meta.width_px}x{manifest.meta.height_px} needs {expected}"
        )


def _validate_frame_dir(manifest: SourceManifest) -> None:
    if not manifest.path.is_dir():
        raise FileNotFoundError(f"frame directory not found: {manifest.path}")
    meta = manifest.meta
    on_disk = sorted(p.name for p in manifest.path.glob(f"*{FRAME_FILE_EXT}"))
    expected = [frame_file_path(manifest.path, i).name for i in range(meta.frame_count)]
    if on_disk != expected:
        missing = sorted(set(expected) - set(on_disk))
        extra = sorted(set(on_disk) - set(expected))
        detail = []
        if missing:
            detail.append(f"missing {missing[0]} (+{len(missing) - 1} more)" if len(missing) > 1 else f"missing {missing[0]}")
        if extra:
            detail.append(f"unexpected {extra[0]} (+{len(extra) - 1} more)" if len(extra) > 1 else f"unexpected {extra[0]}")
        raise GeometryError(
            f"{manifest.path}: frame_count mismatch: declared {meta.frame_count}, {'; '.join(detail)}"
        )
    for i in range(meta.frame_count):
        path = frame_file_path(manifest.path, i)
        with Image.open(path) as img:
            w, h = img.size
        if (w, h) != (meta.width_px, meta.height_px):
            raise GeometryError(
                f"{path.name}: image is {w}x{h}, manifest declares "
                f"width={meta.width_px} height={meta.height_px}"
            )


def open_source(manifest_path: str | Path) -> FrameSource:
    """Open a frame source at frame 0, validating geometry against the data."""
    manifest = _parse_manifest(Path(manifest_path))
    if manifest.kind == "raw_video":
        _validate_raw(manifest)
        return RawVideoSource(manifest)
    _validate_frame_dir(manifest)
    return FrameDirSource(manifest)


def write_manifest(
    manifest_path: str | Path, kind: str, data_path: str | Path, meta: VideoMeta
) -> Path:
    """Write a sidecar manifest; data_path is stored relative when possible."""
    manifest_path = Path(manifest_path)
    data_path = Path(data_path)
    try:
        stored = data_path.relative_to(manifest_path.parent)
    except ValueError:
        stored = data_path
    doc = {
        "kind": kind,
        "width": meta.width_px,
        "height": meta.height_px,
        "frame_count": meta.frame_count,
        "fps_num": meta.fps_num,
        "fps_den": meta.fps_den,
        "path": str(stored),
    }
    manifest_path.write_text(json.dumps(doc, indent=2) + "\n")
    return manifest_path


def write_raw_video(
    path: str | Path, frames: Iterator[np.ndarray] | list[np.ndarray]
) -> int:
    """Write packed RGB24 frames; returns the number of frames written."""
    count = 0
    with open(path, "wb") as fh:
        for raster in frames:
            fh.write(np.ascontiguousarray(raster, dtype=np.uint8).tobytes())
            count += 1
    return count


def write_frame_dir(
    dir_path: str | Path, frames: Iterator[np.ndarray] | list[np.ndarray]
) -> int:
    """Write numbered PNG frames; returns the number of frames written."""
    dir_path = Path(dir_path)
    dir_path.mkdir(parents=True, exist_ok=True)
    count = 0
    for raster in frames:
        Image.fromarray(np.asarray(raster, dtype=np.uint8)).save(
            frame_file_path(dir_path, count)
        )
        count += 1
    return count

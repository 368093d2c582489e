"""Persisted attack outputs: the perturbation artifact file format.

An artifact file is a human-readable text header followed by a raw
little-endian float32 payload in C-order (C, H, W).  The header declares the
payload byte length, so readers can detect truncation.  A generic multi-array
container with the same layout backs model and transformer checkpoints.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .partition import RegionSplitSpec

ARTIFACT_MAGIC = "RHP-ARTIFACT"
ARTIFACT_VERSION = 1
CONTAINER_MAGIC = "RHP-ARRAYS"
CONTAINER_VERSION = 1


class ArtifactError(ValueError):
    """Malformed, truncated, or version-mismatched artifact file."""


def _timestamp() -> str:
    # SOURCE_DATE_EPOCH makes runs byte-reproducible (reproducible-builds
    # convention); otherwise record wall-clock time.
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


@dataclass
class PerturbationArtifact:
    """A C x H x W perturbation in normalized [0,1]-pixel units plus metadata.

    epsilon is kept in 255-scale units (the reporting convention); the tensor
    obeys max |tensor| <= epsilon / 255 + 1e-9.
    """

    tensor: np.ndarray
    epsilon: float
    split_spec: RegionSplitSpec | None
    source_model_id: str
    method: str
    seed: int = 0

    def __post_init__(self):
        raw = np.asarray(self.tensor)
        if raw.ndim != 3:
            raise ArtifactError(f"perturbation must be C x H x W, got {raw.shape}")
        bound = self.epsilon / 255.0
        if float(np.abs(raw).max(initial=0.0)) > bound + 1e-9:
            raise ArtifactError("perturbation exceeds the epsilon ball")
        # largest float32 magnitude not above the float64 bound, so the cast
        # cannot push boundary values outside the epsilon ball
        m = np.float32(bound)
        if float(m) > bound:
            m = np.nextafter(m, np.float32(0.0))
        self.tensor = np.clip(raw.astype(np.float32), -m, m)

    @property
    def magnitude(self) -> float:
        """The representable per-element bound: largest float32 <= epsilon/255."""
        bound = self.epsilon / 255.0
        m = np.float32(bound)
        if float(m) > bound:
            m = np.nextafter(m, np.float32(0.0))
        return float(m)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.tensor.shape)


def save_artifact(path, artifact: PerturbationArtifact) -> None:
    c, h, w = artifact.shape
    payload = np.ascontiguousarray(artifact.tensor, dtype="<f4").tobytes()
    split = (
        json.dumps(artifact.split_spec.to_dict(), sort_keys=True)
        if artifact.split_spec is not None else "none"
    )
    header = (
        f"{ARTIFACT_MAGIC} v{ARTIFACT_VERSION}\n"
        f"shape: {c} {h} {w}\n"
        f"epsilon: {artifact.epsilon!r}\n"
        f"split: {split}\n"
        f"source_model: {artifact.source_model_id}\n"
        f"method: {artifact.method}\n"
        f"seed: {artifact.seed}\n"
        f"created: {_timestamp()}\n"
        f"payload_bytes: {len(payload)}\n"
        "\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("utf-8"))
        fh.write(payload)


def _read_header(fh) -> dict[str, str]:
    fields: dict[str, str] = {}
    first = fh.readline().decode("utf-8").rstrip("\n")
    magic, _, version = first.partition(" v")
    fields["__magic__"] = magic
    fields["__version__"] = version
    while True:
        line = fh.readline().decode("utf-8")
        if line == "":
            raise ArtifactError("unterminated header")
        line = line.rstrip("\n")
        if line == "":
            return fields
        key, _, value = line.partition(": ")
        fields[key] = value


def load_artifact(path) -> PerturbationArtifact:
    with open(path, "rb") as fh:
        fields = _read_header(fh)
        if fields["__magic__"] != ARTIFACT_MAGIC:
            raise ArtifactError(f"not an artifact file: {path}")
        if fields["__version__"] != str(ARTIFACT_VERSION):
            raise ArtifactError(f"unsupported artifact version {fields['__version__']!r}")
        shape = tuple(int(v) for v in fields["shape"].split())
        nbytes = int(fields["payload_bytes"])
        if nbytes != 4 * int(np.prod(shape)):
            raise ArtifactError("declared payload length does not match shape")
        payload = fh.read(nbytes)
        if len(payload) != nbytes:
            raise ArtifactError(f"truncated payload: got {len(payload)} of {nbytes} bytes")
        if fh.read(1) != b"":
            raise ArtifactError("trailing bytes after payload")
    tensor = np.frombuffer(payload, dtype="<f4").reshape(shape)
    split = fields["split"]
    spec = None if split == "none" else RegionSplitSpec.from_dict(json.loads(split))
    return PerturbationArtifact(
        tensor=tensor.copy(),
        epsilon=float(fields["epsilon"]),
        split_spec=spec,
        source_model_id=fields["source_model"],
        method=fields["method"],
        seed=int(fields["seed"]),
    )


def save_arrays(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write named float arrays with a JSON metadata line; deterministic bytes."""
    names = list(arrays)
    blobs = [np.ascontiguousarray(arrays[n]).astype("<f8").tobytes() for n in names]
    with open(path, "wb") as fh:
        fh.write(f"{CONTAINER_MAGIC} v{CONTAINER_VERSION}\n".encode())
        fh.write(f"meta: {json.dumps(meta, sort_keys=True)}\n".encode())
        for name, arr, blob in zip(names, (arrays[n] for n in names), blobs):
            shape = " ".join(str(s) for s in arr.shape)
            fh.write(f"array: {name} [{shape}] {len(blob)}\n".encode())
        fh.write(b"\n")
        for blob in blobs:
            fh.write(blob)


def load_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        first = fh.readline().decode("utf-8").rstrip("\n")
        magic, _, version = first.partition(" v")
        if magic != CONTAINER_MAGIC:
            raise ArtifactError(f"not an array container: {path}")
        if version != str(CONTAINER_VERSION):
            raise ArtifactError(f"unsupported container version {version!r}")
        meta_line = fh.readline().decode("utf-8").rstrip("\n")
        if not meta_line.startswith("meta: "):
            raise ArtifactError("missing metadata line")
        meta = json.loads(meta_line[len("meta: "):])
        entries = []
        while True:
            line = fh.readline().decode("utf-8").rstrip("\n")
            if line == "":
                break
            if not line.startswith("array: "):
                raise ArtifactError(f"malformed container line {line!r}")
            rest = line[len("array: "):]
            name, _, tail = rest.partition(" [")
            shape_str, _, nbytes = tail.partition("] ")
            shape = tuple(int(s) for s in shape_str.split()) if shape_str else ()
            entries.append((name, shape, int(nbytes)))
        arrays = {}
        for name, shape, nbytes in entries:
            blob = fh.read(nbytes)
            if len(blob) != nbytes:
                raise ArtifactError(f"truncated payload for array {name!r}")
            arrays[name] = np.frombuffer(blob, dtype="<f8").reshape(shape).copy()
    return meta, arrays


def export_perturbation_image(artifact: PerturbationArtifact, path) -> None:
    """Render a perturbation to an 8-bit lossless image.

    Pixel value = floor(255 * (p / (2 eps) + 0.5) + 0.5), clipped to [0, 255]
    (half-up rounding, so a zero perturbation maps to 128).
    """
    from PIL import Image

    eps = artifact.epsilon / 255.0
    scaled = 255.0 * (artifact.tensor.astype(np.float64) / (2.0 * eps) + 0.5)
    pixels = np.clip(np.floor(scaled + 0.5), 0, 255).astype(np.uint8)
    Image.fromarray(pixels.transpose(1, 2, 0), mode="RGB").save(path, format="PNG")

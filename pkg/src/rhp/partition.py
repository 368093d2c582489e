"""Region split functions: map every pixel coordinate to exactly one of K regions.

Four families are supported: vertical stripes, horizontal stripes, a grid of
rectangular cells, and slash-shaped diagonal bands (slope 0.5 in (h, w)
coordinates).  All partitions use dense, zero-based region indices.
"""

from dataclasses import dataclass

import numpy as np


class PartitionError(ValueError):
    """Invalid split spec for the target image size, or an empty region."""


@dataclass(frozen=True)
class RegionSplitSpec:
    """How to split an H x W image into K regions.

    kind: one of {"vertical", "horizontal", "grid", "slash"}.
    k_regions: the region count K.  For "grid" a pair (K_h, K_w) with
        K = K_h * K_w.  For "slash" it may be omitted (None) when
        slash_band_width is given, in which case K is derived.
    slash_band_width: optional band width in pixels for "slash" only.  When
        set, bands follow floor((2h - w + 2W) / band_width) and are re-indexed
        densely; when unset, the diagonal coordinate is quantized into exactly
        k_regions equal bands.
    """

    kind: str
    k_regions: int | tuple[int, int] | None = None
    slash_band_width: int | None = None

    KINDS = ("vertical", "horizontal", "grid", "slash")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise PartitionError(f"unknown split kind {self.kind!r}")
        if self.kind == "grid":
            if not (isinstance(self.k_regions, tuple) and len(self.k_regions) == 2):
                raise PartitionError("grid split needs k_regions=(K_h, K_w)")
            if any(int(k) < 1 for k in self.k_regions):
                raise PartitionError("grid factors must be >= 1")
        elif self.kind == "slash":
            if self.k_regions is None and self.slash_band_width is None:
                raise PartitionError("slash split needs k_regions or slash_band_width")
            if self.slash_band_width is not None and int(self.slash_band_width) < 1:
                raise PartitionError("slash_band_width must be >= 1")
        else:
            if not isinstance(self.k_regions, int) or self.k_regions < 1:
                raise PartitionError(f"{self.kind} split needs a positive integer K")

    @property
    def total_regions(self) -> int | None:
        if self.kind == "grid":
            kh, kw = self.k_regions
            return int(kh) * int(kw)
        return None if self.k_regions is None else int(self.k_regions)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "grid":
            d["k_h"], d["k_w"] = (int(k) for k in self.k_regions)
        elif self.k_regions is not None:
            d["k_regions"] = int(self.k_regions)
        if self.slash_band_width is not None:
            d["slash_band_width"] = int(self.slash_band_width)
        return d

    @staticmethod
    def from_dict(d: dict) -> "RegionSplitSpec":
        kind = d["kind"]
        if kind == "grid":
            k = (int(d["k_h"]), int(d["k_w"]))
        else:
            k = d.get("k_regions")
            k = None if k is None else int(k)
        band = d.get("slash_band_width")
        return RegionSplitSpec(kind, k, None if band is None else int(band))


@dataclass(frozen=True)
class RegionPartition:
    """A concrete pixel-to-region labeling for one image size.

    label_map: H x W int array with values in [0, k_regions).
    region_sizes: pixel count per region; sums to H * W.
    """

    label_map: np.ndarray
    k_regions: int
    region_sizes: np.ndarray

    @property
    def height(self) -> int:
        return self.label_map.shape[0]

    @property
    def width(self) -> int:
        return self.label_map.shape[1]


def _dense_reindex(raw: np.ndarray) -> np.ndarray:
    """Relabel arbitrary integer labels to dense [0, K) preserving order."""
    values = np.unique(raw)
    lut = {int(v): i for i, v in enumerate(values)}
    return np.vectorize(lut.__getitem__, otypes=[np.int64])(raw)


def build_partition(spec: RegionSplitSpec, height: int, width: int) -> RegionPartition:
    """Construct the labeling r(h, w) for `spec` on a height x width image.

    Raises PartitionError if the spec exceeds the image size or if the
    quantization would leave a region index unused.
    """
    if height < 1 or width < 1:
        raise PartitionError("image dimensions must be positive")
    h = np.arange(height)[:, None]
    w = np.arange(width)[None, :]

    if spec.kind == "vertical":
        k = spec.total_regions
        if k > width:
            raise PartitionError(
                f"vertical split with K={k} > W={width} leaves empty regions; "
                "use a grid split with K_w=W instead"
            )
        labels = (w * k) // width + np.zeros((height, 1), dtype=np.int64)
    elif spec.kind == "horizontal":
        k = spec.total_regions
        if k > height:
            raise PartitionError(f"horizontal split with K={k} > H={height}")
        labels = (h * k) // height + np.zeros((1, width), dtype=np.int64)
    elif spec.kind == "grid":
        kh, kw = (int(x) for x in spec.k_regions)
        k = kh * kw
        if kh > height or kw > width:
            raise PartitionError(f"grid {kh}x{kw} exceeds image {height}x{width}")
        labels = ((h * kh) // height) * kw + (w * kw) // width
    elif spec.kind == "slash":
        diag = 2 * h - w + 2 * width + np.zeros((height, width), dtype=np.int64)
        if spec.slash_band_width is not None:
            labels = _dense_reindex(diag // int(spec.slash_band_width))
            k = int(labels.max()) + 1
            if spec.k_regions is not None and int(spec.k_regions) != k:
                raise PartitionError(
                    f"slash_band_width={spec.slash_band_width} yields {k} regions, "
                    f"spec declares {spec.k_regions}"
                )
        else:
            k = spec.total_regions
            lo, hi = int(diag.min()), int(diag.max())
            span = hi - lo + 1
            if k > span:
                raise PartitionError(f"slash split with K={k} > {span} diagonals")
            labels = ((diag - lo) * k) // span
    else:  # pragma: no cover - guarded by the spec constructor
        raise PartitionError(f"unknown split kind {spec.kind!r}")

    if k > height * width:
        raise PartitionError(f"K={k} exceeds pixel count {height * width}")
    sizes = np.bincount(labels.ravel(), minlength=k)
    if (sizes == 0).any():
        missing = int(np.flatnonzero(sizes == 0)[0])
        raise PartitionError(f"region {missing} is empty for {spec} on {height}x{width}")
    return RegionPartition(labels.astype(np.int64), int(k), sizes.astype(np.int64))


def region_pixel_sets(partition: RegionPartition) -> list[set[tuple[int, int]]]:
    """Return, per region, the set of (h, w) coordinates it contains."""
    sets: list[set[tuple[int, int]]] = [set() for _ in range(partition.k_regions)]
    for (hh, ww), lab in np.ndenumerate(partition.label_map):
        sets[int(lab)].add((int(hh), int(ww)))
    return sets

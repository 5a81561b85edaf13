from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, NamedTuple, Optional

import numpy as np

from .geometry import PlaneGeometry


class PlaneEntry(NamedTuple):
    geometry: Optional[PlaneGeometry]
    count: int


@dataclass(eq=False)
class Segmentation:
    """Per-pixel plane labels (0 = unlabeled) with the geometry of each label.

    Geometry may be None when only a label image is known.
    """

    width: int
    height: int
    labels: np.ndarray
    planes: Dict[int, PlaneEntry]

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(self.height, self.width)
        if (self.labels < 0).any():
            raise ValueError("labels must be nonnegative")
        ids, counts = np.unique(self.labels[self.labels > 0], return_counts=True)
        for i, c in zip(ids.tolist(), counts.tolist()):
            entry = self.planes.get(i)
            if entry is None:
                raise ValueError(f"label {i} has no plane entry")
            if entry.count != c:
                raise ValueError(f"label {i}: count {entry.count} != {c} pixels")

    @classmethod
    def from_labels(cls, labels, geometries: Optional[Mapping[int, PlaneGeometry]] = None
                    ) -> "Segmentation":
        lab = np.asarray(labels, dtype=np.int64)
        if lab.ndim != 2:
            raise ValueError("labels must be a 2-D grid")
        geometries = geometries or {}
        ids, counts = np.unique(lab[lab > 0], return_counts=True)
        planes = {int(i): PlaneEntry(geometries.get(int(i)), int(c))
                  for i, c in zip(ids, counts)}
        return cls(lab.shape[1], lab.shape[0], lab, planes)

    @property
    def ids(self):
        return sorted(self.planes)

    @property
    def num_planes(self) -> int:
        return len(self.planes)

    def members(self, label: int) -> np.ndarray:
        return np.flatnonzero(self.labels.reshape(-1) == label)

    def with_geometries(self, geometries: Mapping[int, PlaneGeometry]) -> "Segmentation":
        planes = {i: PlaneEntry(geometries.get(i, e.geometry), e.count)
                  for i, e in self.planes.items()}
        return Segmentation(self.width, self.height, self.labels.copy(), planes)

    def relabeled(self, mapping: Mapping[int, int]) -> "Segmentation":
        """Rename labels through ``mapping`` (0 stays 0)."""
        lut = {0: 0, **{int(k): int(v) for k, v in mapping.items()}}
        lab = np.vectorize(lambda x: lut[int(x)], otypes=[np.int64])(self.labels)
        planes = {lut[i]: e for i, e in self.planes.items()}
        return Segmentation(self.width, self.height, lab, planes)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Segmentation):
            return NotImplemented
        if (self.width, self.height) != (other.width, other.height):
            return False
        if not np.array_equal(self.labels, other.labels):
            return False
        if self.planes.keys() != other.planes.keys():
            return False
        for i, e in self.planes.items():
            o = other.planes[i]
            if e.count != o.count:
                return False
            if (e.geometry is None) != (o.geometry is None):
                return False
            if e.geometry is not None and not (
                np.array_equal(e.geometry.normal, o.geometry.normal)
                and np.array_equal(e.geometry.support, o.geometry.support)
            ):
                return False
        return True

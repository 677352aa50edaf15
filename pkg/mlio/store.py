"""Caches shared across layers and runs.

``DistanceStore`` keeps the pairwise distances of every point a surrogate has
seen, ``NearestNeighborTracker`` keeps nearest-sample distances of a fixed
candidate pool, and ``ReferencePoolStore`` persists expensive reference pools
on disk behind a lazily created global instance.
"""

import hashlib
import json
import logging
import os
import threading
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from mlio.config import settings
from mlio.exceptions import EmptyPool
from mlio.models import as_points

logger = logging.getLogger(__name__)


class DistanceStore:
    """Growing pairwise-distance matrix keyed by exact coordinates."""

    def __init__(self, dim: int, capacity: int = 64):
        self.dim = dim
        self._index: Dict[bytes, int] = {}
        self._points = np.empty((capacity, dim))
        self._dist = np.empty((capacity, capacity))
        self._count = 0
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return self._count

    def _grow(self, needed: int) -> None:
        capacity = self._points.shape[0]
        if needed <= capacity:
            return
        while capacity < needed:
            capacity *= 2
        points = np.empty((capacity, self.dim))
        dist = np.empty((capacity, capacity))
        points[: self._count] = self._points[: self._count]
        dist[: self._count, : self._count] = self._dist[: self._count, : self._count]
        self._points, self._dist = points, dist

    def register(self, points) -> np.ndarray:
        """Indices of ``points`` in the store, adding unseen ones."""
        pts = as_points(points, self.dim)
        with self._lock:
            indices = np.empty(pts.shape[0], dtype=int)
            fresh = []
            for i, row in enumerate(pts):
                key = row.tobytes()
                if key not in self._index:
                    self._index[key] = self._count + len(fresh)
                    fresh.append(row)
                indices[i] = self._index[key]
            if fresh:
                new = np.asarray(fresh)
                start, stop = self._count, self._count + len(fresh)
                self._grow(stop)
                self._points[start:stop] = new
                cross = cdist(new, self._points[:start])
                self._dist[start:stop, :start] = cross
                self._dist[:start, start:stop] = cross.T
                self._dist[start:stop, start:stop] = cdist(new, new)
                self._count = stop
        return indices

    def pairwise(self, points) -> np.ndarray:
        idx = self.register(points)
        return self._dist[np.ix_(idx, idx)].copy()


class NearestNeighborTracker:
    """Distance from every candidate to its nearest observed sample."""

    def __init__(self, candidates: np.ndarray, observed: Optional[np.ndarray] = None):
        self.candidates = np.asarray(candidates, dtype=float)
        if self.candidates.ndim != 2 or self.candidates.shape[0] == 0:
            raise EmptyPool("Candidate pool is empty")
        self.nearest = np.full(self.candidates.shape[0], np.inf)
        if observed is not None and len(observed):
            self.observe(observed)

    def observe(self, points) -> None:
        pts = as_points(points, self.candidates.shape[1])
        self.nearest = np.minimum(self.nearest, cdist(self.candidates, pts).min(axis=1))

    def farthest(self) -> Tuple[int, float]:
        """Candidate with the largest nearest-sample distance; ties go to the lowest index."""
        idx = int(np.argmax(self.nearest))
        if self.nearest[idx] <= 0:
            raise EmptyPool("Every candidate is already sampled")
        return idx, float(self.nearest[idx])


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


class ReferencePoolStore:
    """On-disk cache of reference pools (``.npz`` arrays plus a JSON manifest)."""

    def __init__(self, root: Optional[Path] = None):
        self._root: Optional[Path] = root

    def connect(self) -> Path:
        """Resolve and create the cache directory."""
        if self._root is None:
            self._root = settings.cache_dir / "reference_pools"
        self._root.mkdir(parents=True, exist_ok=True)
        return self._root

    @staticmethod
    def key(function: str, dim: int, seed: int, n_u: int, n_p: int) -> str:
        return f"{function}_D{dim}_s{seed}_{n_u}x{n_p}"

    def save(self, key: str, arrays: Dict[str, np.ndarray], manifest: dict) -> Path:
        root = self.connect()
        data_path = root / f"{key}.npz"
        tmp_path = root / f".{key}.{os.getpid()}.npz"
        np.savez(tmp_path, **arrays)
        os.replace(tmp_path, data_path)

        record = dict(manifest, key=key, file=data_path.name, sha256=sha256_file(data_path))
        manifest_path = root / f"{key}.json"
        tmp_manifest = root / f".{key}.{os.getpid()}.json"
        with open(tmp_manifest, "w") as f:
            json.dump(record, f, indent=2)
        os.replace(tmp_manifest, manifest_path)
        logger.info(f"Stored reference pool {key}")
        return data_path

    def load(self, key: str) -> Optional[Tuple[Dict[str, np.ndarray], dict]]:
        root = self.connect()
        data_path, manifest_path = root / f"{key}.npz", root / f"{key}.json"
        if not data_path.exists() or not manifest_path.exists():
            return None
        with open(manifest_path) as f:
            manifest = json.load(f)
        if manifest.get("sha256") != sha256_file(data_path):
            logger.warning(f"Checksum mismatch for cached pool {key}; ignoring cache")
            return None
        with np.load(data_path) as data:
            arrays = {name: data[name] for name in data.files}
        logger.debug(f"Loaded reference pool {key} from cache")
        return arrays, manifest


# Global store instance (lazy-loaded)
_pool_store = None


def get_pool_store() -> ReferencePoolStore:
    """Get or create the global reference pool store."""
    global _pool_store
    if _pool_store is None:
        _pool_store = ReferencePoolStore()
    return _pool_store


# Lazy accessor
class _PoolStoreAccessor:
    def __getattr__(self, name):
        return getattr(get_pool_store(), name)


pool_store = _PoolStoreAccessor()

"""Three-layer decomposed Kriging surrogate.

Layer 1 (symmetric) is one 1-D system along the first dimension that is
applied to every coordinate. Layer 2 (separable) holds one 1-D system per
remaining dimension. Layer 3 (assumption-free) is a full D-dimensional
system over the union of all training points. Layers 2 and 3 are trained in
a delta form (residuals against the previous layer) and a direct form
(residuals against the reference response); the variant with the smaller
validation NRMSE is active, ties going to delta. Layer-2 delta residuals are
taken against the layer-1 mean shifted to match z_ref at the pivot, so every
per-dimension term vanishes there.

All coordinates live in the unit hypercube. Snapshots are immutable:
``retrain_layer`` and ``with_pools`` return new surrogates.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel

from mlio.exceptions import DimensionMismatch, NotTrained
from mlio.kriging import KrigingSystem, assemble_system, predict_many
from mlio.models import ObservationSet, as_points
from mlio.store import DistanceStore
from mlio.variogram import (
    DEFAULT_WINDOWS,
    ExperimentalSemivariogram,
    VariogramFit,
    VariogramKind,
    best_fit,
    build_experimental,
    dump_csv,
    fit_each_model,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = "mlio.surrogate/1"


class Layer(IntEnum):
    SYMMETRIC = 1
    SEPARABLE = 2
    FREE = 3


class Variant(str, Enum):
    DELTA = "delta"
    DIRECT = "direct"


@dataclass(frozen=True)
class ReferenceConfiguration:
    x_ref: np.ndarray
    z_ref: float

    def __post_init__(self):
        object.__setattr__(self, "x_ref", np.asarray(self.x_ref, dtype=float).reshape(-1))
        object.__setattr__(self, "z_ref", float(self.z_ref))

    @property
    def dim(self) -> int:
        return self.x_ref.size

    def axis_points(self, axis: int, coords) -> np.ndarray:
        """Full points equal to ``x_ref`` except along ``axis``."""
        coords = np.asarray(coords, dtype=float).reshape(-1)
        pts = np.repeat(self.x_ref[None, :], coords.size, axis=0)
        pts[:, axis] = coords
        return pts


@dataclass(frozen=True)
class AxisPool:
    """1-D coordinates along one dimension with the responses of their full points."""

    coords: np.ndarray = field(default_factory=lambda: np.empty(0))
    values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __len__(self) -> int:
        return int(self.coords.size)

    def add(self, coord: float, value: float) -> "AxisPool":
        return AxisPool(np.append(self.coords, float(coord)), np.append(self.values, float(value)))


@dataclass(frozen=True)
class PointPool:
    points: np.ndarray
    values: np.ndarray = field(default_factory=lambda: np.empty(0))

    @classmethod
    def empty(cls, dim: int) -> "PointPool":
        return cls(np.empty((0, dim)))

    def __len__(self) -> int:
        return int(self.values.size)

    def add(self, point, value: float) -> "PointPool":
        row = np.asarray(point, dtype=float).reshape(1, -1)
        return PointPool(np.vstack([self.points, row]), np.append(self.values, float(value)))


@dataclass(frozen=True)
class SamplingPools:
    """Training and validation pools of every layer around one reference.

    ``sep_train[k]`` and ``sep_val[k]`` belong to dimension ``k + 1``
    (0-based), i.e. every dimension except the symmetric axis.
    """

    reference: ReferenceConfiguration
    sym_train: AxisPool
    sym_val: AxisPool
    sep_train: Tuple[AxisPool, ...]
    sep_val: Tuple[AxisPool, ...]
    free_train: PointPool
    free_val: PointPool

    @classmethod
    def around(cls, reference: ReferenceConfiguration) -> "SamplingPools":
        d = reference.dim
        return cls(
            reference=reference,
            sym_train=AxisPool(),
            sym_val=AxisPool(),
            sep_train=tuple(AxisPool() for _ in range(d - 1)),
            sep_val=tuple(AxisPool() for _ in range(d - 1)),
            free_train=PointPool.empty(d),
            free_val=PointPool.empty(d),
        )

    @property
    def dim(self) -> int:
        return self.reference.dim

    # -- counts ---------------------------------------------------------

    @property
    def n_sym(self) -> int:
        return len(self.sym_train)

    @property
    def n_sep(self) -> int:
        return sum(len(p) for p in self.sep_train)

    @property
    def n_free(self) -> int:
        return len(self.free_train)

    @property
    def n_dkg(self) -> int:
        """Union-pool training count, pivot included."""
        return 1 + self.n_sym + self.n_sep + self.n_free

    @property
    def v_sym(self) -> int:
        return len(self.sym_val)

    @property
    def v_sep(self) -> int:
        return sum(len(p) for p in self.sep_val)

    @property
    def v_free(self) -> int:
        return len(self.free_val)

    @property
    def v_dkg(self) -> int:
        return self.v_sym + self.v_sep + self.v_free

    @property
    def total(self) -> int:
        return self.n_dkg + self.v_dkg

    def counts(self) -> Dict[str, int]:
        return {
            "n_sym": self.n_sym,
            "n_sep": self.n_sep,
            "n_free": self.n_free,
            "v_sym": self.v_sym,
            "v_sep": self.v_sep,
            "v_free": self.v_free,
        }

    def axis_size(self, axis: int) -> int:
        """Training plus validation points along one axis."""
        if axis == 0:
            return self.n_sym + self.v_sym
        return len(self.sep_train[axis - 1]) + len(self.sep_val[axis - 1])

    def axis_taken(self, axis: int) -> np.ndarray:
        """Every occupied coordinate along ``axis``, pivot included."""
        if axis == 0:
            train, val = self.sym_train, self.sym_val
        else:
            train, val = self.sep_train[axis - 1], self.sep_val[axis - 1]
        return np.concatenate([[self.reference.x_ref[axis]], train.coords, val.coords])

    # -- growth ---------------------------------------------------------

    def with_axis_sample(self, axis: int, coord: float, value: float, validation: bool = False) -> "SamplingPools":
        if axis == 0:
            name = "sym_val" if validation else "sym_train"
            return replace(self, **{name: getattr(self, name).add(coord, value)})
        name = "sep_val" if validation else "sep_train"
        pools = list(getattr(self, name))
        pools[axis - 1] = pools[axis - 1].add(coord, value)
        return replace(self, **{name: tuple(pools)})

    def with_free_sample(self, point, value: float, validation: bool = False) -> "SamplingPools":
        name = "free_val" if validation else "free_train"
        return replace(self, **{name: getattr(self, name).add(point, value)})

    # -- views ----------------------------------------------------------

    def sym_points(self, validation: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        pool = self.sym_val if validation else self.sym_train
        return self.reference.axis_points(0, pool.coords), pool.values

    def sep_points(self, axis: int, validation: bool = False) -> Tuple[np.ndarray, np.ndarray]:
        pool = (self.sep_val if validation else self.sep_train)[axis - 1]
        return self.reference.axis_points(axis, pool.coords), pool.values

    def union_train(self) -> Tuple[np.ndarray, np.ndarray]:
        """Pivot, axis and free training points with their responses."""
        pts = [self.reference.x_ref[None, :], self.sym_points()[0]]
        vals = [[self.reference.z_ref], self.sym_train.values]
        for axis in range(1, self.dim):
            p, v = self.sep_points(axis)
            pts.append(p)
            vals.append(v)
        pts.append(self.free_train.points)
        vals.append(self.free_train.values)
        return np.vstack(pts), np.concatenate(vals)

    def all_validation(self) -> Tuple[np.ndarray, np.ndarray]:
        pts = [self.sym_points(validation=True)[0]]
        vals = [self.sym_val.values]
        for axis in range(1, self.dim):
            p, v = self.sep_points(axis, validation=True)
            pts.append(p)
            vals.append(v)
        pts.append(self.free_val.points)
        vals.append(self.free_val.values)
        return np.vstack(pts), np.concatenate(vals)

    def all_points(self) -> np.ndarray:
        return np.vstack([self.union_train()[0], self.all_validation()[0]])

    def value_range(self, layer: Layer) -> float:
        """Max minus min of every response observed in the layer's pools."""
        z_ref = [self.reference.z_ref]
        if layer == Layer.SYMMETRIC:
            values = np.concatenate([z_ref, self.sym_train.values, self.sym_val.values])
        elif layer == Layer.SEPARABLE:
            values = np.concatenate([z_ref, *[p.values for p in self.sep_train], *[p.values for p in self.sep_val]])
        else:
            values = np.concatenate([self.union_train()[1], self.all_validation()[1]])
        return float(values.max() - values.min())


@dataclass(frozen=True)
class LayerSystem:
    """One Kriging system with the variogram material it was built from."""

    system: KrigingSystem
    experimental: ExperimentalSemivariogram
    fits: Mapping[VariogramKind, VariogramFit]


@dataclass(frozen=True)
class LayerState:
    """Systems of one layer per variant (one entry per dimension for layer 2)."""

    systems: Mapping[Variant, Tuple[LayerSystem, ...]]
    val_error: Mapping[Variant, float]
    active: Variant
    version: int = 1


def _nrmse(predicted: np.ndarray, observed: np.ndarray, value_range: float) -> float:
    if observed.size == 0:
        return float("inf")
    rmse = float(np.sqrt(np.mean((predicted - observed) ** 2)))
    return rmse / value_range if value_range > 0 else rmse


def _pick_variant(errors: Mapping[Variant, float]) -> Variant:
    return Variant.DIRECT if errors[Variant.DIRECT] < errors[Variant.DELTA] else Variant.DELTA


class DecomposedSurrogate:
    """Reference, pools and per-layer Kriging systems."""

    def __init__(
        self,
        pools: SamplingPools,
        n_windows: int = DEFAULT_WINDOWS,
        distances: Optional[DistanceStore] = None,
        layers: Optional[Mapping[Layer, LayerState]] = None,
        memo: Optional[Mapping[Layer, Dict[bytes, float]]] = None,
    ):
        self.pools = pools
        self.n_windows = n_windows
        self.distances = distances or DistanceStore(pools.dim)
        self._layers: Dict[Layer, LayerState] = dict(layers or {})
        # Upstream means at pool points, valid until that layer retrains.
        self._memo: Dict[Layer, Dict[bytes, float]] = {k: dict(v) for k, v in (memo or {}).items()}

    @property
    def reference(self) -> ReferenceConfiguration:
        return self.pools.reference

    @property
    def dim(self) -> int:
        return self.pools.dim

    @property
    def active_mix(self) -> Dict[Layer, Variant]:
        return {layer: st.active for layer, st in self._layers.items() if layer != Layer.SYMMETRIC}

    def is_trained(self, layer: Layer) -> bool:
        if layer == Layer.SEPARABLE and self.dim == 1:
            return Layer.SYMMETRIC in self._layers
        return Layer(layer) in self._layers

    def layer(self, layer: Layer) -> LayerState:
        try:
            return self._layers[Layer(layer)]
        except KeyError:
            raise NotTrained(f"Layer {int(layer)} has not been trained") from None

    def with_pools(self, pools: SamplingPools) -> "DecomposedSurrogate":
        if pools.reference is not self.reference and not np.array_equal(pools.reference.x_ref, self.reference.x_ref):
            raise ValueError("Pools belong to a different reference")
        return DecomposedSurrogate(pools, self.n_windows, self.distances, self._layers, self._memo)

    # -- raw predictions on (n, D) arrays -------------------------------

    def axis_prediction(self, layer: Layer, coords, axis: int = 1, variant: Optional[Variant] = None):
        """Mean and variance of one 1-D system at axis coordinates."""
        coords = np.asarray(coords, dtype=float).reshape(-1, 1)
        state = self.layer(layer)
        variant = variant or state.active
        systems = state.systems[variant]
        index = 0 if layer == Layer.SYMMETRIC else axis - 1
        return predict_many(systems[index].system, coords)

    def _symmetric(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        state = self.layer(Layer.SYMMETRIC)
        system = state.systems[Variant.DIRECT][0].system
        n, d = X.shape
        mean, var = predict_many(system, X.reshape(-1, 1))
        return self.reference.z_ref + mean.reshape(n, d).sum(axis=1), var.reshape(n, d).sum(axis=1)

    def _pivot_offset(self) -> float:
        """z_ref minus the layer-1 mean at x_ref; delta axis systems are anchored to zero there."""
        return self.reference.z_ref - float(self._symmetric(self.reference.x_ref[None, :])[0][0])

    def _separable(self, X: np.ndarray, variant: Optional[Variant] = None) -> Tuple[np.ndarray, np.ndarray]:
        if self.dim == 1:
            return self._symmetric(X)
        state = self.layer(Layer.SEPARABLE)
        variant = variant or state.active
        mean = np.zeros(X.shape[0])
        var = np.zeros(X.shape[0])
        for axis, ls in enumerate(state.systems[variant], start=1):
            m, v = predict_many(ls.system, X[:, axis : axis + 1])
            mean += m
            var += v
        if variant == Variant.DELTA:
            base = self._symmetric(X)[0] + self._pivot_offset()
        else:
            base = self.reference.z_ref
        return base + mean, var

    def _full(self, X: np.ndarray, variant: Optional[Variant] = None) -> Tuple[np.ndarray, np.ndarray]:
        state = self.layer(Layer.FREE)
        variant = variant or state.active
        mean, var = predict_many(state.systems[variant][0].system, X)
        base = self._separable(X)[0] if variant == Variant.DELTA else self.reference.z_ref
        return base + mean, var

    def _dispatch(self, fn, x0, *args):
        single = np.ndim(x0) <= 1 and np.size(x0) == self.dim
        X = as_points(x0, self.dim)
        mean, var = fn(X, *args)
        if single:
            return float(mean[0]), float(var[0])
        return mean, var

    # -- public prediction ----------------------------------------------

    def predict_symmetric(self, x0):
        """Layer-1 reconstruction; variance sums the per-coordinate 1-D variances."""
        return self._dispatch(self._symmetric, x0)

    def predict_separable(self, x0, variant: Optional[Variant] = None):
        """Layer-2 reconstruction in the active (or requested) variant."""
        return self._dispatch(self._separable, x0, variant)

    def predict_full(self, x0, variant: Optional[Variant] = None):
        """Complete decomposed prediction; the variance is the layer-3 Kriging variance."""
        return self._dispatch(self._full, x0, variant)

    def layer_variance(self, layer: Layer, x0) -> np.ndarray:
        """Prediction variance of a layer's active variant at full points."""
        X = as_points(x0, self.dim)
        if layer == Layer.SYMMETRIC:
            return self._symmetric(X)[1]
        if layer == Layer.SEPARABLE:
            return self._separable(X)[1]
        return self._full(X)[1]

    # -- training -------------------------------------------------------

    def _memo_means(self, layer: Layer, X: np.ndarray, fn) -> np.ndarray:
        cache = self._memo.setdefault(layer, {})
        keys = [row.tobytes() for row in X]
        missing = [i for i, k in enumerate(keys) if k not in cache]
        if missing:
            means = fn(X[missing])[0]
            for i, m in zip(missing, means):
                cache[keys[i]] = float(m)
        return np.array([cache[k] for k in keys], dtype=float)

    def _fit_system(
        self,
        locations: np.ndarray,
        residuals: np.ndarray,
        warm: Optional[Mapping[VariogramKind, VariogramFit]],
        distances: Optional[np.ndarray] = None,
    ) -> LayerSystem:
        obs = ObservationSet(locations, residuals)
        exp = build_experimental(obs, residuals, self.n_windows, distances)
        fits = fit_each_model(exp, warm)
        system = assemble_system(obs, best_fit(fits), distances)
        if system.nugget_guard:
            logger.debug(f"Nugget guard active on a {obs.size}-point system")
        return LayerSystem(system=system, experimental=exp, fits=fits)

    def _warm(self, layer: Layer, variant: Variant, index: int = 0):
        state = self._layers.get(layer)
        if state is None or variant not in state.systems or index >= len(state.systems[variant]):
            return None
        return state.systems[variant][index].fits

    def _replaced(self, layer: Layer, state: LayerState) -> "DecomposedSurrogate":
        layers = dict(self._layers)
        layers[layer] = state
        memo = {k: v for k, v in self._memo.items() if k < layer}
        return DecomposedSurrogate(self.pools, self.n_windows, self.distances, layers, memo)

    def retrain_layer(self, layer: Layer) -> "DecomposedSurrogate":
        """Refit one layer on the current pools and return the new snapshot."""
        layer = Layer(layer)
        previous = self._layers.get(layer)
        version = previous.version + 1 if previous else 1
        if layer == Layer.SYMMETRIC:
            state = self._train_symmetric(version)
        elif layer == Layer.SEPARABLE:
            if self.dim == 1:
                return self
            state = self._train_separable(version)
        else:
            state = self._train_free(version)
        errors = ", ".join(f"{k.value}={v:.3e}" for k, v in state.val_error.items())
        logger.debug(f"Layer {int(layer)} v{version}: active={state.active.value} ({errors})")
        return self._replaced(layer, state)

    def _train_symmetric(self, version: int) -> LayerState:
        ref = self.reference
        coords = np.concatenate([[ref.x_ref[0]], self.pools.sym_train.coords])
        residuals = np.concatenate([[0.0], self.pools.sym_train.values - ref.z_ref])
        ls = self._fit_system(coords[:, None], residuals, self._warm(Layer.SYMMETRIC, Variant.DIRECT))
        trained = self._replaced(Layer.SYMMETRIC, LayerState({Variant.DIRECT: (ls,)}, {Variant.DIRECT: np.inf}, Variant.DIRECT))

        X, z = self.pools.sym_points(validation=True)
        error = _nrmse(trained._symmetric(X)[0], z, self.pools.value_range(Layer.SYMMETRIC)) if len(z) else np.inf
        return LayerState({Variant.DIRECT: (ls,)}, {Variant.DIRECT: error}, Variant.DIRECT, version)

    def _train_separable(self, version: int) -> LayerState:
        ref = self.reference
        systems: Dict[Variant, List[LayerSystem]] = {Variant.DELTA: [], Variant.DIRECT: []}
        offset = self._pivot_offset()
        for axis in range(1, self.dim):
            pool = self.pools.sep_train[axis - 1]
            coords = np.concatenate([[ref.x_ref[axis]], pool.coords])
            values = np.concatenate([[ref.z_ref], pool.values])
            full = ref.axis_points(axis, coords)
            upstream = self._memo_means(Layer.SYMMETRIC, full, self._symmetric) + offset
            for variant, residuals in ((Variant.DELTA, values - upstream), (Variant.DIRECT, values - ref.z_ref)):
                systems[variant].append(
                    self._fit_system(coords[:, None], residuals, self._warm(Layer.SEPARABLE, variant, axis - 1))
                )
        frozen = {k: tuple(v) for k, v in systems.items()}
        draft = self._replaced(Layer.SEPARABLE, LayerState(frozen, {}, Variant.DELTA))

        value_range = self.pools.value_range(Layer.SEPARABLE)
        errors: Dict[Variant, float] = {}
        for variant in (Variant.DELTA, Variant.DIRECT):
            per_axis = []
            for axis in range(1, self.dim):
                X, z = self.pools.sep_points(axis, validation=True)
                if len(z):
                    per_axis.append(_nrmse(draft._separable(X, variant)[0], z, value_range))
            errors[variant] = max(per_axis) if per_axis else np.inf
        return LayerState(frozen, errors, _pick_variant(errors), version)

    def _train_free(self, version: int) -> LayerState:
        ref = self.reference
        U, z = self.pools.union_train()
        distances = self.distances.pairwise(U)
        upstream = self._memo_means(Layer.SEPARABLE, U, self._separable)
        systems = {}
        for variant, residuals in ((Variant.DELTA, z - upstream), (Variant.DIRECT, z - ref.z_ref)):
            systems[variant] = (self._fit_system(U, residuals, self._warm(Layer.FREE, variant), distances),)
        draft = self._replaced(Layer.FREE, LayerState(systems, {}, Variant.DELTA))

        V, zv = self.pools.all_validation()
        value_range = self.pools.value_range(Layer.FREE)
        errors = {
            variant: _nrmse(draft._full(V, variant)[0], zv, value_range) if len(zv) else np.inf
            for variant in (Variant.DELTA, Variant.DIRECT)
        }
        return LayerState(systems, errors, _pick_variant(errors), version)

    def retrain_all(self) -> "DecomposedSurrogate":
        s = self
        for layer in Layer:
            s = s.retrain_layer(layer)
        return s

    # -- persistence ----------------------------------------------------

    def _layer_documents(self) -> Dict[str, "LayerDocument"]:
        return {
            str(int(layer)): LayerDocument(
                active=state.active.value,
                val_error={k.value: (None if not np.isfinite(v) else float(v)) for k, v in state.val_error.items()},
                fits={k.value: [FitDocument(**ls.system.fit.to_dict()) for ls in v] for k, v in state.systems.items()},
            )
            for layer, state in sorted(self._layers.items())
        }

    def layer_summaries(self) -> Dict[str, Dict]:
        """Active variant, validation errors and variogram fits of every trained layer."""
        return {key: doc.model_dump() for key, doc in self._layer_documents().items()}

    def to_document(self) -> "SurrogateDocument":
        pools = self.pools
        layers = self._layer_documents()
        return SurrogateDocument(
            dim=self.dim,
            n_windows=self.n_windows,
            x_ref=pools.reference.x_ref.tolist(),
            z_ref=pools.reference.z_ref,
            pools=PoolsDocument(
                sym_train=AxisPoolDocument.of(pools.sym_train),
                sym_val=AxisPoolDocument.of(pools.sym_val),
                sep_train=[AxisPoolDocument.of(p) for p in pools.sep_train],
                sep_val=[AxisPoolDocument.of(p) for p in pools.sep_val],
                free_train=PointPoolDocument.of(pools.free_train),
                free_val=PointPoolDocument.of(pools.free_val),
            ),
            layers=layers,
        )

    def save(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_document().model_dump_json(indent=2))
        return path

    @classmethod
    def from_document(cls, doc: "SurrogateDocument") -> "DecomposedSurrogate":
        """Rebuild every system from the stored fits, without refitting."""
        reference = ReferenceConfiguration(np.asarray(doc.x_ref), doc.z_ref)
        p = doc.pools
        pools = SamplingPools(
            reference=reference,
            sym_train=p.sym_train.to_pool(),
            sym_val=p.sym_val.to_pool(),
            sep_train=tuple(a.to_pool() for a in p.sep_train),
            sep_val=tuple(a.to_pool() for a in p.sep_val),
            free_train=p.free_train.to_pool(doc.dim),
            free_val=p.free_val.to_pool(doc.dim),
        )
        s = cls(pools, doc.n_windows)
        for layer in Layer:
            entry = doc.layers.get(str(int(layer)))
            if entry is not None:
                s = s._restore(layer, entry)
        return s

    def _restore(self, layer: Layer, entry: "LayerDocument") -> "DecomposedSurrogate":
        ref = self.reference

        def rebuild(locations, residuals, fit_doc, distances=None):
            fit = VariogramFit(**fit_doc.model_dump())
            obs = ObservationSet(locations, residuals)
            exp = build_experimental(obs, residuals, self.n_windows, distances)
            return LayerSystem(assemble_system(obs, fit, distances), exp, {fit.kind: fit})

        systems: Dict[Variant, Tuple[LayerSystem, ...]] = {}
        if layer == Layer.SYMMETRIC:
            coords = np.concatenate([[ref.x_ref[0]], self.pools.sym_train.coords])
            residuals = np.concatenate([[0.0], self.pools.sym_train.values - ref.z_ref])
            systems[Variant.DIRECT] = (rebuild(coords[:, None], residuals, entry.fits[Variant.DIRECT.value][0]),)
        elif layer == Layer.SEPARABLE:
            offset = self._pivot_offset()
            for variant in (Variant.DELTA, Variant.DIRECT):
                built = []
                for axis in range(1, self.dim):
                    pool = self.pools.sep_train[axis - 1]
                    coords = np.concatenate([[ref.x_ref[axis]], pool.coords])
                    values = np.concatenate([[ref.z_ref], pool.values])
                    if variant == Variant.DELTA:
                        base = self._symmetric(ref.axis_points(axis, coords))[0] + offset
                    else:
                        base = ref.z_ref
                    built.append(rebuild(coords[:, None], values - base, entry.fits[variant.value][axis - 1]))
                systems[variant] = tuple(built)
        else:
            U, z = self.pools.union_train()
            distances = self.distances.pairwise(U)
            for variant in (Variant.DELTA, Variant.DIRECT):
                base = self._separable(U)[0] if variant == Variant.DELTA else ref.z_ref
                systems[variant] = (rebuild(U, z - base, entry.fits[variant.value][0], distances),)

        errors = {Variant(k): (np.inf if v is None else v) for k, v in entry.val_error.items()}
        return self._replaced(layer, LayerState(systems, errors, Variant(entry.active)))

    @classmethod
    def load(cls, path: Path) -> "DecomposedSurrogate":
        doc = SurrogateDocument.model_validate(json.loads(Path(path).read_text()))
        if doc.schema_version != SCHEMA_VERSION:
            raise ValueError(f"Unsupported surrogate schema {doc.schema_version}")
        return cls.from_document(doc)

    def variogram_dumps(self, out_dir: Path) -> List[Path]:
        """One ``lag,gamma_exp,gamma_fit,kind`` CSV per trained system."""
        out_dir = Path(out_dir)
        written = []
        for layer, state in sorted(self._layers.items()):
            for variant, systems in state.systems.items():
                for index, ls in enumerate(systems):
                    name = f"variogram_L{int(layer)}_{variant.value}_{index}.csv"
                    written.append(dump_csv(ls.experimental, ls.system.fit, out_dir / name))
        return written


# -- serialization schema ----------------------------------------------------


class FitDocument(BaseModel):
    kind: str
    a: float
    b: float
    c: float
    sse: float = 0.0
    flagged: bool = False


class AxisPoolDocument(BaseModel):
    coords: List[float] = []
    values: List[float] = []

    @classmethod
    def of(cls, pool: AxisPool) -> "AxisPoolDocument":
        return cls(coords=pool.coords.tolist(), values=pool.values.tolist())

    def to_pool(self) -> AxisPool:
        return AxisPool(np.asarray(self.coords, dtype=float), np.asarray(self.values, dtype=float))


class PointPoolDocument(BaseModel):
    points: List[List[float]] = []
    values: List[float] = []

    @classmethod
    def of(cls, pool: PointPool) -> "PointPoolDocument":
        return cls(points=pool.points.tolist(), values=pool.values.tolist())

    def to_pool(self, dim: int) -> PointPool:
        points = np.asarray(self.points, dtype=float).reshape(-1, dim)
        if points.shape[0] != len(self.values):
            raise DimensionMismatch("Pool points and values differ in length")
        return PointPool(points, np.asarray(self.values, dtype=float))


class PoolsDocument(BaseModel):
    sym_train: AxisPoolDocument
    sym_val: AxisPoolDocument
    sep_train: List[AxisPoolDocument]
    sep_val: List[AxisPoolDocument]
    free_train: PointPoolDocument
    free_val: PointPoolDocument


class LayerDocument(BaseModel):
    active: str
    val_error: Dict[str, Optional[float]]
    fits: Dict[str, List[FitDocument]]


class SurrogateDocument(BaseModel):
    """Self-describing JSON form of a trained surrogate."""

    schema_version: str = SCHEMA_VERSION
    dim: int
    n_windows: int
    x_ref: List[float]
    z_ref: float
    pools: PoolsDocument
    layers: Dict[str, LayerDocument]

"""Synthetic domain pairs with covariate shift and source class imbalance.

A task bundles four splits: an imbalanced labeled source set, a tiny
class-balanced labeled target set (shots per class), a large unlabeled
target set whose labels are retained privately for evaluation only, and
a held-out class-balanced target test set. The target domain is the
source geometry pushed through rotate / scale / translate.

The unlabeled labels and the source samples sit behind counting
accessors so a test can prove the adaptation loop never touched them;
`adaptation_view` returns an object that lacks those fields outright.

Augmentation operators are vector stand-ins for the usual image ones:
weak is small isotropic jitter (a translation analog), strong composes
random transforms drawn from a pool (jitter, rotation, scaling,
coordinate dropout), in the spirit of randomized augmentation policies.
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from .fileio import atomic_write_text, read_text

DATA_FORMAT = "ssht-data/1"

RING_RADIUS = 3.0
GEOMETRIES = ("gaussian_ring", "two_moons_multi")
STRONG_OPS = ("coordinate_dropout", "jitter", "rotate", "scale")
DEFAULT_STRONG_POOL = ("jitter", "rotate", "scale")

# fraction of each class's angular slot actually covered by its arc in
# the multi-crescent geometry; the rest is the gap between classes
ARC_FILL = 0.8


@dataclass
class DomainShiftSpec:
    num_classes: int = 4
    input_dim: int = 2
    class_geometry: str = "gaussian_ring"
    shift_rotation: float = math.pi / 6
    shift_translation: Tuple[float, ...] = (0.0, 1.75)
    shift_scale: float = 0.85
    source_imbalance_ratio: float = 10.0
    noise_std: float = 1.0

    def validate(self) -> None:
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.input_dim < 2:
            raise ValueError(f"input_dim must be >= 2, got {self.input_dim}")
        if self.class_geometry not in GEOMETRIES:
            raise ValueError(f"class_geometry must be one of {GEOMETRIES}, "
                             f"got {self.class_geometry!r}")
        if len(self.shift_translation) != self.input_dim:
            raise ValueError("shift_translation length must equal input_dim")
        if self.shift_scale <= 0.0:
            raise ValueError("shift_scale must be positive")
        if self.source_imbalance_ratio < 1.0:
            raise ValueError("source_imbalance_ratio must be >= 1")
        if self.noise_std <= 0.0:
            raise ValueError("noise_std must be positive")


def class_means(spec: DomainShiftSpec) -> np.ndarray:
    """Noiseless class centers of the unshifted geometry, C x input_dim."""
    c = spec.num_classes
    angles = 2.0 * np.pi * np.arange(c) / c
    means = np.zeros((c, spec.input_dim))
    means[:, 0] = RING_RADIUS * np.cos(angles)
    means[:, 1] = RING_RADIUS * np.sin(angles)
    return means


def class_separation(spec: DomainShiftSpec) -> float:
    """Smallest distance between the noiseless geometries of two classes."""
    c = spec.num_classes
    if spec.class_geometry == "gaussian_ring":
        return 2.0 * RING_RADIUS * math.sin(math.pi / c)
    gap = (1.0 - ARC_FILL) * 2.0 * math.pi / c
    return 2.0 * RING_RADIUS * math.sin(gap / 2.0)


def _sample_class_points(spec: DomainShiftSpec, labels: np.ndarray,
                         rng: np.random.Generator) -> np.ndarray:
    """Unshifted noiseless geometry points for the given class labels."""
    n = labels.shape[0]
    pts = np.zeros((n, spec.input_dim))
    if spec.class_geometry == "gaussian_ring":
        means = class_means(spec)
        pts[:] = means[labels]
    else:
        slot = 2.0 * np.pi / spec.num_classes
        start = labels * slot
        t = start + ARC_FILL * slot * rng.uniform(size=n)
        pts[:, 0] = RING_RADIUS * np.cos(t)
        pts[:, 1] = RING_RADIUS * np.sin(t)
    return pts


def _apply_shift(spec: DomainShiftSpec, pts: np.ndarray) -> np.ndarray:
    out = pts * spec.shift_scale
    cos_r, sin_r = math.cos(spec.shift_rotation), math.sin(spec.shift_rotation)
    x0, x1 = out[:, 0].copy(), out[:, 1].copy()
    out[:, 0] = cos_r * x0 - sin_r * x1
    out[:, 1] = sin_r * x0 + cos_r * x1
    return out + np.asarray(spec.shift_translation)


def _draw(spec: DomainShiftSpec, labels: np.ndarray, shifted: bool,
          rng: np.random.Generator) -> np.ndarray:
    pts = _sample_class_points(spec, labels, rng)
    if shifted:
        pts = _apply_shift(spec, pts)
    return pts + spec.noise_std * rng.normal(size=pts.shape)


def _balanced_labels(n: int, c: int) -> np.ndarray:
    """n labels as evenly spread over c classes as possible."""
    per = n // c
    labels = np.repeat(np.arange(c), per)
    return np.concatenate([labels, np.arange(n - per * c)])


@dataclass
class DomainTask:
    spec: DomainShiftSpec
    seed: int
    source_x: np.ndarray
    source_y: np.ndarray
    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    _unlabeled_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    source_reads: int = 0
    unlabeled_label_reads: int = 0

    def source(self) -> Tuple[np.ndarray, np.ndarray]:
        """Source split; every call is counted."""
        self.source_reads += 1
        return self.source_x, self.source_y

    def unlabeled_labels(self) -> np.ndarray:
        """Private labels of the unlabeled split; every call is counted."""
        self.unlabeled_label_reads += 1
        return self._unlabeled_y

    @property
    def num_unlabeled(self) -> int:
        return self.unlabeled_x.shape[0]

    def adaptation_view(self) -> "AdaptationView":
        return AdaptationView(spec=self.spec, labeled_x=self.labeled_x,
                              labeled_y=self.labeled_y,
                              unlabeled_x=self.unlabeled_x,
                              test_x=self.test_x, test_y=self.test_y)


@dataclass
class AdaptationView:
    """What the adaptation loop is allowed to see: no source split, no
    unlabeled labels. The fields simply do not exist here."""
    spec: DomainShiftSpec
    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    @property
    def num_unlabeled(self) -> int:
        return self.unlabeled_x.shape[0]


def generate_task(spec: DomainShiftSpec, n_source: int = 2000, shots: int = 3,
                  n_unlabeled: int = 1000, n_test: int = 1000,
                  seed: int = 0) -> DomainTask:
    """Draw all four splits; deterministic per seed.

    Source classes are sampled with weight ratio^(-c/(C-1)) so class 0
    outnumbers class C-1 by the imbalance ratio. Target splits are
    class-balanced draws from the shifted geometry.
    """
    spec.validate()
    for name, n in (("n_source", n_source), ("shots", shots),
                    ("n_unlabeled", n_unlabeled), ("n_test", n_test)):
        if n < 1:
            raise ValueError(f"{name} must be positive, got {n}")
    c = spec.num_classes
    n_labeled = shots * c
    if n_unlabeled < 20 * n_labeled:
        raise ValueError(f"n_unlabeled must be >= 20 * shots * C = "
                         f"{20 * n_labeled}, got {n_unlabeled}")

    streams = np.random.SeedSequence(seed).spawn(5)
    rng_source = np.random.default_rng(streams[0])
    rng_labeled = np.random.default_rng(streams[1])
    rng_unlabeled = np.random.default_rng(streams[2])
    rng_test = np.random.default_rng(streams[3])
    rng_shuffle = np.random.default_rng(streams[4])

    weights = spec.source_imbalance_ratio ** (-np.arange(c) / (c - 1))
    weights /= weights.sum()
    source_y = rng_source.choice(c, size=n_source, p=weights)
    source_x = _draw(spec, source_y, shifted=False, rng=rng_source)

    labeled_y = np.repeat(np.arange(c), shots)
    labeled_x = _draw(spec, labeled_y, shifted=True, rng=rng_labeled)

    unlabeled_y = _balanced_labels(n_unlabeled, c)
    perm = rng_shuffle.permutation(n_unlabeled)
    unlabeled_y = unlabeled_y[perm]
    unlabeled_x = _draw(spec, unlabeled_y, shifted=True, rng=rng_unlabeled)

    test_y = _balanced_labels(n_test, c)
    test_x = _draw(spec, test_y, shifted=True, rng=rng_test)

    return DomainTask(spec=spec, seed=seed, source_x=source_x,
                      source_y=source_y, labeled_x=labeled_x,
                      labeled_y=labeled_y, unlabeled_x=unlabeled_x,
                      _unlabeled_y=unlabeled_y, test_x=test_x, test_y=test_y)


@dataclass
class AugmentPolicy:
    weak_noise_std: float
    strong_noise_std: float
    strong_num_ops: int = 2
    strong_pool: Tuple[str, ...] = DEFAULT_STRONG_POOL
    rotate_max: float = math.pi / 12
    scale_range: Tuple[float, float] = (0.9, 1.15)
    mirror: bool = False  # flip analog, only sound for mirror-symmetric geometry

    def validate(self) -> None:
        if self.weak_noise_std < 0.0 or self.strong_noise_std < 0.0:
            raise ValueError("noise stds must be non-negative")
        if self.strong_noise_std < self.weak_noise_std:
            raise ValueError("strong_noise_std must be >= weak_noise_std")
        if self.strong_num_ops < 1:
            raise ValueError("strong_num_ops must be >= 1")
        bad = set(self.strong_pool) - set(STRONG_OPS)
        if not self.strong_pool or bad:
            raise ValueError(f"strong_pool must be non-empty ops from "
                             f"{STRONG_OPS}, offending: {sorted(bad)}")
        lo, hi = self.scale_range
        if not lo <= 1.0 <= hi:
            raise ValueError(f"scale_range must bracket 1, got {self.scale_range}")


def default_policy(spec: DomainShiftSpec) -> AugmentPolicy:
    sep = class_separation(spec)
    policy = AugmentPolicy(weak_noise_std=0.03 * sep, strong_noise_std=0.15 * sep)
    policy.validate()
    return policy


def weak_augment(x: np.ndarray, policy: AugmentPolicy,
                 rng: np.random.Generator) -> np.ndarray:
    """Isotropic Gaussian jitter; optional first-axis mirror when enabled."""
    x = np.asarray(x, dtype=float)
    out = x + policy.weak_noise_std * rng.normal(size=x.shape)
    if policy.mirror and rng.uniform() < 0.5:
        out = out.copy()
        out[..., 1] = -out[..., 1]
    return out


def _op_jitter(x, policy, rng):
    return x + policy.strong_noise_std * rng.normal(size=x.shape)


def _op_rotate(x, policy, rng):
    theta = rng.uniform(-policy.rotate_max, policy.rotate_max)
    out = x.copy()
    c, s = math.cos(theta), math.sin(theta)
    out[0] = c * x[0] - s * x[1]
    out[1] = s * x[0] + c * x[1]
    return out


def _op_scale(x, policy, rng):
    return x * rng.uniform(policy.scale_range[0], policy.scale_range[1])


def _op_dropout(x, policy, rng):
    out = x.copy()
    out[rng.integers(0, x.shape[0])] = 0.0
    return out


_STRONG_FNS = {"jitter": _op_jitter, "rotate": _op_rotate,
               "scale": _op_scale, "coordinate_dropout": _op_dropout}


def strong_augment(x: np.ndarray, policy: AugmentPolicy,
                   rng: np.random.Generator) -> np.ndarray:
    """Compose strong_num_ops transforms drawn uniformly (with
    replacement) from the pool, applied in the sampled order."""
    out = np.asarray(x, dtype=float).copy()
    pool = sorted(policy.strong_pool)
    picks = rng.integers(0, len(pool), size=policy.strong_num_ops)
    for k in picks:
        out = _STRONG_FNS[pool[k]](out, policy, rng)
    return out


def weak_augment_batch(xs: np.ndarray, policy: AugmentPolicy,
                       rng: np.random.Generator) -> np.ndarray:
    out = xs + policy.weak_noise_std * rng.normal(size=xs.shape)
    if policy.mirror:
        flip = rng.uniform(size=xs.shape[0]) < 0.5
        out[flip, 1] = -out[flip, 1]
    return out


def strong_augment_batch(xs: np.ndarray, policy: AugmentPolicy,
                         rng: np.random.Generator) -> np.ndarray:
    return np.stack([strong_augment(x, policy, rng) for x in xs])


def sample_batches(view, labeled_batch: int, unlabeled_batch: int,
                   rng: np.random.Generator
                   ) -> Iterator[Tuple[np.ndarray, np.ndarray, np.ndarray]]:
    """Endless stream of (labeled_x, labeled_y, unlabeled_x) batches.

    Labeled batches resample with replacement (the labeled set is tiny).
    Unlabeled batches partition a fresh permutation each epoch, so one
    epoch of ceil(N_u / unlabeled_batch) steps touches every unlabeled
    sample exactly once.
    """
    n_lab = view.labeled_x.shape[0]
    n_unl = view.unlabeled_x.shape[0]
    if labeled_batch < 1 or labeled_batch > n_lab:
        raise ValueError(f"labeled_batch must be in [1, {n_lab}]")
    if unlabeled_batch < 1 or unlabeled_batch > n_unl:
        raise ValueError(f"unlabeled_batch must be in [1, {n_unl}]")
    while True:
        perm = rng.permutation(n_unl)
        for start in range(0, n_unl, unlabeled_batch):
            chunk = perm[start:start + unlabeled_batch]
            lab_idx = rng.integers(0, n_lab, size=labeled_batch)
            yield (view.labeled_x[lab_idx], view.labeled_y[lab_idx],
                   view.unlabeled_x[chunk])


def steps_per_epoch(n_unlabeled: int, unlabeled_batch: int) -> int:
    return -(-n_unlabeled // unlabeled_batch)


def _fmt_floats(a: np.ndarray) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(a, dtype=float).ravel())


def _fmt_ints(a: np.ndarray) -> str:
    return " ".join(str(int(v)) for v in np.asarray(a).ravel())


class DataFormatError(ValueError):
    """Raised when a dataset document fails to parse."""


def serialize_task(task: DomainTask) -> str:
    s = task.spec
    lines = [DATA_FORMAT,
             f"meta.seed = {task.seed}",
             f"spec.num_classes = {s.num_classes}",
             f"spec.input_dim = {s.input_dim}",
             f"spec.class_geometry = {s.class_geometry}",
             f"spec.shift_rotation = {repr(float(s.shift_rotation))}",
             f"spec.shift_translation = {_fmt_floats(np.asarray(s.shift_translation))}",
             f"spec.shift_scale = {repr(float(s.shift_scale))}",
             f"spec.source_imbalance_ratio = {repr(float(s.source_imbalance_ratio))}",
             f"spec.noise_std = {repr(float(s.noise_std))}"]
    splits = [("source", task.source_x, task.source_y),
              ("labeled", task.labeled_x, task.labeled_y),
              ("unlabeled", task.unlabeled_x, task._unlabeled_y),
              ("test", task.test_x, task.test_y)]
    for name, x, y in splits:
        lines.append(f"split.{name}.count = {x.shape[0]}")
        lines.append(f"split.{name}.x = {_fmt_floats(x)}")
        ykey = "private_y" if name == "unlabeled" else "y"
        lines.append(f"split.{name}.{ykey} = {_fmt_ints(y)}")
    return "\n".join(lines) + "\n"


def save_task(task: DomainTask, path: str) -> None:
    atomic_write_text(path, serialize_task(task))


def deserialize_task(text: str) -> DomainTask:
    lines = text.splitlines()
    if not lines or lines[0].strip() != DATA_FORMAT:
        head = lines[0].strip() if lines else ""
        raise DataFormatError(f"expected header {DATA_FORMAT!r}, got {head!r}")
    kv: Dict[str, str] = {}
    for ln in lines[1:]:
        if not ln.strip():
            continue
        if " = " not in ln:
            raise DataFormatError(f"malformed line: {ln[:60]!r}")
        key, val = ln.split(" = ", 1)
        kv[key.strip()] = val

    def need(key: str) -> str:
        if key not in kv:
            raise DataFormatError(f"missing field {key}")
        return kv[key]

    try:
        spec = DomainShiftSpec(
            num_classes=int(need("spec.num_classes")),
            input_dim=int(need("spec.input_dim")),
            class_geometry=need("spec.class_geometry"),
            shift_rotation=float(need("spec.shift_rotation")),
            shift_translation=tuple(float(t) for t in
                                    need("spec.shift_translation").split()),
            shift_scale=float(need("spec.shift_scale")),
            source_imbalance_ratio=float(need("spec.source_imbalance_ratio")),
            noise_std=float(need("spec.noise_std")))
        spec.validate()
        seed = int(need("meta.seed"))
    except (ValueError, TypeError) as e:
        if isinstance(e, DataFormatError):
            raise
        raise DataFormatError(f"bad spec field: {e}") from e

    arrays = {}
    for name in ("source", "labeled", "unlabeled", "test"):
        try:
            count = int(need(f"split.{name}.count"))
            flat = np.array([float(t) for t in need(f"split.{name}.x").split()])
            ykey = "private_y" if name == "unlabeled" else "y"
            y = np.array([int(t) for t in need(f"split.{name}.{ykey}").split()])
        except ValueError as e:
            if isinstance(e, DataFormatError):
                raise
            raise DataFormatError(f"bad numeric data in split {name}: {e}") from e
        if flat.size != count * spec.input_dim:
            raise DataFormatError(f"split {name}: {flat.size} values do not "
                                  f"fill {count} x {spec.input_dim}")
        if y.size != count:
            raise DataFormatError(f"split {name}: {y.size} labels for "
                                  f"{count} samples")
        if count > 0 and (y.min() < 0 or y.max() >= spec.num_classes):
            raise DataFormatError(f"split {name}: label outside [0, "
                                  f"{spec.num_classes})")
        arrays[name] = (flat.reshape(count, spec.input_dim), y)

    return DomainTask(spec=spec, seed=seed,
                      source_x=arrays["source"][0], source_y=arrays["source"][1],
                      labeled_x=arrays["labeled"][0], labeled_y=arrays["labeled"][1],
                      unlabeled_x=arrays["unlabeled"][0],
                      _unlabeled_y=arrays["unlabeled"][1],
                      test_x=arrays["test"][0], test_y=arrays["test"][1])


def load_task(path: str) -> DomainTask:
    return deserialize_task(read_text(path))

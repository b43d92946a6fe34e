"""Benchmark loaders, stratified subsetting/splitting and synthetic oracle datasets."""
from __future__ import annotations

import gzip
import hashlib
import io
import json
import os
import pickle
import tarfile
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .augmentations import effective_dim
from .errors import (
    ChecksumMismatch,
    ClassTooSmall,
    DatasetUnavailable,
    DegenerateCrop,
    InvalidSpec,
)

CACHE_ENV = "AUGSCOUT_DATA"

FASHION_MNIST_CLASSES = [
    "T-Shirt", "Trouser", "Pullover", "Dress", "Coat",
    "Sandal", "Shirt", "Sneaker", "Bag", "Ankle Boot",
]
CIFAR10_CLASSES = [
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
]

# md5 of the canonical distribution archives
CANONICAL_FILES: dict[str, dict[str, str]] = {
    "cifar10": {"cifar-10-python.tar.gz": "c58f30108f718f92721af3b95e74349a"},
    "cifar100": {"cifar-100-python.tar.gz": "eb9058c3a382ffc7106e4002c42a8d85"},
    "fashion_mnist": {
        "train-images-idx3-ubyte.gz": "8d4fb7e6c68d591d4c3dfef9ec88bf0d",
        "train-labels-idx1-ubyte.gz": "25c81989df183df01b3e8a0aad5dffbe",
        "t10k-images-idx3-ubyte.gz": "bef4ecab320f06d8554ea6380940ec79",
        "t10k-labels-idx1-ubyte.gz": "bb300cfdad3c16e7a12a480ee83cd310",
    },
}
_URLS = {
    "cifar10": "https://www.cs.toronto.edu/~kriz/",
    "cifar100": "https://www.cs.toronto.edu/~kriz/",
    "fashion_mnist": "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/",
}
# trainer input side for every named dataset (Fashion-MNIST is padded 28 -> 32)
INPUT_SIZE = {"cifar10": 32, "cifar100": 32, "fashion_mnist": 32}


@dataclass
class LabeledDataset:
    images: np.ndarray  # N x H x W x C, float32 in [0, 1]
    labels: np.ndarray  # N, int64 in [0, K)
    class_names: list[str]
    split_tag: str = "train"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise InvalidSpec(f"images must be N x H x W x C, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise InvalidSpec("images and labels differ in length")
        if self.split_tag not in ("train", "val", "test"):
            raise InvalidSpec(f"unknown split tag {self.split_tag!r}")
        k = len(self.class_names)
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= k):
            raise InvalidSpec("label outside [0, K)")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def subset(self, idx, split_tag: str | None = None) -> "LabeledDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return LabeledDataset(
            self.images[idx], self.labels[idx], list(self.class_names),
            split_tag or self.split_tag, dict(self.metadata),
        )

    def check_complete(self) -> None:
        missing = np.flatnonzero(self.class_counts() == 0)
        if len(missing):
            names = [self.class_names[i] for i in missing]
            raise ClassTooSmall(f"{self.split_tag} split lacks classes {names}")
        if not np.isfinite(self.images).all():
            raise InvalidSpec("non-finite pixel values")


# -- stratified subsetting -------------------------------------------------------


def _per_class_indices(labels: np.ndarray, k: int, rng: np.random.Generator):
    for c in range(k):
        idx = np.flatnonzero(labels == c)
        yield c, rng.permutation(idx)


def stratified_subsample(ds: LabeledDataset, fraction: float, seed: int) -> LabeledDataset:
    if not (0 < fraction <= 1):
        raise InvalidSpec(f"train fraction must be in (0, 1], got {fraction}")
    if fraction == 1:
        return ds
    rng = np.random.default_rng(seed)
    keep = []
    for _, idx in _per_class_indices(ds.labels, ds.num_classes, rng):
        if len(idx):
            keep.append(idx[: max(1, round(fraction * len(idx)))])
    return ds.subset(np.sort(np.concatenate(keep)))


def split_validation(train: LabeledDataset, fraction: float, seed: int):
    """Stratified train/validation split; ``round(fraction * n_c)`` per class go to val."""
    if not (0 < fraction < 1):
        raise InvalidSpec(f"validation fraction must be in (0, 1), got {fraction}")
    rng = np.random.default_rng(seed)
    tr, va = [], []
    for c, idx in _per_class_indices(train.labels, train.num_classes, rng):
        n_val = round(fraction * len(idx))
        if n_val == 0 or n_val == len(idx):
            raise ClassTooSmall(
                f"class {train.class_names[c]!r} with {len(idx)} samples cannot be split at {fraction}"
            )
        va.append(idx[:n_val])
        tr.append(idx[n_val:])
    return (
        train.subset(np.sort(np.concatenate(tr)), "train"),
        train.subset(np.sort(np.concatenate(va)), "val"),
    )


# -- benchmark loaders -----------------------------------------------------------


def cache_root(cache_dir=None) -> Path:
    if cache_dir is not None:
        return Path(cache_dir)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else Path.home() / ".cache" / "augscout"


def md5sum(path: Path) -> str:
    h = hashlib.md5()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _manifest(name: str, root: Path, checksums: dict | None) -> dict[str, str]:
    if checksums is not None:
        return dict(checksums)
    path = root / "manifest.json"
    if path.exists():
        return json.loads(path.read_text())
    return dict(CANONICAL_FILES[name])


def _fetch(name: str, root: Path, files: dict[str, str], download: bool) -> None:
    missing = [f for f in files if not (root / f).exists()]
    if not missing:
        return
    if not download:
        raise DatasetUnavailable(f"{name}: missing {missing} under {root}")
    root.mkdir(parents=True, exist_ok=True)
    for fname in missing:
        try:
            urllib.request.urlretrieve(_URLS[name] + fname, root / fname)
        except OSError as exc:
            raise DatasetUnavailable(f"{name}: could not download {fname}: {exc}") from exc


def _verify(root: Path, files: dict[str, str]) -> None:
    for fname, expected in files.items():
        got = md5sum(root / fname)
        if got != expected:
            raise ChecksumMismatch(f"{root / fname}: md5 {got} != {expected}")


def _read_idx(path: Path) -> np.ndarray:
    with gzip.open(path, "rb") as f:
        data = f.read()
    ndim = data[3]
    shape = tuple(int.from_bytes(data[4 + 4 * i: 8 + 4 * i], "big") for i in range(ndim))
    return np.frombuffer(data, dtype=np.uint8, offset=4 + 4 * ndim).reshape(shape)


def _load_fashion(root: Path):
    def part(prefix):
        x = _read_idx(root / f"{prefix}-images-idx3-ubyte.gz")
        y = _read_idx(root / f"{prefix}-labels-idx1-ubyte.gz")
        return (x[..., None].astype(np.float32) / 255.0), y.astype(np.int64)

    return part("train"), part("t10k"), list(FASHION_MNIST_CLASSES)


def _unpickle(tar: tarfile.TarFile, member: str) -> dict:
    f = tar.extractfile(member)
    if f is None:
        raise DatasetUnavailable(f"archive member {member} missing")
    return pickle.load(io.BytesIO(f.read()), encoding="bytes")


def _cifar_images(raw) -> np.ndarray:
    x = np.asarray(raw, dtype=np.uint8).reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return x.astype(np.float32) / 255.0


def _load_cifar10(root: Path):
    with tarfile.open(root / "cifar-10-python.tar.gz", "r:gz") as tar:
        base = "cifar-10-batches-py"
        batches = [_unpickle(tar, f"{base}/data_batch_{i}") for i in range(1, 6)]
        test = _unpickle(tar, f"{base}/test_batch")
        try:
            meta = _unpickle(tar, f"{base}/batches.meta")
            names = [n.decode() for n in meta[b"label_names"]]
        except (KeyError, DatasetUnavailable):
            names = list(CIFAR10_CLASSES)
    xtr = np.concatenate([_cifar_images(b[b"data"]) for b in batches])
    ytr = np.concatenate([np.asarray(b[b"labels"], dtype=np.int64) for b in batches])
    xte = _cifar_images(test[b"data"])
    yte = np.asarray(test[b"labels"], dtype=np.int64)
    return (xtr, ytr), (xte, yte), names


def _load_cifar100(root: Path):
    with tarfile.open(root / "cifar-100-python.tar.gz", "r:gz") as tar:
        base = "cifar-100-python"
        train = _unpickle(tar, f"{base}/train")
        test = _unpickle(tar, f"{base}/test")
        meta = _unpickle(tar, f"{base}/meta")
    names = [n.decode() for n in meta[b"fine_label_names"]]
    return (
        (_cifar_images(train[b"data"]), np.asarray(train[b"fine_labels"], dtype=np.int64)),
        (_cifar_images(test[b"data"]), np.asarray(test[b"fine_labels"], dtype=np.int64)),
        names,
    )


_LOADERS = {"cifar10": _load_cifar10, "cifar100": _load_cifar100, "fashion_mnist": _load_fashion}


def load_dataset(
    name: str,
    train_fraction: float = 1.0,
    seed: int = 0,
    *,
    cache_dir=None,
    checksums: dict | None = None,
    download: bool = False,
):
    """Load a benchmark from ``<cache>/<name>/`` as (train, test) datasets.

    The canonical test split is returned untouched; the train split is
    stratified-subsampled when ``train_fraction < 1``.  Archives are verified
    against ``checksums`` (default: ``<cache>/<name>/manifest.json`` if
    present, else the canonical md5 table).
    """
    if name not in _LOADERS:
        raise InvalidSpec(f"unknown dataset {name!r}; expected one of {sorted(_LOADERS)}")
    root = cache_root(cache_dir) / name
    files = _manifest(name, root, checksums)
    _fetch(name, root, files, download)
    _verify(root, files)
    (xtr, ytr), (xte, yte), names = _LOADERS[name](root)
    train = LabeledDataset(xtr, ytr, names, "train", {"dataset": name})
    test = LabeledDataset(xte, yte, names, "test", {"dataset": name})
    train = stratified_subsample(train, train_fraction, seed)
    train.check_complete()
    test.check_complete()
    return train, test


def to_input_size(images: np.ndarray, size: int = 32, channels: int | None = None) -> np.ndarray:
    """Zero-pad (centred) to ``size`` x ``size`` and optionally replicate grey to RGB."""
    _, h, w, c = images.shape
    if h > size or w > size:
        raise InvalidSpec(f"images of {h}x{w} exceed the {size}px input")
    if (h, w) != (size, size):
        top, left = (size - h) // 2, (size - w) // 2
        images = np.pad(images, ((0, 0), (top, size - h - top), (left, size - w - left), (0, 0)))
    if channels is not None and c != channels:
        if c != 1:
            raise InvalidSpec(f"cannot map {c} channels to {channels}")
        images = np.repeat(images, channels, axis=3)
    return images


# -- synthetic oracle datasets ---------------------------------------------------

KINDS = ("periodic", "corner_mark", "center_mark", "uniform_color")


@dataclass(frozen=True)
class ClassGenerator:
    """One synthetic class.

    ``size`` is the period for ``periodic`` and the patch side for the mark
    kinds.  Marks are painted in ``color`` on ``background``; a periodic class
    alternates ``color`` and ``background``; ``uniform_color`` fills the whole
    image with ``color``.
    """

    kind: str
    size: int = 0
    color: tuple[float, float, float] = (1.0, 1.0, 1.0)
    background: tuple[float, float, float] = (0.5, 0.5, 0.5)
    name: str | None = None

    @property
    def label(self) -> str:
        return self.name or (f"{self.kind}({self.size})" if self.size else self.kind)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind, "size": self.size, "color": list(self.color),
            "background": list(self.background), "name": self.name,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassGenerator":
        return cls(d["kind"], int(d.get("size", 0)), tuple(d["color"]), tuple(d["background"]), d.get("name"))


@dataclass(frozen=True)
class SyntheticSpec:
    image_size: int
    classes: tuple[ClassGenerator, ...]
    samples_per_class: int = 64
    test_per_class: int | None = None
    noise_std: float = 0.05
    brightness_std: float = 0.0  # per-image global offset (illumination nuisance)

    def validate(self) -> None:
        if self.image_size < 2:
            raise InvalidSpec("image_size must be >= 2")
        if not self.classes:
            raise InvalidSpec("at least one class generator required")
        if self.samples_per_class < 1 or (self.test_per_class is not None and self.test_per_class < 1):
            raise InvalidSpec("sample counts must be >= 1")
        if self.noise_std < 0:
            raise InvalidSpec("noise_std must be >= 0")
        if self.brightness_std < 0:
            raise InvalidSpec("brightness_std must be >= 0")
        labels = [g.label for g in self.classes]
        if len(set(labels)) != len(labels):
            raise InvalidSpec(f"duplicate class names {labels}")
        for g in self.classes:
            if g.kind not in KINDS:
                raise InvalidSpec(f"unknown generator kind {g.kind!r}")
            if g.kind == "periodic" and (g.size < 2 or self.image_size % g.size):
                raise InvalidSpec(f"period {g.size} must be >= 2 and divide {self.image_size}")
            if g.kind in ("corner_mark", "center_mark") and not (1 <= g.size < self.image_size):
                raise InvalidSpec(f"patch size {g.size} must be in [1, {self.image_size})")

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "classes": [g.to_dict() for g in self.classes],
            "samples_per_class": self.samples_per_class,
            "test_per_class": self.test_per_class,
            "noise_std": self.noise_std,
            "brightness_std": self.brightness_std,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        return cls(
            int(d["image_size"]),
            tuple(ClassGenerator.from_dict(g) for g in d["classes"]),
            int(d["samples_per_class"]),
            d.get("test_per_class"),
            float(d["noise_std"]),
            float(d.get("brightness_std", 0.0)),
        )


BACKGROUND = (0.5, 0.5, 0.5)


def oracle_spec(
    image_size: int = 32,
    samples_per_class: int = 48,
    noise_std: float = 0.1,
    corner_size: int | None = None,
    center_size: int | None = None,
) -> SyntheticSpec:
    """Four-class oracle: periodic, corner mark, centre mark, plain background.

    The mark classes are the plain class plus a small patch, so a crop that
    misses the patch turns the image into a plain-class image (label loss).
    """
    return SyntheticSpec(
        image_size,
        (
            ClassGenerator("periodic", 4, (0.9, 0.3, 0.1), BACKGROUND, "periodic"),
            ClassGenerator("corner_mark", corner_size or 2, (0.1, 0.3, 0.9), BACKGROUND, "corner_mark"),
            ClassGenerator("center_mark", center_size or 2, (0.1, 0.3, 0.9), BACKGROUND, "center_mark"),
            ClassGenerator("uniform_color", 0, BACKGROUND, BACKGROUND, "uniform"),
        ),
        samples_per_class,
        None,
        noise_std,
    )


def feature_mask(gen: ClassGenerator, image_size: int) -> np.ndarray:
    """Boolean H x W mask of the pixels painted in ``gen.color``."""
    s = image_size
    mask = np.zeros((s, s), dtype=bool)
    if gen.kind == "periodic":
        half = gen.size / 2
        r = (np.arange(s) % gen.size) < half
        mask = r[:, None] ^ r[None, :]
    elif gen.kind == "corner_mark":
        mask[: gen.size, : gen.size] = True
    elif gen.kind == "center_mark":
        lo = (s - gen.size) // 2
        mask[lo: lo + gen.size, lo: lo + gen.size] = True
    elif gen.kind == "uniform_color":
        mask[:] = True
    return mask


def render_class(gen: ClassGenerator, image_size: int) -> np.ndarray:
    """Noise-free H x W x 3 prototype image of one class."""
    mask = feature_mask(gen, image_size)
    img = np.empty((image_size, image_size, 3), dtype=np.float32)
    img[:] = np.asarray(gen.background, dtype=np.float32)
    img[mask] = np.asarray(gen.color, dtype=np.float32)
    return img


def window_keeps_feature(gen: ClassGenerator, image_size: int, top: int, left: int, win: int) -> bool:
    """Does the ``win`` x ``win`` window at (top, left) contain a full identifying feature?"""
    if gen.kind == "uniform_color":
        return True
    if gen.kind == "periodic":
        return win >= gen.size
    if gen.kind == "corner_mark":
        lo = 0
    else:
        lo = (image_size - gen.size) // 2
    hi = lo + gen.size
    return top <= lo and left <= lo and top + win >= hi and left + win >= hi


def retention_probability(gen: ClassGenerator, image_size: int, alpha) -> float:
    """Fraction of all crop windows at ``alpha`` that keep a full feature (brute force)."""
    win = effective_dim(image_size, alpha)
    offsets = range(image_size - win + 1)
    hits = sum(window_keeps_feature(gen, image_size, t, l, win) for t in offsets for l in offsets)
    return hits / len(offsets) ** 2


def survival_alpha(gen: ClassGenerator, image_size: int, threshold: float = 0.5) -> int:
    """Largest integer alpha up to which the feature is kept with probability >= threshold."""
    last = -1
    for a in range(100):
        try:
            p = retention_probability(gen, image_size, a)
        except DegenerateCrop:
            break
        if p < threshold:
            break
        last = a
    return last


def expected_robustness_order(spec: SyntheticSpec) -> list[str]:
    """Class names from most to least crop-robust (ties by name)."""
    scored = [(-survival_alpha(g, spec.image_size), g.label) for g in spec.classes]
    return [name for _, name in sorted(scored)]


def make_synthetic(spec: SyntheticSpec, seed: int = 0):
    """Balanced (train, test) datasets drawn from ``spec`` with additive Gaussian noise."""
    spec.validate()
    rng = np.random.default_rng(seed)
    names = [g.label for g in spec.classes]
    protos = np.stack([render_class(g, spec.image_size) for g in spec.classes])
    meta = {
        "dataset": "synthetic",
        "spec": spec.to_dict(),
        "expected_robustness_order": expected_robustness_order(spec),
    }

    def draw(n_per_class: int, tag: str) -> LabeledDataset:
        labels = np.repeat(np.arange(len(names)), n_per_class)
        noise = rng.normal(0.0, spec.noise_std, size=(len(labels),) + protos.shape[1:])
        noise += rng.normal(0.0, spec.brightness_std, size=(len(labels), 1, 1, 1))
        images = np.clip(protos[labels] + noise, 0.0, 1.0).astype(np.float32)
        return LabeledDataset(images, labels, list(names), tag, dict(meta))

    train = draw(spec.samples_per_class, "train")
    test = draw(spec.test_per_class or spec.samples_per_class, "test")
    return train, test


# -- dataset references ----------------------------------------------------------


@dataclass(frozen=True)
class DatasetRef:
    """Serializable pointer to a (train, val, test) triple.

    ``name`` is a benchmark loader id or ``"synthetic"`` (then ``synthetic``
    holds the generator spec).  Materialization is cached per process, so a
    scout only pays for loading once per worker.
    """

    name: str
    train_fraction: float = 1.0
    val_fraction: float = 0.1
    seed: int = 0
    synthetic: SyntheticSpec | None = None
    cache_dir: str | None = None

    def __post_init__(self):
        if self.name == "synthetic" and self.synthetic is None:
            raise InvalidSpec("synthetic dataset reference needs a SyntheticSpec")
        if self.name != "synthetic" and self.name not in _LOADERS:
            raise InvalidSpec(f"unknown dataset {self.name!r}")
        if not (0 < self.val_fraction < 1):
            raise InvalidSpec("val_fraction must be in (0, 1)")
        if not (0 < self.train_fraction <= 1):
            raise InvalidSpec("train_fraction must be in (0, 1]")

    @property
    def dataset_id(self) -> str:
        return self.name

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "train_fraction": self.train_fraction,
            "val_fraction": self.val_fraction,
            "seed": self.seed,
            "synthetic": self.synthetic.to_dict() if self.synthetic else None,
            "cache_dir": self.cache_dir,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetRef":
        syn = d.get("synthetic")
        return cls(
            d["name"], float(d.get("train_fraction", 1.0)), float(d.get("val_fraction", 0.1)),
            int(d.get("seed", 0)), SyntheticSpec.from_dict(syn) if syn else None, d.get("cache_dir"),
        )

    def materialize(self):
        """(train, val, test) datasets; cached on the reference's JSON form."""
        key = json.dumps(self.to_dict(), sort_keys=True)
        if key not in _MATERIALIZED:
            if self.synthetic is not None:
                train, test = make_synthetic(self.synthetic, self.seed)
            else:
                train, test = load_dataset(self.name, self.train_fraction, self.seed, cache_dir=self.cache_dir)
            train, val = split_validation(train, self.val_fraction, self.seed)
            _MATERIALIZED.clear()  # keep at most one dataset resident
            _MATERIALIZED[key] = (train, val, test)
        return _MATERIALIZED[key]


_MATERIALIZED: dict[str, tuple] = {}

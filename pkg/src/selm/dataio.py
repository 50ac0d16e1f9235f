"""Feature/manifest file formats, emotion-view templates, and the synthetic benchmark.

Feature file (binary, little-endian):
    magic "SELMFEAT" (8 bytes), version u32, frames u32, dim u32, flags u32
    (must be 1 = float32 payload), then frames*dim float32 values row-major.

Manifest: JSON lines, one object per record with keys
    id, feature_path, prompt, target, view, label, fold, split
feature_path is relative to the manifest's directory.

The synthetic generator draws per-class Gaussian frame clouds around
well-separated class means (nearest-centroid separability is checked by the
tests), supports a covariate shift of delta sigma units along a fixed random
unit direction shared by all classes, and emits the pretraining text corpus
built from the same prompt/target templates.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, FormatError, InvalidValueError
from .trainer import Triplet

FEATURE_MAGIC = b"SELMFEAT"
FEATURE_VERSION = 1
FEATURE_FLAGS_F32 = 1

VIEWS = ("categorical", "sentiment", "dimensional")

PROMPTS = {
    "categorical": "This person is",
    "sentiment": "This sentiment is",
    "dimensional": "Describe emotion parameters",
}

DEFAULT_CLASSES = ("happy", "sad", "angry", "neutral", "fear", "disgust")

# categorical label -> sentiment word
SENTIMENT_OF = {
    "happy": "positive",
    "sad": "negative",
    "angry": "negative",
    "neutral": "neutral",
    "fear": "negative",
    "disgust": "negative",
}

# categorical label -> (valence, arousal) bucket, circumplex-style
DIMENSIONS_OF = {
    "happy": ("high", "high"),
    "sad": ("low", "low"),
    "angry": ("low", "high"),
    "neutral": ("mid", "mid"),
    "fear": ("low", "high"),
    "disgust": ("low", "mid"),
}

_CATEGORICAL_RE = re.compile(r"^feeling emotion of (\w+)$")
_SENTIMENT_RE = re.compile(r"^(positive|neutral|negative)$")
_DIMENSIONAL_RE = re.compile(r"^valence (low|mid|high) arousal (low|mid|high)$")


def target_text(view, label):
    """Render the target string for a view; label is the categorical class."""
    if view == "categorical":
        return f"feeling emotion of {label}"
    if view == "sentiment":
        return SENTIMENT_OF[label]
    if view == "dimensional":
        v, a = DIMENSIONS_OF[label]
        return f"valence {v} arousal {a}"
    raise ConfigError(f"unknown view {view!r}")


def parse_target(view, text):
    """Inverse of target_text; returns the parsed payload or None if off-template."""
    if view == "categorical":
        m = _CATEGORICAL_RE.match(text)
        return m.group(1) if m else None
    if view == "sentiment":
        m = _SENTIMENT_RE.match(text)
        return m.group(1) if m else None
    if view == "dimensional":
        m = _DIMENSIONAL_RE.match(text)
        return (m.group(1), m.group(2)) if m else None
    raise ConfigError(f"unknown view {view!r}")


# -- feature files ---------------------------------------------------------------


def write_feature(path, array):
    array = np.asarray(array, dtype=np.float64)
    if array.ndim != 2 or array.shape[0] < 1 or array.shape[1] < 1:
        raise FormatError(f"feature array must be (frames, dim), got {array.shape}")
    if not np.all(np.isfinite(array)):
        raise InvalidValueError("refusing to write non-finite feature values")
    frames, dim = array.shape
    with open(path, "wb") as f:
        f.write(FEATURE_MAGIC)
        f.write(struct.pack("<III", FEATURE_VERSION, frames, dim))
        f.write(struct.pack("<I", FEATURE_FLAGS_F32))
        f.write(array.astype("<f4").tobytes())


def read_feature(path):
    """Load a feature file as float64 (frames, dim); errors carry byte offsets."""
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < 8 or buf[:8] != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic at byte 0")
    if len(buf) < 24:
        raise FormatError(f"{path}: truncated header at byte {len(buf)}")
    version, frames, dim, flags = struct.unpack("<IIII", buf[8:24])
    if version != FEATURE_VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 8")
    if flags != FEATURE_FLAGS_F32:
        raise FormatError(f"{path}: unsupported flags {flags} at byte 20")
    expect = 24 + 4 * frames * dim
    if len(buf) != expect:
        raise FormatError(
            f"{path}: payload ends at byte {len(buf)}, expected {expect}"
        )
    arr = np.frombuffer(buf, dtype="<f4", offset=24).reshape(frames, dim)
    out = arr.astype(np.float64)
    if not np.all(np.isfinite(out)):
        raise FormatError(f"{path}: non-finite payload values")
    return out


# -- manifests ----------------------------------------------------------------------


_ROW_KEYS = ("id", "feature_path", "prompt", "target", "view", "label", "fold", "split")


@dataclass
class Manifest:
    rows: list = field(default_factory=list)  # list of dicts with _ROW_KEYS
    root: Path = Path(".")

    def validate(self):
        seen = set()
        for row in self.rows:
            missing = [k for k in _ROW_KEYS if k not in row]
            if missing:
                raise FormatError(f"manifest row {row.get('id')!r} missing keys {missing}")
            if row["id"] in seen:
                raise FormatError(f"duplicate manifest id {row['id']!r}")
            seen.add(row["id"])
            if row["view"] not in VIEWS:
                raise FormatError(f"manifest row {row['id']!r} has unknown view {row['view']!r}")
            if row["split"] not in ("train", "test"):
                raise FormatError(f"manifest row {row['id']!r} has bad split {row['split']!r}")
        folds = sorted({r["fold"] for r in self.rows if r["fold"] >= 0})
        if folds and folds != list(range(len(folds))):
            raise FormatError(f"fold ids must be dense from 0, got {folds}")
        return self

    def save(self, path):
        path = Path(path)
        with open(path, "w", encoding="utf-8") as f:
            for row in self.rows:
                f.write(json.dumps({k: row[k] for k in _ROW_KEYS}, sort_keys=True))
                f.write("\n")

    @classmethod
    def load(cls, path):
        path = Path(path)
        rows = []
        with open(path, "r", encoding="utf-8") as f:
            for ln, line in enumerate(f, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as e:
                    raise FormatError(f"{path}:{ln}: bad JSON record: {e}") from e
        return cls(rows=rows, root=path.parent).validate()

    def ids(self):
        return {r["id"] for r in self.rows}

    def classes(self):
        """Deterministic class list: sorted unique categorical labels."""
        return sorted({r["label"] for r in self.rows if r["view"] == "categorical"})

    def subset(self, view=None, split=None, fold=None, exclude_fold=None):
        rows = self.rows
        if view is not None:
            rows = [r for r in rows if r["view"] == view]
        if split is not None:
            rows = [r for r in rows if r["split"] == split]
        if fold is not None:
            rows = [r for r in rows if r["fold"] == fold]
        if exclude_fold is not None:
            rows = [r for r in rows if r["fold"] != exclude_fold]
        return Manifest(rows=list(rows), root=self.root)

    def triplets(self):
        return [
            Triplet(id=r["id"], feature_ref=r["feature_path"], prompt=r["prompt"],
                    target=r["target"], view=r["view"], label=r["label"],
                    fold=r["fold"], split=r["split"])
            for r in self.rows
        ]


class FeatureStore:
    """Feature loader with an in-memory cache; paths resolve against `root`."""

    def __init__(self, root):
        self.root = Path(root)
        self._cache = {}

    def load(self, ref):
        if ref not in self._cache:
            path = Path(ref)
            if not path.is_absolute():
                path = self.root / path
            self._cache[ref] = read_feature(path)
        return self._cache[ref]


# -- synthetic benchmark -----------------------------------------------------------


@dataclass
class SynthConfig:
    classes: tuple = DEFAULT_CLASSES
    d_a: int = 32
    examples_per_class: int = 15
    frames_min: int = 8
    frames_max: int = 24
    sigma: float = 1.0
    mean_radius_sigma: float = 6.0
    min_separation_sigma: float = 6.0
    shift_delta: float = 0.0
    test_fraction: float = 0.5
    views: tuple = VIEWS
    seed: int = 0
    geometry_seed: int | None = None  # class means + shift direction; None = seed
    name: str = "synth"

    def __post_init__(self):
        if len(self.classes) < 2:
            raise ConfigError("need at least two classes")
        if self.shift_delta < 0:
            raise ConfigError("shift_delta must be >= 0")
        if self.sigma <= 0:
            raise ConfigError("sigma must be positive")
        unknown = set(self.views) - set(VIEWS)
        if unknown:
            raise ConfigError(f"unknown views {sorted(unknown)}")
        for c in self.classes:
            if c not in SENTIMENT_OF:
                raise ConfigError(f"class {c!r} has no sentiment/dimension mapping")

    def to_dict(self):
        d = asdict(self)
        d["classes"] = list(self.classes)
        d["views"] = list(self.views)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "classes" in d:
            d["classes"] = tuple(d["classes"])
        if "views" in d:
            d["views"] = tuple(d["views"])
        return cls(**d)


def class_means(cfg: SynthConfig):
    """Seeded class means on a sphere of radius mean_radius_sigma * sigma.

    Directions are re-drawn until all pairwise distances clear
    min_separation_sigma * sigma, so the task is learnable by construction.
    """
    geo = cfg.seed if cfg.geometry_seed is None else cfg.geometry_seed
    rng = np.random.default_rng([geo, 3])
    radius = cfg.mean_radius_sigma * cfg.sigma
    for _ in range(1000):
        dirs = rng.normal(size=(len(cfg.classes), cfg.d_a))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        means = radius * dirs
        dists = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
        np.fill_diagonal(dists, np.inf)
        if dists.min() >= cfg.min_separation_sigma * cfg.sigma:
            return means
    raise ConfigError(
        "could not place class means with the requested separation; "
        "lower min_separation_sigma or raise d_a/mean_radius_sigma"
    )


def shift_vector(cfg: SynthConfig, means=None):
    """The dataset's fixed covariate-shift direction, scaled to shift_delta sigma.

    The direction is the between-class axis of one seeded class pair. A fully
    random direction is nearly orthogonal to every between-class axis in high
    dimension, so shifting along it barely moves examples relative to the
    trained decision boundaries and the out-of-domain setup loses its point;
    along a class-difference axis, delta in sigma units directly measures how
    far examples march toward a wrong class.
    """
    geo = cfg.seed if cfg.geometry_seed is None else cfg.geometry_seed
    rng = np.random.default_rng([geo, 4])
    if means is None:
        means = class_means(cfg)
    a, b = rng.choice(means.shape[0], size=2, replace=False)
    u = means[a] - means[b]
    u /= np.linalg.norm(u)
    return cfg.shift_delta * cfg.sigma * u


def pretraining_corpus(classes=DEFAULT_CLASSES):
    """Template sentences the frozen LM is pretrained on (one per line).

    Covers every prompt/target pairing plus enough word-level variety that the
    tokenizer and the LM see the label words in several contexts.
    """
    lines = []
    for label in classes:
        for view in VIEWS:
            lines.append(f"{PROMPTS[view]} {target_text(view, label)}")
            # the bare target too: generation starts from BOS, so the LM
            # needs line-start mass on the response side of each template
            lines.append(target_text(view, label))
        lines.append(f"the word {label} names an emotion")
        lines.append(f"emotion of {label} sounds like {label}")
        lines.append(f"a {SENTIMENT_OF[label]} feeling such as {label}")
    lines.append("emotions include " + " ".join(classes))
    lines.append("sentiments include positive neutral negative")
    lines.append("valence can be low mid high")
    lines.append("arousal can be low mid high")
    # dedupe, order-preserving: verbatim-repeated lines would merge into
    # single whole-sentence tokens and destroy the stem/label structure
    return list(dict.fromkeys(lines))


def continuation_stems(classes=DEFAULT_CLASSES):
    """Stems (ending on template token boundaries) with their continuation words."""
    sentiments = sorted(set(SENTIMENT_OF[c] for c in classes))
    levels = ["low", "mid", "high"]
    return [
        ("This person is feeling emotion of ", list(classes)),
        ("This sentiment is ", sentiments),
        ("Describe emotion parameters valence ", levels),
        ("emotion of ", list(classes)),
        ("the word ", list(classes)),
        ("emotions include ", list(classes)),
        ("sentiments include ", sentiments),
        ("valence can be ", levels),
        ("arousal can be ", levels),
        ("a negative feeling such as ", [c for c in classes if SENTIMENT_OF[c] == "negative"]),
    ]


def synthesize_dataset(cfg: SynthConfig, out_dir):
    """Write features + manifest + pretraining corpus; returns the Manifest.

    Deterministic per seed: identical config -> byte-identical outputs.
    """
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "features").mkdir(exist_ok=True)
    except OSError as e:
        raise DataError(f"cannot create output directory {out_dir}: {e}") from e
    means = class_means(cfg)
    shift = shift_vector(cfg, means)
    rows = []
    for ci, label in enumerate(cfg.classes):
        rng = np.random.default_rng([cfg.seed, 5, ci])
        n = cfg.examples_per_class
        n_test = int(round(n * cfg.test_fraction))
        split_flags = ["test"] * n_test + ["train"] * (n - n_test)
        for ei in range(n):
            frames = int(rng.integers(cfg.frames_min, cfg.frames_max + 1))
            feat = means[ci] + shift + rng.normal(0.0, cfg.sigma, size=(frames, cfg.d_a))
            ex_id = f"{cfg.name}-{label}-{ei:04d}"
            rel = f"features/{ex_id}.sf"
            write_feature(out_dir / rel, feat)
            for view in cfg.views:
                rows.append({
                    "id": f"{ex_id}:{view}",
                    "feature_path": rel,
                    "prompt": PROMPTS[view],
                    "target": target_text(view, label),
                    "view": view,
                    "label": label,
                    "fold": -1,
                    "split": split_flags[ei],
                })
    manifest = Manifest(rows=rows, root=out_dir).validate()
    manifest.save(out_dir / "manifest.jsonl")
    with open(out_dir / "corpus.txt", "w", encoding="utf-8") as f:
        f.write("\n".join(pretraining_corpus(cfg.classes)) + "\n")
    with open(out_dir / "synth_config.json", "w", encoding="utf-8") as f:
        json.dump(cfg.to_dict(), f, sort_keys=True, indent=2)
        f.write("\n")
    return manifest


# -- folds and shots ---------------------------------------------------------------


def example_key(row_id):
    """Manifest ids are '<example>:<view>'; views of one clip share the example."""
    return row_id.rsplit(":", 1)[0]


def make_folds(manifest: Manifest, n_folds, seed):
    """Stratified fold assignment over examples (views travel together)."""
    if n_folds < 2:
        raise ConfigError("n_folds must be >= 2")
    by_class: dict[str, list[str]] = {}
    for row in manifest.rows:
        if row["view"] != "categorical":
            continue
        by_class.setdefault(row["label"], []).append(example_key(row["id"]))
    fold_of = {}
    for label in sorted(by_class):
        examples = sorted(set(by_class[label]))
        if len(examples) < n_folds:
            raise DataError(
                f"class {label!r} has {len(examples)} examples, fewer than {n_folds} folds"
            )
        order = np.random.default_rng([seed, 6, hash_label(label)]).permutation(len(examples))
        for pos, idx in enumerate(order):
            fold_of[examples[idx]] = pos % n_folds
    rows = []
    for row in manifest.rows:
        r = dict(row)
        key = example_key(row["id"])
        if key not in fold_of:
            raise DataError(f"example {key!r} has no categorical row to stratify by")
        r["fold"] = int(fold_of[key])
        rows.append(r)
    return Manifest(rows=rows, root=manifest.root).validate()


def hash_label(label):
    # stable across processes (builtin hash is salted)
    return int.from_bytes(label.encode("utf-8")[:8].ljust(8, b"\0"), "little") % (1 << 31)


def sample_shots(manifest: Manifest, n_per_class, seed):
    """N categorical triplets per class, uniformly without replacement from split=train."""
    rows = [r for r in manifest.rows if r["view"] == "categorical" and r["split"] == "train"]
    by_class: dict[str, list[dict]] = {}
    for r in rows:
        by_class.setdefault(r["label"], []).append(r)
    shots = []
    for label in sorted(by_class):
        pool = sorted(by_class[label], key=lambda r: r["id"])
        if len(pool) < n_per_class:
            raise DataError(
                f"class {label!r} has only {len(pool)} train examples, need {n_per_class}"
            )
        pick = np.random.default_rng([seed, 7, hash_label(label)]).choice(
            len(pool), size=n_per_class, replace=False)
        shots.extend(pool[i] for i in sorted(pick))
    return Manifest(rows=shots, root=manifest.root).triplets()

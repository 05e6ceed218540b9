"""Domain-randomization dataset compositor.

Overlays alpha-masked seed sprites on a background with randomized
rotation, flips, and pixel noise, then emits PNG images plus YOLO TXT
annotations and a manifest. Each image draws from an RNG stream seeded
by (rng_seed, image_index), so generation order never matters.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .core import BBox
from .io_formats import write_yolo_annotation

_RETRY_CAP = 1000


@dataclass(frozen=True)
class SpriteAsset:
    """RGBA sprite whose alpha channel is the foreground mask.

    The raster must be tight: the nonzero alpha extent touches all
    four edges.
    """

    rgba: np.ndarray
    class_id: int
    source_id: str

    def __post_init__(self):
        arr = np.asarray(self.rgba)
        if arr.ndim != 3 or arr.shape[2] != 4 or arr.dtype != np.uint8:
            raise ValueError("sprite must be an HxWx4 uint8 raster")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("sprite raster is empty")
        alpha = arr[:, :, 3]
        if not alpha.any():
            raise ValueError("sprite alpha is entirely zero")
        if not (
            alpha[0, :].any()
            and alpha[-1, :].any()
            and alpha[:, 0].any()
            and alpha[:, -1].any()
        ):
            raise ValueError("sprite is not tight-cropped to its alpha")
        if self.class_id < 0:
            raise ValueError("class_id must be >= 0")
        frozen = arr.copy()
        frozen.setflags(write=False)
        object.__setattr__(self, "rgba", frozen)

    @property
    def height(self) -> int:
        return self.rgba.shape[0]

    @property
    def width(self) -> int:
        return self.rgba.shape[1]


@dataclass(frozen=True)
class DatasetSpec:
    """Generation knobs; defaults give 200 images of 320x320x3 with
    25 to 50 kernels each and an 80/20 train/val split."""

    n_images: int = 200
    image_size: Tuple[int, int] = (320, 320)
    kernels_per_image: Tuple[int, int] = (25, 50)
    max_overlap_frac: float = 0.25
    noise_sigma: float = 6.0
    background_color: Tuple[int, int, int] = (236, 234, 228)
    background_path: Optional[str] = None
    classes: Tuple[int, ...] = (0,)
    rng_seed: int = 0
    train_val_split: float = 0.8

    def __post_init__(self):
        if self.n_images < 1:
            raise ValueError("n_images must be >= 1")
        w, h = self.image_size
        if w < 1 or h < 1:
            raise ValueError("image_size must be positive")
        lo, hi = self.kernels_per_image
        if not 1 <= lo <= hi:
            raise ValueError("kernels_per_image range must satisfy 1 <= lo <= hi")
        if not 0.0 <= self.max_overlap_frac < 1.0:
            raise ValueError("max_overlap_frac must lie in [0, 1)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not self.classes:
            raise ValueError("classes must not be empty")
        for c in self.background_color:
            if not 0 <= c <= 255:
                raise ValueError("background_color bytes must lie in [0, 255]")
        if not 0.0 < self.train_val_split < 1.0:
            raise ValueError("train_val_split must lie in (0, 1)")


@dataclass(frozen=True)
class ManifestEntry:
    image_path: str
    label_path: str
    split: str
    kernel_count: int
    per_class_counts: Tuple[Tuple[int, int], ...]


@dataclass(frozen=True)
class DatasetManifest:
    out_dir: str
    entries: Tuple[ManifestEntry, ...]

    @property
    def train_entries(self) -> Tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.split == "train")

    @property
    def val_entries(self) -> Tuple[ManifestEntry, ...]:
        return tuple(e for e in self.entries if e.split == "val")


def tight_crop(rgba: np.ndarray) -> np.ndarray:
    """Crop a raster to its nonzero-alpha extent."""
    alpha = rgba[:, :, 3]
    rows = np.flatnonzero(alpha.any(axis=1))
    cols = np.flatnonzero(alpha.any(axis=0))
    if rows.size == 0:
        raise ValueError("raster has no nonzero alpha")
    return rgba[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1]


def make_ellipse_sprite(
    width: int = 26,
    height: int = 22,
    color: Tuple[int, int, int] = (196, 164, 84),
    class_id: int = 0,
    source_id: str = "ellipse",
) -> SpriteAsset:
    """Procedural kernel: a filled ellipse with a radial shade."""
    if width < 3 or height < 3:
        raise ValueError("sprite needs width and height >= 3")
    ys, xs = np.mgrid[0:height, 0:width]
    nx = (xs + 0.5 - width / 2.0) / (width / 2.0)
    ny = (ys + 0.5 - height / 2.0) / (height / 2.0)
    r2 = nx * nx + ny * ny
    mask = r2 <= 1.0
    shade = np.clip(1.0 - 0.35 * r2, 0.0, 1.0)
    rgba = np.zeros((height, width, 4), dtype=np.uint8)
    for ch in range(3):
        rgba[:, :, ch] = np.where(
            mask, np.rint(color[ch] * shade).astype(np.uint8), 0
        )
    rgba[:, :, 3] = np.where(mask, 255, 0).astype(np.uint8)
    return SpriteAsset(
        rgba=tight_crop(rgba), class_id=class_id, source_id=source_id
    )


def augment_sprite(
    sprite: SpriteAsset,
    rotation_deg: float,
    flip_h: bool,
    flip_v: bool,
    noise_sigma: float,
    rng: Optional[np.random.Generator] = None,
) -> SpriteAsset:
    """Rotate about the center, flip, then add Gaussian noise to the
    RGB channels only; the result is tight-cropped again.

    Quarter-turn rotations are exact axis swaps; other angles resample
    the raster (alpha included).
    """
    rotation_deg = float(rotation_deg) % 360.0
    arr = np.asarray(sprite.rgba)
    if rotation_deg == 0.0:
        out = arr
    elif rotation_deg in (90.0, 180.0, 270.0):
        out = np.rot90(arr, k=int(rotation_deg // 90))
    else:
        img = Image.fromarray(arr, mode="RGBA")
        rotated = img.rotate(
            rotation_deg,
            resample=Image.BILINEAR,
            expand=True,
            fillcolor=(0, 0, 0, 0),
        )
        out = tight_crop(np.asarray(rotated))
    if flip_h:
        out = out[:, ::-1]
    if flip_v:
        out = out[::-1, :]
    if noise_sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        rgb = out[:, :, :3].astype(np.float64)
        rgb += rng.normal(0.0, noise_sigma, rgb.shape)
        out = np.dstack(
            [
                np.clip(np.rint(rgb), 0, 255).astype(np.uint8),
                out[:, :, 3],
            ]
        )
    if out is arr:
        return sprite
    return SpriteAsset(
        rgba=np.ascontiguousarray(out),
        class_id=sprite.class_id,
        source_id=sprite.source_id,
    )


def _overlap_frac(a: Tuple[int, int, int, int], b: Tuple[int, int, int, int]) -> float:
    """Intersection area over the smaller box area; boxes are
    (x, y, w, h) in integer pixels."""
    ix = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    iy = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / min(a[2] * a[3], b[2] * b[3])


def _load_background(spec: DatasetSpec) -> np.ndarray:
    w, h = spec.image_size
    if spec.background_path is not None:
        img = Image.open(spec.background_path).convert("RGB")
        if img.size != (w, h):
            raise ValueError(
                f"background raster is {img.size}, expected {(w, h)}"
            )
        return np.asarray(img, dtype=np.uint8)
    bg = np.empty((h, w, 3), dtype=np.uint8)
    bg[:, :] = spec.background_color
    return bg


def _compose(base: np.ndarray, sprite: np.ndarray, x: int, y: int) -> None:
    h, w = sprite.shape[:2]
    region = base[y : y + h, x : x + w].astype(np.float64)
    alpha = sprite[:, :, 3:4].astype(np.float64) / 255.0
    rgb = sprite[:, :, :3].astype(np.float64)
    blended = rgb * alpha + region * (1.0 - alpha)
    base[y : y + h, x : x + w] = np.clip(
        np.rint(blended), 0, 255
    ).astype(np.uint8)


def generate_dataset(
    sprites: Sequence[SpriteAsset], spec: DatasetSpec, out_dir
) -> DatasetManifest:
    """Write images, labels, and manifest.txt under out_dir."""
    by_class: Dict[int, List[SpriteAsset]] = {}
    for s in sprites:
        by_class.setdefault(s.class_id, []).append(s)
    for c in spec.classes:
        if c not in by_class:
            raise ValueError(f"no sprite provided for class {c}")

    out = Path(out_dir)
    splits = _split_assignment(spec)
    for split in ("train", "val"):
        (out / "images" / split).mkdir(parents=True, exist_ok=True)
        (out / "labels" / split).mkdir(parents=True, exist_ok=True)

    img_w, img_h = spec.image_size
    background = _load_background(spec)
    entries: List[ManifestEntry] = []
    for i in range(spec.n_images):
        rng = np.random.default_rng([spec.rng_seed, i])
        k = int(rng.integers(spec.kernels_per_image[0], spec.kernels_per_image[1] + 1))
        canvas = background.copy()
        placed: List[Tuple[int, int, int, int]] = []
        objects: List[Tuple[int, BBox]] = []
        for _ in range(k):
            cid = int(spec.classes[int(rng.integers(0, len(spec.classes)))])
            pool = by_class[cid]
            base_sprite = pool[int(rng.integers(0, len(pool)))]
            rotation = float(rng.uniform(0.0, 360.0))
            flip_h = bool(rng.random() < 0.5)
            flip_v = bool(rng.random() < 0.5)
            aug = augment_sprite(
                base_sprite, rotation, flip_h, flip_v, spec.noise_sigma, rng
            )
            if aug.width > img_w or aug.height > img_h:
                raise ValueError(
                    f"image {i}: sprite {aug.source_id} does not fit the image"
                )
            placed_ok = False
            for _attempt in range(_RETRY_CAP):
                x = int(rng.integers(0, img_w - aug.width + 1))
                y = int(rng.integers(0, img_h - aug.height + 1))
                cand = (x, y, aug.width, aug.height)
                if all(
                    _overlap_frac(cand, other) <= spec.max_overlap_frac
                    for other in placed
                ):
                    placed_ok = True
                    break
            if not placed_ok:
                raise ValueError(
                    f"image {i}: could not place kernel {len(placed) + 1} "
                    f"within {_RETRY_CAP} attempts"
                )
            _compose(canvas, aug.rgba, x, y)
            placed.append(cand)
            objects.append(
                (cid, BBox(float(x), float(y), float(aug.width), float(aug.height)))
            )

        split = splits[i]
        image_rel = f"images/{split}/img_{i:05d}.png"
        label_rel = f"labels/{split}/img_{i:05d}.txt"
        Image.fromarray(canvas, mode="RGB").save(out / image_rel, format="PNG")
        write_yolo_annotation(objects, img_w, img_h, out / label_rel)
        counts: Dict[int, int] = {}
        for cid, _ in objects:
            counts[cid] = counts.get(cid, 0) + 1
        entries.append(
            ManifestEntry(
                image_path=image_rel,
                label_path=label_rel,
                split=split,
                kernel_count=len(objects),
                per_class_counts=tuple(sorted(counts.items())),
            )
        )

    manifest_lines = [
        f"{e.image_path} {e.split} {e.kernel_count} "
        + ",".join(f"{c}:{n}" for c, n in e.per_class_counts)
        + "\n"
        for e in entries
    ]
    with open(out / "manifest.txt", "w", encoding="ascii", newline="") as fh:
        fh.writelines(manifest_lines)
    return DatasetManifest(out_dir=str(out), entries=tuple(entries))


def _split_assignment(spec: DatasetSpec) -> list:
    """Seeded shuffle; the first floor(split * n) indices train.

    The shuffle stream uses (rng_seed, n_images), disjoint from the
    per-image streams whose second word is always below n_images.
    """
    rng = np.random.default_rng([spec.rng_seed, spec.n_images])
    order = rng.permutation(spec.n_images)
    n_train = int(spec.train_val_split * spec.n_images)
    train_set = set(int(j) for j in order[:n_train])
    return ["train" if i in train_set else "val" for i in range(spec.n_images)]


def read_manifest(path) -> Tuple[ManifestEntry, ...]:
    """Parse manifest.txt back into entries."""
    entries = []
    with open(path, "r", encoding="ascii", newline="") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) != 4:
                raise ValueError(
                    f"{path}:{line_no}: expected 4 fields, got {len(parts)}"
                )
            image_rel, split, count_s, classes_s = parts
            if split not in ("train", "val"):
                raise ValueError(f"{path}:{line_no}: bad split {split!r}")
            counts = []
            for chunk in classes_s.split(","):
                cid_s, _, n_s = chunk.partition(":")
                counts.append((int(cid_s), int(n_s)))
            label_rel = image_rel.replace("images/", "labels/", 1)
            label_rel = label_rel[: -len(".png")] + ".txt"
            entries.append(
                ManifestEntry(
                    image_path=image_rel,
                    label_path=label_rel,
                    split=split,
                    kernel_count=int(count_s),
                    per_class_counts=tuple(counts),
                )
            )
    return tuple(entries)

"""Synthetic audio-visual segmentation scenes.

Each scene is a handful of moving colored shapes on a dark canvas. A shape
"sounds" on a subset of frames; the frame's audio descriptor is the mean
of the sounding shapes' kind signatures (a fixed orthonormal set in R^128)
plus Gaussian noise, so the sounding kinds are linearly decodable and the
task is solvable by construction. Ground truth is the union of rasters of
the sounding shapes; a frame is "visible" iff something sounds in it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .serialize import FormatError, load_array, save_array

KINDS = ("circle", "square", "triangle")
AUDIO_DIM = 128
MANIFEST_VERSION = 1

_SIGNATURE_SEED = 90817
_BASE_COLORS = {
    "circle": (0.85, 0.25, 0.25),
    "square": (0.25, 0.80, 0.30),
    "triangle": (0.30, 0.40, 0.90),
}
_BACKGROUND = 0.08

_signature_cache: np.ndarray | None = None


def kind_signatures() -> np.ndarray:
    """(len(KINDS), 128) orthonormal rows, fixed across all datasets."""
    global _signature_cache
    if _signature_cache is None:
        rng = np.random.default_rng(_SIGNATURE_SEED)
        q, _ = np.linalg.qr(rng.standard_normal((AUDIO_DIM, AUDIO_DIM)))
        _signature_cache = np.ascontiguousarray(q[: len(KINDS)])
    return _signature_cache


class ValidationError(ValueError):
    """Scene spec violates its invariants."""


@dataclass
class ShapeSpec:
    kind: str
    color: tuple[float, float, float]
    cx: float
    cy: float
    vx: float
    vy: float
    size: float
    sounding: tuple[int, ...]  # frame indices where this shape sounds

    def center_at(self, t: int) -> tuple[float, float]:
        return self.cx + t * self.vx, self.cy + t * self.vy


@dataclass
class SceneSpec:
    frames: int
    height: int
    width: int
    shapes: list[ShapeSpec]
    noise_sigma: float = 0.05
    seed: int = 0

    def validate(self) -> "SceneSpec":
        if self.frames < 1 or self.height < 8 or self.width < 8:
            raise ValidationError(f"bad scene dims T={self.frames}, {self.height}x{self.width}")
        sounding_any = False
        for s in self.shapes:
            if s.kind not in KINDS:
                raise ValidationError(f"unknown shape kind {s.kind!r}")
            if s.size < 1:
                raise ValidationError(f"shape size {s.size} below 1 pixel")
            for t in range(self.frames):
                x, y = s.center_at(t)
                if not (0 <= x < self.width and 0 <= y < self.height):
                    raise ValidationError(f"shape center leaves canvas at frame {t}: ({x:.1f}, {y:.1f})")
            if any(t < 0 or t >= self.frames for t in s.sounding):
                raise ValidationError(f"sounding frame out of range in {s.sounding}")
            sounding_any |= bool(s.sounding)
        if not sounding_any:
            raise ValidationError("no shape sounds in any frame")
        return self


def spec_to_dict(spec: SceneSpec) -> dict:
    d = asdict(spec)
    for s in d["shapes"]:
        s["color"] = list(s["color"])
        s["sounding"] = list(s["sounding"])
    return d


def spec_from_dict(d: dict) -> SceneSpec:
    shapes = [ShapeSpec(kind=s["kind"], color=tuple(s["color"]), cx=s["cx"], cy=s["cy"],
                        vx=s["vx"], vy=s["vy"], size=s["size"], sounding=tuple(s["sounding"]))
              for s in d["shapes"]]
    return SceneSpec(frames=d["frames"], height=d["height"], width=d["width"], shapes=shapes,
                     noise_sigma=d["noise_sigma"], seed=d["seed"])


def rasterize(kind: str, cx: float, cy: float, size: float, height: int, width: int) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    if kind == "circle":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= size ** 2
    if kind == "square":
        return np.maximum(np.abs(xx - cx), np.abs(yy - cy)) <= size
    if kind == "triangle":
        # upward isoceles triangle: apex (cx, cy - size), base at cy + size
        return (yy <= cy + size) & ((yy - (cy - size)) >= 2.0 * np.abs(xx - cx))
    raise ValidationError(f"unknown shape kind {kind!r}")


@dataclass
class AvvsSample:
    video: np.ndarray       # (T, H, W, 3) float32 in [0, 1]
    audio: np.ndarray       # (T, 128) float32
    gt_masks: np.ndarray    # (T, H, W) float32 in {0, 1}
    visibility: np.ndarray  # (T,) float32 in {0, 1}
    spec: SceneSpec | None = None

    @property
    def frames(self) -> int:
        return self.video.shape[0]

    @property
    def frame_hw(self) -> tuple[int, int]:
        return self.video.shape[1], self.video.shape[2]


def _masks_for_sounding(spec: SceneSpec, sounding_kinds_per_frame: list[set[str]]
                        ) -> tuple[np.ndarray, np.ndarray]:
    t, h, w = spec.frames, spec.height, spec.width
    masks = np.zeros((t, h, w), dtype=np.float32)
    for ti in range(t):
        acc = np.zeros((h, w), dtype=bool)
        for s in spec.shapes:
            if s.kind in sounding_kinds_per_frame[ti]:
                x, y = s.center_at(ti)
                acc |= rasterize(s.kind, x, y, s.size, h, w)
        masks[ti] = acc
    vis = (masks.reshape(t, -1).sum(axis=1) > 0).astype(np.float32)
    return masks, vis


def render(spec: SceneSpec) -> AvvsSample:
    """Deterministic given the spec (noise comes from spec.seed)."""
    spec.validate()
    t, h, w = spec.frames, spec.height, spec.width
    rng = np.random.default_rng(spec.seed)
    sigs = kind_signatures()

    video = np.full((t, h, w, 3), _BACKGROUND, dtype=np.float32)
    for ti in range(t):
        for s in spec.shapes:  # z-order: later shapes drawn on top
            x, y = s.center_at(ti)
            m = rasterize(s.kind, x, y, s.size, h, w)
            video[ti][m] = np.asarray(s.color, dtype=np.float32)

    audio = np.zeros((t, AUDIO_DIM), dtype=np.float32)
    sounding_per_frame: list[set[str]] = []
    for ti in range(t):
        sounding_shapes = [s for s in spec.shapes if ti in s.sounding]
        clean = np.zeros(AUDIO_DIM)
        if sounding_shapes:
            clean = np.mean([sigs[KINDS.index(s.kind)] for s in sounding_shapes], axis=0)
        noise = rng.normal(0.0, spec.noise_sigma, AUDIO_DIM) if spec.noise_sigma > 0 else 0.0
        audio[ti] = (clean + noise).astype(np.float32)
        sounding_per_frame.append({s.kind for s in sounding_shapes})

    masks, vis = _masks_for_sounding(spec, sounding_per_frame)
    return AvvsSample(video=video, audio=audio, gt_masks=masks, visibility=vis, spec=spec)


def sounding_kinds(spec: SceneSpec) -> list[set[str]]:
    return [{s.kind for s in spec.shapes if ti in s.sounding} for ti in range(spec.frames)]


def audio_swap_pair(spec_a: SceneSpec, spec_b: SceneSpec
                    ) -> tuple[AvvsSample, AvvsSample, AvvsSample, AvvsSample]:
    """Render both scenes plus variants with the audio tracks exchanged.

    The swapped ground truth follows the swapped audio: each frame's target
    kinds come from the other scene's sounding schedule.
    """
    if spec_a.frames != spec_b.frames:
        raise ValidationError(f"frame counts differ: {spec_a.frames} vs {spec_b.frames}")
    kinds_a = {s.kind for s in spec_a.shapes}
    kinds_b = {s.kind for s in spec_b.shapes}
    if kinds_a != kinds_b or len(kinds_a) != 2:
        raise ValidationError(f"swap pair needs the same two kinds in both scenes, "
                              f"got {sorted(kinds_a)} vs {sorted(kinds_b)}")
    sample_a, sample_b = render(spec_a), render(spec_b)

    def swapped(base: AvvsSample, donor: AvvsSample, base_spec, donor_spec) -> AvvsSample:
        masks, vis = _masks_for_sounding(base_spec, sounding_kinds(donor_spec))
        return AvvsSample(video=base.video.copy(), audio=donor.audio.copy(),
                          gt_masks=masks, visibility=vis, spec=base_spec)

    return (sample_a, sample_b,
            swapped(sample_a, sample_b, spec_a, spec_b),
            swapped(sample_b, sample_a, spec_b, spec_a))


# -- random scene generation ------------------------------------------------------

def _place_shapes(rng: np.random.Generator, kinds: list[str], t: int, h: int, w: int,
                  size_lo: float, size_hi: float, min_gap: float = 4.0,
                  max_tries: int = 200) -> list[tuple[str, float, float, float, float, float]]:
    placed: list[tuple[str, float, float, float, float, float]] = []
    for kind in kinds:
        for _ in range(max_tries):
            size = rng.uniform(size_lo, size_hi)
            vx, vy = rng.uniform(-2.0, 2.0, 2)
            margin = size * 0.3 + 1
            cx = rng.uniform(margin, w - 1 - margin)
            cy = rng.uniform(margin, h - 1 - margin)
            ok = all(0 <= cx + ti * vx < w and 0 <= cy + ti * vy < h for ti in range(t))
            for _, ox, oy, ovx, ovy, osize in placed:
                if not ok:
                    break
                for ti in range(t):
                    dx = (cx + ti * vx) - (ox + ti * ovx)
                    dy = (cy + ti * vy) - (oy + ti * ovy)
                    if np.hypot(dx, dy) < size + osize + min_gap:
                        ok = False
                        break
            if ok:
                placed.append((kind, cx, cy, vx, vy, size))
                break
        else:
            raise ValidationError(f"could not place shape {kind!r} after {max_tries} tries")
    return placed


def _jittered_color(rng: np.random.Generator, kind: str) -> tuple[float, float, float]:
    base = np.asarray(_BASE_COLORS[kind])
    col = np.clip(base + rng.uniform(-0.08, 0.08, 3), 0.0, 1.0)
    return tuple(round(float(c), 4) for c in col)


def random_scene(seed: int, frames: int = 5, height: int = 80, width: int = 80,
                 noise_sigma: float = 0.05, multi_source: float = 0.3,
                 size_lo: float = 9.0, size_hi: float = 16.0) -> SceneSpec:
    rng = np.random.default_rng(seed)
    n_shapes = int(rng.choice([1, 2], p=[0.4, 0.6]))
    kinds = list(rng.choice(KINDS, size=n_shapes, replace=False))
    placed = _place_shapes(rng, kinds, frames, height, width, size_lo, size_hi)

    shapes = []
    if n_shapes == 1:
        start = int(rng.integers(0, 2))
        stop = int(rng.integers(frames - 1, frames + 1))
        sounding = [tuple(range(start, max(stop, start + 1)))]
    else:
        split = int(rng.integers(1, frames))
        first = list(range(0, split))
        second = list(range(split, frames))
        if rng.random() < multi_source:
            # one overlap frame where both kinds sound together
            overlap = int(rng.integers(0, frames))
            (first if overlap not in first else second).append(overlap)
            first.sort(), second.sort()
        sounding = [tuple(first), tuple(second)]

    for (kind, cx, cy, vx, vy, size), snd in zip(placed, sounding):
        shapes.append(ShapeSpec(kind=kind, color=_jittered_color(rng, kind),
                                cx=round(cx, 3), cy=round(cy, 3), vx=round(vx, 3),
                                vy=round(vy, 3), size=round(size, 3), sounding=snd))
    return SceneSpec(frames=frames, height=height, width=width, shapes=shapes,
                     noise_sigma=noise_sigma, seed=seed).validate()


def swap_scene_pair(seed: int, frames: int = 5, height: int = 80, width: int = 80,
                    noise_sigma: float = 0.05, size_lo: float = 9.0, size_hi: float = 16.0
                    ) -> tuple[SceneSpec, SceneSpec]:
    """Two scenes over the same two kinds with complementary sounding schedules:
    in A the first kind sounds every frame, in B the second does."""
    rng = np.random.default_rng(seed)
    kinds = list(rng.choice(KINDS, size=2, replace=False))
    specs = []
    for which, sub_seed in ((0, 2 * seed + 1), (1, 2 * seed + 2)):
        sub_rng = np.random.default_rng(sub_seed)
        placed = _place_shapes(sub_rng, kinds, frames, height, width, size_lo, size_hi,
                               min_gap=8.0)
        shapes = []
        for idx, (kind, cx, cy, vx, vy, size) in enumerate(placed):
            snd = tuple(range(frames)) if idx == which else ()
            shapes.append(ShapeSpec(kind=kind, color=_jittered_color(sub_rng, kind),
                                    cx=round(cx, 3), cy=round(cy, 3), vx=round(vx, 3),
                                    vy=round(vy, 3), size=round(size, 3), sounding=snd))
        specs.append(SceneSpec(frames=frames, height=height, width=width, shapes=shapes,
                               noise_sigma=noise_sigma, seed=sub_seed).validate())
    return specs[0], specs[1]


def generate_dataset(n: int, seed: int, **scene_kwargs) -> list[AvvsSample]:
    return [render(random_scene(seed * 1_000_003 + i, **scene_kwargs)) for i in range(n)]


# -- dataset files ------------------------------------------------------------------

def write_dataset(samples: list[AvvsSample], dirpath) -> None:
    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, s in enumerate(samples):
        sub = f"sample_{i:05d}"
        d = dirpath / sub
        d.mkdir(exist_ok=True)
        save_array(d / "video.t", s.video)
        save_array(d / "audio.t", s.audio)
        save_array(d / "masks.t", s.gt_masks)
        save_array(d / "vis.t", s.visibility)
        entries.append({"dir": sub, "spec": spec_to_dict(s.spec) if s.spec else None})
    manifest = {"manifest_version": MANIFEST_VERSION, "samples": entries}
    (dirpath / "manifest.json").write_text(json.dumps(manifest, indent=1))


def read_dataset(dirpath) -> list[AvvsSample]:
    dirpath = Path(dirpath)
    manifest_path = dirpath / "manifest.json"
    if not manifest_path.exists():
        raise FormatError(f"{manifest_path}: missing dataset manifest")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("manifest_version") != MANIFEST_VERSION:
        raise FormatError(f"{manifest_path}: unsupported manifest version")
    samples = []
    for entry in manifest["samples"]:
        d = dirpath / entry["dir"]
        samples.append(AvvsSample(
            video=load_array(d / "video.t"),
            audio=load_array(d / "audio.t"),
            gt_masks=load_array(d / "masks.t"),
            visibility=load_array(d / "vis.t"),
            spec=spec_from_dict(entry["spec"]) if entry.get("spec") else None,
        ))
    return samples

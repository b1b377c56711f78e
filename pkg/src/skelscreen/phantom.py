"""Synthetic fetal skeleton phantoms with ground truth.

A phantom is built from ellipsoids and tubes in a body frame (mm; x toward
the head, y to the left, z dorsal), posed rigidly into a scan grid and
rendered as HU values: bone core 700, a one-voxel shell of 500 around it and
0 elsewhere, plus seeded Gaussian noise. The 7 / 13 / 6 cervical, thoracic
and lumbar vertebrae and 13 rib pairs follow common rat anatomy.

Injections each break exactly one screening rule:
``RemoveVertebra`` drops a thoracic or lumbar body (count rule),
``ScaleVertebra`` shrinks one body's volume (volume rule) and
``ShortenCaudalRib`` shortens the last rib on one side (rib rule).
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import PhantomError
from .rules import MIN_TL_BODIES, RIB_DELTA, VOLUME_DELTA, relative_delta
from .taxonomy import DEFAULT as DEFAULT_TAXONOMY
from .volume import VoxelVolume, save_label_volume, save_volume

CORE_HU = 700
SHELL_HU = 500
BACKGROUND_HU = 0
MIN_GAP_VOXELS = 5  # Chebyshev distance between cores of distinct bones
MARGIN_MM = 0.6

# body-frame anatomy (mm)
PITCH = 0.68
BODY_SEMI_X = 0.13
BODY_R = (0.24, 0.30)
ARCH_Y = 0.74
ARCH_DZ = 0.30
ARCH_SEMI = (0.12, 0.10, 0.22)
RIB_Y0 = 1.36
RIB_DZ = 0.10
RIB_R = 1.5
RIB_TUBE = 0.11
RIB_SWEEP_DEG = 95.0
RIB_SLANT = -0.25
RIB_LENGTHS = (0.70, 0.78, 0.86, 0.93, 1.0, 1.0, 0.98, 0.95, 0.92, 0.88, 0.84, 0.80, 0.74)
RIB_SEGMENTS = 24

REGIONS = ("cervical", "thoracic", "lumbar")


@dataclass(frozen=True)
class Injection:
    kind: str
    region: str = "thoracic"
    index: int = 0
    side: str = "left"
    factor: float = 0.5

    KINDS = ("RemoveVertebra", "ScaleVertebra", "ShortenCaudalRib")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise PhantomError(f"unknown injection kind {self.kind!r}")
        if self.region not in REGIONS:
            raise PhantomError(f"unknown region {self.region!r}")
        if self.side not in ("left", "right"):
            raise PhantomError(f"side must be 'left' or 'right', got {self.side!r}")
        if self.kind != "RemoveVertebra" and not 0 < self.factor < 1:
            raise PhantomError(f"injection factor must lie in (0, 1), got {self.factor}")

    @classmethod
    def remove_vertebra(cls, region: str, index: int) -> "Injection":
        return cls("RemoveVertebra", region=region, index=index)

    @classmethod
    def scale_vertebra(cls, region: str, index: int, factor: float) -> "Injection":
        return cls("ScaleVertebra", region=region, index=index, factor=factor)

    @classmethod
    def shorten_caudal_rib(cls, side: str, factor: float) -> "Injection":
        return cls("ShortenCaudalRib", side=side, factor=factor)

    def to_dict(self) -> dict:
        if self.kind == "ShortenCaudalRib":
            return {"kind": self.kind, "side": self.side, "factor": self.factor}
        d = {"kind": self.kind, "region": self.region, "index": self.index}
        if self.kind == "ScaleVertebra":
            d["factor"] = self.factor
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Injection":
        return cls(**d)


@dataclass(frozen=True)
class Pose:
    """Euler angles in degrees (about z, then y, then x of the body) and a grid shift in mm."""
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    shift_mm: tuple = (0.0, 0.0, 0.0)

    def rotation(self) -> np.ndarray:
        a, b, c = np.radians([self.yaw, self.pitch, self.roll])
        rz = np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1]])
        ry = np.array([[np.cos(b), 0, np.sin(b)], [0, 1, 0], [-np.sin(b), 0, np.cos(b)]])
        rx = np.array([[1, 0, 0], [0, np.cos(c), -np.sin(c)], [0, np.sin(c), np.cos(c)]])
        return rz @ ry @ rx

    @classmethod
    def random(cls, rng: np.random.Generator) -> "Pose":
        yaw = rng.uniform(-20, 20) + (180.0 if rng.random() < 0.5 else 0.0)
        return cls(yaw, rng.uniform(-10, 10), rng.uniform(-15, 15), tuple(rng.uniform(0, 0.3, 3)))


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    spacing_mm: float = 0.06
    n_cervical: int = 7
    n_thoracic: int = 13
    n_lumbar: int = 6
    n_rib_pairs: int = 13
    pose: Pose | None = None  # None: drawn from the seed
    noise_hu: float = 30.0
    size_jitter: float = 0.03  # global scale drawn from 1 +- size_jitter
    injections: tuple = ()

    def __post_init__(self):
        counts = (self.n_cervical, self.n_thoracic, self.n_lumbar, self.n_rib_pairs)
        if min(counts) < 0:
            raise PhantomError("bone counts must be >= 0")
        if self.n_rib_pairs > self.n_thoracic:
            raise PhantomError("every rib pair needs a thoracic vertebra")
        if not self.spacing_mm > 0 or self.noise_hu < 0 or not 0 <= self.size_jitter < 0.5:
            raise PhantomError("invalid spacing, noise or size jitter")
        sizes = {"cervical": self.n_cervical, "thoracic": self.n_thoracic, "lumbar": self.n_lumbar}
        for inj in self.injections:
            if inj.kind == "ShortenCaudalRib":
                if self.n_rib_pairs < 2:
                    raise PhantomError("rib injection needs at least 2 rib pairs")
            elif not 0 <= inj.index < sizes[inj.region]:
                raise PhantomError(f"{inj.kind}: index {inj.index} outside {inj.region} count {sizes[inj.region]}")


# -- primitives ----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Ellipsoid:
    center: np.ndarray
    semi: np.ndarray

    def bbox(self):
        return self.center - self.semi, self.center + self.semi

    def inside(self, p):
        return (((p - self.center) / self.semi) ** 2).sum(-1) <= 1.0


@dataclass(frozen=True, eq=False)
class Tube:
    path: np.ndarray  # (m, 3) polyline
    radius: float

    def bbox(self):
        return self.path.min(0) - self.radius, self.path.max(0) + self.radius

    def inside(self, p):
        best = np.full(p.shape[:-1], np.inf)
        for a, b in zip(self.path[:-1], self.path[1:]):
            ab = b - a
            t = np.clip(((p - a) @ ab) / (ab @ ab), 0.0, 1.0)
            d2 = ((p - a - t[..., None] * ab) ** 2).sum(-1)
            np.minimum(best, d2, out=best)
        return best <= self.radius ** 2


@dataclass(eq=False)
class PhantomBone:
    label: str
    prims: list
    nominal_length: float = 0.0  # rib major axis bookkeeping


def _e(c, s):
    return Ellipsoid(np.asarray(c, float), np.asarray(s, float))


def _tube(p0, p1, r):
    return Tube(np.array([p0, p1], dtype=float), r)


def spine_z(x, length):
    h = length / 2
    return 0.6 * (1 - ((x + h) / h) ** 2)


def rib_path(x0, side, z0, sweep_deg, n=RIB_SEGMENTS):
    th = np.linspace(0.0, np.radians(sweep_deg), n + 1)
    frac = th / th[-1] if th[-1] > 0 else th
    y = side * (RIB_Y0 + RIB_R * np.sin(th))
    z = z0 - RIB_R + RIB_R * np.cos(th)
    x = x0 + RIB_SLANT * frac
    return np.stack([x, y, z], axis=1)


def rib_major_axis(sweep_deg):
    return 2 * RIB_R * np.sin(np.radians(sweep_deg) / 2) + 2 * RIB_TUBE


def _rib_lengths(n):
    if n == len(RIB_LENGTHS):
        return list(RIB_LENGTHS)
    if n == 0:
        return []
    return list(np.interp(np.linspace(0, 1, n), np.linspace(0, 1, len(RIB_LENGTHS)), RIB_LENGTHS))


def build_skeleton(spec: PhantomSpec) -> list[PhantomBone]:
    """Bones in the unposed body frame, in a fixed construction order."""
    n_vert = spec.n_cervical + spec.n_thoracic + spec.n_lumbar
    length = PITCH * max(n_vert - 1, 1)
    region_of = ["cervical"] * spec.n_cervical + ["thoracic"] * spec.n_thoracic + ["lumbar"] * spec.n_lumbar
    local = list(range(spec.n_cervical)) + list(range(spec.n_thoracic)) + list(range(spec.n_lumbar))
    removed = {(j.region, j.index) for j in spec.injections if j.kind == "RemoveVertebra"}
    scaled = {(j.region, j.index): j.factor for j in spec.injections if j.kind == "ScaleVertebra"}
    short = {j.side: j.factor for j in spec.injections if j.kind == "ShortenCaudalRib"}
    bones: list[PhantomBone] = []

    def add(label, *prims):
        bones.append(PhantomBone(label, list(prims)))

    # skull, mandible
    add("supraoccipital", _e((0.85, 0, 0.8), (0.24, 0.8, 0.4)))
    add("interparietal", _e((1.65, 0, 1.1), (0.22, 0.62, 0.26)))
    for s, tag in ((1, "L"), (-1, "R")):
        add(f"parietal_{tag}", _e((2.65, s * 0.78, 1.1), (0.5, 0.55, 0.45)))
    for s, tag in ((1, "L"), (-1, "R")):
        add(f"frontal_{tag}", _e((4.2, s * 0.72, 1.0), (0.52, 0.5, 0.42)))
    add("nasal", _e((5.6, 0, 0.8), (0.48, 0.3, 0.2)))
    add("premaxilla", _e((5.95, 0, 0.05), (0.28, 0.3, 0.18)))
    for s, tag in ((1, "L"), (-1, "R")):
        add(f"mandible_{tag}", _tube((5.3, s * 0.5, -0.62), (2.5, s * 1.1, -0.62), 0.16))

    # vertebrae and ribs
    rib_sweeps = [RIB_SWEEP_DEG * L for L in _rib_lengths(spec.n_rib_pairs)]
    for i in range(n_vert):
        x = -PITCH * i
        z = spine_z(x, length)
        reg, k = region_of[i], local[i]
        r = BODY_R[0] + (BODY_R[1] - BODY_R[0]) * i / max(n_vert - 1, 1)
        if (reg, k) not in removed:
            f = scaled.get((reg, k), 1.0) ** (1.0 / 3.0)
            add(f"{reg}_body", _e((x, 0, z), (BODY_SEMI_X * f, r * f, 0.85 * r * f)))
        for s, tag in ((1, "L"), (-1, "R")):
            add(f"{reg}_arch_{tag}", _e((x, s * ARCH_Y, z + ARCH_DZ), ARCH_SEMI))
        if reg == "thoracic" and k < spec.n_rib_pairs:
            for s, tag, side in ((1, "L", "left"), (-1, "R", "right")):
                sweep = rib_sweeps[k]
                if k == spec.n_rib_pairs - 1 and side in short:
                    sweep *= short[side]
                bones.append(PhantomBone(f"rib_{tag}", [Tube(rib_path(x, s, z + RIB_DZ, sweep), RIB_TUBE)],
                                         rib_major_axis(sweep)))

    # sternum, shoulder girdle, forelimbs
    for j in range(6):
        add("sternebra", _e((-4.6 - 0.8 * j, 0, -1.5), (0.2, 0.3, 0.16)))
    for s, tag in ((1, "L"), (-1, "R")):
        add(f"clavicle_{tag}", _tube((-3.3, s * 0.6, -0.85), (-3.6, s * 1.6, -0.45), 0.12))
        add(f"scapula_{tag}", _e((-4.6, s * 1.8, 1.25), (0.55, 0.35, 0.12)))
        add(f"humerus_{tag}", _tube((-4.0, s * 3.3, 0.0), (-2.6, s * 3.4, -0.9), 0.14))
        add(f"radius_{tag}", _tube((-2.15, s * 3.1, -1.45), (-1.0, s * 2.95, -2.0), 0.12))
        add(f"ulna_{tag}", _tube((-2.15, s * 3.8, -1.45), (-1.0, s * 3.65, -2.0), 0.12))

    # pelvis, hind limbs (anchored to the caudal end of the spine)
    tail = -length
    for s, tag in ((1, "L"), (-1, "R")):
        add(f"ilium_{tag}", _tube((tail - 0.75, s * 0.95, 0.35), (tail - 2.1, s * 1.35, -0.1), 0.13))
        add(f"femur_{tag}", _tube((tail - 2.0, s * 2.05, -0.5), (tail - 0.4, s * 2.75, -1.2), 0.13))
        add(f"tibia_{tag}", _tube((tail - 0.15, s * 2.95, -1.8), (tail - 2.05, s * 3.1, -2.25), 0.12))
        add(f"fibula_{tag}", _tube((tail - 0.15, s * 3.55, -1.8), (tail - 2.05, s * 3.75, -2.25), 0.1))
    return bones


# -- rendering -----------------------------------------------------------------

@dataclass
class PhantomTruth:
    labels: np.ndarray  # uint16 grid, 0 background, k = truth bone id (cores only)
    bones: list  # [{"id", "label", "fetus"}]
    expected_verdict: str = "Normal"
    expected_rules: list = field(default_factory=list)
    injections: list = field(default_factory=list)
    counts: dict = field(default_factory=dict)
    poses: list = field(default_factory=list)
    fetus_verdicts: list = field(default_factory=list)

    def label_of(self) -> dict:
        return {b["id"]: b["label"] for b in self.bones}

    def fetus_of(self) -> dict:
        return {b["id"]: b["fetus"] for b in self.bones}

    def to_dict(self) -> dict:
        return {
            "bones": self.bones,
            "expected_verdict": self.expected_verdict,
            "expected_rules": self.expected_rules,
            "injections": self.injections,
            "counts": self.counts,
            "poses": self.poses,
            "fetus_verdicts": self.fetus_verdicts,
        }


def expected_rules(spec: PhantomSpec) -> list[int]:
    """Rules the injections should fire, from nominal geometry."""
    fired = set()
    tl = spec.n_thoracic + spec.n_lumbar
    removed = {(j.region, j.index) for j in spec.injections if j.kind == "RemoveVertebra"}
    tl -= sum(1 for reg, _ in removed if reg != "cervical")
    if tl < MIN_TL_BODIES:
        fired.add(2)
    for j in spec.injections:
        if j.kind == "ScaleVertebra" and relative_delta(1.0, j.factor) >= VOLUME_DELTA:
            fired.add(1)
        if j.kind == "ShortenCaudalRib":
            sweeps = [RIB_SWEEP_DEG * L for L in _rib_lengths(spec.n_rib_pairs)]
            a = rib_major_axis(sweeps[-2])
            b = rib_major_axis(sweeps[-1] * j.factor)
            if relative_delta(a, b) >= RIB_DELTA:
                fired.add(3)
    return sorted(fired)


def _posed_bboxes(bones, rot, scale):
    out = []
    for b in bones:
        lo = np.min([p.bbox()[0] for p in b.prims], axis=0)
        hi = np.max([p.bbox()[1] for p in b.prims], axis=0)
        corners = np.array([[c[0], c[1], c[2]] for c in np.array(np.meshgrid(*zip(lo, hi))).reshape(3, -1).T])
        w = scale * corners @ rot.T
        out.append((w.min(0), w.max(0)))
    return out


def _render_cores(bones, rot, scale, origin, shape, sp, labels, first_id):
    """Rasterize bone cores into ``labels`` (ids first_id, first_id+1, ...)."""
    boxes = _posed_bboxes(bones, rot, scale)
    for n, (b, (lo, hi)) in enumerate(zip(bones, boxes)):
        i0 = np.maximum(np.floor((lo + origin) / sp - 0.5).astype(int), 0)
        i1 = np.minimum(np.ceil((hi + origin) / sp - 0.5).astype(int) + 1, shape)
        if np.any(i1 <= i0):
            raise PhantomError(f"bone {b.label} falls outside the grid")
        axes = [(np.arange(a, c) + 0.5) * sp - o for a, c, o in zip(i0, i1, origin)]
        w = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        body = (w @ rot) / scale
        inside = np.zeros(w.shape[:-1], dtype=bool)
        for p in b.prims:
            inside |= p.inside(body)
        if not inside.any():
            raise PhantomError(f"bone {b.label} has no voxels at this spacing")
        box = labels[i0[0]:i1[0], i0[1]:i1[1], i0[2]:i1[2]]
        if np.any(box[inside] != 0):
            raise PhantomError(f"bone {b.label} overlaps another bone")
        box[inside] = first_id + n


def check_separation(labels: np.ndarray, min_gap: int = MIN_GAP_VOXELS) -> None:
    """Raise PhantomError if two distinct bones come within ``min_gap - 1`` voxels
    (Chebyshev), or if a bone's core is not one 26-connected piece."""
    nz = np.nonzero(labels)
    if nz[0].size == 0:
        return
    box = tuple(slice(max(int(a.min()) - min_gap, 0), int(a.max()) + min_gap + 1) for a in nz)
    lab = labels[box]
    hi = ndimage.maximum_filter(lab, size=min_gap, mode="constant", cval=0)
    lo = ndimage.minimum_filter(np.where(lab == 0, np.uint16(65535), lab), size=min_gap,
                                mode="constant", cval=65535)
    bad = (lo != 65535) & (hi != lo)
    if bad.any():
        pairs = sorted({(int(a), int(b)) for a, b in zip(lo[bad], hi[bad])})
        raise PhantomError(f"bones too close (min gap {min_gap} voxels): id pairs {pairs[:8]}")
    objs = ndimage.find_objects(lab)
    for k, sl in enumerate(objs, 1):
        if sl is None:
            continue
        _, n = ndimage.label(lab[sl] == k, structure=np.ones((3, 3, 3), bool))
        if n != 1:
            raise PhantomError(f"bone id {k} is split into {n} pieces")


def _finish_volume(labels, spec_noise, seed, sp) -> VoxelVolume:
    core = labels > 0
    shell = ndimage.binary_dilation(core, structure=np.ones((3, 3, 3), bool)) & ~core
    hu = np.full(labels.shape, BACKGROUND_HU, dtype=np.float32)
    hu[shell] = SHELL_HU
    hu[core] = CORE_HU
    if spec_noise > 0:
        noise_rng = np.random.default_rng([seed, 7919])
        hu += noise_rng.standard_normal(labels.shape, dtype=np.float32) * np.float32(spec_noise)
    data = np.clip(np.rint(hu), -32768, 32767).astype(np.int16)
    return VoxelVolume(data, (sp, sp, sp))


def _draw(spec: PhantomSpec):
    rng = np.random.default_rng(spec.seed)
    pose = spec.pose if spec.pose is not None else Pose.random(rng)
    scale = 1.0 + (rng.uniform(-spec.size_jitter, spec.size_jitter) if spec.size_jitter > 0 else 0.0)
    return pose, scale


def _layout(placements, sp):
    """Grid origin (mm) and shape holding every posed bone box plus a margin."""
    lo = np.min([b[0] + off for boxes, off in placements for b in boxes], axis=0)
    hi = np.max([b[1] + off for boxes, off in placements for b in boxes], axis=0)
    origin = MARGIN_MM - lo
    shape = np.ceil((hi - lo + 2 * MARGIN_MM) / sp).astype(int) + 1
    return origin, shape


def _truth_meta(spec, pose, scale, bones, first_id, fetus):
    return [{"id": first_id + n, "label": b.label, "fetus": fetus} for n, b in enumerate(bones)], {
        "yaw": pose.yaw, "pitch": pose.pitch, "roll": pose.roll, "scale": scale}


def _counts(spec):
    removed = sum(1 for j in spec.injections if j.kind == "RemoveVertebra" and j.region != "cervical")
    return {"cervical": spec.n_cervical, "thoracic": spec.n_thoracic, "lumbar": spec.n_lumbar,
            "rib_pairs": spec.n_rib_pairs, "thoracic_lumbar_bodies": spec.n_thoracic + spec.n_lumbar - removed}


def generate(spec: PhantomSpec) -> tuple[VoxelVolume, PhantomTruth]:
    """Render one posed phantom; identical specs give byte-identical volumes."""
    return _generate([spec], [np.zeros(3)])


def generate_pair(spec: PhantomSpec, offset_mm: float, second: PhantomSpec | None = None):
    """Two phantoms side by side (shifted along the scan y axis by ``offset_mm``).

    The second fetus uses ``second`` if given, else ``spec`` with seed + 1.
    """
    if second is None:
        second = dataclasses.replace(spec, seed=spec.seed + 1)
    return _generate([spec, second], [np.zeros(3), np.array([0.0, float(offset_mm), 0.0])])


def _generate(specs, offsets):
    sp = specs[0].spacing_mm
    if any(s.spacing_mm != sp for s in specs):
        raise PhantomError("all fetuses in one scan need the same spacing")
    drawn = [_draw(s) for s in specs]
    skeletons = [build_skeleton(s) for s in specs]
    placements = []
    for (pose, scale), bones, off in zip(drawn, skeletons, offsets):
        boxes = _posed_bboxes(bones, pose.rotation(), scale)
        shift = np.asarray(pose.shift_mm, dtype=float) + off
        placements.append((boxes, shift))
    if len(placements) == 2:
        (ba, oa), (bb, ob) = placements
        lo_a = np.min([b[0] for b in ba], 0) + oa
        hi_a = np.max([b[1] for b in ba], 0) + oa
        lo_b = np.min([b[0] for b in bb], 0) + ob
        hi_b = np.max([b[1] for b in bb], 0) + ob
        if np.all((lo_a < hi_b) & (lo_b < hi_a)):
            raise PhantomError(f"fetus bounding boxes overlap at offset {offsets[1].tolist()} mm")
    origin, shape = _layout(placements, sp)
    labels = np.zeros(tuple(int(n) for n in shape), dtype=np.uint16)
    truth_bones, poses = [], []
    next_id = 1
    for fetus, ((pose, scale), bones, (_, shift)) in enumerate(zip(drawn, skeletons, placements)):
        _render_cores(bones, pose.rotation(), scale, origin + shift, labels.shape, sp, labels, next_id)
        meta, pose_meta = _truth_meta(specs[fetus], pose, scale, bones, next_id, fetus)
        truth_bones += meta
        poses.append(pose_meta)
        next_id += len(bones)
    if next_id - 1 > 65535:
        raise PhantomError("too many bones for a uint16 truth map")
    check_separation(labels)
    vol = _finish_volume(labels, specs[0].noise_hu, specs[0].seed, sp)
    rules = sorted(set().union(*(expected_rules(s) for s in specs)))
    truth = PhantomTruth(
        labels=labels,
        bones=truth_bones,
        expected_verdict="Abnormal" if rules else "Normal",
        expected_rules=rules,
        injections=[[j.to_dict() for j in s.injections] for s in specs],
        counts=_counts(specs[0]) if len(specs) == 1 else [_counts(s) for s in specs],
        poses=poses,
        fetus_verdicts=[fetus_expectations(s)["verdict"] for s in specs],
    )
    return vol, truth


def fetus_expectations(spec: PhantomSpec) -> dict:
    rules = expected_rules(spec)
    return {"verdict": "Abnormal" if rules else "Normal", "rules": rules}


def save_phantom(volume: VoxelVolume, truth: PhantomTruth, header_path) -> dict:
    """Write scan, truth label volume and truth JSON next to each other."""
    header_path = Path(header_path)
    stem = header_path.with_suffix("")
    truth_hdr = stem.parent / (stem.name + "_truth.hdr")
    truth_json = stem.parent / (stem.name + "_truth.json")
    save_volume(volume, header_path)
    save_label_volume(truth.labels, volume.spacing_mm, truth_hdr)
    doc = truth.to_dict()
    doc["label_volume"] = truth_hdr.name
    truth_json.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return {"header": str(header_path), "truth": str(truth_json)}


def truth_label_index(label: str, taxonomy=DEFAULT_TAXONOMY) -> int:
    return taxonomy.index(label)


def random_injection(rng: np.random.Generator, spec: PhantomSpec, kind: str) -> Injection:
    """One abnormality of ``kind`` that the screening rules should catch."""
    if kind == "ShortenCaudalRib":
        return Injection.shorten_caudal_rib("left" if rng.random() < 0.5 else "right", 0.3)
    region = "thoracic" if rng.random() < 0.6 else "lumbar"
    n = spec.n_thoracic if region == "thoracic" else spec.n_lumbar
    # keep away from the ends so the neighbours exist
    index = int(rng.integers(1, n - 1))
    if kind == "RemoveVertebra":
        return Injection.remove_vertebra(region, index)
    return Injection.scale_vertebra(region, index, 0.5)


def study_specs(n_train: int, n_test: int, n_abnormal: int, seed: int = 0, abnormal_train_every: int = 2):
    """(spec, split) pairs for a phantom study; seeds are distinct per phantom.

    Every ``abnormal_train_every``-th training phantom carries an injection,
    test phantoms are normal and the ``abnormal`` split has one injection each
    (cycling over the kinds).
    """
    rng = np.random.default_rng([seed, 104729])
    out = []
    s = seed * 1000
    for i in range(n_train):
        spec = PhantomSpec(seed=s)
        if abnormal_train_every and i % abnormal_train_every == abnormal_train_every - 1:
            kind = Injection.KINDS[(i // abnormal_train_every) % 3]
            spec = dataclasses.replace(spec, injections=(random_injection(rng, spec, kind),))
        out.append((spec, "train"))
        s += 1
    for _ in range(n_test):
        out.append((PhantomSpec(seed=s), "test"))
        s += 1
    for i in range(n_abnormal):
        spec = PhantomSpec(seed=s)
        spec = dataclasses.replace(spec, injections=(random_injection(rng, spec, Injection.KINDS[i % 3]),))
        out.append((spec, "abnormal"))
        s += 1
    return out


def write_study(out_dir, specs) -> Path:
    """Render and save every phantom and write ``manifest.json``; returns its path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for n, (spec, split) in enumerate(specs):
        vol, truth = generate(spec)
        paths = save_phantom(vol, truth, out / f"phantom_{n:03d}.hdr")
        entries.append({"header": Path(paths["header"]).name, "truth": Path(paths["truth"]).name,
                        "split": split, "seed": spec.seed})
    manifest = out / "manifest.json"
    manifest.write_text(json.dumps({"volumes": entries}, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return manifest

"""Dataset generation and loading for the synthetic capture rig.

Layout under the dataset root:

    rig.txt                     light directions and max intensities
    calib.txt                   one camera per line (see save_calib)
    bg/cam_CC.pfm               static per-camera background plate
    frames/FFFFFF/cam_CC.pfm    training frames, linear float
    frames/FFFFFF/cam_CC.png    8-bit preview of the same
    manifest.csv                frame, bg_gain, per-light intensities
    eval_frames/..., eval_manifest.csv   held-out split, novel light presets
    truth.csv                   expression/pose ground truth, evaluation only

The loader never touches truth.csv, so nothing the trainer sees carries the
ground-truth expression weights.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from trava.lightkit import (LightingCondition, LightRig, group_pattern,
                            load_rig, save_rig, write_pfm, read_pfm)
from trava.renderer import REC709_LUMA, Camera, look_at, write_png

from .subject import SyntheticSubject, shade

TRAIN_ROLES = ("frontal", "left", "right", "aux")
ENCODER_ROLES = ("frontal", "left", "right")


@dataclass
class CaptureCamera:
    index: int
    role: str  # frontal | left | right | aux | eval
    camera: Camera

    @property
    def name(self) -> str:
        return f"cam_{self.index:02d}"


@dataclass
class FrameRecord:
    index: int
    split: str  # train | eval
    bg_gain: float
    lights: np.ndarray  # (n_lights,)


@dataclass
class CaptureDataset:
    root: str
    rig: LightRig
    cameras: list
    frames: list
    eval_frames: list

    def camera_by_role(self, role: str) -> CaptureCamera:
        for c in self.cameras:
            if c.role == role:
                return c
        raise ValueError(f"no camera with role {role!r}")

    def train_cameras(self):
        return [c for c in self.cameras if c.role in TRAIN_ROLES]

    def eval_cameras(self):
        return [c for c in self.cameras if c.role == "eval"]

    def image_path(self, record: FrameRecord, cam: CaptureCamera) -> str:
        sub = "frames" if record.split == "train" else "eval_frames"
        return os.path.join(self.root, sub, f"{record.index:06d}",
                            cam.name + ".pfm")

    def load_image(self, record: FrameRecord, cam: CaptureCamera) -> np.ndarray:
        return read_pfm(self.image_path(record, cam))

    def background(self, cam: CaptureCamera) -> np.ndarray:
        return read_pfm(os.path.join(self.root, "bg", cam.name + ".pfm"))


def _orbit_position(azimuth_deg: float, elevation_deg: float,
                    distance: float) -> np.ndarray:
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    # Cameras look down -z toward the subject at the origin.
    return distance * np.array([np.sin(az) * np.cos(el), -np.sin(el),
                                -np.cos(az) * np.cos(el)])


def make_camera(index: int, role: str, azimuth_deg: float,
                elevation_deg: float, distance: float = 0.5,
                resolution: int = 128, mono: bool = False) -> CaptureCamera:
    pos = _orbit_position(azimuth_deg, elevation_deg, distance)
    cam = Camera(fx=1.33 * resolution, fy=1.33 * resolution,
                 cx=resolution / 2.0, cy=resolution / 2.0,
                 width=resolution, height=resolution,
                 rotation=look_at(pos, np.zeros(3)), position=pos,
                 is_monochrome=mono)
    return CaptureCamera(index, role, cam)


def default_cameras(resolution: int = 128, distance: float = 0.5) -> list:
    """Four training views (one mono) plus two held-out eval views."""
    spec = [("frontal", 0.0, 0.0, False), ("left", 30.0, 0.0, False),
            ("right", -30.0, 0.0, False), ("aux", 0.0, 25.0, True),
            ("eval", 15.0, 10.0, False), ("eval", -18.0, -8.0, False)]
    return [make_camera(i, role, az, el, distance, resolution, mono)
            for i, (role, az, el, mono) in enumerate(spec)]


def static_background(cam: CaptureCamera, seed: int = 0) -> np.ndarray:
    """Smooth per-camera gradient plate, values well inside [0, 1]."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11, cam.index]))
    h, w = cam.camera.height, cam.camera.width
    y, x = np.mgrid[0:h, 0:w]
    base = rng.uniform(0.08, 0.18, 3)
    gx = rng.uniform(-0.12, 0.12, 3)
    gy = rng.uniform(-0.12, 0.12, 3)
    img = base + gx * (x / w)[..., None] + gy * (y / h)[..., None]
    return np.clip(img, 0.02, 0.4)


def background_gain(pattern: LightingCondition, rig: LightRig) -> float:
    """Background flashes with the pattern's total flux, like a real stage."""
    flux = float(pattern.intensities.mean(axis=0).sum())
    return 0.25 + 0.75 * flux / float(rig.max_intensity.sum())


def eval_pattern(rig: LightRig, index: int) -> LightingCondition:
    """Preset evaluation lighting, deliberately unlike the training groups.

    Five families (half-sphere, ring band, uniform, cap plus opposite fill,
    three spread lights at full power), rotating through seeded axes per
    repeat. Broad families are leveled so their total flux roughly matches
    a training group's, keeping evaluation inside the sensor range.
    """
    rng = np.random.default_rng(np.random.SeedSequence([77, index // 5]))
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    dots = rig.directions @ axis
    family = index % 5
    m = rig.max_intensity
    group_flux = m.mean() * (7.0 + 0.02 * (rig.n_lights - 7))
    if family == 0:
        values = np.where(dots > 0.0, m, 0.0)
    elif family == 1:
        values = np.where(np.abs(dots) < 0.3, m, 0.0)
    elif family == 2:
        values = m.astype(np.float64).copy()
    elif family == 3:
        values = np.where(dots > 0.6, m, np.where(dots < -0.6, 0.4 * m, 0.0))
    else:
        picks = rng.choice(rig.n_lights, size=3, replace=False)
        values = np.zeros(rig.n_lights)
        values[picks] = m[picks]
        return LightingCondition(values[None, :])
    values = values * (group_flux / values.sum())
    return LightingCondition(values[None, :].copy())


def pattern_seed(seed: int, frame: int) -> int:
    return int(np.random.SeedSequence([seed, 5, frame]).generate_state(1)[0])


# -- text formats ---------------------------------------------------------

def save_calib(path, cameras: list) -> None:
    """Line per camera: index role mono fx fy cx cy w h R(9, row-major) p(3)."""
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# calib v1\n")
        for cc in cameras:
            c = cc.camera
            nums = [c.fx, c.fy, c.cx, c.cy, c.width, c.height,
                    *c.rotation.ravel(), *c.position]
            f.write(f"{cc.index} {cc.role} {int(c.is_monochrome)} "
                    + " ".join(repr(float(v)) for v in nums) + "\n")


def load_calib(path) -> list:
    cameras = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            index, role, mono = int(parts[0]), parts[1], bool(int(parts[2]))
            vals = [float(v) for v in parts[3:]]
            if len(vals) != 18:
                raise ValueError(f"calib line for camera {index} has "
                                 f"{len(vals)} values, expected 18")
            cam = Camera(fx=vals[0], fy=vals[1], cx=vals[2], cy=vals[3],
                         width=int(vals[4]), height=int(vals[5]),
                         rotation=np.array(vals[6:15]).reshape(3, 3),
                         position=np.array(vals[15:18]), is_monochrome=mono)
            cameras.append(CaptureCamera(index, role, cam))
    if not cameras:
        raise ValueError(f"no cameras in {path}")
    return cameras


def _write_manifest(path, records: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        n = len(records[0].lights)
        writer.writerow(["frame", "bg_gain"] + [f"l{j}" for j in range(n)])
        for r in records:
            writer.writerow([r.index, repr(r.bg_gain)]
                            + [repr(float(v)) for v in r.lights])


def _read_manifest(path, split: str) -> list:
    records = []
    with open(path, encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader)
        if header[:2] != ["frame", "bg_gain"]:
            raise ValueError(f"unexpected manifest header in {path}")
        for row in reader:
            records.append(FrameRecord(index=int(row[0]), split=split,
                                       bg_gain=float(row[1]),
                                       lights=np.array([float(v) for v in row[2:]])))
    return records


# -- generation -----------------------------------------------------------

def _store_frame(root, sub, frame_idx, cameras, images) -> None:
    d = os.path.join(root, sub, f"{frame_idx:06d}")
    os.makedirs(d, exist_ok=True)
    for cc, img in zip(cameras, images):
        if cc.camera.is_monochrome:
            img = img @ REC709_LUMA
        write_pfm(os.path.join(d, cc.name + ".pfm"), img.astype(np.float32))
        write_png(os.path.join(d, cc.name + ".png"), np.clip(img, 0.0, 1.0))


def generate_dataset(out_dir, subject: SyntheticSubject, rig: LightRig,
                     cameras: list | None = None, n_frames: int = 600,
                     seed: int = 0, n_eval: int = 50,
                     resolution: int = 128) -> CaptureDataset:
    """Write a full capture to out_dir and return the loaded dataset.

    Training frames use fresh seeded group patterns; the eval split (frame
    indices continuing after the training range) uses the preset novel
    patterns and is stored separately so the training manifest row count
    equals n_frames exactly.
    """
    cameras = cameras if cameras is not None else default_cameras(resolution)
    train_cams = [c for c in cameras if c.role in TRAIN_ROLES]
    eval_cams = [c for c in cameras if c.role == "eval"] or train_cams
    enc_cams = [c for c in cameras if c.role in ENCODER_ROLES]
    if len(enc_cams) < 3:
        raise ValueError("need frontal, left and right cameras")

    os.makedirs(out_dir, exist_ok=True)
    save_rig(os.path.join(out_dir, "rig.txt"), rig)
    save_calib(os.path.join(out_dir, "calib.txt"), cameras)
    os.makedirs(os.path.join(out_dir, "bg"), exist_ok=True)
    plates = {}
    for cc in cameras:
        plates[cc.index] = static_background(cc, seed)
        plate = plates[cc.index]
        if cc.camera.is_monochrome:
            plate = plate @ REC709_LUMA
        write_pfm(os.path.join(out_dir, "bg", cc.name + ".pfm"),
                  plate.astype(np.float32))

    def render_split(sub, indices, pattern_for, cams):
        records = []
        for fi in indices:
            pattern = pattern_for(fi)
            gain = background_gain(pattern, rig)
            images = [shade(subject, rig, pattern, cc.camera, frame=fi,
                            background=gain * plates[cc.index])
                      for cc in cams]
            _store_frame(out_dir, sub, fi, cams, images)
            records.append(FrameRecord(fi, "train" if sub == "frames" else "eval",
                                       gain, pattern.intensities[0].copy()))
        return records

    train_records = render_split(
        "frames", range(n_frames),
        lambda fi: group_pattern(rig, pattern_seed(seed, fi)), train_cams)
    _write_manifest(os.path.join(out_dir, "manifest.csv"), train_records)

    # Eval frames carry the encoder views (to drive the avatar) plus the
    # held-out target cameras under novel preset lighting.
    eval_view_cams = list({c.index: c for c in enc_cams + eval_cams}.values())
    eval_records = render_split(
        "eval_frames", range(n_frames, n_frames + n_eval),
        lambda fi: eval_pattern(rig, fi - n_frames), eval_view_cams)
    _write_manifest(os.path.join(out_dir, "eval_manifest.csv"), eval_records)

    with open(os.path.join(out_dir, "truth.csv"), "w", encoding="utf-8",
              newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["frame"] + [f"w{k}" for k in range(subject.n_expr)]
                        + ["r00", "r01", "r02", "r10", "r11", "r12",
                           "r20", "r21", "r22", "tx", "ty", "tz"])
        for fi in range(n_frames + n_eval):
            w, rot, trans = subject.frame_state(fi)
            writer.writerow([fi] + [repr(float(v)) for v in w]
                            + [repr(float(v)) for v in rot.ravel()]
                            + [repr(float(v)) for v in trans])

    return load_dataset(out_dir)


def load_dataset(root) -> CaptureDataset:
    """Load manifests and calibration; verifies referenced images exist."""
    rig = load_rig(os.path.join(root, "rig.txt"))
    cameras = load_calib(os.path.join(root, "calib.txt"))
    frames = _read_manifest(os.path.join(root, "manifest.csv"), "train")
    eval_path = os.path.join(root, "eval_manifest.csv")
    eval_frames = _read_manifest(eval_path, "eval") if os.path.exists(eval_path) else []
    ds = CaptureDataset(root=str(root), rig=rig, cameras=cameras,
                        frames=frames, eval_frames=eval_frames)
    for r in frames + eval_frames:
        if len(r.lights) != rig.n_lights:
            raise ValueError(f"frame {r.index}: light vector length "
                             f"{len(r.lights)} != rig size {rig.n_lights}")
        if r.split == "train":
            cams = ds.train_cameras()
        else:
            enc = [ds.camera_by_role(t) for t in ENCODER_ROLES]
            cams = list({c.index: c for c in enc + ds.eval_cameras()}.values())
        for cc in cams:
            p = ds.image_path(r, cc)
            if not os.path.exists(p):
                raise FileNotFoundError(f"manifest references missing image {p}")
    return ds

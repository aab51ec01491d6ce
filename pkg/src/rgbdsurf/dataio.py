"""Datasets on disk, the synthetic RGB-D scene generator, and PLY mesh I/O.

Dataset directory layout::

    intrinsics.txt      fx fy cx cy width height depth_scale
    poses.txt           one row-major 4x4 camera-to-world matrix per line
    rgb/%05d.png        8-bit RGB
    depth/%05d.png      16-bit, units of 1/depth_scale m along the optical axis, 0 = invalid
    semantic/%05d.png   8-bit RGB pseudo-colour (optional)
    gt_mesh.ply         optional
    bounds.txt          optional: "xmin ymin zmin xmax ymax zmax"
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from .geometry import CameraIntrinsics, Pose, look_at, pixels_to_rays
from .mesher import TriangleMesh, cull_to_frustums, evaluate_lattice, marching_cubes

log = logging.getLogger(__name__)


class DataError(RuntimeError):
    pass


class PlyError(DataError):
    pass


# palette ------------------------------------------------------------------

N_CLASSES = 40


def palette() -> np.ndarray:
    """Fixed 40-entry class colour map (uint8); row ``k`` is class id ``k + 1``."""
    text = resources.files("rgbdsurf").joinpath("data/palette40.txt").read_text()
    rows = [r for r in text.splitlines() if r and not r.startswith("#")]
    return np.array([[int(v) for v in r.split()] for r in rows], dtype=np.uint8)


def class_colors(class_ids) -> np.ndarray:
    """Palette colours for class ids in ``1..40``."""
    ids = np.asarray(class_ids)
    if ids.size and (ids.min() < 1 or ids.max() > N_CLASSES):
        raise ValueError(f"class ids must lie in 1..{N_CLASSES}")
    return palette()[ids - 1]


# dataset ------------------------------------------------------------------

@dataclass
class Frame:
    index: int
    color: np.ndarray  # (H, W, 3) float in [0, 1]
    depth: np.ndarray  # (H, W) metres along the optical axis, 0 = invalid
    pose: Pose
    semantic: np.ndarray | None = None  # (H, W, 3) float in [0, 1]

    @property
    def valid(self) -> np.ndarray:
        return self.depth > 0


@dataclass
class Dataset:
    intrinsics: CameraIntrinsics
    frames: list
    bounds: tuple
    gt_mesh_path: Path | None = None
    root: Path | None = None

    @property
    def has_semantics(self) -> bool:
        return all(f.semantic is not None for f in self.frames)


def _read_png(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            return np.array(im)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc


def write_intrinsics(path, intr: CameraIntrinsics) -> None:
    vals = [repr(float(v)) for v in (intr.fx, intr.fy, intr.cx, intr.cy)]
    vals += [str(int(intr.width)), str(int(intr.height)), repr(float(intr.depth_scale))]
    Path(path).write_text(" ".join(vals) + "\n")


def read_intrinsics(path) -> CameraIntrinsics:
    try:
        vals = Path(path).read_text().split()
        fx, fy, cx, cy = (float(v) for v in vals[:4])
        return CameraIntrinsics(fx, fy, cx, cy, int(vals[4]), int(vals[5]), float(vals[6]))
    except (IndexError, ValueError) as exc:
        raise DataError(f"{path}: expected 'fx fy cx cy width height depth_scale' ({exc})") from exc


def write_poses(path, poses) -> None:
    lines = [" ".join(repr(float(v)) for v in p.matrix().ravel()) for p in poses]
    Path(path).write_text("\n".join(lines) + "\n")


def read_poses(path) -> list:
    poses = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        vals = line.split()
        if len(vals) != 16:
            raise DataError(f"{path}:{n}: expected 16 values, got {len(vals)}")
        try:
            poses.append(Pose.from_matrix([float(v) for v in vals]))
        except ValueError as exc:
            raise DataError(f"{path}:{n}: {exc}") from exc
    return poses


def load_dataset(root) -> Dataset:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset directory {root} does not exist")
    for req in ("intrinsics.txt", "poses.txt"):
        if not (root / req).is_file():
            raise DataError(f"{root}: missing {req}")
    intr = read_intrinsics(root / "intrinsics.txt")
    poses = read_poses(root / "poses.txt")
    rgb_files = sorted((root / "rgb").glob("*.png"))
    depth_files = sorted((root / "depth").glob("*.png"))
    if not rgb_files:
        raise DataError(f"{root}: no rgb/*.png images")
    if not (len(rgb_files) == len(depth_files) == len(poses)):
        raise DataError(f"{root}: {len(poses)} poses, {len(rgb_files)} rgb and {len(depth_files)} depth images")
    sem_dir = root / "semantic"
    frames = []
    for i, (pose, rf, df) in enumerate(zip(poses, rgb_files, depth_files)):
        rgb = _read_png(rf)
        dep = _read_png(df)
        if rgb.shape[:2] != (intr.height, intr.width) or dep.shape != (intr.height, intr.width):
            raise DataError(f"{rf.name}/{df.name}: image size does not match intrinsics")
        sem = None
        sf = sem_dir / rf.name
        if sf.is_file():
            sem = _read_png(sf)[..., :3].astype(np.float64) / 255.0
        frames.append(Frame(i, rgb[..., :3].astype(np.float64) / 255.0,
                            dep.astype(np.float64) / intr.depth_scale, pose, sem))
    if not any(f.valid.any() for f in frames):
        raise DataError(f"{root}: no valid depth in any frame")
    bf = root / "bounds.txt"
    if bf.is_file():
        b = np.array([float(v) for v in bf.read_text().split()])
        bounds = (tuple(float(v) for v in b[:3]), tuple(float(v) for v in b[3:6]))
    else:
        bounds = estimate_bounds(intr, frames)
    gt = root / "gt_mesh.ply"
    return Dataset(intr, frames, bounds, gt if gt.is_file() else None, root)


def backproject(intr: CameraIntrinsics, frame: Frame, stride: int = 1) -> np.ndarray:
    v, u = np.nonzero(frame.valid[::stride, ::stride])
    u, v = u * stride, v * stride
    z = frame.depth[v, u]
    cam = np.stack([(u - intr.cx) / intr.fx * z, (v - intr.cy) / intr.fy * z, z], -1)
    return cam @ frame.pose.rotation.T + frame.pose.translation


def estimate_bounds(intr, frames, margin: float = 0.1):
    pts = [backproject(intr, f, 4) for f in frames] + [np.array([f.pose.translation for f in frames])]
    pts = np.concatenate(pts, 0)
    return tuple(float(v) for v in pts.min(0) - margin), tuple(float(v) for v in pts.max(0) + margin)


# synthetic scenes ---------------------------------------------------------

ROOM_CLASSES = {"wall": 1, "floor": 2, "ceiling": 22}


@dataclass
class SceneSpec:
    """Analytic scene: a box room seen from inside plus solid primitives."""

    room_min: tuple = (-1.0, -1.0, 0.0)
    room_max: tuple = (1.0, 1.0, 2.0)
    primitives: list = field(default_factory=list)
    n_frames: int = 20
    ring_radius: float = 0.55
    ring_height: float = 1.1
    pitch_deg: float = 25.0
    width: int = 80
    height: int = 60
    fov_deg: float = 90.0
    depth_scale: float = 1000.0
    noise_level: float = 0.01
    holes_per_frame: int = 1
    hole_radius_px: tuple = (2.0, 5.0)
    edge_dropout_cos: float = 0.2
    bounds_margin: float = 0.1
    gt_resolution: float = 0.01
    room_colors: dict = field(default_factory=lambda: {
        "floor": (0.55, 0.45, 0.35), "ceiling": (0.9, 0.9, 0.88),
        "wall_x": (0.75, 0.7, 0.6), "wall_y": (0.6, 0.68, 0.75)})

    def __post_init__(self):
        if self.n_frames < 1:
            raise ValueError("need at least one frame")
        if np.any(np.asarray(self.room_max) <= np.asarray(self.room_min)):
            raise ValueError("room extent must be positive")
        if not self.primitives:
            raise ValueError("scene needs at least one primitive")

    @classmethod
    def from_file(cls, path) -> "SceneSpec":
        d = yaml.safe_load(Path(path).read_text()) or {}
        for k in ("room_min", "room_max", "hole_radius_px"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)

    @property
    def bounds(self):
        m = self.bounds_margin
        return (tuple(np.asarray(self.room_min) - m), tuple(np.asarray(self.room_max) + m))


def box_room_spec(**overrides) -> SceneSpec:
    """Default 2 x 2 x 2 m room with a table-like box, a sphere and a cabinet."""
    prims = [
        {"type": "box", "center": (0.0, 0.0, 0.25), "half": (0.3, 0.2, 0.25), "yaw_deg": 20.0,
         "color": (0.8, 0.3, 0.25), "class_id": 7},
        {"type": "sphere", "center": (-0.45, 0.4, 0.2), "radius": 0.2, "color": (0.25, 0.55, 0.85),
         "class_id": 40},
        {"type": "box", "center": (0.65, -0.7, 0.45), "half": (0.2, 0.15, 0.45), "yaw_deg": 0.0,
         "color": (0.35, 0.75, 0.4), "class_id": 3},
    ]
    kw = dict(primitives=prims)
    kw.update(overrides)
    return SceneSpec(**kw)


def _yaw(deg):
    a = np.deg2rad(deg)
    return np.array([[np.cos(a), -np.sin(a), 0], [np.sin(a), np.cos(a), 0], [0, 0, 1.0]])


def _box_sdf(p, c, half, R):
    q = np.abs((p - c) @ R) - half
    return np.linalg.norm(np.maximum(q, 0), axis=-1) + np.minimum(q.max(-1), 0)


def scene_sdf(spec: SceneSpec, p: np.ndarray) -> np.ndarray:
    """Exact union SDF (positive in free space)."""
    p = np.asarray(p, dtype=np.float64)
    lo, hi = np.asarray(spec.room_min, float), np.asarray(spec.room_max, float)
    d = -_box_sdf(p, (lo + hi) / 2, (hi - lo) / 2, np.eye(3))
    for pr in spec.primitives:
        kind = pr["type"]
        if kind == "sphere":
            s = np.linalg.norm(p - np.asarray(pr["center"]), axis=-1) - pr["radius"]
        elif kind == "box":
            s = _box_sdf(p, np.asarray(pr["center"]), np.asarray(pr["half"]), _yaw(pr.get("yaw_deg", 0.0)))
        elif kind == "plane":
            n = np.asarray(pr["normal"], float)
            n /= np.linalg.norm(n)
            s = p @ n - pr["offset"]
        else:
            raise ValueError(f"unknown primitive {kind!r}")
        d = np.minimum(d, s)
    return d


def _hit_box(o, dirs, c, half, R):
    """Entry distance and outward normal of a ray against an oriented box (inf on miss)."""
    ol = (o - c) @ R
    dl = dirs @ R
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (-half - ol) / dl
        t1 = (half - ol) / dl
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    tmin = np.where(np.isnan(tmin), -np.inf, tmin)
    tmax = np.where(np.isnan(tmax), np.inf, tmax)
    t_in = tmin.max(-1)
    t_out = tmax.min(-1)
    hit = (t_in <= t_out) & (t_in > 0)
    axis = tmin.argmax(-1)
    nl = np.zeros_like(ol)
    rows = np.arange(len(ol))
    nl[rows, axis] = -np.sign(dl[rows, axis])
    return np.where(hit, t_in, np.inf), nl @ R.T


def _hit_room(o, dirs, lo, hi):
    with np.errstate(divide="ignore", invalid="ignore"):
        t0 = (lo - o) / dirs
        t1 = (hi - o) / dirs
    tmax = np.where(np.isnan(np.maximum(t0, t1)), np.inf, np.maximum(t0, t1))
    axis = tmax.argmin(-1)
    rows = np.arange(len(o))
    t = tmax[rows, axis]
    n = np.zeros_like(o)
    n[rows, axis] = -np.sign(dirs[rows, axis])
    return t, n, axis


def raycast(spec: SceneSpec, o: np.ndarray, dirs: np.ndarray):
    """First hit per ray: ``(t, normal, albedo, class_id)``."""
    lo, hi = np.asarray(spec.room_min, float), np.asarray(spec.room_max, float)
    t, n, axis = _hit_room(o, dirs, lo, hi)
    colors = spec.room_colors
    albedo = np.empty((len(o), 3))
    cls = np.empty(len(o), dtype=np.int64)
    floor = (axis == 2) & (n[:, 2] > 0)
    ceil = (axis == 2) & (n[:, 2] < 0)
    albedo[:] = colors["wall_y"]
    albedo[axis == 0] = colors["wall_x"]
    albedo[floor] = colors["floor"]
    albedo[ceil] = colors["ceiling"]
    cls[:] = ROOM_CLASSES["wall"]
    cls[floor] = ROOM_CLASSES["floor"]
    cls[ceil] = ROOM_CLASSES["ceiling"]
    for pr in spec.primitives:
        kind = pr["type"]
        if kind == "sphere":
            c = np.asarray(pr["center"], float)
            oc = o - c
            b = (oc * dirs).sum(-1)
            disc = b * b - ((oc * oc).sum(-1) - pr["radius"] ** 2)
            with np.errstate(invalid="ignore"):
                tp = -b - np.sqrt(disc)
            tp = np.where((disc >= 0) & (tp > 0), tp, np.inf)
            npr = (o + tp[:, None] * dirs - c) / pr["radius"]
        elif kind == "box":
            tp, npr = _hit_box(o, dirs, np.asarray(pr["center"], float), np.asarray(pr["half"], float),
                               _yaw(pr.get("yaw_deg", 0.0)))
        elif kind == "plane":
            nn_ = np.asarray(pr["normal"], float)
            nn_ = nn_ / np.linalg.norm(nn_)
            with np.errstate(divide="ignore", invalid="ignore"):
                tp = (pr["offset"] - o @ nn_) / (dirs @ nn_)
            tp = np.where(np.isfinite(tp) & (tp > 0), tp, np.inf)
            npr = np.broadcast_to(nn_, o.shape)
        else:
            raise ValueError(f"unknown primitive {kind!r}")
        closer = tp < t
        t = np.where(closer, tp, t)
        n = np.where(closer[:, None], npr, n)
        albedo[closer] = pr["color"]
        cls[closer] = pr["class_id"]
    return t, n, albedo, cls


def ring_poses(spec: SceneSpec) -> list:
    """Cameras on a horizontal ring looking across the room, alternately tilted up and down."""
    lo, hi = np.asarray(spec.room_min, float), np.asarray(spec.room_max, float)
    c = (lo + hi) / 2
    poses = []
    for i in range(spec.n_frames):
        a = 2 * np.pi * i / spec.n_frames
        eye = np.array([c[0] + spec.ring_radius * np.cos(a), c[1] + spec.ring_radius * np.sin(a),
                        lo[2] + spec.ring_height])
        pitch = np.deg2rad(spec.pitch_deg) * (1 if i % 2 else -1)
        horiz = np.array([c[0] - eye[0], c[1] - eye[1], 0.0])
        horiz /= np.linalg.norm(horiz)
        target = eye + np.cos(pitch) * horiz + np.array([0, 0, np.sin(pitch)])
        poses.append(look_at(eye, target))
    return poses


def spec_intrinsics(spec: SceneSpec) -> CameraIntrinsics:
    f = 0.5 * spec.width / np.tan(np.deg2rad(spec.fov_deg) / 2)
    return CameraIntrinsics(f, f, (spec.width - 1) / 2, (spec.height - 1) / 2, spec.width, spec.height,
                            spec.depth_scale)


def render_frame(spec: SceneSpec, intr: CameraIntrinsics, pose: Pose):
    """Noise-free z-depth, shaded colour, class ids and grazing-cosine for one view."""
    v, u = np.mgrid[0: intr.height, 0: intr.width]
    o, d = pixels_to_rays(intr, pose, u.ravel().astype(float), v.ravel().astype(float))
    t, n, albedo, cls = raycast(spec, o, d)
    cos = np.abs((n * d).sum(-1))
    shade = albedo * (0.35 + 0.65 * cos[:, None])
    zaxis = pose.rotation[:, 2]
    z = t * (d @ zaxis)
    shape = (intr.height, intr.width)
    return z.reshape(shape), shade.reshape(shape + (3,)), cls.reshape(shape), cos.reshape(shape)


def add_depth_noise(z: np.ndarray, cos: np.ndarray, spec: SceneSpec, rng: np.random.Generator):
    """Multiplicative Gaussian noise, elliptical holes and grazing-angle dropout (0 = invalid)."""
    z = z * (1.0 + spec.noise_level * rng.normal(size=z.shape)) if spec.noise_level > 0 else z.copy()
    h, w = z.shape
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(spec.holes_per_frame):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(*spec.hole_radius_px, size=2)
        ang = rng.uniform(0, np.pi)
        dx, dy = xx - cx, yy - cy
        a = (dx * np.cos(ang) + dy * np.sin(ang)) / rx
        b = (-dx * np.sin(ang) + dy * np.cos(ang)) / ry
        z[a * a + b * b <= 1.0] = 0.0
    if spec.edge_dropout_cos > 0:
        z[cos < spec.edge_dropout_cos] = 0.0
    return z


def quantize_depth(z: np.ndarray, depth_scale: float) -> np.ndarray:
    q = np.round(np.clip(z, 0, None) * depth_scale)
    return np.clip(q, 0, 65535).astype(np.uint16)


def ground_truth_mesh(spec: SceneSpec) -> TriangleMesh:
    lo, hi = spec.bounds
    lo, hi = np.asarray(lo), np.asarray(hi)
    res = int(np.ceil(np.max(hi - lo) / spec.gt_resolution)) + 1
    vals, spacing = evaluate_lattice(lambda p: scene_sdf(spec, p), lo, hi, res)
    return marching_cubes(vals, lo, spacing)


def generate_synthetic(spec: SceneSpec, out_dir, rng: np.random.Generator | int = 0) -> Dataset:
    """Render the scene to the dataset layout, plus a culled ground-truth mesh."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    out = Path(out_dir)
    for sub in ("rgb", "depth", "semantic"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    intr = spec_intrinsics(spec)
    poses = ring_poses(spec)
    clean = []
    for i, pose in enumerate(poses):
        z, rgb, cls, cos = render_frame(spec, intr, pose)
        clean.append(z)
        noisy = add_depth_noise(z, cos, spec, rng)
        Image.fromarray(np.round(np.clip(rgb, 0, 1) * 255).astype(np.uint8)).save(out / "rgb" / f"{i:05d}.png")
        Image.fromarray(quantize_depth(noisy, spec.depth_scale)).save(out / "depth" / f"{i:05d}.png")
        Image.fromarray(class_colors(cls)).save(out / "semantic" / f"{i:05d}.png")
    write_intrinsics(out / "intrinsics.txt", intr)
    write_poses(out / "poses.txt", poses)
    lo, hi = spec.bounds
    (out / "bounds.txt").write_text(" ".join(repr(float(v)) for v in (*lo, *hi)) + "\n")
    gt = ground_truth_mesh(spec)
    gt = cull_to_frustums(gt, intr, poses, depths=clean, margin=0.03)
    write_mesh(gt, out / "gt_mesh.ply")
    return load_dataset(out)


# PLY ----------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1", "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2", "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_mesh(mesh: TriangleMesh, path) -> None:
    """Binary little-endian PLY with float32 positions/normals and int32 face lists."""
    nv, nf = len(mesh.vertices), len(mesh.faces)
    normals = mesh.normals if mesh.normals is not None else np.zeros((nv, 3))
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {nv}\n"
              "property float x\nproperty float y\nproperty float z\n"
              "property float nx\nproperty float ny\nproperty float nz\n"
              f"element face {nf}\n"
              "property list uchar int vertex_indices\nend_header\n")
    vert = np.concatenate([mesh.vertices, normals], 1).astype("<f4")
    face = np.empty(nf, dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    face["n"] = 3
    face["idx"] = mesh.faces
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(vert.tobytes())
        fh.write(face.tobytes())


def read_mesh(path) -> TriangleMesh:
    data = Path(path).read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise PlyError(f"{path}: not a PLY file (offset 0)")
    nl = data.index(b"\n", end)
    lines = data[:nl].decode("ascii", "replace").splitlines()
    fmt = None
    elements = []
    for ln, line in enumerate(lines, 1):
        tok = line.split()
        if not tok or tok[0] in ("ply", "comment", "obj_info", "end_header"):
            continue
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise PlyError(f"{path}: line {ln}: property before element")
            if tok[1] == "list":
                elements[-1]["props"].append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise PlyError(f"{path}: line {ln}: unknown type {tok[1]}")
                elements[-1]["props"].append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise PlyError(f"{path}: line {ln}: unexpected header line {line!r}")
    body = data[nl + 1:]
    if fmt == "ascii":
        parsed = _read_ply_ascii(path, body, elements, len(lines) + 1)
    elif fmt == "binary_little_endian":
        parsed = _read_ply_binary(path, body, elements, nl + 1)
    else:
        raise PlyError(f"{path}: unsupported format {fmt!r}")
    v = parsed.get("vertex", {})
    if not v:
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    verts = np.stack([v["x"], v["y"], v["z"]], -1).astype(np.float64)
    normals = np.stack([v["nx"], v["ny"], v["nz"]], -1).astype(np.float64) if "nx" in v else None
    faces = parsed.get("face", {}).get("vertex_indices", np.zeros((0, 3), dtype=np.int64))
    return TriangleMesh(verts, np.asarray(faces, dtype=np.int64).reshape(-1, 3), normals)


def _read_ply_ascii(path, body, elements, first_line):
    rows = body.decode("ascii", "replace").splitlines()
    pos = 0
    out = {}
    for el in elements:
        cols = {name: [] for name, _ in el["props"]}
        for _ in range(el["count"]):
            if pos >= len(rows):
                raise PlyError(f"{path}: line {first_line + pos}: unexpected end of data")
            tok = rows[pos].split()
            k = 0
            try:
                for name, typ in el["props"]:
                    if isinstance(typ, tuple):
                        n = int(tok[k])
                        if n != 3:
                            raise PlyError(f"{path}: line {first_line + pos}: only triangles are supported")
                        cols[name].append([int(t) for t in tok[k + 1: k + 1 + n]])
                        k += 1 + n
                    else:
                        cols[name].append(float(tok[k]))
                        k += 1
            except (IndexError, ValueError) as exc:
                raise PlyError(f"{path}: line {first_line + pos}: malformed row ({exc})") from exc
            pos += 1
        out[el["name"]] = {k: np.asarray(v) for k, v in cols.items()}
    return out


def _read_ply_binary(path, body, elements, base):
    out = {}
    off = 0
    for el in elements:
        props = el["props"]
        if any(isinstance(t, tuple) for _, t in props):
            if len(props) != 1:
                raise PlyError(f"{path}: offset {base + off}: mixed list elements are not supported")
            name, (_, ct, it) = props[0]
            dt = np.dtype([("n", "<" + ct), ("idx", "<" + it, (3,))])
            need = dt.itemsize * el["count"]
            if off + need > len(body):
                raise PlyError(f"{path}: offset {base + off}: truncated face data")
            arr = np.frombuffer(body, dtype=dt, count=el["count"], offset=off)
            if el["count"] and np.any(arr["n"] != 3):
                raise PlyError(f"{path}: offset {base + off}: only triangles are supported")
            out[el["name"]] = {name: arr["idx"].astype(np.int64)}
        else:
            dt = np.dtype([(n, "<" + t) for n, t in props])
            need = dt.itemsize * el["count"]
            if off + need > len(body):
                raise PlyError(f"{path}: offset {base + off}: truncated {el['name']} data")
            arr = np.frombuffer(body, dtype=dt, count=el["count"], offset=off)
            out[el["name"]] = {n: arr[n] for n, _ in props}
        off += need
    return out

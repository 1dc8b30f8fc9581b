"""Teacher micromodel: a fixed aggregate of bulk and cohesive material points.

The teacher localizes the macroscopic strain to many J2 points and cohesive
points, lets cohesive damage scale the bulk strains, and returns the
volume-weighted average of the bulk stresses. Cohesive tractions never enter
the average. It stands in for the finite-element micromodel as the source
of exact training and test data.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import atomic_write
from .constitutive import BulkProps, CzmProps
from .loadpaths import GpConfig, StrainPath, gp_samples
from .network import _max_jump, bulk_cell, cohesive_cell, softplus

DATASET_FORMAT = "prnn-dataset"
DATASET_VERSION = 1


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TeacherConfig:
    n_bulk_ref: int = 64
    n_coh_ref: int = 16
    rng_seed: int = 2024
    localization_spread: float = 0.25
    jump_scale: float = 0.25
    coupling: float = 2.0
    calibrate: bool = True
    calibration_paths: int = 32
    min_damaged_fraction: float = 0.25
    damage_level: float = 0.1
    min_path_fraction: float = 0.5
    gp: GpConfig = field(default_factory=GpConfig)
    bulk_props: BulkProps = field(default_factory=BulkProps)
    czm_props: CzmProps = field(default_factory=CzmProps)

    def __post_init__(self):
        if self.n_bulk_ref < 1 or self.n_coh_ref < 0:
            raise ValueError("teacher needs n_bulk_ref >= 1 and n_coh_ref >= 0")
        if self.jump_scale <= 0 or self.localization_spread < 0 or self.coupling < 0:
            raise ValueError("teacher scales must be non-negative (jump_scale > 0)")


@dataclass(frozen=True)
class Teacher:
    config: TeacherConfig
    volume_weights: np.ndarray   # (nb,)
    bulk_localization: np.ndarray   # (nb, 3, 3)
    cohesive_localization: np.ndarray   # (nc, 2, 3)
    coupling: np.ndarray   # (3 nb, nc), amplifier softplus(1 + coupling @ d)
    jump_scale: float

    @property
    def n_bulk(self):
        return self.volume_weights.shape[0]

    @property
    def n_cohesive(self):
        return self.cohesive_localization.shape[0]

    def hash(self):
        h = hashlib.sha256()
        h.update(json.dumps(_config_dict(self.config), sort_keys=True).encode())
        for a in (self.volume_weights, self.bulk_localization, self.cohesive_localization, self.coupling):
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        h.update(repr(float(self.jump_scale)).encode())
        return h.hexdigest()


def _config_dict(cfg: TeacherConfig):
    d = asdict(cfg)
    d["gp"]["mean"] = list(d["gp"]["mean"])
    return d


def _draw(config: TeacherConfig, jump_scale):
    rng = np.random.default_rng(config.rng_seed)
    nb, nc = config.n_bulk_ref, config.n_coh_ref
    w = rng.uniform(0.5, 1.5, nb)
    w = w / w.sum()
    L = np.eye(3)[None] + config.localization_spread * rng.standard_normal((nb, 3, 3))
    # discrete average-strain rule: the volume average of the undamaged
    # localization reproduces the macroscopic strain
    L = L - np.einsum("n,nij->ij", w, L)[None] + np.eye(3)[None]
    L = L / softplus(1.0)
    Lc = rng.standard_normal((nc, 2, 3)) / np.sqrt(3.0)
    # damage lowers the strain reaching the bulk points (loss of load transfer)
    Wd = -config.coupling * rng.uniform(0.0, 2.0, (3 * nb, nc)) / max(nc, 1)
    return w, L, Lc, Wd


def _calibration_stats(teacher, paths):
    fracs = []
    for p in paths:
        _, dmg = teacher_respond(p, teacher)
        final = dmg[-1] if len(dmg) else np.zeros(teacher.n_cohesive)
        fracs.append(np.mean(final > teacher.config.damage_level) if teacher.n_cohesive else 0.0)
    fracs = np.asarray(fracs)
    return float(np.mean(fracs >= teacher.config.min_damaged_fraction))


def teacher_build(config: TeacherConfig = TeacherConfig()) -> Teacher:
    """Draw the frozen teacher from its seed.

    With ``calibrate`` set, the cohesive localization scale is doubled from
    ``jump_scale`` until at least ``min_damaged_fraction`` of the cohesive
    points exceed ``damage_level`` on ``min_path_fraction`` of a fixed set of
    GP calibration paths.
    """
    w, L, Lc, Wd = _draw(config, config.jump_scale)
    scale = config.jump_scale
    teacher = Teacher(config, w, L, Lc * scale, Wd, scale)
    if not config.calibrate or config.n_coh_ref == 0:
        return teacher
    cal_gp = GpConfig(config.gp.variance, config.gp.length_scale, config.gp.n_steps,
                      config.gp.mean, rng_seed=10 ** 6 + config.rng_seed)
    paths = gp_samples(cal_gp, config.calibration_paths)
    for _ in range(8):
        teacher = Teacher(config, w, L, Lc * scale, Wd, scale)
        if _calibration_stats(teacher, paths) >= config.min_path_fraction:
            return teacher
        scale *= 2.0
    raise CalibrationError(
        f"no sufficient cohesive damage up to jump_scale={scale / 2:.3g} mm; raise jump_scale or the GP variance"
    )


def teacher_respond_batch(strains, teacher: Teacher):
    """Stress (P, T, 3) and damage (P, T, nc) for equally long paths (P, T, 3)."""
    strains = np.asarray(strains, dtype=float)
    P, T, _ = strains.shape
    nb, nc = teacher.n_bulk, teacher.n_cohesive
    bprops, cprops = teacher.config.bulk_props, teacher.config.czm_props
    bulk = np.zeros((P, nb, 4))
    coh = np.zeros((P, nc, 2))
    stress = np.empty((P, T, 3))
    damage = np.empty((P, T, nc))
    Lb = teacher.bulk_localization.reshape(3 * nb, 3)
    Lc = teacher.cohesive_localization.reshape(2 * nc, 3)
    for t in range(T):
        x = strains[:, t]
        jump = (x @ Lc.T).reshape(P, nc, 2)
        c_out = cohesive_cell(jump, coh[..., :1], cprops)
        d = c_out[..., 2]
        coh = np.stack([d, _max_jump(jump, coh[..., 1])], axis=-1)
        u = (softplus(1.0 + d @ teacher.coupling.T) * (x @ Lb.T)).reshape(P, nb, 3)
        b_out = bulk_cell(u, bulk, bprops)
        bulk = b_out[..., 3:]
        stress[:, t] = np.einsum("n,pni->pi", teacher.volume_weights, b_out[..., :3])
        damage[:, t] = d
    return stress, damage


def teacher_respond(path, teacher: Teacher):
    """Homogenized stress (T, 3) and cohesive damage (T, nc) along one path."""
    steps = path.steps if isinstance(path, StrainPath) else np.asarray(path, dtype=float)
    if steps.shape[0] == 0:
        return np.zeros((0, 3)), np.zeros((0, teacher.n_cohesive))
    s, d = teacher_respond_batch(steps[None], teacher)
    return s[0], d[0]


# --------------------------------------------------------------------------
# Datasets
# --------------------------------------------------------------------------

@dataclass
class DatasetEntry:
    id: int
    path: StrainPath
    stresses: np.ndarray
    damage: np.ndarray | None = None


@dataclass
class Dataset:
    entries: list = field(default_factory=list)
    bulk_props: dict = field(default_factory=dict)
    czm_props: dict = field(default_factory=dict)
    teacher_hash: str = ""

    def __len__(self):
        return len(self.entries)

    @property
    def strains(self):
        return [e.path.steps for e in self.entries]

    @property
    def stresses(self):
        return [e.stresses for e in self.entries]

    def subset(self, n):
        return Dataset(self.entries[:n], self.bulk_props, self.czm_props, self.teacher_hash)


def gen_dataset(paths, teacher: Teacher, start_id=0) -> Dataset:
    """Teacher response for every path, order preserved."""
    entries = []
    # group equal-length paths into one vectorized call
    by_len = {}
    for k, p in enumerate(paths):
        by_len.setdefault(len(p), []).append(k)
    results = {}
    for n, idx in by_len.items():
        if n == 0:
            for k in idx:
                results[k] = (np.zeros((0, 3)), np.zeros((0, teacher.n_cohesive)))
            continue
        s, d = teacher_respond_batch(np.stack([paths[k].steps for k in idx]), teacher)
        for j, k in enumerate(idx):
            results[k] = (s[j], d[j])
    for k, p in enumerate(paths):
        s, d = results[k]
        entries.append(DatasetEntry(start_id + k, p, s, d))
    return Dataset(entries, asdict(teacher.config.bulk_props), asdict(teacher.config.czm_props), teacher.hash())


def dataset_from_network(paths, params, start_id=0) -> Dataset:
    """Dataset whose targets are a network's own predictions (a student-shaped teacher)."""
    from .network import forward_batch

    by_len = {}
    for k, p in enumerate(paths):
        by_len.setdefault(len(p), []).append(k)
    results = {}
    for n, idx in by_len.items():
        if n == 0:
            for k in idx:
                results[k] = (np.zeros((0, 3)), np.zeros((0, params.n_cohesive)))
            continue
        y, rec = forward_batch(np.stack([paths[k].steps for k in idx]), params, record=True)
        for j, k in enumerate(idx):
            results[k] = (y[j], rec["damage"][j])
    entries = [DatasetEntry(start_id + k, p, *results[k]) for k, p in enumerate(paths)]
    return Dataset(entries, asdict(params.bulk_props), asdict(params.czm_props), "network")


def _fmt(a):
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        return "[" + ",".join(f"{v:.17g}" for v in a) + "]"
    return "[" + ",".join(_fmt(r) for r in a) + "]"


def dataset_lines(ds: Dataset):
    header = {
        "format": DATASET_FORMAT, "version": DATASET_VERSION, "n_paths": len(ds),
        "teacher_hash": ds.teacher_hash, "bulk_props": ds.bulk_props, "czm_props": ds.czm_props,
    }
    yield json.dumps(header, sort_keys=True)
    for e in ds.entries:
        parts = [
            f'"id":{int(e.id)}',
            f'"provenance":{json.dumps(e.path.provenance)}',
            f'"seed":{json.dumps(e.path.seed)}',
            f'"config":{json.dumps(_jsonable(e.path.config), sort_keys=True)}',
            f'"strains":{_fmt(e.path.steps)}',
            f'"stresses":{_fmt(e.stresses)}',
        ]
        if e.damage is not None and np.asarray(e.damage).size:
            parts.append(f'"damage":{_fmt(e.damage)}')
        yield "{" + ",".join(parts) + "}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def dumps_dataset(ds: Dataset) -> str:
    return "\n".join(dataset_lines(ds)) + "\n"


def loads_dataset(text: str) -> Dataset:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("dataset file is empty (missing header)")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT or header.get("version") != DATASET_VERSION:
        raise ValueError(f"unsupported dataset header {header}")
    entries = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        steps = np.array(rec["strains"], dtype=float).reshape(-1, 3)
        path = StrainPath(steps, rec["provenance"], rec.get("seed"), rec.get("config", {}))
        dmg = np.array(rec["damage"], dtype=float) if "damage" in rec else None
        entries.append(DatasetEntry(rec["id"], path, np.array(rec["stresses"], dtype=float).reshape(-1, 3), dmg))
    if len(entries) != header.get("n_paths", len(entries)):
        raise ValueError("dataset path count does not match its header")
    return Dataset(entries, header.get("bulk_props", {}), header.get("czm_props", {}), header.get("teacher_hash", ""))


def save_dataset(ds: Dataset, path):
    """Write ``ds`` as JSON lines, atomically."""
    atomic_write(path, dumps_dataset(ds))


def load_dataset(path) -> Dataset:
    with open(path) as fh:
        return loads_dataset(fh.read())

"""Synthetic radar scenes: VRU actors and clutter rendered under a sensor resolution profile."""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import poisson

from .core import NO_INSTANCE, ClassLabel, Sequence

# detections per resolution cell covered by an actor; puts profile-B
# pedestrians at roughly 10 detections per scan at 20 m
CELL_RATE = 3.8

MICRO_DOPPLER = {ClassLabel.PEDESTRIAN: 1.2, ClassLabel.BICYCLE: 0.8}
BODY = {ClassLabel.PEDESTRIAN: (0.5, 0.5), ClassLabel.BICYCLE: (1.8, 0.6)}  # length, width (m)
REFLECTIVITY_DB = {ClassLabel.PEDESTRIAN: 0.0, ClassLabel.BICYCLE: 3.0}
AMP_SIGMA_DB = 4.0
CLUTTER_AMP_DB = (-2.0, 6.0)  # mean, std
CLUTTER_VR_SIGMA = 0.15


@dataclass(frozen=True)
class SensorProfile:
    id: str
    r_band: tuple[float, float]
    phi_band: tuple[float, float]  # degrees
    vr_band: tuple[float, float]
    delta_t: float
    delta_r: float
    delta_phi: tuple[float, float]  # degrees at boresight and at the band edge
    delta_vr: float

    def __post_init__(self) -> None:
        if min(self.delta_t, self.delta_r, self.delta_vr, *self.delta_phi) <= 0:
            raise ValueError("resolutions must be positive")
        for lo, hi in (self.r_band, self.phi_band, self.vr_band):
            if not lo < hi:
                raise ValueError("bands must be non-degenerate")

    def delta_phi_rad(self, phi):
        """Angular resolution at azimuth ``phi`` (rad), linear from boresight to edge."""
        edge = math.radians(max(abs(self.phi_band[0]), abs(self.phi_band[1])))
        frac = np.clip(np.abs(phi) / edge, 0.0, 1.0)
        return np.radians(self.delta_phi[0] + (self.delta_phi[1] - self.delta_phi[0]) * frac)

    def angle_grid(self) -> np.ndarray:
        """Azimuth bins: symmetric about boresight, each step one local resolution wide."""
        lo, hi = np.radians(self.phi_band)
        pos = [0.0]
        while True:
            nxt = pos[-1] + float(self.delta_phi_rad(pos[-1]))
            if nxt > max(-lo, hi) + 1e-12:
                break
            pos.append(nxt)
        grid = np.array(sorted({-p for p in pos} | set(pos)))
        return grid[(grid >= lo - 1e-12) & (grid <= hi + 1e-12)]

    def in_view(self, r, phi) -> np.ndarray:
        lo, hi = np.radians(self.phi_band)
        return (r >= self.r_band[0]) & (r <= self.r_band[1]) & (phi >= lo) & (phi <= hi)

    def fov_area(self) -> float:
        r0, r1 = self.r_band
        return 0.5 * math.radians(self.phi_band[1] - self.phi_band[0]) * (r1 * r1 - r0 * r0)


PROFILES = {
    "A": SensorProfile(
        "A", (0.25, 100.0), (-60.0, 60.0), (-111.0, 222.0), 0.06, 0.42, (3.2, 12.3), 0.43
    ),
    "B": SensorProfile(
        "B", (0.15, 153.0), (-70.0, 70.0), (-44.3, 44.3), 0.1, 0.15, (1.8, 1.8), 0.087
    ),
}


class _Quantizer:
    """Snaps values onto a profile's (r, phi, vr) grid, clipped into the bands."""

    def __init__(self, profile: SensorProfile):
        self.p = profile
        self.phi_grid = profile.angle_grid()
        dr, dv = profile.delta_r, profile.delta_vr
        self.r_idx = (math.ceil(profile.r_band[0] / dr - 1e-9), math.floor(profile.r_band[1] / dr + 1e-9))
        self.v_idx = (math.ceil(profile.vr_band[0] / dv - 1e-9), math.floor(profile.vr_band[1] / dv + 1e-9))
        self.clipped = 0

    def indices(self, r, phi, vr):
        ri = np.rint(np.asarray(r) / self.p.delta_r).astype(np.int64)
        vi = np.rint(np.asarray(vr) / self.p.delta_vr).astype(np.int64)
        g = self.phi_grid
        k = np.clip(np.searchsorted(g, phi), 1, len(g) - 1)
        pi = np.where(np.abs(phi - g[k - 1]) <= np.abs(g[k] - phi), k - 1, k)
        out_of_band = (
            (ri < self.r_idx[0]) | (ri > self.r_idx[1])
            | (vi < self.v_idx[0]) | (vi > self.v_idx[1])
            | (np.asarray(phi) < g[0]) | (np.asarray(phi) > g[-1])
        )
        self.clipped += int(out_of_band.sum())
        ri = np.clip(ri, *self.r_idx)
        vi = np.clip(vi, *self.v_idx)
        return ri, pi, vi

    def values(self, ri, pi, vi):
        return ri * self.p.delta_r, self.phi_grid[pi], vi * self.p.delta_vr


@dataclass(frozen=True)
class Actor:
    cls: ClassLabel
    waypoints: tuple[tuple[float, float, float], ...]  # (t, x, y), t increasing
    length: float
    width: float
    reflectivity_db: float = 0.0

    def __post_init__(self) -> None:
        ts = [w[0] for w in self.waypoints]
        if len(ts) < 2 or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("an actor needs >= 2 waypoints with increasing times")

    @property
    def active(self) -> tuple[float, float]:
        return self.waypoints[0][0], self.waypoints[-1][0]

    def state(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """Position and velocity at ``t`` (piecewise-linear trajectory)."""
        wp = np.asarray(self.waypoints)
        k = int(np.clip(np.searchsorted(wp[:, 0], t, side="right") - 1, 0, len(wp) - 2))
        t0, t1 = wp[k, 0], wp[k + 1, 0]
        vel = (wp[k + 1, 1:] - wp[k, 1:]) / (t1 - t0)
        return wp[k, 1:] + vel * (t - t0), vel

    def to_dict(self) -> dict:
        d = asdict(self)
        d["cls"] = self.cls.code
        d["waypoints"] = [list(w) for w in self.waypoints]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Actor":
        return cls(
            ClassLabel.from_code(d["cls"]),
            tuple(tuple(w) for w in d["waypoints"]),
            d["length"],
            d["width"],
            d.get("reflectivity_db", 0.0),
        )


@dataclass(frozen=True)
class ClutterPatch:
    """Spatially concentrated background (vegetation, flags) with its own Doppler spread."""

    x: float
    y: float
    radius: float
    rate: float  # expected points per scan
    vr_mean: float
    vr_sigma: float


@dataclass(frozen=True)
class SceneScript:
    id: str
    duration: float
    actors: tuple[Actor, ...]
    clutter_density: float  # points per m^2 per scan
    seed: int
    patches: tuple[ClutterPatch, ...] = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "duration": self.duration,
            "clutter_density": self.clutter_density,
            "seed": self.seed,
            "actors": [a.to_dict() for a in self.actors],
            "patches": [asdict(p) for p in self.patches],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SceneScript":
        return cls(
            d["id"],
            d["duration"],
            tuple(Actor.from_dict(a) for a in d["actors"]),
            d["clutter_density"],
            d["seed"],
            tuple(ClutterPatch(**p) for p in d.get("patches", [])),
        )


@dataclass
class GenerationStats:
    clipped: int = 0
    per_actor: dict[int, int] = field(default_factory=dict)
    clutter: int = 0


def effective_spread(spread: float, delta_vr: float) -> float:
    """Micro-Doppler half-width, shrunk when the Doppler cell is coarser than the spread."""
    return spread * min(1.0, spread / delta_vr)


def _extents(length: float, width: float, heading: np.ndarray, radial: np.ndarray) -> tuple[float, float]:
    c = abs(float(heading @ radial))
    s = math.sqrt(max(0.0, 1.0 - c * c))
    return length * s + width * c, length * c + width * s  # cross-range, down-range


def detection_rate(r: float, phi: float, cross: float, down: float, profile: SensorProfile) -> float:
    """Poisson mean of detections per scan for a body of the given extents."""
    return CELL_RATE * (cross / (r * float(profile.delta_phi_rad(phi)))) * (down / profile.delta_r)


def cell_cap(r: float, phi: float, cross: float, down: float, spread: float, profile: SensorProfile) -> int:
    """Number of distinct (range, angle, Doppler) cells the body can occupy."""
    n_phi = max(1, math.ceil(cross / (r * float(profile.delta_phi_rad(phi))) - 1e-9))
    n_r = max(1, math.ceil(down / profile.delta_r - 1e-9))
    n_v = max(1, math.ceil(2 * effective_spread(spread, profile.delta_vr) / profile.delta_vr - 1e-9))
    return n_phi * n_r * n_v


def expected_detections(
    r: float, phi: float, cross: float, down: float, profile: SensorProfile, spread: float = 1.2
) -> float:
    """E[min(max(1, Poisson(lambda)), cap)] in closed form."""
    lam = detection_rate(r, phi, cross, down, profile)
    cap = cell_cap(r, phi, cross, down, spread, profile)
    if cap <= 1:
        return 1.0
    # draws of 0 or 1 give one detection, draws >= cap give cap
    low = poisson.cdf(1, lam)
    mid = np.arange(2, cap)
    high = cap * poisson.sf(cap - 1, lam)
    return float(low + (mid * poisson.pmf(mid, lam)).sum() + high)


def _profile_rng(seed: int, profile: SensorProfile) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(profile.id.encode())])


def _actor_scan(actor, t, q, profile, rng):
    pos, vel = actor.state(t)
    r_c = float(np.hypot(*pos))
    phi_c = math.atan2(pos[1], pos[0])
    if not profile.in_view(r_c, phi_c):
        return None
    radial = pos / r_c
    speed = float(np.hypot(*vel))
    heading = vel / speed if speed > 1e-9 else radial[::-1] * np.array([-1.0, 1.0])
    cross, down = _extents(actor.length, actor.width, heading, radial)
    spread = MICRO_DOPPLER[actor.cls]
    spread_eff = effective_spread(spread, profile.delta_vr)
    lam = detection_rate(r_c, phi_c, cross, down, profile)
    cap = cell_cap(r_c, phi_c, cross, down, spread, profile)
    k = min(max(1, int(rng.poisson(lam))), cap)

    side = np.array([-heading[1], heading[0]])
    cells: dict[tuple[int, int, int], float] = {}
    for _ in range(50):
        m = 2 * (k - len(cells))
        u = rng.uniform(-0.5, 0.5, (m, 2)) * np.array([actor.length, actor.width])
        pts = pos + u[:, :1] * heading + u[:, 1:] * side
        r = np.hypot(pts[:, 0], pts[:, 1])
        phi = np.arctan2(pts[:, 1], pts[:, 0])
        los = pts / r[:, None]
        vr = los @ vel + rng.uniform(-spread_eff, spread_eff, m)
        for key in zip(*q.indices(r, phi, vr)):
            if len(cells) == k:
                break
            cells.setdefault(tuple(int(v) for v in key), 0.0)
        if len(cells) == k:
            break
    idx = np.array(sorted(cells), dtype=np.int64).reshape(-1, 3)
    return idx


def generate(script: SceneScript, profile: SensorProfile, stats: GenerationStats | None = None) -> Sequence:
    """Render ``script`` as seen by ``profile``; deterministic in (script, profile)."""
    rng = _profile_rng(script.seed, profile)
    q = _Quantizer(profile)
    stats = stats if stats is not None else GenerationStats()
    area = profile.fov_area()
    lo, hi = np.radians(profile.phi_band)
    r0, r1 = profile.r_band
    cols = {k: [] for k in ("t", "ri", "pi", "vi", "amp", "inst", "cls")}

    def emit(t, idx, amp, inst, cls):
        n = len(idx)
        cols["t"].append(np.full(n, t))
        cols["ri"].append(idx[:, 0])
        cols["pi"].append(idx[:, 1])
        cols["vi"].append(idx[:, 2])
        cols["amp"].append(amp)
        cols["inst"].append(np.full(n, inst))
        cols["cls"].append(np.full(n, int(cls)))

    n_scans = int(math.floor(script.duration / profile.delta_t + 1e-9)) + 1
    for s in range(n_scans):
        t = round(s * profile.delta_t, 9)
        for a_id, actor in enumerate(script.actors):
            t_on, t_off = actor.active
            if not t_on <= t <= t_off:
                continue
            idx = _actor_scan(actor, t, q, profile, rng)
            if idx is None:
                continue
            amp = actor.reflectivity_db + rng.normal(0.0, AMP_SIGMA_DB, len(idx))
            emit(t, idx, amp, a_id, actor.cls)
            stats.per_actor[a_id] = stats.per_actor.get(a_id, 0) + len(idx)

        n_cl = int(rng.poisson(script.clutter_density * area))
        r = np.sqrt(rng.uniform(r0 * r0, r1 * r1, n_cl))
        phi = rng.uniform(lo, hi, n_cl)
        vr = rng.normal(0.0, CLUTTER_VR_SIGMA, n_cl)
        for p in script.patches:
            m = int(rng.poisson(p.rate))
            rad = p.radius * np.sqrt(rng.uniform(0, 1, m))
            ang = rng.uniform(0, 2 * math.pi, m)
            px, py = p.x + rad * np.cos(ang), p.y + rad * np.sin(ang)
            r = np.concatenate([r, np.hypot(px, py)])
            phi = np.concatenate([phi, np.arctan2(py, px)])
            vr = np.concatenate([vr, rng.normal(p.vr_mean, p.vr_sigma, m)])
        keep = profile.in_view(r, phi)
        if keep.any():
            idx = np.column_stack(q.indices(r[keep], phi[keep], vr[keep]))
            amp = rng.normal(*CLUTTER_AMP_DB, len(idx))
            emit(t, idx, amp, NO_INSTANCE, ClassLabel.STATIC)
            stats.clutter += len(idx)

    stats.clipped = q.clipped
    if cols["t"]:
        cat = {k: np.concatenate(v) for k, v in cols.items()}
    else:
        cat = {k: np.zeros(0) for k in cols}
    r, phi, vr = q.values(cat["ri"].astype(np.int64), cat["pi"].astype(np.int64), cat["vi"].astype(np.int64))
    order = np.argsort(cat["t"], kind="stable")
    return Sequence(
        id=f"{script.id}-{profile.id}",
        t=cat["t"][order],
        r=r[order],
        phi=phi[order],
        vr=vr[order],
        amp=np.round(cat["amp"][order], 3),
        sensor_id=np.zeros(len(order), dtype=int),
        gt_instance=cat["inst"][order].astype(int),
        gt_class=cat["cls"][order].astype(int),
        sensor_profile_id=profile.id,
        duration=script.duration,
    )


# ---------------------------------------------------------------- benchmark

N_SCRIPTS = 24
DURATION = 7.0
SAFE_R = (5.0, 80.0)
SAFE_PHI = math.radians(50.0)
MOTIONS = ("crossing", "radial", "diagonal")
CLUTTER_LEVELS = {"low": 0.0015, "high": 0.004}
SPEED = {ClassLabel.PEDESTRIAN: (0.9, 1.8), ClassLabel.BICYCLE: (3.0, 6.0)}


def _inside(p: np.ndarray) -> bool:
    r = float(np.hypot(*p))
    return SAFE_R[0] <= r <= SAFE_R[1] and abs(math.atan2(p[1], p[0])) <= SAFE_PHI


def _path_inside(start, v, duration) -> bool:
    return all(_inside(start + v * f * duration) for f in np.linspace(0, 1, 9))


def _heading(rng, motion: str, phi: float) -> float:
    if motion == "crossing":
        rel = math.pi / 2 + rng.uniform(-0.35, 0.35)
    elif motion == "radial":
        rel = rng.uniform(-0.35, 0.35)
    else:
        rel = math.pi / 4 + rng.uniform(-0.25, 0.25)
    rel *= rng.choice([-1.0, 1.0])
    if rng.random() < 0.5:
        rel += math.pi
    return phi + rel


def _straight_path(rng, motion, speed, duration, through=None, at=0.0):
    """Start point and velocity of a straight path inside the safe region.

    With ``through`` the path passes that point ``at`` seconds after its start.
    """
    for _ in range(1000):
        if through is None:
            r = rng.uniform(6.0, 75.0)
            phi = rng.uniform(-0.75, 0.75)
            anchor = r * np.array([math.cos(phi), math.sin(phi)])
        else:
            anchor = np.asarray(through, dtype=float)
            phi = math.atan2(anchor[1], anchor[0])
        h = _heading(rng, motion, phi)
        v = speed * np.array([math.cos(h), math.sin(h)])
        start = anchor - v * at
        if _path_inside(start, v, duration):
            return start, v
    return None


def _make_actor(cls: ClassLabel, start, v, t_on, t_off, rng) -> Actor:
    length, width = BODY[cls]
    end = start + v * (t_off - t_on)
    refl = REFLECTIVITY_DB[cls] + rng.normal(0.0, 1.0)
    return Actor(
        cls,
        ((t_on, float(start[0]), float(start[1])), (t_off, float(end[0]), float(end[1]))),
        length,
        width,
        float(round(refl, 3)),
    )


def _script_actors(rng, s: int, duration: float) -> list[Actor]:
    motion = MOTIONS[s % len(MOTIONS)]
    n_ped = 1 + (s % 3)
    n_bike = 1 + ((s + 1) % 3)
    if s % 4 == 3:
        n_ped = max(1, n_ped - 1)
    actors: list[Actor] = []
    margin = min(1.5, duration / 4)  # latest appearance / earliest exit
    k = 0
    while k < n_ped:
        t_on = float(rng.uniform(0.0, margin))
        t_off = float(duration - rng.uniform(0.0, margin))
        m = motion if rng.random() < 0.7 else str(rng.choice(MOTIONS))
        path = _straight_path(rng, m, float(rng.uniform(*SPEED[ClassLabel.PEDESTRIAN])), t_off - t_on)
        if path is None:
            continue
        start, v = path
        actors.append(_make_actor(ClassLabel.PEDESTRIAN, start, v, t_on, t_off, rng))
        k += 1
        # pedestrians often walk side by side
        if k < n_ped and rng.random() < 0.6:
            side = np.array([-v[1], v[0]]) / np.hypot(*v)
            partner = start + side * rng.uniform(0.8, 1.6)
            if _path_inside(partner, v, t_off - t_on):
                actors.append(_make_actor(ClassLabel.PEDESTRIAN, partner, v, t_on, t_off, rng))
                k += 1
    peds = list(actors)
    k = 0
    while k < n_bike:
        t_on = float(rng.uniform(0.0, margin))
        t_off = float(duration - rng.uniform(0.0, margin))
        m = motion if rng.random() < 0.7 else str(rng.choice(MOTIONS))
        speed = float(rng.uniform(*SPEED[ClassLabel.BICYCLE]))
        path = None
        if rng.random() < 0.6:
            # pass close by a pedestrian
            ped = peds[int(rng.integers(len(peds)))]
            p_on, p_off = ped.active
            lo, hi = max(t_on, p_on) + 0.5, min(t_off, p_off) - 0.5
            if lo < hi:
                t_meet = float(rng.uniform(lo, hi))
                pos, _ = ped.state(t_meet)
                ang = rng.uniform(0, 2 * math.pi)
                meet = pos + rng.uniform(1.0, 2.5) * np.array([math.cos(ang), math.sin(ang)])
                path = _straight_path(rng, m, speed, t_off - t_on, through=meet, at=t_meet - t_on)
        if path is None:
            path = _straight_path(rng, m, speed, t_off - t_on)
        if path is None:
            continue
        actors.append(_make_actor(ClassLabel.BICYCLE, *path, t_on, t_off, rng))
        k += 1
    return actors


def _script_patches(rng, actors: list[Actor]) -> list[ClutterPatch]:
    patches = []
    for _ in range(int(rng.integers(1, 3))):
        if rng.random() < 0.5:
            # beside an actor's path (parked bicycles, poles, vegetation)
            a = actors[int(rng.integers(len(actors)))]
            pos, v = a.state(0.5 * sum(a.active))
            side = np.array([-v[1], v[0]]) / max(np.hypot(*v), 1e-9)
            centre = pos + side * rng.choice([-1.0, 1.0]) * rng.uniform(1.5, 3.0)
        else:
            r = rng.uniform(8, 70)
            phi = rng.uniform(-0.8, 0.8)
            centre = r * np.array([math.cos(phi), math.sin(phi)])
        patches.append(
            ClutterPatch(
                float(centre[0]),
                float(centre[1]),
                float(rng.uniform(0.4, 1.0)),
                float(rng.uniform(0.8, 2.0)),
                float(rng.uniform(-0.6, 0.6)),
                float(rng.uniform(0.2, 0.5)),
            )
        )
    return patches


def benchmark_scripts(seed: int = 0, n_scripts: int = N_SCRIPTS, duration: float = DURATION) -> list[SceneScript]:
    """Fixed suite of scene scripts covering counts, ranges, motions, clutter
    levels and close encounters between actors and with clutter."""
    rng = np.random.default_rng(seed)
    scripts = []
    for s in range(n_scripts):
        level = "low" if (s // len(MOTIONS)) % 2 == 0 else "high"
        actors = _script_actors(rng, s, duration)
        patches = _script_patches(rng, actors)
        scripts.append(
            SceneScript(
                id=f"s{s:02d}",
                duration=duration,
                actors=tuple(actors),
                clutter_density=CLUTTER_LEVELS[level],
                seed=int(rng.integers(0, 2**31 - 1)),
                patches=tuple(patches),
            )
        )
    return scripts


def make_benchmark(seed: int = 0, n_scripts: int = N_SCRIPTS) -> list[tuple[Sequence, Sequence]]:
    """Every benchmark script rendered under profile A and profile B."""
    return [
        (generate(s, PROFILES["A"]), generate(s, PROFILES["B"]))
        for s in benchmark_scripts(seed, n_scripts)
    ]


def save_manifest(path: str | Path, scripts: list[SceneScript], seed: int) -> None:
    data = {"seed": seed, "profiles": {k: asdict(v) for k, v in PROFILES.items()}, "scripts": [s.to_dict() for s in scripts]}
    Path(path).write_text(json.dumps(data, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_manifest(path: str | Path) -> list[SceneScript]:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return [SceneScript.from_dict(d) for d in data["scripts"]]


__all__ = [
    "Actor",
    "CELL_RATE",
    "ClutterPatch",
    "GenerationStats",
    "PROFILES",
    "SceneScript",
    "SensorProfile",
    "benchmark_scripts",
    "cell_cap",
    "detection_rate",
    "effective_spread",
    "expected_detections",
    "generate",
    "load_manifest",
    "make_benchmark",
    "save_manifest",
]

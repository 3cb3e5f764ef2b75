"""Differentiable Pure Pursuit path tracking.

The state update follows the textbook kinematic system

    x' = x + cos(h) v dt      y' = y + sin(h) v dt
    v' = max(v + a dt, 0)     h' = h + v dt kappa

in an internal frame whose first axis is the actor's forward (+y) axis and
whose second axis is its lateral (+x) axis. Heading measured from the first
axis toward the second is then exactly the compass heading used by
:mod:`ptnet.geometry`, so no angle conversion is needed at the boundary.

Rollouts are batched: ``B`` paths with ``B`` acceleration profiles advance in
lock step, one vectorized step at a time. The goal-segment search is a
discrete numpy choice; the goal point inside the chosen segment, and
everything downstream of it, is recorded on the tape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .geometry import Polyline, Trajectory, Vec2

ACCEL_LIMIT = 8.0
TANGENT_EPS = 1e-12


class NoIntersection(ValueError):
    def __init__(self, min_distance: float):
        super().__init__(f"lookahead circle misses the path ahead (closest approach {min_distance:.3f} m)")
        self.min_distance = min_distance


class CertificateError(AssertionError):
    pass


@dataclass(frozen=True)
class PursuitConfig:
    lookahead: float = 10.0
    max_curvature: float = 0.3
    dt: float = 0.1
    horizon: int = 60

    def __post_init__(self):
        if not (self.lookahead > 0 and self.max_curvature > 0 and self.dt > 0 and self.horizon >= 1):
            raise ValueError(f"invalid pursuit config {self}")


@dataclass(frozen=True)
class TrackingState:
    position: Vec2
    speed: float
    heading: float

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")


@dataclass(frozen=True)
class AccelProfile:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if np.any(np.abs(v) > ACCEL_LIMIT):
            raise ValueError(f"acceleration outside [-{ACCEL_LIMIT}, {ACCEL_LIMIT}] m/s^2")
        object.__setattr__(self, "values", v)


def curvature_from_goal(goal, L: float, Mc: float) -> float:
    """Signed clamped Pure Pursuit curvature; positive turns toward +x."""
    x_g = float(goal[0])
    return float(np.clip(2.0 * x_g / L ** 2, -Mc, Mc))


class PathBatch:
    """Paths padded to a common segment count, stored in internal (fwd, lat) axes."""

    def __init__(self, paths: Sequence[Polyline]):
        self.paths = list(paths)
        B = len(self.paths)
        S = max(len(p) for p in self.paths) - 1
        A = np.zeros((B, S, 2))
        D = np.zeros((B, S, 2))
        D[..., 0] = 1.0
        cum = np.zeros((B, S))
        seg_len = np.ones((B, S))
        valid = np.zeros((B, S), dtype=bool)
        for i, p in enumerate(self.paths):
            pts = p.points[:, ::-1]
            n = len(pts) - 1
            A[i, :n] = pts[:-1]
            D[i, :n] = pts[1:] - pts[:-1]
            cum[i, :n] = p.cumulative_arclength[:-1]
            seg_len[i, :n] = np.diff(p.cumulative_arclength)
            valid[i, :n] = True
        self.A, self.D, self.cum, self.seg_len, self.valid = A, D, cum, seg_len, valid
        self.a = np.where(valid, np.sum(D * D, axis=-1), 1.0)

    def __len__(self) -> int:
        return len(self.paths)

    def select(self, idx) -> "PathBatch":
        out = PathBatch.__new__(PathBatch)
        out.paths = [self.paths[i] for i in idx]
        for name in ("A", "D", "cum", "seg_len", "valid", "a"):
            setattr(out, name, getattr(self, name)[idx])
        return out

    def search(self, P: np.ndarray, L: float):
        """Locate the farthest-along circle/path intersection ahead of ``P``.

        Returns ``(segment, root_sign, contact, min_distance)``; ``P`` is (B, 2)
        in internal axes.
        """
        A, D, a, valid = self.A, self.D, self.a, self.valid
        Wx = A[..., 0] - P[:, 0:1]
        Wy = A[..., 1] - P[:, 1:2]
        Dx, Dy = D[..., 0], D[..., 1]
        b = 2.0 * (Dx * Wx + Dy * Wy)
        c = Wx * Wx + Wy * Wy - L * L
        disc = b * b - 4.0 * a * c
        sq = np.sqrt(np.maximum(disc, 0.0))
        ok = valid & (disc > TANGENT_EPS)

        t = np.clip(-(Dx * Wx + Dy * Wy) / a, 0.0, 1.0)
        dist2 = np.where(valid, (Wx + t * Dx) ** 2 + (Wy + t * Dy) ** 2, np.inf)
        k = np.argmin(dist2, axis=1)
        rows = np.arange(len(P))
        s_proj = self.cum[rows, k] + t[rows, k] * self.seg_len[rows, k]
        min_dist = np.sqrt(dist2[rows, k])

        best = np.full(len(P), -np.inf)
        seg = np.zeros(len(P), dtype=int)
        sign = np.ones(len(P))
        for r in (1.0, -1.0):
            u = (-b + r * sq) / (2.0 * a)
            s = self.cum + u * self.seg_len
            cand = ok & (u >= 0.0) & (u <= 1.0) & (s > s_proj[:, None])
            s = np.where(cand, s, -np.inf)
            j = np.argmax(s, axis=1)
            sj = s[rows, j]
            better = sj > best
            best = np.where(better, sj, best)
            seg = np.where(better, j, seg)
            sign = np.where(better, r, sign)
        return seg, sign, np.isfinite(best), min_dist


class _NumpyOps:
    sin = staticmethod(np.sin)
    cos = staticmethod(np.cos)
    sqrt = staticmethod(np.sqrt)
    square = staticmethod(np.square)

    @staticmethod
    def clamp(x, lo, hi):
        return np.clip(x, lo, hi)

    @staticmethod
    def floor0(x):
        return np.maximum(x, 0.0)

    @staticmethod
    def value(x):
        return x


def _lift(tape_fn, np_fn):
    def fn(x, *args):
        return tape_fn(x, *args) if isinstance(x, ad.Var) else np_fn(x, *args)
    return staticmethod(fn)


class _TapeOps:
    sin = _lift(ad.sin, np.sin)
    cos = _lift(ad.cos, np.cos)
    sqrt = _lift(ad.sqrt, np.sqrt)
    square = _lift(ad.square, np.square)
    clamp = _lift(ad.clamp, np.clip)
    floor0 = _lift(lambda x: ad.max_const(x, 0.0), lambda x: np.maximum(x, 0.0))

    @staticmethod
    def value(x):
        return x.value if isinstance(x, ad.Var) else x


@dataclass
class RolloutResult:
    """Per-step states of a batched rollout (internal axes; Var or ndarray)."""

    fwd: list
    lat: list
    heading: list
    speed: list
    curvature: list
    contact: np.ndarray  # (B, T) whether the lookahead circle met the path
    dt: float

    def stacked(self):
        """(B, T) forward and lateral coordinates, as Vars when on a tape."""
        if any(isinstance(x, ad.Var) for x in self.fwd):
            return ad.stack(self.fwd, axis=1), ad.stack(self.lat, axis=1)
        return np.stack(self.fwd, axis=1), np.stack(self.lat, axis=1)

    def _values(self, seq):
        return np.stack([s.value if isinstance(s, ad.Var) else s for s in seq], axis=1)

    def positions(self) -> np.ndarray:
        """(B, T, 2) positions in the path frame's (x, y) axes."""
        return np.stack([self._values(self.lat), self._values(self.fwd)], axis=-1)

    def trajectories(self) -> list[Trajectory]:
        pos = self.positions()
        hd = self._values(self.heading)
        sp = self._values(self.speed)
        return [Trajectory(self.dt, pos[i], hd[i], sp[i]) for i in range(len(pos))]


def rollout_batch(paths: PathBatch, accel, config: PursuitConfig,
                  speed0, position0=None, heading0=None) -> RolloutResult:
    """Run ``config.horizon`` Pure Pursuit steps for every path in the batch.

    ``accel`` is a (B, T) array or Var; ``speed0`` a (B,) array or Var. Initial
    positions (B, 2, frame x/y) and headings default to the frame origin
    facing +y. When any input is a Var every step is recorded on its tape.
    """
    B, T = len(paths), config.horizon
    on_tape = isinstance(accel, ad.Var) or isinstance(speed0, ad.Var)
    F = _TapeOps if on_tape else _NumpyOps
    L, Mc, dt = config.lookahead, config.max_curvature, config.dt
    if np.shape(F.value(accel)) != (B, T):
        raise ad.ShapeError(f"accel must be ({B}, {T}), got {np.shape(F.value(accel))}")

    pos0 = np.zeros((B, 2)) if position0 is None else np.asarray(position0, dtype=float)
    X = pos0[:, 1].copy()
    Y = pos0[:, 0].copy()
    h = np.zeros(B) if heading0 is None else np.asarray(heading0, dtype=float).copy()
    v = speed0 if isinstance(speed0, ad.Var) else np.asarray(speed0, dtype=float)
    if on_tape:
        a_cols = [ad.column(accel, t) for t in range(T)] if isinstance(accel, ad.Var) \
            else [accel[:, t] for t in range(T)]
    else:
        a_cols = [np.asarray(accel)[:, t] for t in range(T)]

    out = RolloutResult([], [], [], [], [], np.zeros((B, T), dtype=bool), dt)
    rows = np.arange(B)
    for t in range(T):
        Xv, Yv = F.value(X), F.value(Y)
        seg, sign, contact, _ = paths.search(np.stack([Xv, Yv], axis=1), L)
        Ax = np.where(contact, paths.A[rows, seg, 0], Xv)
        Ay = np.where(contact, paths.A[rows, seg, 1], Yv)
        Dx = np.where(contact, paths.D[rows, seg, 0], 1.0)
        Dy = np.where(contact, paths.D[rows, seg, 1], 0.0)
        aa = np.where(contact, paths.a[rows, seg], 1.0)
        sign = np.where(contact, sign, 1.0)

        wx = Ax - X
        wy = Ay - Y
        bq = 2.0 * (Dx * wx + Dy * wy)
        cq = F.square(wx) + F.square(wy) - L * L
        disc = F.square(bq) - (4.0 * aa) * cq
        u = (sign * F.sqrt(disc) - bq) * (1.0 / (2.0 * aa))
        rel_f = wx + u * Dx
        rel_l = wy + u * Dy
        sh, ch = F.sin(h), F.cos(h)
        x_g = rel_l * ch - rel_f * sh
        kappa = F.clamp(x_g * (2.0 / (L * L)), -Mc, Mc) * contact.astype(float)

        vdt = v * dt
        X = X + ch * vdt
        Y = Y + sh * vdt
        h = h + vdt * kappa
        v = F.floor0(v + a_cols[t] * dt)

        out.fwd.append(X)
        out.lat.append(Y)
        out.heading.append(h)
        out.speed.append(v)
        out.curvature.append(kappa)
        out.contact[:, t] = contact
    return out


def find_goal_point(state: TrackingState, path: Polyline, L: float) -> Vec2:
    """Goal point ahead of ``state`` on ``path`` (in the path's frame)."""
    batch = PathBatch([path])
    P = np.array([[state.position.y, state.position.x]])
    seg, sign, contact, min_dist = batch.search(P, L)
    if not contact[0]:
        raise NoIntersection(float(min_dist[0]))
    s, r = int(seg[0]), float(sign[0])
    A, D, a = batch.A[0, s], batch.D[0, s], batch.a[0, s]
    W = A - P[0]
    b = 2.0 * (D @ W)
    c = W @ W - L * L
    u = (-b + r * math.sqrt(b * b - 4.0 * a * c)) / (2.0 * a)
    g = A + u * D
    return Vec2(float(g[1]), float(g[0]))


def rollout(initial: TrackingState, path: Polyline, accel: AccelProfile,
            config: PursuitConfig) -> Trajectory:
    """Track ``path`` from ``initial`` under the given acceleration profile."""
    values = np.asarray(accel.values if isinstance(accel, AccelProfile) else accel, dtype=float)
    res = rollout_batch(PathBatch([path]), values.reshape(1, -1), config,
                        np.array([initial.speed]),
                        np.array([[initial.position.x, initial.position.y]]),
                        np.array([initial.heading]))
    return res.trajectories()[0]


@dataclass(frozen=True)
class FeasibilityCertificate:
    max_abs_curvature: float
    min_traversal_accel: float
    max_traversal_accel: float
    segments_checked: int


def rollout_feasibility_certificate(traj: Trajectory, config: PursuitConfig,
                                    accel_limit: float = ACCEL_LIMIT) -> FeasibilityCertificate:
    """Re-derive curvature and traversal acceleration from a rollout and bound them."""
    from .metrics import FEASIBILITY_ATOL, segment_curvature, traversal_centripetal_accel

    kappa = np.abs(segment_curvature(traj))
    traversal = traversal_centripetal_accel(traj)[0]
    kappa, traversal = kappa[np.isfinite(kappa)], traversal[np.isfinite(traversal)]
    max_k = float(np.max(kappa)) if kappa.size else 0.0
    lo = float(np.min(traversal)) if traversal.size else 0.0
    hi = float(np.max(traversal)) if traversal.size else 0.0
    if max_k > config.max_curvature + FEASIBILITY_ATOL:
        raise CertificateError(f"curvature {max_k:.4f} exceeds {config.max_curvature}")
    if lo < -accel_limit - FEASIBILITY_ATOL or hi > accel_limit + FEASIBILITY_ATOL:
        raise CertificateError(f"traversal acceleration [{lo:.3f}, {hi:.3f}] outside ±{accel_limit}")
    return FeasibilityCertificate(max_k, lo, hi, int(kappa.size))

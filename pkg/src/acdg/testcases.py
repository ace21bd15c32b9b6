"""Initial data for the benchmark problems on [-1, 1]^2.

All profiles have the form tanh(d / (sqrt(2) eps)) with d a signed distance,
positive in the region that relaxes to +1.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

log = logging.getLogger(__name__)

TEST1_AXES = (0.6, 0.2)  # x1^2/0.36 + x2^2/0.04 = 1
TEST2_AXES = ((0.6, 0.2), (0.2, 0.6))


def _secular_root(a, b, y0, y1, tol=1e-15, max_iter=200):
    """Root s > 0 of (a y0/(s + a^2 - b^2))^2 + (b y1/s)^2 = 1 for y0, y1 > 0, a >= b.

    s = t + b^2 in the usual nearest-point parametrisation; working with s
    keeps full relative accuracy when the root sits close to t = -b^2.
    """
    c = a * a - b * b
    lo = np.maximum(b * y1, a * y0 - c)
    hi = np.sqrt(a * a * y0 * y0 + b * b * y1 * y1) + b * y1
    s = lo.copy()
    done = np.zeros(s.shape, dtype=bool)
    for _ in range(max_iter):
        p = a * y0 / (s + c)
        q = b * y1 / s
        G = p * p + q * q - 1.0
        dG = -2.0 * (p * p / (s + c) + q * q / s)
        lo = np.where(G > 0, s, lo)
        hi = np.where(G < 0, s, hi)
        s_new = s - G / dG
        outside = ~((s_new > lo) & (s_new < hi))
        s_new = np.where(outside, 0.5 * (lo + hi), s_new)
        step = np.abs(s_new - s)
        s = np.where(done, s, s_new)
        done |= step <= tol * s
        if done.all():
            break
    return s, done


def _sampled_distance(a, b, x, y, samples=1_000_000):
    theta = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    ex, ey = a * np.cos(theta), b * np.sin(theta)
    return np.array([np.min(np.hypot(ex - px, ey - py)) for px, py in zip(x, y)])


def ellipse_distance(x1, x2, a: float, b: float) -> np.ndarray:
    """Unsigned Euclidean distance from (x1, x2) to x1^2/a^2 + x2^2/b^2 = 1."""
    if not (a > 0 and b > 0):
        raise ValueError("semi-axes must be positive")
    x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
    shape = x1.shape
    u, v = np.abs(x1).ravel(), np.abs(x2).ravel()
    if a < b:
        a, b, u, v = b, a, v, u
    d = np.empty_like(u)

    on_major = v == 0.0
    on_minor = (u == 0.0) & ~on_major
    generic = ~(on_major | on_minor)

    d[on_minor] = np.abs(v[on_minor] - b)

    um = u[on_major]
    cut = (a * a - b * b) / a
    inner = um < cut
    x0 = a * a * um / (a * a - b * b)
    x1_ = b * np.sqrt(np.clip(1.0 - (x0 / a) ** 2, 0.0, None))
    d[on_major] = np.where(inner, np.hypot(x0 - um, x1_), np.abs(um - a))

    if generic.any():
        ug, vg = u[generic], v[generic]
        sr, ok = _secular_root(a, b, ug, vg)
        px = a * a * ug / (sr + a * a - b * b)
        py = b * b * vg / sr
        dg = np.hypot(px - ug, py - vg)
        if not ok.all():
            log.warning("ellipse distance: %d points fell back to angular sampling", int((~ok).sum()))
            dg[~ok] = _sampled_distance(a, b, ug[~ok], vg[~ok])
        d[generic] = dg
    return d.reshape(shape)


def ellipse_level(x1, x2, a: float, b: float):
    return x1 * x1 / (a * a) + x2 * x2 / (b * b)


@dataclass(frozen=True)
class DistanceField:
    """Signed distance callable ``d(x1, x2)``, positive where the profile tends to +1."""

    name: str
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def __call__(self, x1, x2):
        return self.func(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))


def distance_test1() -> DistanceField:
    a, b = TEST1_AXES

    def d(x1, x2):
        dist = ellipse_distance(x1, x2, a, b)
        return np.where(ellipse_level(x1, x2, a, b) >= 1.0, dist, -dist)

    return DistanceField("test1-ellipse", d)


def distance_test2(symmetrized: bool = False) -> DistanceField:
    """Two crossed ellipses with the four-branch sign rule.

    Positive when outside both ellipses or inside both; negative inside exactly
    one. The second positive condition is taken verbatim as
    x1^2/0.04 + x2^2/0.04 <= 1 unless ``symmetrized``, in which case it reads
    x1^2/0.04 + x2^2/0.36 <= 1. Points matching no positive condition take the
    negative branch.
    """
    (a1, b1), (a2, b2) = TEST2_AXES

    def d(x1, x2):
        dist = np.minimum(ellipse_distance(x1, x2, a1, b1), ellipse_distance(x1, x2, a2, b2))
        q1 = ellipse_level(x1, x2, a1, b1)
        q2 = ellipse_level(x1, x2, a2, b2)
        q2_inner = q2 if symmetrized else ellipse_level(x1, x2, 0.2, 0.2)
        positive = ((q1 >= 1) & (q2 >= 1)) | ((q1 <= 1) & (q2_inner <= 1))
        return np.where(positive, dist, -dist)

    return DistanceField("test2-two-ellipses" + ("-symmetrized" if symmetrized else ""), d)


def circle_distance(r0: float, center=(0.0, 0.0)) -> DistanceField:
    if not r0 > 0:
        raise ValueError("radius must be positive")
    cx, cy = center

    def d(x1, x2):
        return np.hypot(x1 - cx, x2 - cy) - r0

    return DistanceField(f"circle-{r0:g}", d)


def tanh_profile(distance: DistanceField, eps: float) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """u0 = tanh(d / (sqrt(2) eps))."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    scale = 1.0 / (np.sqrt(2.0) * eps)

    def u0(x1, x2):
        return np.tanh(distance(x1, x2) * scale)

    return u0


def smooth_relaxation(amplitude: float = 0.5) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Interface-free data with zero normal derivative on the boundary of [-1, 1]^2."""

    def u0(x1, x2):
        return amplitude * np.cos(np.pi * x1) * np.cos(np.pi * x2)

    return u0


def initial_data(test: str, eps: float, r0: float = 0.5, symmetrized: bool = False):
    """u0 for ``test`` in {test1, test2, circle, manufactured}."""
    if test in ("test1", "test1-ellipse"):
        return tanh_profile(distance_test1(), eps)
    if test in ("test2", "test2-two-ellipses"):
        return tanh_profile(distance_test2(symmetrized), eps)
    if test == "circle":
        return tanh_profile(circle_distance(r0), eps)
    if test == "manufactured":
        return smooth_relaxation()
    raise ValueError(f"unknown test case {test!r}")

"""
polygon_clip.py
Convex polygon clipping (Sutherland-Hodgman) and polygon area in 2D.

Polygons are (n, 2) arrays; clipping normalises both inputs to
counter-clockwise order first. Points on a clip edge count as inside,
so a polygon clipped by itself comes back unchanged.
"""

from __future__ import annotations

import numpy as np


def signed_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(poly: np.ndarray) -> float:
    return abs(signed_area(np.asarray(poly, dtype=float)))


def as_ccw(poly: np.ndarray) -> np.ndarray:
    poly = np.asarray(poly, dtype=float)
    return poly[::-1].copy() if signed_area(poly) < 0 else poly


def polygon_clip(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Intersection of ``subject`` with the convex polygon ``clip``."""
    output = [tuple(p) for p in as_ccw(subject)]
    clip = as_ccw(clip)
    cp1 = clip[-1]
    for cp2 in clip:
        if not output:
            break
        edge = cp2 - cp1

        def side(p) -> float:
            return edge[0] * (p[1] - cp1[1]) - edge[1] * (p[0] - cp1[0])

        inputs, output = output, []
        s = np.asarray(inputs[-1])
        s_side = side(s)
        for e_tuple in inputs:
            e = np.asarray(e_tuple)
            e_side = side(e)
            if e_side >= 0:
                if s_side < 0:
                    output.append(tuple(s + (e - s) * (s_side / (s_side - e_side))))
                output.append(tuple(e))
            elif s_side >= 0:
                output.append(tuple(s + (e - s) * (s_side / (s_side - e_side))))
            s, s_side = e, e_side
        cp1 = cp2
    return np.array(output, dtype=float).reshape(-1, 2)


def intersection_area(a: np.ndarray, b: np.ndarray) -> float:
    inter = polygon_clip(a, b)
    return polygon_area(inter) if len(inter) >= 3 else 0.0

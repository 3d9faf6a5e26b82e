"""Coupling-mesh geometry helpers for the cylinder scenarios.

Arc and circle meshes use the midpoint rule: the curve is split into n
equal segments, the vertex sits at each segment's midpoint and the face
weight is the segment's arc length.  Quadratures over such meshes are
exact for the rescaled jet profiles, which is what keeps the zero-net
constraint a floating-point identity rather than an approximation.
"""

from __future__ import annotations

import math


def arc_mesh(center, radius, center_angle_deg, half_width_deg, n):
    """Vertices and weights for an arc spanning center_angle +- half_width."""
    if n < 1:
        raise ValueError("arc mesh needs at least one vertex")
    total = math.radians(2.0 * half_width_deg)
    start = math.radians(center_angle_deg) - total / 2.0
    seg = total / n
    vertices = []
    for i in range(n):
        theta = start + (i + 0.5) * seg
        vertices.append((center[0] + radius * math.cos(theta), center[1] + radius * math.sin(theta)))
    return vertices, [radius * seg] * n


def circle_mesh(center, radius, n):
    """Full-circle midpoint-rule mesh (used by the rotating actuator)."""
    if n < 3:
        raise ValueError("circle mesh needs at least three vertices")
    seg = 2.0 * math.pi / n
    vertices = []
    for i in range(n):
        theta = (i + 0.5) * seg
        vertices.append((center[0] + radius * math.cos(theta), center[1] + radius * math.sin(theta)))
    return vertices, [radius * seg] * n


def probe_fan(center, r_inner, r_outer, half_angle_deg, n):
    """n probe points fanned over the wake: angles span +-half_angle about
    +x while radii grow linearly from r_inner to r_outer.

    The radial spread matters: probe signals weight the wake state by
    functions of the probe distance, so probes at distinct radii carry
    linearly independent state combinations.  A constant-radius ring would
    hand the controller n copies of a single scalar.
    """
    if n < 1:
        raise ValueError("need at least one probe")
    if n == 1:
        angles = [0.0]
        radii = [r_inner]
    else:
        a_step = 2.0 * half_angle_deg / (n - 1)
        angles = [-half_angle_deg + i * a_step for i in range(n)]
        radii = [r_inner + (r_outer - r_inner) * i / (n - 1) for i in range(n)]
    vertices = []
    for a, r in zip(angles, radii):
        theta = math.radians(a)
        vertices.append((center[0] + r * math.cos(theta), center[1] + r * math.sin(theta)))
    return vertices

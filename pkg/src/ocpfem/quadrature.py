"""Quadrature rules on triangles in barycentric form (weights sum to one)."""
import numpy as np

from .errors import OcpFemError

_S15 = np.sqrt(15.0)

# Edge-midpoint rule, exact for quadratics.
_DEG2_POINTS = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
_DEG2_WEIGHTS = np.full(3, 1.0 / 3.0)

# 7-point rule exact for quintics (Dunavant).
_a1, _b1 = (9.0 - 2.0 * _S15) / 21.0, (6.0 + _S15) / 21.0
_a2, _b2 = (9.0 + 2.0 * _S15) / 21.0, (6.0 - _S15) / 21.0
_w1, _w2 = (155.0 + _S15) / 1200.0, (155.0 - _S15) / 1200.0
_DEG5_POINTS = np.array(
    [
        [1 / 3, 1 / 3, 1 / 3],
        [_a1, _b1, _b1],
        [_b1, _a1, _b1],
        [_b1, _b1, _a1],
        [_a2, _b2, _b2],
        [_b2, _a2, _b2],
        [_b2, _b2, _a2],
    ]
)
_DEG5_WEIGHTS = np.array([9 / 40, _w1, _w1, _w1, _w2, _w2, _w2])

RULES = {
    2: (_DEG2_POINTS, _DEG2_WEIGHTS),
    5: (_DEG5_POINTS, _DEG5_WEIGHTS),
}


def rule(degree: int):
    """Barycentric points (nq, 3) and reference weights (nq,) of a rule."""
    try:
        return RULES[degree]
    except KeyError:
        raise OcpFemError(f"quadrature degree must be one of {sorted(RULES)}, got {degree}") from None


def physical_points(vertices: np.ndarray, cells: np.ndarray, degree: int):
    """Quadrature points (ncell, nq, 2) and weights (ncell, nq) including cell areas."""
    bary, w = rule(degree)
    p = vertices[cells]
    pts = np.einsum("qk,ckd->cqd", bary, p)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return pts, area[:, None] * w[None, :]

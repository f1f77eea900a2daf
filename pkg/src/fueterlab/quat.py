"""Quaternion algebra and flat quaternionic structure triples on R^{4d}.

The three structures act by componentwise LEFT quaternion multiplication by
i, j, k under R^{4d} = H^d.  Left multiplication realizes the composition
rule i o j o k = -Id (right multiplication would give +Id).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exterior import KForm, form_from_matrix

__all__ = [
    "Quaternion",
    "ONE",
    "QI",
    "QJ",
    "QK",
    "quat_mul",
    "quat_mul_array",
    "left_mult_matrix",
    "StructureTriple",
    "SphereStructure",
    "apply_structure",
    "kaehler_form",
]


class Quaternion:
    """A quaternion w + x*i + y*j + z*k with real components."""

    __slots__ = ("w", "x", "y", "z")

    def __init__(self, w, x, y, z):
        self.w = float(w)
        self.x = float(x)
        self.y = float(y)
        self.z = float(z)

    def as_array(self):
        return np.array([self.w, self.x, self.y, self.z])

    def conjugate(self):
        return Quaternion(self.w, -self.x, -self.y, -self.z)

    def norm(self):
        return float(np.sqrt(self.w**2 + self.x**2 + self.y**2 + self.z**2))

    def __add__(self, q):
        return Quaternion(self.w + q.w, self.x + q.x, self.y + q.y, self.z + q.z)

    def __sub__(self, q):
        return Quaternion(self.w - q.w, self.x - q.x, self.y - q.y, self.z - q.z)

    def __neg__(self):
        return Quaternion(-self.w, -self.x, -self.y, -self.z)

    def __mul__(self, q):
        if isinstance(q, Quaternion):
            return quat_mul(self, q)
        return Quaternion(self.w * q, self.x * q, self.y * q, self.z * q)

    def __rmul__(self, s):
        return Quaternion(self.w * s, self.x * s, self.y * s, self.z * s)

    def __eq__(self, q):
        return (self.w, self.x, self.y, self.z) == (q.w, q.x, q.y, q.z)

    def isclose(self, q, tol=1e-12):
        return (self - q).norm() <= tol

    def __repr__(self):
        return f"Quaternion({self.w}, {self.x}, {self.y}, {self.z})"


ONE = Quaternion(1, 0, 0, 0)
QI = Quaternion(0, 1, 0, 0)
QJ = Quaternion(0, 0, 1, 0)
QK = Quaternion(0, 0, 0, 1)


def quat_mul(p: Quaternion, q: Quaternion) -> Quaternion:
    """Hamilton product; the units satisfy i*j = k, j*k = i, k*i = j, ijk = -1."""
    return Quaternion(
        p.w * q.w - p.x * q.x - p.y * q.y - p.z * q.z,
        p.w * q.x + p.x * q.w + p.y * q.z - p.z * q.y,
        p.w * q.y - p.x * q.z + p.y * q.w + p.z * q.x,
        p.w * q.z + p.x * q.y - p.y * q.x + p.z * q.w,
    )


def quat_mul_array(p, q):
    """Hamilton product on (..., 4) arrays, broadcasting like numpy."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    w1, x1, y1, z1 = p[..., 0], p[..., 1], p[..., 2], p[..., 3]
    w2, x2, y2, z2 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def left_mult_matrix(u: Quaternion) -> np.ndarray:
    """4x4 matrix of q -> u*q in the basis (1, i, j, k)."""
    basis = np.eye(4)
    cols = [quat_mul_array(u.as_array(), basis[b]) for b in range(4)]
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class StructureTriple:
    """Three anticommuting complex structures on R^{4d}, flat metric.

    i_mat, j_mat, k_mat are the 4d x 4d block matrices of componentwise left
    multiplication by the quaternion units.  Each squares to -Id, each is a
    metric isometry, and i_mat @ j_mat @ k_mat = -Id.
    """

    d: int
    i_mat: np.ndarray = field(repr=False)
    j_mat: np.ndarray = field(repr=False)
    k_mat: np.ndarray = field(repr=False)

    @staticmethod
    def standard(d: int) -> "StructureTriple":
        if d < 1:
            raise ValueError("quaternionic dimension must be >= 1")
        blocks = [left_mult_matrix(u) for u in (QI, QJ, QK)]
        mats = []
        for B in blocks:
            M = np.zeros((4 * d, 4 * d))
            for t in range(d):
                M[4 * t : 4 * t + 4, 4 * t : 4 * t + 4] = B
            mats.append(M)
        return StructureTriple(d, mats[0], mats[1], mats[2])

    @property
    def dim(self) -> int:
        return 4 * self.d

    def mats(self):
        return (self.i_mat, self.j_mat, self.k_mat)

    def mat(self, which: str) -> np.ndarray:
        try:
            return {"i": self.i_mat, "j": self.j_mat, "k": self.k_mat}[which]
        except KeyError:
            raise ValueError(f"unknown structure {which!r}, expected 'i', 'j' or 'k'")

    def combination(self, a: float, b: float, c: float) -> np.ndarray:
        """The matrix of a*i + b*j + c*k."""
        return a * self.i_mat + b * self.j_mat + c * self.k_mat


@dataclass(frozen=True)
class SphereStructure:
    """Coefficients (a, b, c) on the 2-sphere of complex structures a*i+b*j+c*k."""

    a: float
    b: float
    c: float

    def __post_init__(self):
        n = np.sqrt(self.a**2 + self.b**2 + self.c**2)
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"(a,b,c) must be a unit vector, got norm {n}")

    def as_array(self):
        return np.array([self.a, self.b, self.c])

    def matrix(self, triple: StructureTriple) -> np.ndarray:
        return triple.combination(self.a, self.b, self.c)


def apply_structure(S: StructureTriple, coeffs: SphereStructure, v) -> np.ndarray:
    """Evaluate (a*i + b*j + c*k) on a vector of dimension 4d."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != S.dim:
        raise ValueError(f"vector has dimension {v.shape[-1]}, structure acts on {S.dim}")
    return v @ coeffs.matrix(S).T


def kaehler_form(S: StructureTriple, which: str) -> KForm:
    """The 2-form w(X, Y) = g(S_which X, Y) for the flat metric; skew-symmetric
    and nondegenerate.

    This orientation gives w_i = dx^01 + dx^23 (per quaternionic block), makes
    the tangential part of w^(2m-1) equal +Hodge(dr ^ S dr), and makes the
    Wirtinger equality planes those with e2 = S e1.
    """
    return form_from_matrix(-S.mat(which))

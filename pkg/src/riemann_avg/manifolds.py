"""Points, tangent vectors and maps on R^d, the sphere S^(d-1) and G(d, k).

Grassmann points are stored as orthonormal d x k frames.  Every
subspace-level quantity computed here (angles, distances, retracted
subspaces) is invariant under ``X -> X Q`` for orthogonal ``Q``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import (
    DimensionError,
    DomainError,
    PreconditionError,
    SingularityError,
    UnsupportedMapError,
)

POINT_TOL = 1e-10
TANGENT_TOL = 1e-10
GRAM_FLOOR = 1e-12
INVERSE_DOMAIN_TOL = 1e-8
ANTIPODAL_TOL = 1e-8


@dataclass(frozen=True)
class Euclidean:
    d: int

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.d,)


@dataclass(frozen=True)
class Sphere:
    """Unit sphere S^(d-1) embedded in R^d."""

    d: int

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.d,)


@dataclass(frozen=True)
class Grassmann:
    """k-dimensional subspaces of R^d, represented by orthonormal frames."""

    d: int
    k: int

    def __post_init__(self):
        if not 1 <= self.k <= self.d:
            raise DimensionError(f"need 1 <= k <= d, got d={self.d}, k={self.k}")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.d, self.k)


Manifold = Union[Euclidean, Sphere, Grassmann]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ManifoldPoint:
    manifold: Manifold
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        coords = _frozen(self.coords)
        if coords.shape != self.manifold.shape:
            raise DimensionError(
                f"coords of shape {coords.shape} do not fit {self.manifold}"
            )
        if isinstance(self.manifold, Sphere):
            err = abs(np.linalg.norm(coords) - 1.0)
            if err > POINT_TOL:
                raise PreconditionError(f"sphere point has |norm - 1| = {err:.3g}")
        elif isinstance(self.manifold, Grassmann):
            err = np.abs(coords.T @ coords - np.eye(self.manifold.k)).max()
            if err > POINT_TOL:
                raise PreconditionError(f"frame is not orthonormal (error {err:.3g})")
        object.__setattr__(self, "coords", coords)

    @classmethod
    def from_array(cls, manifold: Manifold, a) -> "ManifoldPoint":
        """Build a point by normalizing ``a`` onto ``manifold``.

        Sphere inputs are rescaled to unit norm; Grassmann inputs are replaced
        by the orthonormal polar factor of the given full-rank d x k matrix.
        """
        a = np.asarray(a, dtype=float)
        if isinstance(manifold, Sphere):
            a = a / np.linalg.norm(a)
        elif isinstance(manifold, Grassmann):
            a = a.reshape(manifold.shape) @ inv_sqrt_psd(a.T @ a)
        return cls(manifold, a)


@dataclass(frozen=True)
class TangentVector:
    base: ManifoldPoint
    vec: np.ndarray = field(repr=False)

    def __post_init__(self):
        vec = _frozen(self.vec)
        if vec.shape != self.base.coords.shape:
            raise DimensionError(
                f"tangent of shape {vec.shape} at point of shape {self.base.coords.shape}"
            )
        viol = _tangency_violation(self.base, vec)
        if viol > TANGENT_TOL * max(1.0, np.abs(vec).max(initial=0.0)):
            raise PreconditionError(f"vector is not tangent (violation {viol:.3g})")
        object.__setattr__(self, "vec", vec)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vec))

    def __mul__(self, c: float) -> "TangentVector":
        return TangentVector(self.base, c * self.vec)

    __rmul__ = __mul__

    def __neg__(self) -> "TangentVector":
        return TangentVector(self.base, -self.vec)


@dataclass(frozen=True)
class PrincipalAngles:
    theta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "theta", _frozen(self.theta))


def _tangency_violation(x: ManifoldPoint, vec: np.ndarray) -> float:
    if isinstance(x.manifold, Sphere):
        return abs(float(x.coords @ vec))
    if isinstance(x.manifold, Grassmann):
        return float(np.abs(x.coords.T @ vec).max())
    return 0.0


def _check_same(x: ManifoldPoint, y: ManifoldPoint) -> None:
    if x.manifold != y.manifold:
        raise DimensionError(f"points live on {x.manifold} and {y.manifold}")


def _raw(x: ManifoldPoint, v) -> np.ndarray:
    if isinstance(v, TangentVector):
        if v.base.manifold != x.manifold or not np.array_equal(v.base.coords, x.coords):
            raise PreconditionError("tangent vector is attached to a different base point")
        return v.vec
    v = np.asarray(v, dtype=float)
    if v.shape != x.coords.shape:
        raise DimensionError(f"perturbation of shape {v.shape} at point of shape {x.coords.shape}")
    return v


def inv_sqrt_psd(gram: np.ndarray, floor: float = GRAM_FLOOR) -> np.ndarray:
    """Inverse square root of a symmetric positive definite matrix.

    Raises:
        SingularityError: if the smallest eigenvalue is below ``floor``.
    """
    w, q = np.linalg.eigh(gram)
    if w[0] < floor:
        raise SingularityError(f"Gram matrix eigenvalue {w[0]:.3g} below floor {floor:g}")
    return (q / np.sqrt(w)) @ q.T


def project_tangent(x: ManifoldPoint, w) -> TangentVector:
    w = np.asarray(w, dtype=float)
    if w.shape != x.coords.shape:
        raise DimensionError(f"cannot project shape {w.shape} at point of shape {x.coords.shape}")
    c = x.coords
    if isinstance(x.manifold, Sphere):
        v = w - (c @ w) * c
    elif isinstance(x.manifold, Grassmann):
        v = w - c @ (c.T @ w)
    else:
        v = w
    return TangentVector(x, v)


def retract(x: ManifoldPoint, v) -> ManifoldPoint:
    """Retraction ``R_x(v)``.

    ``v`` may be a :class:`TangentVector` at ``x`` or a raw array of the same
    shape.  Raw arrays are accepted because the power-method updates move
    along non-tangent directions; on the Grassmannian the result is then the
    polar factor of ``X + V``.
    """
    v = _raw(x, v)
    y = x.coords + v
    if isinstance(x.manifold, Sphere):
        nrm = np.linalg.norm(y)
        if nrm**2 < GRAM_FLOOR:
            raise SingularityError("x + v vanishes")
        return ManifoldPoint(x.manifold, y / nrm)
    if isinstance(x.manifold, Grassmann):
        return ManifoldPoint(x.manifold, y @ inv_sqrt_psd(y.T @ y))
    return ManifoldPoint(x.manifold, y)


def inverse_retract(x: ManifoldPoint, y: ManifoldPoint) -> TangentVector:
    _check_same(x, y)
    if isinstance(x.manifold, Sphere):
        c = float(x.coords @ y.coords)
        if c <= INVERSE_DOMAIN_TOL:
            raise DomainError(f"x.y = {c:.3g} is outside the inverse retraction domain")
        return TangentVector(x, y.coords / c - x.coords)
    if isinstance(x.manifold, Grassmann):
        X, Y = x.coords, y.coords
        m = X.T @ Y
        if np.linalg.svd(m, compute_uv=False)[-1] <= INVERSE_DOMAIN_TOL:
            raise DomainError("X^T Y is numerically singular (principal angle near pi/2)")
        z = Y - X @ m
        return TangentVector(x, np.linalg.solve(m.T, z.T).T)
    return TangentVector(x, y.coords - x.coords)


def exp_map(x: ManifoldPoint, v) -> ManifoldPoint:
    if isinstance(x.manifold, Grassmann):
        raise UnsupportedMapError("exponential map is provided for Euclidean and Sphere only")
    v = _raw(x, v)
    if isinstance(x.manifold, Euclidean):
        return ManifoldPoint(x.manifold, x.coords + v)
    t = np.linalg.norm(v)
    if t == 0.0:
        return x
    y = np.cos(t) * x.coords + np.sin(t) * (v / t)
    # absorb roundoff so the point passes the unit-norm invariant
    return ManifoldPoint(x.manifold, y / np.linalg.norm(y))


def log_map(x: ManifoldPoint, y: ManifoldPoint) -> TangentVector:
    if isinstance(x.manifold, Grassmann):
        raise UnsupportedMapError("log map is provided for Euclidean and Sphere only")
    _check_same(x, y)
    if isinstance(x.manifold, Euclidean):
        return TangentVector(x, y.coords - x.coords)
    c = float(np.clip(x.coords @ y.coords, -1.0, 1.0))
    if c <= -1.0 + ANTIPODAL_TOL:
        raise DomainError("log map is undefined for antipodal points")
    w = y.coords - c * x.coords
    w = w - (x.coords @ w) * x.coords
    s = np.linalg.norm(w)
    if s == 0.0:
        return TangentVector(x, np.zeros_like(x.coords))
    # atan2 keeps full precision for nearby points, unlike arccos(c)
    theta = np.arctan2(s, c)
    return TangentVector(x, theta * w / s)


def geodesic_distance(x: ManifoldPoint, y: ManifoldPoint) -> float:
    """Great-circle distance on the sphere, Euclidean distance otherwise."""
    if isinstance(x.manifold, Grassmann):
        return subspace_distances(x, y)["d_A"]
    return log_map(x, y).norm


def parallel_transport_sphere(x: ManifoldPoint, y: ManifoldPoint, v) -> TangentVector:
    if not isinstance(x.manifold, Sphere):
        raise UnsupportedMapError("parallel transport is provided for the sphere only")
    v = _raw(x, v)
    u = log_map(x, y).vec
    theta = np.linalg.norm(u)
    if theta == 0.0:
        return TangentVector(y, v)
    e = u / theta
    a = float(e @ v)
    w = v + (np.cos(theta) - 1.0) * a * e - np.sin(theta) * a * x.coords
    return project_tangent(y, w)


def principal_angles(x: ManifoldPoint, y: ManifoldPoint) -> PrincipalAngles:
    _check_same(x, y)
    if not isinstance(x.manifold, Grassmann):
        raise DimensionError("principal angles need Grassmann points")
    X, Y = x.coords, y.coords
    m = X.T @ Y
    cos = np.clip(np.linalg.svd(m, compute_uv=False), 0.0, 1.0)
    # arccos alone loses ~8 digits near zero; small angles come from the
    # sines, i.e. singular values of the component of Y orthogonal to X
    sin = np.clip(np.linalg.svd(Y - X @ m, compute_uv=False)[::-1], 0.0, 1.0)
    theta = np.where(sin < np.sqrt(0.5), np.arcsin(sin), np.arccos(cos))
    return PrincipalAngles(theta)


def retraction_norm_sq(x: ManifoldPoint, y: ManifoldPoint) -> float:
    """``||R_X^{-1}(Y)||_F^2 = tr[(X^T Y Y^T X)^{-1} - I]``, or inf off-domain."""
    m = x.coords.T @ y.coords
    if np.linalg.svd(m, compute_uv=False)[-1] <= INVERSE_DOMAIN_TOL:
        return np.inf
    return float(np.trace(np.linalg.inv(m @ m.T)) - x.manifold.k)


def subspace_distances(x: ManifoldPoint, y: ManifoldPoint) -> dict[str, float]:
    """Arc length ``d_A``, projection distance ``d_F`` and retraction norm.

    ``retr_norm`` is ``+inf`` when ``X^T Y`` is singular.
    """
    theta = principal_angles(x, y).theta
    r2 = retraction_norm_sq(x, y)
    return {
        "d_A": float(np.linalg.norm(theta)),
        "d_F": float(np.linalg.norm(np.sin(theta))),
        "retr_norm": float(np.sqrt(max(r2, 0.0))),
    }


def projection_distance(x: ManifoldPoint, y: ManifoldPoint) -> float:
    """``2^{-1/2} ||X X^T - Y Y^T||_F``; equals ``d_F`` computed from angles."""
    X, Y = x.coords, y.coords
    return float(np.linalg.norm(X @ X.T - Y @ Y.T) / np.sqrt(2.0))

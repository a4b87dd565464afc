"""Lorentz-model hyperbolic geometry (curvature fixed at -1).

Points live on the upper hyperboloid sheet in Minkowski space and are
represented as arrays whose last axis holds the n+1 coordinates: index 0
is the time axis, indices 1..n the spatial axes. Tangent vectors use the
same layout. All functions accept either plain numpy arrays or autodiff
Tensors and broadcast over leading batch axes; internal arithmetic is
64-bit regardless of caller dtype.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ArgumentError, DimensionError, DomainError, NumericalError

CURVATURE = -1.0
MAX_TANGENT_NORM = 8.0

ON_MANIFOLD_ATOL = 1e-9
DISTANCE_INPUT_ATOL = 1e-6


@dataclass(frozen=True)
class ManifoldConfig:
    """Dimension and overflow guard for one hyperboloid."""

    dim: int
    curvature: float = CURVATURE
    max_tangent_norm: float = MAX_TANGENT_NORM

    def __post_init__(self):
        if self.dim < 1:
            raise ArgumentError("manifold dimension must be a positive integer")
        if self.curvature != -1.0:
            raise ArgumentError("curvature is fixed at -1")
        if self.max_tangent_norm <= 0:
            raise ArgumentError("max_tangent_norm must be positive")


def origin(n):
    """The point (1, 0, ..., 0) on the n-dimensional hyperboloid."""
    o = np.zeros(n + 1)
    o[0] = 1.0
    return o


def lorentz_inner(x, y):
    """Minkowski inner product -x0*y0 + <x_s, y_s> along the last axis."""
    xd, yd = ad._data(x), ad._data(y)
    if xd.shape[-1] != yd.shape[-1]:
        raise DimensionError(f"coordinate lengths differ: {xd.shape[-1]} vs {yd.shape[-1]}")
    if xd.shape[-1] < 2:
        raise DimensionError("Lorentz coordinates need at least 2 entries")
    prod = ad.mul(x, y)
    spatial = ad.sum_(ad.take(prod, (..., slice(1, None))), axis=-1)
    time = ad.take(prod, (..., 0))
    return ad.sub(spatial, time)


def _inner_data(x, y):
    xd, yd = ad._data(x), ad._data(y)
    return -xd[..., 0] * yd[..., 0] + (xd[..., 1:] * yd[..., 1:]).sum(axis=-1)


def is_on_manifold(x, atol=ON_MANIFOLD_ATOL):
    xd = ad._data(x)
    inner = _inner_data(xd, xd)
    return np.logical_and(np.abs(inner + 1.0) <= atol, xd[..., 0] > 0)


def assert_on_manifold(x, atol=ON_MANIFOLD_ATOL, what="point"):
    ok = is_on_manifold(x, atol=atol)
    if not np.all(ok):
        worst = float(np.max(np.abs(_inner_data(ad._data(x), ad._data(x)) + 1.0)))
        raise DomainError(f"{what} violates <x,x>=-1 / x0>0 (worst deviation {worst:.3e})")


def assert_tangent(base, z, rtol=1e-6):
    """Check <base, z> = 0 up to a tolerance scaled by the operand norms."""
    bd, zd = ad._data(base), ad._data(z)
    inner = np.abs(_inner_data(bd, zd))
    scale = 1.0 + np.linalg.norm(bd, axis=-1) * np.linalg.norm(zd, axis=-1)
    if np.any(inner > rtol * scale):
        raise DomainError("vector is not tangent to the base point")


def sq_lorentz_distance(a, b, validate=True):
    """Squared Lorentzian distance -2 - 2<a,b>; symmetric and >= 0 on-manifold."""
    if validate:
        assert_on_manifold(a, atol=DISTANCE_INPUT_ATOL, what="distance operand")
        assert_on_manifold(b, atol=DISTANCE_INPUT_ATOL, what="distance operand")
    return ad.sub(-2.0, ad.mul(2.0, lorentz_inner(a, b)))


def exp_map(x, z, max_tangent_norm=MAX_TANGENT_NORM, validate=True):
    """Map the tangent vector z at x onto the manifold.

    The tangent norm is clamped to ``max_tangent_norm`` before the map is
    applied, and the result is renormalized through
    :func:`project_to_manifold` to absorb rounding drift.
    """
    if validate:
        zz = _inner_data(z, z)
        if np.any(zz < -1e-9):
            raise DomainError("tangent vector has negative Lorentz norm (non-spacelike)")
        assert_tangent(x, z)
    zz = lorentz_inner(z, z)
    nrm = ad.sqrt(ad.add(ad.clamp(zz, min=0.0), 1e-30))
    nc = ad.clamp(nrm, max=max_tangent_norm)
    nc_e = ad.reshape(nc, nc.shape + (1,)) if nc.shape else nc
    nrm_e = ad.reshape(nrm, nrm.shape + (1,)) if nrm.shape else nrm
    out = ad.add(ad.mul(ad.cosh(nc_e), x), ad.mul(ad.div(ad.sinh(nc_e), nrm_e), z))
    return project_to_manifold(out, validate=False)


def log_map(x, y, validate=True):
    """Map the point y into the tangent space at x (inverse of exp_map).

    Coincident points return the zero tangent vector; the arcosh argument
    is clamped just inside its domain so the coefficient tends to 1 there.
    """
    alpha_data = -_inner_data(x, y)
    if validate and np.any(alpha_data < 1.0 - 1e-9):
        raise DomainError("log_map requires -<x,y> >= 1 (both points on the upper sheet)")
    inner = lorentz_inner(x, y)
    ac = ad.clamp(ad.mul(inner, -1.0), min=1.0 + ad.DOMAIN_EPS)
    coef = ad.div(ad.arcosh(ac), ad.sqrt(ad.sub(ad.mul(ac, ac), 1.0)))
    coef_e = ad.reshape(coef, coef.shape + (1,)) if coef.shape else coef
    inner_e = ad.reshape(inner, inner.shape + (1,)) if inner.shape else inner
    return ad.mul(coef_e, ad.add(y, ad.mul(inner_e, x)))


def lorentz_centroid(points, weights):
    """Weighted centroid under squared Lorentzian distance.

    ``points`` has shape (..., m, n+1). ``weights`` is either (..., m) for a
    single centroid or (..., k, m) for k centroids sharing the point set.
    """
    wd = ad._data(weights)
    pd = ad._data(points)
    if wd.shape[-1] != pd.shape[-2]:
        raise DimensionError("weight count does not match point count")
    if np.any(wd < 0):
        raise ArgumentError("centroid weights must be non-negative")
    if np.any(wd.sum(axis=-1) <= 0):
        raise ArgumentError("centroid weights must not sum to zero")
    squeeze = wd.ndim == pd.ndim - 1
    if squeeze:
        weights = ad.reshape(weights, wd.shape[:-1] + (1, wd.shape[-1]))
    s = ad.matmul(weights, points)
    q = lorentz_inner(s, s)
    norm_sq = ad.clamp(ad.mul(q, -1.0), min=1e-30)
    denom_data = np.sqrt(ad._data(norm_sq))
    if np.any(denom_data < 1e-12):
        raise NumericalError("degenerate Lorentz norm in centroid")
    denom = ad.sqrt(norm_sq)
    denom_e = ad.reshape(denom, denom.shape + (1,))
    mu = ad.div(s, denom_e)
    if squeeze:
        mu = ad.take(mu, (..., 0, slice(None)))
    return mu


def lift_from_tangent(u, scale=1.0, max_tangent_norm=MAX_TANGENT_NORM):
    """Prepend a zero time coordinate to ``scale * u`` and exp-map at the origin."""
    v = ad.mul(u, scale)
    r = ad.l2norm(v, axis=-1, keepdims=True)
    rc = ad.clamp(r, max=max_tangent_norm)
    time = ad.cosh(rc)
    spatial = ad.mul(ad.div(ad.sinh(rc), r), v)
    return ad.concat([time, spatial], axis=-1)


def log_origin(y):
    """Tangent vector at the origin whose exp-map reproduces y (time entry 0)."""
    y0 = ad.take(y, (..., slice(0, 1)))
    ys = ad.take(y, (..., slice(1, None)))
    y0c = ad.clamp(y0, min=1.0 + ad.DOMAIN_EPS)
    coef = ad.div(ad.arcosh(y0c), ad.sqrt(ad.sub(ad.mul(y0c, y0c), 1.0)))
    spatial = ad.mul(coef, ys)
    zeros = np.zeros(ad._data(y0).shape)
    return ad.concat([zeros, spatial], axis=-1)


def spatial_log_origin(y):
    """log_origin with the (identically zero) time axis dropped."""
    return ad.take(log_origin(y), (..., slice(1, None)))


def distance_from_origin(y):
    """Geodesic distance arcosh(y0) from the origin."""
    return ad.arcosh(ad.take(y, (..., 0)))


def project_to_manifold(v, validate=True):
    """Keep the spatial axes and recompute the time axis from them."""
    vd = ad._data(v)
    if validate and not np.all(np.isfinite(vd)):
        raise NumericalError("project_to_manifold: non-finite input")
    spatial = ad.take(v, (..., slice(1, None)))
    time = ad.sqrt(ad.add(ad.sum_(ad.mul(spatial, spatial), axis=-1, keepdims=True), 1.0))
    return ad.concat([time, spatial], axis=-1)

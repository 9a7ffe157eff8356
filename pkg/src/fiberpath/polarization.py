"""Transverse polarization geometry in three dimensions.

Everything here is elementary vector algebra for the plane orthogonal to a
wavevector k: the transverse projector, two explicit constructions of an
orthonormal transverse basis, and the frame angle that measures how a rigid
rotation of k mixes a transverse basis inside its plane.

Both basis constructions return right-handed frames, ``e1 x e2 = k/|k|``, and
both satisfy an exact covariance property under the rotations that preserve
their reference axis: for S a rotation about the axis by an angle psi,

    e(S k, 1) = cos(w psi) * S e(k, 1) - sin(w psi) * S e(k, 2)
    e(S k, 2) = sin(w psi) * S e(k, 1) + cos(w psi) * S e(k, 2)

with integer weight w = 1 for :func:`basis_meridian` and w = 0 for
:func:`basis_axis_cross`.  ``coherence_residual`` measures the defect of this
relation and is what the acceptance sweep drives over random inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "FrameAngle",
    "basis_axis_cross",
    "basis_meridian",
    "coherence_residual",
    "rotation_matrix",
    "theta_angle",
    "transverse_projector",
]

#: Vectors whose norm (or cross-product norm) falls below this are treated as
#: degenerate; the basis constructions refuse them rather than guessing.
DEGENERACY_TOL = 1e-12


def _as_vector(k, name="k"):
    k = np.asarray(k, dtype=float)
    if k.shape != (3,):
        raise ValueError(f"{name} must be a 3-vector, got shape {k.shape}")
    if not np.all(np.isfinite(k)):
        raise ValueError(f"{name} must be finite")
    return k


def transverse_projector(k):
    """Projector onto the plane orthogonal to ``k``.

    Returns the symmetric idempotent matrix ``delta_ab - k_a k_b / |k|^2``.
    Raises ``ValueError`` for the zero vector, which has no transverse plane.
    """
    k = _as_vector(k)
    n2 = float(k @ k)
    if n2 <= DEGENERACY_TOL**2:
        raise ValueError("transverse projector undefined for k = 0")
    return np.eye(3) - np.outer(k, k) / n2


def rotation_matrix(axis, angle):
    """Right-handed rotation by ``angle`` about ``axis`` (Rodrigues form)."""
    axis = _as_vector(axis, "axis")
    norm = float(np.linalg.norm(axis))
    if norm <= DEGENERACY_TOL:
        raise ValueError("rotation axis must be nonzero")
    n = axis / norm
    c, s = np.cos(angle), np.sin(angle)
    cross = np.array([[0.0, -n[2], n[1]], [n[2], 0.0, -n[0]], [-n[1], n[0], 0.0]])
    return c * np.eye(3) + s * cross + (1.0 - c) * np.outer(n, n)


def basis_axis_cross(k, axis=(0.0, 0.0, 1.0)):
    """Transverse pair built from cross products with a fixed reference axis.

    ``e1 = khat x n / |khat x n|``, ``e2 = khat x e1`` for unit ``n`` along
    ``axis``.  The frame is right handed and invariant (weight w = 0) under
    rotations about ``axis``.  Wavevectors parallel to the axis are rejected.

    Returns ``(e1, e2)`` as a (2, 3) array.
    """
    k = _as_vector(k)
    n = _as_vector(axis, "axis")
    nk = float(np.linalg.norm(k))
    nn = float(np.linalg.norm(n))
    if nk <= DEGENERACY_TOL or nn <= DEGENERACY_TOL:
        raise ValueError("k and axis must be nonzero")
    khat = k / nk
    n = n / nn
    c = np.cross(khat, n)
    cn = float(np.linalg.norm(c))
    if cn <= 1e-9:
        raise ValueError("k parallel to the reference axis: transverse frame degenerate")
    e1 = c / cn
    e2 = np.cross(khat, e1)
    return np.stack([e1, e2])


def basis_meridian(k):
    """Transverse pair transported from the x-z meridian by azimuthal rotation.

    The seed frame lives on the x-z half plane (azimuth phi = 0): for polar
    angle theta it is ``e01 = (cos theta, 0, -sin theta)`` (the polar unit
    vector) and ``e02 = (0, 1, 0)``.  A general k with azimuth phi is reached
    by the rotation R about the z axis by phi, and the transported frame is
    re-mixed inside the plane by the same angle:

        e(k, 1) = cos(phi) R e01 - sin(phi) R e02
        e(k, 2) = sin(phi) R e01 + cos(phi) R e02

    which carries the covariance weight w = 1 under rotations about z.
    Wavevectors on the z axis (azimuth undefined) are rejected.

    Returns ``(e1, e2)`` as a (2, 3) array.
    """
    k = _as_vector(k)
    nk = float(np.linalg.norm(k))
    if nk <= DEGENERACY_TOL:
        raise ValueError("k must be nonzero")
    khat = k / nk
    rho = float(np.hypot(khat[0], khat[1]))
    if rho <= 1e-9:
        raise ValueError("k on the z axis: meridian frame degenerate at the poles")
    phi = float(np.arctan2(khat[1], khat[0]))
    cos_t = khat[2]
    sin_t = rho
    # Seed frame at azimuth zero, then the transported (theta-hat, phi-hat) pair.
    theta_hat = np.array([cos_t * np.cos(phi), cos_t * np.sin(phi), -sin_t])
    phi_hat = np.array([-np.sin(phi), np.cos(phi), 0.0])
    c, s = np.cos(phi), np.sin(phi)
    e1 = c * theta_hat - s * phi_hat
    e2 = s * theta_hat + c * phi_hat
    return np.stack([e1, e2])


@dataclass(frozen=True)
class FrameAngle:
    """Frame angle of a rotation acting on a transverse basis.

    ``theta`` is the unsigned angle in [0, pi]; ``signed`` the signed in-plane
    rotation in (-pi, pi]; ``residual`` the maximum deviation of the 2x2
    change-of-basis matrix from a pure rotation by ``signed``.
    """

    theta: float
    signed: float
    residual: float


def theta_angle(R, k, basis=basis_meridian):
    """Angle by which ``R`` rotates the transverse frame of ``k`` in-plane.

    Both ``R e(k, .)`` and ``e(R k, .)`` are right-handed orthonormal bases of
    the plane orthogonal to ``R k``, so they differ by an in-plane rotation.
    Its cosine is ``R e(k,1) . e(Rk,1)`` and its sine ``R e(k,1) . e(Rk,2)``.
    """
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError("R must be a 3x3 rotation matrix")
    k = _as_vector(k)
    ek = basis(k)
    erk = basis(R @ k)
    rot1 = R @ ek[0]
    rot2 = R @ ek[1]
    cos_psi = float(rot1 @ erk[0])
    sin_psi = float(rot1 @ erk[1])
    signed = float(np.arctan2(sin_psi, cos_psi))
    theta = float(np.arccos(np.clip(cos_psi, -1.0, 1.0)))
    # Change-of-basis matrix M_ij = (R e(k,i)) . e(Rk,j) should be the 2D
    # rotation by the signed angle; report the worst entry deviation.
    m = np.array([[cos_psi, sin_psi], [float(rot2 @ erk[0]), float(rot2 @ erk[1])]])
    expected = np.array([[np.cos(signed), np.sin(signed)], [-np.sin(signed), np.cos(signed)]])
    residual = float(np.max(np.abs(m - expected)))
    return FrameAngle(theta=theta, signed=signed, residual=residual)


def coherence_residual(k, psi, basis=basis_meridian, axis=(0.0, 0.0, 1.0), weight=1):
    """Defect of the covariance property for a rotation about ``axis``.

    Builds S = R(axis, psi) and returns the maximum entry deviation of the
    change-of-basis matrix between ``S e(k, .)`` and ``e(S k, .)`` from the
    in-plane rotation by ``weight * psi``.  Zero (to rounding) certifies the
    construction transforms covariantly with the stated integer weight.
    """
    k = _as_vector(k)
    S = rotation_matrix(axis, psi)
    if basis is basis_axis_cross:
        ek = basis(k, axis)
        esk = basis(S @ k, axis)
    else:
        ek = basis(k)
        esk = basis(S @ k)
    m = np.array(
        [
            [float((S @ ek[0]) @ esk[0]), float((S @ ek[0]) @ esk[1])],
            [float((S @ ek[1]) @ esk[0]), float((S @ ek[1]) @ esk[1])],
        ]
    )
    c, s = np.cos(weight * psi), np.sin(weight * psi)
    expected = np.array([[c, s], [-s, c]])
    return float(np.max(np.abs(m - expected)))

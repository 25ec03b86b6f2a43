"""Finite-deformation thermoelastic material with density interpolation.

Plane-strain kinematics are reduced to the in-plane 2x2 deformation gradient
block; the out-of-plane stretch is 1 and is folded into the formulas (the
squared Frobenius norm gains +1, determinants and inverses act on the 2x2
block). The stored energy combines a logarithmic volumetric term with linear
thermo-volumetric coupling and a compressible neo-Hookean isochoric part:

    Psi = K/2 ln^2 J - 3 (K alpha) dtheta ln J + 9/2 ((K alpha)^2 / K) dtheta^2
        + G/2 (J^(-2/3) ||F||^2 - 3)

so that P = dPsi/dF = [K ln J - 3 (K alpha) dtheta] F^-T
            + G J^(-2/3) (F - ||F||^2 / 3 F^-T).

Densities enter through multiplicative contrast factors on the moduli and the
conductivity; the thermal stress coefficient K alpha carries an extra zbar^p
so void neither pushes nor conducts at full contrast. The referential heat
flux q = -kappa J C^-1 grad(theta) grows without bound as an element is
compressed flat, which is the thermal contact mechanism of the soft
intermediate material.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BaseMaterial:
    """Solid-phase parameters (SI units, temperatures in degrees C)."""
    E: float = 1.0e6
    nu: float = 0.4
    kappa: float = 10.0
    alpha: float = 1.0e-4
    theta_ref: float = 20.0

    @property
    def K(self) -> float:
        """Bulk modulus E / (3 (1 - 2 nu))."""
        return self.E / (3.0 * (1.0 - 2.0 * self.nu))

    @property
    def G(self) -> float:
        """Shear modulus E / (2 (1 + nu))."""
        return self.E / (2.0 * (1.0 + self.nu))


@dataclass(frozen=True)
class ErsatzScaling:
    """Contrast floors and penalization of the void/contact medium."""
    delta_E: float = 1.0e-6
    delta_kappa: float = 1.0e-4
    delta_alpha: float = 0.0
    p: float = 3.0
    k_r_bar: float = 1.0e-6

    def hessian_penalty(self, base: BaseMaterial, h_char: float) -> float:
        """Uniform displacement-Hessian penalty k_r = k_r_bar * H^2 * K.

        Not density-interpolated: it must keep nearly void elements from
        collapsing, which is exactly where zbar vanishes.
        """
        return self.k_r_bar * h_char**2 * base.K


@dataclass
class MaterialPoint:
    """Interpolated coefficients (and zbar-derivatives) at evaluation points.

    All fields broadcast together; scalars work as well as (n_elem, n_qp)
    arrays.
    """
    K: np.ndarray
    G: np.ndarray
    kappa: np.ndarray
    Kalpha: np.ndarray
    dK: np.ndarray
    dG: np.ndarray
    dkappa: np.ndarray
    dKalpha: np.ndarray
    theta_ref: float = 20.0


def interpolate(zbar, base: BaseMaterial, ersatz: ErsatzScaling) -> MaterialPoint:
    """Coefficients at projected density ``zbar`` in [0, 1].

    K and G scale with delta_E + (1 - delta_E) zbar^p, kappa with the
    delta_kappa analog, and K alpha = zbar^p * K(zbar) * alpha.
    """
    zbar = np.asarray(zbar, dtype=float)
    p = ersatz.p
    zp = zbar**p
    dzp = p * zbar ** (p - 1.0)
    sE = ersatz.delta_E + (1.0 - ersatz.delta_E) * zp
    sk = ersatz.delta_kappa + (1.0 - ersatz.delta_kappa) * zp
    K = sE * base.K
    G = sE * base.G
    kappa = sk * base.kappa
    dK = (1.0 - ersatz.delta_E) * dzp * base.K
    dG = (1.0 - ersatz.delta_E) * dzp * base.G
    dkappa = (1.0 - ersatz.delta_kappa) * dzp * base.kappa
    Kalpha = zp * K * base.alpha
    dKalpha = (dzp * K + zp * dK) * base.alpha
    return MaterialPoint(K=K, G=G, kappa=kappa, Kalpha=Kalpha,
                         dK=dK, dG=dG, dkappa=dkappa, dKalpha=dKalpha,
                         theta_ref=base.theta_ref)


@dataclass
class Kinematics:
    """Deformation state at evaluation points.

    ``F`` is the in-plane deformation gradient block (..., 2, 2), ``theta``
    the absolute temperature (...), ``grad_theta`` its referential gradient
    (..., 2).
    """
    F: np.ndarray
    theta: np.ndarray
    grad_theta: np.ndarray

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        self.theta = np.asarray(self.theta, dtype=float)
        self.grad_theta = np.asarray(self.grad_theta, dtype=float)

    @property
    def J(self) -> np.ndarray:
        F = self.F
        return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]

    def Finv(self) -> np.ndarray:
        F, J = self.F, self.J[..., None, None]
        Fi = np.empty_like(F)
        Fi[..., 0, 0] = F[..., 1, 1]
        Fi[..., 1, 1] = F[..., 0, 0]
        Fi[..., 0, 1] = -F[..., 0, 1]
        Fi[..., 1, 0] = -F[..., 1, 0]
        return Fi / J

    def F3(self) -> np.ndarray:
        """Full 3x3 deformation gradient with unit out-of-plane stretch."""
        shape = self.F.shape[:-2] + (3, 3)
        F3 = np.zeros(shape)
        F3[..., :2, :2] = self.F
        F3[..., 2, 2] = 1.0
        return F3


def _volumetric_pieces(kin: Kinematics, mp: MaterialPoint):
    J = kin.J
    if np.any(J <= 0.0):
        raise ValueError("non-positive determinant of the deformation gradient")
    lnJ = np.log(J)
    dtheta = kin.theta - mp.theta_ref
    return J, lnJ, dtheta


def strain_energy(kin: Kinematics, mp: MaterialPoint) -> np.ndarray:
    """Stored energy density per reference volume (without the Hessian
    regularization, which lives on element second derivatives)."""
    J, lnJ, dth = _volumetric_pieces(kin, mp)
    normF = np.einsum("...ij,...ij->...", kin.F, kin.F) + 1.0
    vol = (0.5 * mp.K * lnJ**2 - 3.0 * mp.Kalpha * dth * lnJ
           + 4.5 * (mp.Kalpha**2 / mp.K) * dth**2)
    iso = 0.5 * mp.G * (J ** (-2.0 / 3.0) * normF - 3.0)
    return vol + iso


def pk1_stress(kin: Kinematics, mp: MaterialPoint) -> np.ndarray:
    """First Piola-Kirchhoff stress, in-plane block (..., 2, 2)."""
    J, lnJ, dth = _volumetric_pieces(kin, mp)
    normF = np.einsum("...ij,...ij->...", kin.F, kin.F) + 1.0
    FinvT = np.swapaxes(kin.Finv(), -1, -2)
    c1 = mp.G * J ** (-2.0 / 3.0)
    c2 = mp.K * lnJ - 3.0 * mp.Kalpha * dth - c1 * normF / 3.0
    return c1[..., None, None] * kin.F + c2[..., None, None] * FinvT


@dataclass
class Tangents:
    """Derivatives of P: with respect to F, theta, and the interpolated
    coefficients (the latter feed the design-sensitivity chain)."""
    dP_dF: np.ndarray
    dP_dtheta: np.ndarray
    dP_dK: np.ndarray
    dP_dG: np.ndarray
    dP_dKalpha: np.ndarray


def material_tangents(kin: Kinematics, mp: MaterialPoint) -> Tangents:
    J, lnJ, dth = _volumetric_pieces(kin, mp)
    F = kin.F
    normF = np.einsum("...ij,...ij->...", F, F) + 1.0
    FinvT = np.swapaxes(kin.Finv(), -1, -2)
    Jm23 = J ** (-2.0 / 3.0)
    c1 = mp.G * Jm23
    c2 = mp.K * lnJ - 3.0 * mp.Kalpha * dth - c1 * normF / 3.0

    eye = np.eye(2)
    # dP_ij/dF_kl, assembled term by term
    A = np.einsum("ik,jl->ijkl", eye, eye) * c1[..., None, None, None, None]
    A += np.einsum("...kl,...ij->...ijkl", FinvT, F) * (-2.0 / 3.0 * c1)[..., None, None, None, None]
    coef = mp.K + (2.0 / 9.0) * c1 * normF
    A += np.einsum("...kl,...ij->...ijkl", FinvT, FinvT) * coef[..., None, None, None, None]
    A += np.einsum("...kl,...ij->...ijkl", F, FinvT) * (-2.0 / 3.0 * c1)[..., None, None, None, None]
    A += np.einsum("...il,...kj->...ijkl", FinvT, FinvT) * (-c2)[..., None, None, None, None]

    dP_dtheta = -3.0 * mp.Kalpha[..., None, None] * FinvT
    dP_dK = lnJ[..., None, None] * FinvT
    dP_dG = Jm23[..., None, None] * (F - (normF / 3.0)[..., None, None] * FinvT)
    dP_dKalpha = -3.0 * dth[..., None, None] * FinvT
    return Tangents(A, dP_dtheta, dP_dK, dP_dG, dP_dKalpha)


@dataclass
class HeatFlux:
    """Referential Fourier flux and its linearizations."""
    q: np.ndarray
    dq_dgrad: np.ndarray
    dq_dF: np.ndarray
    dq_dkappa: np.ndarray


def heat_flux(kin: Kinematics, mp: MaterialPoint) -> HeatFlux:
    """q = -kappa J C^-1 grad(theta) with C = F^T F (in-plane block).

    Compression shrinks C and multiplies the through-thickness conductance,
    which is what turns a squeezed void layer into a conducting contact.
    """
    J = kin.J
    if np.any(J <= 0.0):
        raise ValueError("non-positive determinant of the deformation gradient")
    Finv = kin.Finv()
    FinvT = np.swapaxes(Finv, -1, -2)
    Cinv = np.einsum("...ik,...jk->...ij", Finv, Finv)  # F^-1 F^-T
    g = kin.grad_theta
    Cg = np.einsum("...ij,...j->...i", Cinv, g)
    Fg = np.einsum("...ij,...j->...i", FinvT, g)
    kJ = mp.kappa * J
    q = -kJ[..., None] * Cg
    dq_dgrad = -kJ[..., None, None] * Cinv
    dq_dF = -kJ[..., None, None, None] * (
        np.einsum("...kl,...i->...ikl", FinvT, Cg)
        - np.einsum("...il,...k->...ikl", Cinv, Fg)
        - np.einsum("...ki,...l->...ikl", FinvT, Cg)
    )
    dq_dkappa = -J[..., None] * Cg
    return HeatFlux(q, dq_dgrad, dq_dF, dq_dkappa)


def regularization_energy(d2u: np.ndarray, k_r: float) -> np.ndarray:
    """Density of the displacement-Hessian penalty.

    ``d2u[..., c, m]`` holds second derivatives of displacement component c,
    packed m = (xx, yy, xy). The full triple contraction counts the mixed
    derivative twice per component.
    """
    d2u = np.asarray(d2u, dtype=float)
    return 0.5 * k_r * (d2u[..., 0] ** 2 + d2u[..., 1] ** 2
                        + 2.0 * d2u[..., 2] ** 2).sum(axis=-1)

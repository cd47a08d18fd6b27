"""Matérn parameterisations and the SPDE/GMRF precision for nu = 1 in two dimensions."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import kv

from .errors import ConfigurationError, NumericalError, UnsupportedSmoothnessError
from .mesh import FemMatrices, Mesh


@dataclass(frozen=True)
class MaternParams:
    """Marginal sd ``sigma`` and practical range ``range_rho`` (correlation ~0.1 at rho)."""

    sigma: float
    range_rho: float
    nu: float = 1.0

    def __post_init__(self):
        if self.nu != 1:
            raise UnsupportedSmoothnessError(f"only nu = 1 is supported, got {self.nu}")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ConfigurationError(f"sigma must be positive, got {self.sigma}")
        if not (self.range_rho > 0 and math.isfinite(self.range_rho)):
            raise ConfigurationError(f"range_rho must be positive, got {self.range_rho}")

    @property
    def kappa(self) -> float:
        return math.sqrt(8 * self.nu) / self.range_rho

    @property
    def theta_micro(self) -> float:
        return self.sigma**2 * self.kappa ** (2 * self.nu)

    @property
    def tau(self) -> float:
        # stationary variance of the SPDE solution: sigma^2 = 1 / (4 pi kappa^2 tau^2)
        return 1.0 / math.sqrt(4 * math.pi * self.kappa**2 * self.sigma**2)

    @classmethod
    def from_kappa(cls, sigma: float, kappa: float, nu: float = 1.0) -> "MaternParams":
        return cls(sigma=sigma, range_rho=math.sqrt(8 * nu) / kappa, nu=nu)


def params_from_scale(sigma: float, s: float, nu: float = 1.0) -> MaternParams:
    """Simulation-study parameterisation kappa = sqrt(2 nu) / s, i.e. rho = 2 s."""
    if nu != 1:
        raise UnsupportedSmoothnessError(f"only nu = 1 is supported, got {nu}")
    if not s > 0:
        raise ConfigurationError(f"scale s must be positive, got {s}")
    return MaternParams.from_kappa(sigma, math.sqrt(2 * nu) / s, nu)


def matern_cov(h, params: MaternParams):
    """Matérn covariance at distance(s) ``h``."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise ValueError("distances must be non-negative")
    nu = params.nu
    x = params.kappa * h
    out = np.zeros_like(x)
    near = x < 1e-12
    mid = ~near & (x < 30.0)
    out[near] = params.sigma**2
    xm = x[mid]
    out[mid] = params.sigma**2 / (2 ** (nu - 1) * math.gamma(nu)) * xm**nu * kv(nu, xm)
    return out if out.ndim else float(out)


@dataclass(frozen=True, eq=False)
class SpdePrecision:
    Q: sp.csr_matrix
    params: MaternParams
    mesh_id: int


def spde_operator(fem: FemMatrices, kappa: float) -> sp.csr_matrix:
    """kappa^4 C + 2 kappa^2 G + G C^-1 G with the lumped (diagonal) mass C."""
    c = fem.mass_lumped
    G = fem.stiffness_G
    K = sp.diags(kappa**4 * c) + 2 * kappa**2 * G + G @ sp.diags(1.0 / c) @ G
    return sp.csr_matrix((K + K.T) * 0.5)


def spde_precision(mesh_or_fem, params: MaternParams) -> SpdePrecision:
    """Sparse precision of the nodal weights, scaled so the marginal sd is ``sigma``."""
    if params.nu != 1:
        raise UnsupportedSmoothnessError("SPDE precision needs nu = 1 (alpha = 2)")
    if isinstance(mesh_or_fem, Mesh):
        fem, mid = mesh_or_fem.fem(), id(mesh_or_fem)
    else:
        fem, mid = mesh_or_fem, id(mesh_or_fem)
    Q = params.tau**2 * spde_operator(fem, params.kappa)
    return SpdePrecision(Q=Q.tocsr(), params=params, mesh_id=mid)


def cholesky_lower(Q) -> np.ndarray:
    """Dense lower Cholesky factor; raises :class:`NumericalError` if not SPD."""
    M = Q.toarray() if sp.issparse(Q) else np.asarray(Q, dtype=float)
    try:
        return sla.cholesky(M, lower=True, check_finite=True)
    except (sla.LinAlgError, ValueError) as exc:
        raise NumericalError(f"Cholesky factorisation failed: {exc}") from exc


def sample_grf(precision: SpdePrecision, seed, size: int | None = None) -> np.ndarray:
    """Draw x ~ N(0, Q^-1) by back-substituting standard normals through L^T (Q = L L^T)."""
    L = cholesky_lower(precision.Q)
    rng = np.random.default_rng(seed)
    m = L.shape[0]
    z = rng.standard_normal(m if size is None else (m, size))
    return sla.solve_triangular(L, z, lower=True, trans="T")


class SpdeLogDet:
    """log|K(kappa)| for K = (kappa^2 C + G) C^-1 (kappa^2 C + G) in O(m) per kappa.

    Uses the eigenvalues of C^-1/2 G C^-1/2, computed once per mesh.
    """

    def __init__(self, fem: FemMatrices):
        c = fem.mass_lumped
        s = 1.0 / np.sqrt(c)
        S = (sp.diags(s) @ fem.stiffness_G @ sp.diags(s)).toarray()
        lam = sla.eigvalsh(S)
        self.eig = np.clip(lam, 0.0, None)
        self.logdet_c = float(np.log(c).sum())

    def __call__(self, kappa: float) -> float:
        return self.logdet_c + 2.0 * float(np.log(kappa**2 + self.eig).sum())


def sample_spde(fem: FemMatrices, params: MaternParams, seed, size: int | None = None) -> np.ndarray:
    """Exact draw from N(0, Q^-1) for the SPDE precision via one sparse solve.

    With K = kappa^2 C + G, x = K^-1 C^1/2 z / tau has covariance
    (tau^2 K C^-1 K)^-1 = Q^-1, so no Cholesky factor of Q is needed.
    """
    c = fem.mass_lumped
    K = (sp.diags(params.kappa**2 * c) + fem.stiffness_G).tocsc()
    rng = np.random.default_rng(seed)
    m = len(c)
    z = rng.standard_normal(m if size is None else (m, size))
    rhs = (np.sqrt(c) * z.T).T / params.tau
    return spla.splu(K).solve(rhs)

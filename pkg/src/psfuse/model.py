"""Joint latent-Gaussian model for the PSmelding, Melding and PSgeo variants.

Latent vector layout is ``[x_1 .. x_m, mu, alpha]``: the SPDE weights followed
by the observation intercept and the log-intensity intercept.  Hyperparameters
live on the unconstrained scale ``(log tau_s, log tau_B, log sigma, log rho, gamma)``,
filtered to the ones the variant (and the data) actually use.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .errors import ConfigurationError, EmptyModelError, InputError, NumericalError
from .matern import MaternParams, SpdeLogDet
from .mesh import Mesh, build_structured_mesh, project_areas, project_points, read_mesh
from .simulate import Dataset

VARIANTS = ("psmelding", "melding", "psgeo")
_VARIANT_ALIASES = {"psmelding": "psmelding", "melding": "melding", "psgeo": "psgeo"}

HYPER_ORDER = ("log_tau_s", "log_tau_B", "log_sigma", "log_range", "gamma")

LOG_2PI = math.log(2 * math.pi)


def normalise_variant(name: str) -> str:
    key = str(name).strip().lower().replace("-", "").replace("_", "")
    if key not in _VARIANT_ALIASES:
        raise ConfigurationError(f"unknown model variant {name!r}; choose PSmelding, Melding or PSgeo")
    return _VARIANT_ALIASES[key]


# ---------------------------------------------------------------------------
# priors


@dataclass(frozen=True)
class PCPrior:
    """Penalised-complexity tail statement.

    For sigma: P(sigma > threshold) = prob.  For the range: P(rho < threshold) = prob.
    """

    threshold: float
    prob: float

    def __post_init__(self):
        if not (self.threshold > 0 and 0 < self.prob < 1):
            raise ConfigurationError(f"PC prior needs threshold > 0 and 0 < prob < 1, got {self}")


@dataclass(frozen=True)
class LogNormalPrior:
    median: float
    sd_log: float

    def __post_init__(self):
        if not (self.median > 0 and self.sd_log > 0):
            raise ConfigurationError(f"log-normal prior needs positive median and sd_log, got {self}")


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) on a precision; applied as a log-gamma density on its logarithm."""

    shape: float = 1.0
    rate: float = 5e-5

    def __post_init__(self):
        if not (self.shape > 0 and self.rate > 0):
            raise ConfigurationError(f"gamma prior needs positive shape and rate, got {self}")


def pc_sigma_rate(prior: PCPrior) -> float:
    # sigma ~ Exp(rate): P(sigma > s0) = exp(-rate s0)
    return -math.log(prior.prob) / prior.threshold


def pc_range_rate(prior: PCPrior, dim: int = 2) -> float:
    # rho^(-d/2) ~ Exp(rate): P(rho < r0) = exp(-rate r0^(-d/2))
    return -math.log(prior.prob) * prior.threshold ** (dim / 2)


def log_prior_log_sigma(log_sigma: float, prior) -> float:
    if isinstance(prior, PCPrior):
        lam = pc_sigma_rate(prior)
        return math.log(lam) - lam * math.exp(log_sigma) + log_sigma
    return _log_normal_on_log(log_sigma, prior)


def log_prior_log_range(log_range: float, prior, dim: int = 2) -> float:
    if isinstance(prior, PCPrior):
        lam = pc_range_rate(prior, dim)
        h = dim / 2
        return math.log(lam * h) - h * log_range - lam * math.exp(-h * log_range)
    return _log_normal_on_log(log_range, prior)


def _log_normal_on_log(z: float, prior: LogNormalPrior) -> float:
    r = (z - math.log(prior.median)) / prior.sd_log
    return -0.5 * r * r - math.log(prior.sd_log) - 0.5 * LOG_2PI


def log_prior_log_precision(log_tau: float, prior: GammaPrior) -> float:
    a, b = prior.shape, prior.rate
    return a * math.log(b) - float(gammaln(a)) + a * log_tau - b * math.exp(log_tau)


def _prior_from_dict(d, kind):
    if d is None:
        return None
    if not isinstance(d, dict):
        raise ConfigurationError(f"{kind} prior must be an object")
    d = dict(d)
    typ = d.pop("type", "pc")
    allowed = {"pc": PCPrior, "lognormal": LogNormalPrior}
    if typ not in allowed:
        raise ConfigurationError(f"{kind} prior type must be 'pc' or 'lognormal', got {typ!r}")
    cls = allowed[typ]
    _check_keys(d, {f.name for f in fields(cls)}, f"{kind} prior")
    return cls(**d)


def _prior_to_dict(p):
    if p is None:
        return None
    d = asdict(p)
    d["type"] = "pc" if isinstance(p, PCPrior) else "lognormal"
    return d


def _check_keys(d: dict, allowed: set, where: str):
    unknown = sorted(set(d) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {where}: {', '.join(unknown)}")


@dataclass(frozen=True)
class Priors:
    """Prior settings.

    ``sigma`` / ``range`` default to PC priors; a ``None`` range threshold is
    resolved to 5% of the larger domain side when the model is assembled.
    """

    sigma: PCPrior | LogNormalPrior = PCPrior(3.0, 0.01)
    range: PCPrior | LogNormalPrior | None = None
    tau_s: GammaPrior = GammaPrior()
    tau_B: GammaPrior = GammaPrior()
    tau_gamma: float = 1.0
    intercept_sd: float = 31.6

    def __post_init__(self):
        if not (self.tau_gamma > 0 and self.intercept_sd > 0):
            raise ConfigurationError("tau_gamma and intercept_sd must be positive")

    def resolved(self, bbox) -> "Priors":
        if self.range is not None:
            return self
        x0, y0, x1, y1 = bbox
        rng = PCPrior(0.05 * max(x1 - x0, y1 - y0), 0.01)
        return Priors(self.sigma, rng, self.tau_s, self.tau_B, self.tau_gamma, self.intercept_sd)

    def to_dict(self) -> dict:
        return {
            "sigma": _prior_to_dict(self.sigma),
            "range": _prior_to_dict(self.range),
            "tau_s": asdict(self.tau_s),
            "tau_B": asdict(self.tau_B),
            "tau_gamma": self.tau_gamma,
            "intercept_sd": self.intercept_sd,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Priors":
        _check_keys(d, {"sigma", "range", "tau_s", "tau_B", "tau_gamma", "intercept_sd"}, "priors")
        kw = {}
        if "sigma" in d:
            kw["sigma"] = _prior_from_dict(d["sigma"], "sigma")
        if "range" in d:
            kw["range"] = _prior_from_dict(d["range"], "range")
        for k in ("tau_s", "tau_B"):
            if k in d:
                _check_keys(d[k], {"shape", "rate"}, f"{k} prior")
                kw[k] = GammaPrior(**d[k])
        for k in ("tau_gamma", "intercept_sd"):
            if k in d:
                kw[k] = float(d[k])
        return cls(**kw)


@dataclass(frozen=True)
class MeshSpec:
    """How to triangulate: a structured mesh (``edge``, ``extension_factor``) or a mesh ``file``."""

    edge: float | None = None
    extension_factor: float = 0.2
    file: str | None = None

    def build(self, bbox) -> Mesh:
        if self.file is not None:
            return read_mesh(self.file, domain_bbox=bbox)
        x0, y0, x1, y1 = bbox
        edge = self.edge if self.edge is not None else max(x1 - x0, y1 - y0) / 20.0
        return build_structured_mesh(bbox, edge, self.extension_factor)


@dataclass(frozen=True)
class ModelSpec:
    variant: str = "psmelding"
    priors: Priors = field(default_factory=Priors)
    mesh: MeshSpec = field(default_factory=MeshSpec)
    nu: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "variant", normalise_variant(self.variant))
        if self.nu != 1:
            raise ConfigurationError("only nu = 1 is supported")

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "priors": self.priors.to_dict(),
            "mesh": asdict(self.mesh),
            "tau_gamma": self.priors.tau_gamma,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        _check_keys(d, {"variant", "priors", "mesh", "tau_gamma"}, "model spec")
        pri = dict(d.get("priors") or {})
        if "tau_gamma" in d:
            pri["tau_gamma"] = d["tau_gamma"]
        mesh = d.get("mesh") or {}
        _check_keys(mesh, {"edge", "extension_factor", "file"}, "mesh spec")
        return cls(
            variant=d.get("variant", "psmelding"),
            priors=Priors.from_dict(pri),
            mesh=MeshSpec(**mesh),
        )

    @classmethod
    def from_json(cls, path) -> "ModelSpec":
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
        if not isinstance(d, dict):
            raise ConfigurationError(f"{path}: model spec must be a JSON object")
        return cls.from_dict(d)


# ---------------------------------------------------------------------------
# assembled model


@dataclass(eq=False)
class Block:
    """One likelihood block.

    Gaussian rows have linear predictor ``A x + mu``; poisson-pseudo rows have
    ``alpha + gamma * A x`` and contribute ``y * eta - exposure * exp(eta)``.
    """

    name: str
    family: str
    A: sp.csr_matrix
    y: np.ndarray
    exposure: np.ndarray | None = None
    precision: str | None = None

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]


@dataclass(eq=False)
class AssembledModel:
    variant: str
    mesh: Mesh
    priors: Priors
    blocks: list[Block]
    hyper_names: tuple[str, ...]
    data: Dataset | None = None
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.m = self.mesh.n_nodes
        self.n_latent = self.m + 2
        self.i_mu = self.m
        self.i_alpha = self.m + 1
        fem = self.mesh.fem()
        self._c = fem.mass_lumped
        G = fem.stiffness_G
        self._G = G
        self._GCG = (G @ sp.diags(1.0 / self._c) @ G).tocsr()
        self._logdet = SpdeLogDet(fem)
        self._dense = None

    # -- hyperparameters ---------------------------------------------------
    @property
    def n_hyper(self) -> int:
        return len(self.hyper_names)

    def unpack(self, zeta) -> dict:
        z = np.asarray(zeta, dtype=float).ravel()
        if len(z) != self.n_hyper:
            raise InputError(f"expected {self.n_hyper} hyperparameters {self.hyper_names}, got {len(z)}")
        d = dict(zip(self.hyper_names, z.tolist()))
        out = {
            "sigma": math.exp(d["log_sigma"]),
            "range": math.exp(d["log_range"]),
            "gamma": d.get("gamma", 0.0),
        }
        if "log_tau_s" in d:
            out["tau_s"] = math.exp(d["log_tau_s"])
        if "log_tau_B" in d:
            out["tau_B"] = math.exp(d["log_tau_B"])
        return out

    def pack(self, **values) -> np.ndarray:
        """Inverse of :meth:`unpack` from natural-scale values (tau_s, tau_B, sigma, range, gamma)."""
        out = []
        for name in self.hyper_names:
            if name == "gamma":
                out.append(float(values.get("gamma", 0.0)))
            else:
                key = {"log_tau_s": "tau_s", "log_tau_B": "tau_B", "log_sigma": "sigma", "log_range": "range"}[name]
                out.append(math.log(values[key]))
        return np.array(out)

    def matern(self, zeta) -> MaternParams:
        h = self.unpack(zeta)
        return MaternParams(sigma=h["sigma"], range_rho=h["range"])

    # -- prior of the latent field ----------------------------------------
    def spde_coefficients(self, zeta):
        p = self.matern(zeta)
        k2 = p.kappa**2
        return p.tau**2, k2, p

    def field_precision(self, zeta) -> sp.csr_matrix:
        t2, k2, _ = self.spde_coefficients(zeta)
        Q = t2 * (sp.diags(k2 * k2 * self._c) + 2 * k2 * self._G + self._GCG)
        return Q.tocsr()

    def intercept_precision(self) -> float:
        return 1.0 / self.priors.intercept_sd**2

    def latent_log_det(self, zeta) -> float:
        """log |Q_aug| of the full latent prior precision."""
        t2, k2, p = self.spde_coefficients(zeta)
        return self.m * math.log(t2) + self._logdet(p.kappa) + 2 * math.log(self.intercept_precision())

    def latent_quad(self, zeta, u) -> float:
        x = u[: self.m]
        Q = self.field_precision(zeta)
        ip = self.intercept_precision()
        return float(x @ (Q @ x)) + ip * (u[self.i_mu] ** 2 + u[self.i_alpha] ** 2)

    def log_latent_prior(self, zeta, u) -> float:
        return 0.5 * self.latent_log_det(zeta) - 0.5 * self.n_latent * LOG_2PI - 0.5 * self.latent_quad(zeta, u)

    # -- linear predictors ---------------------------------------------------
    def block(self, name: str) -> Block | None:
        for b in self.blocks:
            if b.name == name:
                return b
        return None

    def eta(self, blk: Block, u, zeta) -> np.ndarray:
        x = u[: self.m]
        if blk.family == "gaussian":
            return blk.A @ x + u[self.i_mu]
        gamma = self.unpack(zeta)["gamma"]
        return u[self.i_alpha] + gamma * (blk.A @ x)

    def log_joint(self, u, zeta) -> float:
        return self.log_latent_prior(zeta, u) + sum(log_likelihood_blocks(self, u, zeta).values())


def _node_pseudo_block(mesh: Mesh, A_points: sp.csr_matrix) -> Block:
    m = mesh.n_nodes
    w = mesh.dual().weights
    N = A_points.shape[0]
    A = sp.vstack([sp.identity(m, format="csr"), A_points]).tocsr()
    y = np.concatenate([np.zeros(m), np.ones(N)])
    expo = np.concatenate([w, np.zeros(N)])
    return Block("pseudo", "poisson-pseudo", A, y, expo)


def assemble(spec: ModelSpec, data: Dataset, mesh: Mesh | None = None) -> AssembledModel:
    """Build the likelihood blocks and hyperparameter layout for ``spec.variant``."""
    variant = spec.variant
    if mesh is None:
        mesh = spec.mesh.build(data.bbox)
    notes: list[str] = []
    n_pts, n_areas = data.n_points, data.n_areas
    if variant == "psgeo" and n_areas:
        notes.append("PSgeo ignores areal observations")
        n_areas = 0
    if variant == "psgeo" and n_pts == 0:
        raise EmptyModelError("PSgeo needs point observations")
    if n_pts == 0 and n_areas == 0:
        raise EmptyModelError(f"{variant} model has neither point nor areal observations")

    blocks: list[Block] = []
    A_pts = project_points(mesh, data.point_xy).A if n_pts else sp.csr_matrix((0, mesh.n_nodes))
    if n_pts:
        blocks.append(Block("point", "gaussian", A_pts, data.point_values.copy(), precision="tau_s"))
    if n_areas:
        proj = project_areas(mesh, data.area_geometries())
        notes.extend(proj.warnings)
        blocks.append(Block("area", "gaussian", proj.A, data.area_values.copy(), precision="tau_B"))
    preferential = variant in ("psmelding", "psgeo") and n_pts > 0
    if preferential:
        blocks.append(_node_pseudo_block(mesh, A_pts))

    names = []
    if n_pts:
        names.append("log_tau_s")
    if n_areas:
        names.append("log_tau_B")
    names += ["log_sigma", "log_range"]
    if preferential:
        names.append("gamma")
    return AssembledModel(
        variant=variant,
        mesh=mesh,
        priors=spec.priors.resolved(mesh.domain_bbox),
        blocks=blocks,
        hyper_names=tuple(names),
        data=data,
        notes=notes,
    )


def log_prior_hyper(zeta, model: AssembledModel) -> float:
    """Log prior density of the unconstrained hyperparameter vector (Jacobians included)."""
    z = np.asarray(zeta, dtype=float)
    if not np.isfinite(z).all():
        return -math.inf
    d = dict(zip(model.hyper_names, z.tolist()))
    pr = model.priors
    lp = log_prior_log_sigma(d["log_sigma"], pr.sigma) + log_prior_log_range(d["log_range"], pr.range)
    if "log_tau_s" in d:
        lp += log_prior_log_precision(d["log_tau_s"], pr.tau_s)
    if "log_tau_B" in d:
        lp += log_prior_log_precision(d["log_tau_B"], pr.tau_B)
    if "gamma" in d:
        g = d["gamma"] / pr.tau_gamma
        lp += -0.5 * g * g - math.log(pr.tau_gamma) - 0.5 * LOG_2PI
    return lp if math.isfinite(lp) else -math.inf


def log_likelihood_blocks(model: AssembledModel, latent, zeta) -> dict[str, float]:
    """Per-block log-likelihood at latent vector ``latent`` (length m + 2)."""
    u = np.asarray(latent, dtype=float)
    if u.shape != (model.n_latent,):
        raise InputError(f"latent vector must have length {model.n_latent}")
    h = model.unpack(zeta)
    out = {}
    for blk in model.blocks:
        eta = model.eta(blk, u, zeta)
        if not np.isfinite(eta).all():
            raise NumericalError(f"non-finite linear predictor in block '{blk.name}'")
        if blk.family == "gaussian":
            tau = h[blk.precision]
            r = blk.y - eta
            out[blk.name] = float(0.5 * blk.n_rows * (math.log(tau) - LOG_2PI) - 0.5 * tau * (r @ r))
        else:
            live = blk.exposure > 0
            out[blk.name] = float(blk.y @ eta - blk.exposure[live] @ np.exp(eta[live]))
    return out

"""Simplified INLA: Laplace approximation of the latent field given hyperparameters,
Nelder-Mead search for the hyperparameter mode, an axis-aligned integration grid
and Gaussian-mixture posterior summaries / predictions.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq, minimize
from scipy.special import ndtr, ndtri

from .errors import InputError, NumericalError
from .mesh import project_points
from .model import LOG_2PI, AssembledModel, log_prior_hyper

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Controls:
    gtol: float = 1e-8
    max_newton: int = 50
    grid_step: float = 0.75
    grid_prune: float = 0.01
    grid: str = "star"  # "star": centre + 2 points per axis; "full": 3**d tensor grid
    nm_xatol: float = 1e-3
    nm_fatol: float = 1e-4
    nm_maxfev: int = 1000
    nm_initial_step: float = 0.5
    stuck_evals: int = 200
    fd_step: float = 0.05
    theta_samples: int = 4000
    seed: int = 0
    init: dict | None = None


@dataclass(eq=False)
class LatentGaussianApprox:
    mode: np.ndarray
    precision_at_mode: sp.csc_matrix
    log_det_half: float
    log_joint: float
    converged: bool
    iterations: int
    grad_norm: float
    _linv: np.ndarray | None = field(default=None, repr=False)

    @property
    def chol(self) -> np.ndarray:
        """Dense lower Cholesky factor of the precision at the mode."""
        try:
            return sla.cholesky(self.precision_at_mode.toarray(), lower=True)
        except sla.LinAlgError as exc:
            raise NumericalError(f"precision at the mode is not positive definite: {exc}") from exc

    def chol_inverse(self) -> np.ndarray:
        """L^-1 for H = L L^T (triangular solve against the factor)."""
        if self._linv is None:
            L = self.chol
            self._linv = sla.solve_triangular(L, np.eye(L.shape[0]), lower=True)
        return self._linv

    def marginal_variances(self) -> np.ndarray:
        Li = self.chol_inverse()
        return np.einsum("ij,ij->j", Li, Li)

    def linear_variances(self, B) -> np.ndarray:
        """Var(B u) row-wise for sparse/dense rows ``B``."""
        Li = self.chol_inverse()
        W = B @ Li.T
        W = np.asarray(W)
        return np.einsum("ij,ij->i", W, W)


# ---------------------------------------------------------------------------
# per-model sparse workspace


class _Factor:
    """Sparse LU of an SPD matrix (symmetric mode, no pivoting): log-det and solves."""

    def __init__(self, H: sp.csc_matrix):
        try:
            self.lu = spla.splu(H, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options={"SymmetricMode": True})
        except RuntimeError as exc:
            raise NumericalError(f"factorisation failed: {exc}") from exc
        piv = self.lu.U.diagonal()
        if not (piv > 0).all():
            raise NumericalError("precision matrix is not positive definite")
        self.log_det_half = 0.5 * float(np.log(piv).sum())

    def solve(self, b):
        return self.lu.solve(b)


def _coo_keys(M, n):
    M = M.tocoo()
    return M.col.astype(np.int64) * n + M.row, M.data


class _Workspace:
    """Fixed sparsity pattern of the latent Hessian and the scatter maps into it."""

    def __init__(self, model: AssembledModel):
        self.model = model
        m, n = model.m, model.n_latent
        self.m, self.n = m, n
        pad = lambda M: sp.block_diag([M, sp.csr_matrix((2, 2))]).tocsr()
        comps = {
            "c": pad(sp.diags(model._c)),
            "G": pad(model._G),
            "GCG": pad(model._GCG),
            "int": sp.csr_matrix((np.ones(2), ([m, m + 1], [m, m + 1])), shape=(n, n)),
        }
        self.gauss = []
        for blk in model.blocks:
            if blk.family != "gaussian":
                continue
            B = sp.hstack([blk.A, np.ones((blk.n_rows, 1)), np.zeros((blk.n_rows, 1))]).tocsr()
            comps["g:" + blk.name] = (B.T @ B).tocsr()
            self.gauss.append((blk, B, B.T @ blk.y))

        self.pseudo = model.block("pseudo")
        pair_rows = pair_cols = None
        if self.pseudo is not None:
            P = self.pseudo
            live = P.exposure > 0
            A = P.A[live].tocsr()
            A.sum_duplicates()
            self.p_live_A = A
            self.p_live_AT = A.T.tocsr()
            self.p_live_e = P.exposure[live]
            self.p_Aty = P.A.T @ P.y
            self.p_sumy = float(P.y.sum())
            # (i, j, k, A_ki A_kj) for the field-field block of A^T W A
            rr, ii, jj, vv = [], [], [], []
            for k in range(A.shape[0]):
                sl = slice(A.indptr[k], A.indptr[k + 1])
                idx, val = A.indices[sl], A.data[sl]
                a, b = np.meshgrid(np.arange(len(idx)), np.arange(len(idx)), indexing="ij")
                rr.append(np.full(a.size, k))
                ii.append(idx[a.ravel()])
                jj.append(idx[b.ravel()])
                vv.append(val[a.ravel()] * val[b.ravel()])
            self.pair_row = np.concatenate(rr)
            self.pair_val = np.concatenate(vv)
            pair_rows, pair_cols = np.concatenate(ii), np.concatenate(jj)
            Ac = A.tocoo()
            self.col_row, self.col_node, self.col_val = Ac.row, Ac.col, Ac.data

        # union pattern
        keys = [_coo_keys(M, n)[0] for M in comps.values()]
        if self.pseudo is not None:
            keys.append(pair_cols.astype(np.int64) * n + pair_rows)
            keys.append(np.int64(m + 1) * n + self.col_node)
            keys.append(self.col_node.astype(np.int64) * n + (m + 1))
        keys.append(np.arange(n, dtype=np.int64) * (n + 1))
        pk = np.unique(np.concatenate(keys))
        self.pattern_keys = pk
        cols, rows = np.divmod(pk, n)
        self.indices = rows.astype(np.int32)
        self.indptr = np.searchsorted(cols, np.arange(n + 1)).astype(np.int32)
        self.nnz = len(pk)
        self.comp = {}
        for name, M in comps.items():
            k, v = _coo_keys(M, n)
            self.comp[name] = np.bincount(np.searchsorted(pk, k), weights=v, minlength=self.nnz)
        if self.pseudo is not None:
            self.pair_pos = np.searchsorted(pk, pair_cols.astype(np.int64) * n + pair_rows)
            self.colA_pos = np.searchsorted(pk, np.int64(m + 1) * n + self.col_node)
            self.colB_pos = np.searchsorted(pk, self.col_node.astype(np.int64) * n + (m + 1))
            self.aa_pos = int(np.searchsorted(pk, np.int64(m + 1) * n + (m + 1)))

    def matrix(self, data) -> sp.csc_matrix:
        return sp.csc_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def state(self, zeta):
        return _ZetaState(self, zeta)


class _ZetaState:
    def __init__(self, ws: _Workspace, zeta):
        model = ws.model
        self.ws = ws
        self.zeta = np.asarray(zeta, dtype=float)
        h = model.unpack(self.zeta)
        self.h = h
        self.gamma = h["gamma"]
        t2, k2, _ = model.spde_coefficients(self.zeta)
        self.Q = model.field_precision(self.zeta)
        self.ip = model.intercept_precision()
        c = ws.comp
        data = t2 * (k2 * k2 * c["c"] + 2 * k2 * c["G"] + c["GCG"]) + self.ip * c["int"]
        for blk, _, _ in ws.gauss:
            data = data + h[blk.precision] * c["g:" + blk.name]
        self.H0 = data
        n = ws.n
        self.const = 0.5 * model.latent_log_det(self.zeta) - 0.5 * n * LOG_2PI
        for blk, *_ in ws.gauss:
            self.const += 0.5 * blk.n_rows * (math.log(h[blk.precision]) - LOG_2PI)

    def _pseudo_eta(self, u):
        ws = self.ws
        return u[ws.m + 1] + self.gamma * (ws.p_live_A @ u[: ws.m])

    def value(self, u) -> float:
        ws = self.ws
        x = u[: ws.m]
        f = self.const - 0.5 * (x @ (self.Q @ x) + self.ip * (u[ws.m] ** 2 + u[ws.m + 1] ** 2))
        for blk, B, _ in ws.gauss:
            r = blk.y - B @ u
            f -= 0.5 * self.h[blk.precision] * (r @ r)
        if ws.pseudo is not None:
            eta = self._pseudo_eta(u)
            with np.errstate(over="ignore"):
                f += self.gamma * (ws.p_Aty @ x) + ws.p_sumy * u[ws.m + 1] - ws.p_live_e @ np.exp(eta)
        return float(f)

    def grad_hess(self, u, need_hess=True):
        """Gradient and (sparse) negative Hessian of the joint log density at ``u``."""
        ws = self.ws
        m = ws.m
        x = u[:m]
        g = np.empty(ws.n)
        g[:m] = -(self.Q @ x)
        g[m] = -self.ip * u[m]
        g[m + 1] = -self.ip * u[m + 1]
        for blk, B, Bty in ws.gauss:
            g += self.h[blk.precision] * (Bty - B.T @ (B @ u))
        data = self.H0
        if ws.pseudo is not None:
            eta = self._pseudo_eta(u)
            w = ws.p_live_e * np.exp(eta)
            g[:m] += self.gamma * (ws.p_Aty - ws.p_live_AT @ w)
            g[m + 1] += ws.p_sumy - w.sum()
            if need_hess:
                gam = self.gamma
                data = data.copy()
                data += np.bincount(ws.pair_pos, weights=gam * gam * ws.pair_val * w[ws.pair_row], minlength=ws.nnz)
                cv = gam * ws.col_val * w[ws.col_row]
                data += np.bincount(ws.colA_pos, weights=cv, minlength=ws.nnz)
                data += np.bincount(ws.colB_pos, weights=cv, minlength=ws.nnz)
                data[ws.aa_pos] += w.sum()
        return g, (ws.matrix(data) if need_hess else None)


def _workspace(model: AssembledModel) -> _Workspace:
    if model._dense is None:
        model._dense = _Workspace(model)
    return model._dense


def _initial_latent(model: AssembledModel, ws: _Workspace) -> np.ndarray:
    u = np.zeros(model.n_latent)
    if ws.pseudo is not None:
        tot = ws.p_live_e.sum()
        if tot > 0 and ws.p_sumy > 0:
            u[model.i_alpha] = math.log(ws.p_sumy / tot)
    return u


def find_mode(model: AssembledModel, zeta, warm_start=None, controls: Controls | None = None) -> LatentGaussianApprox:
    """Damped Newton iterations for the mode of log p(u | y, zeta)."""
    ctl = controls or Controls()
    ws = _workspace(model)
    st = ws.state(zeta)
    u = _initial_latent(model, ws) if warm_start is None else np.array(warm_start, dtype=float)
    if u.shape != (model.n_latent,):
        raise InputError(f"warm start must have length {model.n_latent}")
    f = st.value(u)
    if not math.isfinite(f):
        u = _initial_latent(model, ws)
        f = st.value(u)
    gaussian_only = ws.pseudo is None
    converged = False
    it = 0
    F = None
    while True:
        g, H = st.grad_hess(u, need_hess=F is None or not gaussian_only)
        if H is not None:
            F = _Factor(H)
            Hm = H
        gnorm = float(np.abs(g).max())
        if gnorm < ctl.gtol:
            converged = True
            break
        if it >= ctl.max_newton:
            break
        d = F.solve(g)
        if float(np.abs(d).max()) <= 1e-12 * (1 + float(np.abs(u).max())):
            converged = True
            break
        t = 1.0
        while True:
            un = u + t * d
            fn = st.value(un)
            if math.isfinite(fn) and fn >= f - 1e-12 * abs(f):
                break
            t *= 0.5
            if t < 1e-10:
                break
        it += 1
        if t < 1e-10:
            # no ascent left within round-off: treat as stationary if the gradient is tiny
            converged = gnorm < 1e3 * ctl.gtol
            break
        u, f = un, fn
    return LatentGaussianApprox(
        mode=u,
        precision_at_mode=Hm,
        log_det_half=F.log_det_half,
        log_joint=f,
        converged=converged,
        iterations=it,
        grad_norm=gnorm,
    )


def laplace(model: AssembledModel, zeta, warm_start=None, controls=None):
    """(log posterior of zeta up to a constant, latent approximation)."""
    lp = log_prior_hyper(zeta, model)
    if not math.isfinite(lp):
        return -math.inf, None
    ap = find_mode(model, zeta, warm_start, controls)
    n = model.n_latent
    return lp + ap.log_joint - ap.log_det_half + 0.5 * n * LOG_2PI, ap


def log_posterior_hyper(model: AssembledModel, zeta, warm_start=None, controls=None) -> float:
    """Laplace-approximated log pi(zeta | y) (unnormalised)."""
    return laplace(model, zeta, warm_start, controls)[0]


# ---------------------------------------------------------------------------
# fitting


@dataclass(eq=False)
class GridPoint:
    zeta: np.ndarray
    log_post: float
    weight: float
    approx: LatentGaussianApprox


@dataclass(eq=False)
class FitResult:
    variant: str
    hyper_names: tuple
    zeta_mode: np.ndarray
    hyper_cov: np.ndarray
    hyper_summaries: dict
    derived_summaries: dict
    fixed_effect_summaries: dict
    latent_mean: np.ndarray
    latent_sd: np.ndarray
    grid: list
    diagnostics: dict

    @property
    def converged(self) -> bool:
        return bool(self.diagnostics.get("converged", False))

    def hyper_table(self) -> list:
        return [(g.zeta.tolist(), g.weight, g.log_post) for g in self.grid]

    def to_dict(self) -> dict:
        return {
            "variant": self.variant,
            "hyper_names": list(self.hyper_names),
            "zeta_mode": self.zeta_mode.tolist(),
            "hyper_cov": self.hyper_cov.tolist(),
            "hyperparameters": self.hyper_summaries,
            "derived": self.derived_summaries,
            "fixed_effects": self.fixed_effect_summaries,
            "grid": [{"zeta": z, "weight": w, "log_post": lp} for z, w, lp in self.hyper_table()],
            "diagnostics": self.diagnostics,
        }


def initial_hyper(model: AssembledModel, init: dict | None = None) -> np.ndarray:
    """log tau at log 10, sigma from the sample sd, rho at a quarter of the domain diagonal, gamma 0."""
    data = model.data
    vals = None
    if data is not None:
        vals = data.point_values if data.n_points > 1 else data.area_values
    sd = float(np.std(vals, ddof=1)) if vals is not None and len(vals) > 1 else 1.0
    if not (sd > 0 and math.isfinite(sd)):
        sd = 1.0
    x0, y0, x1, y1 = model.mesh.domain_bbox
    start = {"tau_s": 10.0, "tau_B": 10.0, "sigma": sd, "range": 0.25 * math.hypot(x1 - x0, y1 - y0), "gamma": 0.0}
    if init:
        start.update(init)
    return model.pack(**start)


class _Stuck(Exception):
    pass


def _fd_hessian(fun, z0, f0, h):
    d = len(z0)
    H = np.zeros((d, d))
    fp = np.empty(d)
    fm = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        fp[i] = fun(z0 + e)
        fm[i] = fun(z0 - e)
        H[i, i] = (fp[i] - 2 * f0 + fm[i]) / h**2
    for i in range(d):
        for j in range(i + 1, d):
            ei = np.zeros(d)
            ej = np.zeros(d)
            ei[i] = h
            ej[j] = h
            v = (fun(z0 + ei + ej) - fun(z0 + ei - ej) - fun(z0 - ei + ej) + fun(z0 - ei - ej)) / (4 * h * h)
            H[i, j] = H[j, i] = v
    return H


def _mixture_quantile(means, sds, weights, q):
    means = np.asarray(means, float)
    sds = np.asarray(sds, float)
    weights = np.asarray(weights, float)
    if len(means) == 1:
        return float(means[0] + sds[0] * ndtri(q))
    lo = float((means - 10 * sds).min())
    hi = float((means + 10 * sds).max())
    return float(brentq(lambda v: float(weights @ ndtr((v - means) / sds)) - q, lo, hi, xtol=1e-12))


def _mixture_summary(means, sds, weights) -> dict:
    means = np.asarray(means, float)
    sds = np.maximum(np.asarray(sds, float), 1e-300)
    mean = float(weights @ means)
    var = float(weights @ (sds**2 + means**2) - mean**2)
    return {
        "mean": mean,
        "sd": math.sqrt(max(var, 0.0)),
        "q025": _mixture_quantile(means, sds, weights, 0.025),
        "q975": _mixture_quantile(means, sds, weights, 0.975),
    }


def _transformed_summary(m: float, v: float, transform: str) -> dict:
    s = math.sqrt(max(v, 0.0))
    z = 1.959963984540054
    if transform == "exp":
        mean = math.exp(m + 0.5 * v)
        return {
            "mean": mean,
            "sd": mean * math.sqrt(math.expm1(v)),
            "q025": math.exp(m - z * s),
            "q975": math.exp(m + z * s),
            "mode": math.exp(m - v),
        }
    return {"mean": m, "sd": s, "q025": m - z * s, "q975": m + z * s, "mode": m}


_NATURAL = {"log_tau_s": "tau_s", "log_tau_B": "tau_B", "log_sigma": "sigma", "log_range": "range", "gamma": "gamma"}


def fit(model: AssembledModel, controls: Controls | None = None) -> FitResult:
    """Hyperparameter mode by Nelder-Mead, axis-aligned integration grid, mixture summaries."""
    ctl = controls or Controls()
    t_start = time.perf_counter()
    d = model.n_hyper
    cache = {"u": None}
    counter = {"n": 0, "since": 0, "best": -math.inf, "best_z": None}

    def neg_lp(z, track=True):
        try:
            val, ap = laplace(model, z, cache["u"], ctl)
        except NumericalError:
            return math.inf
        if ap is None or not math.isfinite(val):
            return math.inf
        if ap.converged:
            cache["u"] = ap.mode
        if track:
            counter["n"] += 1
            if val > counter["best"] + 1e-9:
                counter["best"], counter["best_z"], counter["since"] = val, np.array(z), 0
            else:
                counter["since"] += 1
                if counter["since"] >= ctl.stuck_evals:
                    raise _Stuck
        return -val

    z0 = initial_hyper(model, ctl.init)
    simplex = np.vstack([z0] + [z0 + ctl.nm_initial_step * np.eye(d)[i] for i in range(d)])
    stuck = False
    try:
        res = minimize(
            neg_lp,
            z0,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "xatol": ctl.nm_xatol,
                "fatol": ctl.nm_fatol,
                "maxfev": ctl.nm_maxfev,
            },
        )
        z_star = np.array(res.x)
        nm_success = bool(res.success)
        nm_message = str(res.message)
    except _Stuck:
        stuck = True
        z_star = counter["best_z"]
        nm_success = False
        nm_message = f"no improvement over {ctl.stuck_evals} evaluations"
    if counter["best_z"] is None:
        raise NumericalError("Laplace approximation failed at every hyperparameter evaluated")
    if counter["best"] > -neg_lp(z_star, track=False) + 1e-9:
        z_star = counter["best_z"]
    n_opt = counter["n"]

    f_star, ap_star = laplace(model, z_star, cache["u"], ctl)
    cache["u"] = ap_star.mode

    def lp_only(z):
        v, ap = laplace(model, z, ap_star.mode, ctl)
        return v

    Hz = -_fd_hessian(lp_only, z_star, f_star, ctl.fd_step)
    evals, evecs = np.linalg.eigh(0.5 * (Hz + Hz.T))
    floor = max(1e-6, 1e-8 * float(evals.max()))
    floored = bool((evals < floor).any())
    evals = np.maximum(evals, floor)
    cov = (evecs / evals) @ evecs.T
    sd = np.sqrt(np.diag(cov))
    step = ctl.grid_step * sd

    # integration grid
    if ctl.grid == "full":
        offs = np.array(np.meshgrid(*[[-1, 0, 1]] * d, indexing="ij")).reshape(d, -1).T
    else:
        offs = np.vstack([np.zeros(d)] + [s * np.eye(d)[i] for i in range(d) for s in (-1, 1)])
    points = []
    for o in offs:
        z = z_star + o * step
        if not o.any():
            points.append((z, f_star, ap_star))
            continue
        v, ap = laplace(model, z, ap_star.mode, ctl)
        points.append((z, v, ap))
    lps = np.array([p[1] for p in points])
    w = np.exp(lps - lps.max())
    keep = w > ctl.grid_prune * w.max()
    w = w[keep] / w[keep].sum()
    grid = [GridPoint(p[0], p[1], float(wi), p[2]) for p, wi in zip([p for p, k in zip(points, keep) if k], w)]

    # per-axis quadratic interpolation of the log posterior
    axis_lp = {}
    for o, lp in zip(offs, lps):
        nz = np.flatnonzero(o)
        if len(nz) == 1:
            axis_lp[(int(nz[0]), int(o[nz[0]]))] = lp
    means = z_star.copy()
    scale = np.ones(d)
    for j in range(d):
        lm, lpl = axis_lp.get((j, -1)), axis_lp.get((j, 1))
        if lm is None or lpl is None:
            continue
        b = 0.5 * (lpl - lm)
        c = 0.5 * (lpl + lm - 2 * f_star)
        if c < 0:
            prec = -2 * c / step[j] ** 2
            means[j] = z_star[j] + float(np.clip(-b / (2 * c), -1.0, 1.0)) * step[j]
            scale[j] = math.sqrt(max(Hz[j, j], 1e-12) / prec) if Hz[j, j] > 0 else 1.0
    cov_adj = cov * np.outer(scale, scale)

    hyper = {}
    for j, name in enumerate(model.hyper_names):
        s = _transformed_summary(means[j], cov_adj[j, j], "id" if name == "gamma" else "exp")
        s["at_mode"] = float(math.exp(z_star[j]) if name != "gamma" else z_star[j])
        hyper[_NATURAL[name]] = s

    # theta_micro = sigma^2 kappa^2 = 8 sigma^2 / rho^2, from joint (sigma, rho) draws
    rng = np.random.default_rng(ctl.seed)
    js, jr = model.hyper_names.index("log_sigma"), model.hyper_names.index("log_range")
    sub = cov_adj[np.ix_([js, jr], [js, jr])]
    draws = rng.multivariate_normal(means[[js, jr]], sub, size=ctl.theta_samples, method="cholesky")
    theta = 8.0 * np.exp(2 * draws[:, 0] - 2 * draws[:, 1])
    derived = {
        "theta_micro": {
            "mean": float(theta.mean()),
            "sd": float(theta.std(ddof=1)),
            "q025": float(np.quantile(theta, 0.025)),
            "q975": float(np.quantile(theta, 0.975)),
            "at_mode": float(8.0 * math.exp(2 * z_star[js] - 2 * z_star[jr])),
        }
    }

    # latent and fixed-effect marginals as Gaussian mixtures over the grid
    wts = np.array([g.weight for g in grid])
    modes = np.array([g.approx.mode for g in grid])
    vars_ = np.array([g.approx.marginal_variances() for g in grid])
    lat_mean = wts @ modes
    lat_var = wts @ (vars_ + modes**2) - lat_mean**2
    fixed = {}
    for name, idx in (("mu", model.i_mu), ("alpha", model.i_alpha)):
        if name == "alpha" and model.block("pseudo") is None:
            continue
        fixed[name] = _mixture_summary(modes[:, idx], np.sqrt(vars_[:, idx]), wts)

    newton_ok = all(g.approx.converged for g in grid)
    diagnostics = {
        "converged": bool(nm_success and not stuck and newton_ok),
        "optimizer_success": nm_success,
        "optimizer_message": nm_message,
        "optimizer_stuck": stuck,
        "optimizer_evaluations": n_opt,
        "newton_converged_all": newton_ok,
        "newton_iterations_mode": ap_star.iterations,
        "hessian_floored": floored,
        "grid_points": len(offs),
        "grid_kept": len(grid),
        "log_post_mode": float(f_star),
        "seconds": time.perf_counter() - t_start,
        "notes": list(model.notes),
    }
    log.debug("fit %s: %s", model.variant, diagnostics)
    return FitResult(
        variant=model.variant,
        hyper_names=model.hyper_names,
        zeta_mode=z_star,
        hyper_cov=cov_adj,
        hyper_summaries=hyper,
        derived_summaries=derived,
        fixed_effect_summaries=fixed,
        latent_mean=lat_mean[: model.m],
        latent_sd=np.sqrt(np.maximum(lat_var[: model.m], 0.0)),
        grid=grid,
        diagnostics=diagnostics,
    )


def fit_at(model: AssembledModel, zetas, weights=None, controls=None) -> FitResult:
    """Rebuild a :class:`FitResult` from a stored hyperparameter grid (no optimisation)."""
    zetas = [np.asarray(z, dtype=float) for z in zetas]
    weights = np.full(len(zetas), 1.0 / len(zetas)) if weights is None else np.asarray(weights, float)
    weights = weights / weights.sum()
    grid = []
    warm = None
    for z, w in zip(zetas, weights):
        v, ap = laplace(model, z, warm, controls)
        warm = ap.mode
        grid.append(GridPoint(z, v, float(w), ap))
    modes = np.array([g.approx.mode for g in grid])
    vars_ = np.array([g.approx.marginal_variances() for g in grid])
    mean = weights @ modes
    var = weights @ (vars_ + modes**2) - mean**2
    d = len(zetas[0])
    return FitResult(model.variant, model.hyper_names, zetas[int(np.argmax(weights))], np.zeros((d, d)), {}, {}, {},
                     mean[: model.m], np.sqrt(np.maximum(var[: model.m], 0)), grid, {"converged": True})


# ---------------------------------------------------------------------------
# prediction


def _target_rows(model: AssembledModel, targets) -> sp.csr_matrix:
    A = project_points(model.mesh, targets, kind="prediction-grid").A
    k = A.shape[0]
    return sp.hstack([A, np.ones((k, 1)), np.zeros((k, 1))]).tocsr()


def predictive_components(fit_result: FitResult, model: AssembledModel, targets, chunk: int = 4096):
    """Per-grid-point predictive means and sds of mu + phi(s): arrays (K, n) and weights (K,)."""
    B = _target_rows(model, targets)
    K = len(fit_result.grid)
    n = B.shape[0]
    means = np.empty((K, n))
    sds = np.empty((K, n))
    for k, g in enumerate(fit_result.grid):
        means[k] = B @ g.approx.mode
        for s in range(0, n, chunk):
            sds[k, s : s + chunk] = np.sqrt(np.maximum(g.approx.linear_variances(B[s : s + chunk]), 0.0))
    return means, sds, np.array([g.weight for g in fit_result.grid])


def predict(fit_result: FitResult, model: AssembledModel, targets, median: bool = False):
    """Posterior mean and sd of mu + phi at each target (mixture over the hyper grid).

    With ``median=True`` a third array holds the exact mixture medians.
    """
    means, sds, w = predictive_components(fit_result, model, targets)
    mean = w @ means
    var = w @ (sds**2 + means**2) - mean**2
    sd = np.sqrt(np.maximum(var, 0.0))
    if not median:
        return mean, sd
    med = np.array([_mixture_quantile(means[:, i], np.maximum(sds[:, i], 1e-300), w, 0.5) for i in range(means.shape[1])])
    return mean, sd, med


def exceedance_prob(fit_result: FitResult, model: AssembledModel, targets, threshold: float) -> np.ndarray:
    """P(mu + phi(s) > threshold | y) per target."""
    means, sds, w = predictive_components(fit_result, model, targets)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = (threshold - means) / sds
    z = np.where(sds > 0, z, np.where(means > threshold, -np.inf, np.inf))
    return w @ ndtr(-z)

"""Latent Gaussian model over the link-space GEV parameters.

The per-site fits supply a Gaussian pseudo-observation eta_hat with known
block precision Q_eta.  The latent level puts, for each link parameter,
a linear predictor with optional spatial field and an iid nugget:

    eta_l = X_l beta_l + A u_l + eps_l,     eps_l ~ N(0, sigma_eps_l^2 I),

with beta ~ N(0, sigma_beta^2 I) and u_l an SPDE Matern field.  The
hyperparameters theta (one nugget sd per parameter, plus a marginal sd and
range per spatial field) get penalized-complexity priors and are sampled by
adaptive random-walk Metropolis on log theta.  Conditional on theta the model
is conjugate: the marginal likelihood of eta_hat is available in closed form,
and (eta, nu) can be drawn exactly from the joint Gaussian conditional.

Two routes to the marginal likelihood exist: a collapsed one that exploits
the per-site block structure (used in the MCMC loop) and a joint-precision
one (used for conditional sampling); they agree to float precision and both
stay in the code deliberately as a cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from ._sparse import SymmetricFactor
from .errors import ConfigError, NumericalError
from .site_fit import StackedFits
from .spde import (
    Mesh,
    fem_matrices,
    field_eigenvalues,
    nugget_prior_logdensity,
    pc_prior_logdensity,
    precision_logdet_fast,
    precision_matrix,
    projector,
)

__all__ = [
    "ParamModel",
    "LatentStructure",
    "build_structure",
    "marginal_loglik",
    "marginal_loglik_joint",
    "log_prior_theta",
    "McmcConfig",
    "ThetaSamples",
    "run_mcmc",
    "sample_latent",
    "SmoothResult",
    "smooth_step",
]

SIGMA_BETA = 10.0
PARAM_LABELS = ("psi", "tau", "phi", "gamma")


@dataclass
class ParamModel:
    """Latent-level description for one link parameter."""

    name: str
    design: np.ndarray  # (J, p_l), first column the intercept
    spatial: bool = False
    covariate_names: tuple = ()  # names for design columns after the intercept


@dataclass
class LatentStructure:
    """Preassembled matrices shared by every likelihood evaluation."""

    eta_hat: np.ndarray  # (q*J,) parameter-major
    prec_blocks: np.ndarray  # (J, q, q) per-site precision
    params: list[ParamModel]
    mesh: Mesh | None
    A: sparse.csr_matrix | None  # (J, n_nodes)
    s0: float
    rho0: float
    eps0: float
    sigma_beta: float = SIGMA_BETA
    # derived fields
    Z: sparse.csc_matrix = field(init=False, repr=False)
    nu_slices: dict = field(init=False, repr=False)
    theta_names: list = field(init=False)
    _cov_blocks: np.ndarray = field(init=False, repr=False)
    _logdet_q_eta: float = field(init=False, repr=False)
    _lam: np.ndarray | None = field(init=False, repr=False)
    _logdet_c: float = field(init=False, repr=False)
    _C: sparse.spmatrix | None = field(init=False, repr=False)
    _G: sparse.spmatrix | None = field(init=False, repr=False)

    def __post_init__(self):
        J = self.n_sites
        q = self.n_params
        if self.eta_hat.shape != (q * J,):
            raise ConfigError("eta_hat length does not match parameter count times sites")
        blocks = []
        offset = 0
        self.nu_slices = {}
        for pm in self.params:
            if pm.design.shape[0] != J:
                raise ConfigError(f"design for {pm.name} has wrong number of rows")
            parts = [sparse.csr_matrix(pm.design)]
            p_l = pm.design.shape[1]
            self.nu_slices[pm.name] = {"beta": slice(offset, offset + p_l)}
            offset += p_l
            if pm.spatial:
                if self.A is None:
                    raise ConfigError(f"spatial field on {pm.name} requires a mesh")
                n = self.A.shape[1]
                parts.append(self.A)
                self.nu_slices[pm.name]["u"] = slice(offset, offset + n)
                offset += n
            blocks.append(sparse.hstack(parts, format="csr"))
        self.Z = sparse.block_diag(blocks, format="csc")
        self.theta_names = []
        for pm in self.params:
            self.theta_names.append(f"eps_{pm.name}")
            if pm.spatial:
                self.theta_names.append(f"s_{pm.name}")
                self.theta_names.append(f"rho_{pm.name}")
        self._cov_blocks = np.linalg.inv(self.prec_blocks)
        sign, logdets = np.linalg.slogdet(self.prec_blocks)
        if np.any(sign <= 0):
            raise NumericalError("a site precision block is not positive definite")
        self._logdet_q_eta = float(logdets.sum())
        if any(pm.spatial for pm in self.params):
            C, G = fem_matrices(self.mesh)
            self._C, self._G = C, G
            self._lam = field_eigenvalues(C, G)
            self._logdet_c = float(np.sum(np.log(C.diagonal())))
        else:
            self._C = self._G = None
            self._lam = None
            self._logdet_c = 0.0

    @property
    def n_sites(self) -> int:
        return self.prec_blocks.shape[0]

    @property
    def n_params(self) -> int:
        return self.prec_blocks.shape[1]

    @property
    def n_theta(self) -> int:
        return len(self.theta_names)

    @property
    def n_nu(self) -> int:
        return self.Z.shape[1]

    def unpack_theta(self, theta: np.ndarray) -> dict:
        """Split the flat theta vector into per-parameter dicts."""
        out = {}
        k = 0
        for pm in self.params:
            d = {"eps": float(theta[k])}
            k += 1
            if pm.spatial:
                d["s"] = float(theta[k])
                d["rho"] = float(theta[k + 1])
                k += 2
            out[pm.name] = d
        return out

    def q_nu(self, theta: np.ndarray) -> sparse.csc_matrix:
        """Prior precision of nu = (beta_l, u_l)_l at the given theta."""
        parts = []
        by_param = self.unpack_theta(theta)
        for pm in self.params:
            p_l = pm.design.shape[1]
            parts.append(sparse.identity(p_l) / self.sigma_beta**2)
            if pm.spatial:
                h = by_param[pm.name]
                parts.append(precision_matrix(self._C, self._G, rho=h["rho"], s=h["s"]))
        return sparse.block_diag(parts, format="csc")

    def logdet_q_nu(self, theta: np.ndarray) -> float:
        out = 0.0
        by_param = self.unpack_theta(theta)
        for pm in self.params:
            out += -2.0 * pm.design.shape[1] * math.log(self.sigma_beta)
            if pm.spatial:
                h = by_param[pm.name]
                out += precision_logdet_fast(self._lam, self._logdet_c, h["rho"], h["s"])
        return out

    def sigma_eps2_by_param(self, theta: np.ndarray) -> np.ndarray:
        by_param = self.unpack_theta(theta)
        return np.array([by_param[pm.name]["eps"] ** 2 for pm in self.params])


def build_structure(stacked: StackedFits, designs: dict[str, np.ndarray],
                    spatial: dict[str, bool], sites: np.ndarray | None = None,
                    mesh: Mesh | None = None, s0: float = 1.0,
                    rho0: float | None = None, eps0: float = 1.0,
                    sigma_beta: float = SIGMA_BETA,
                    covariate_names: dict | None = None) -> LatentStructure:
    """Assemble the latent structure from stacked site fits.

    designs maps parameter names (psi, tau, phi, gamma) to (J, p) matrices; a
    missing entry means intercept only.  spatial marks which parameters get a
    field.  The mesh is built from the sites when needed and not supplied.
    covariate_names optionally labels the non-intercept design columns.
    """
    q = stacked.n_params
    labels = PARAM_LABELS[:q]
    J = stacked.n_sites
    need_mesh = any(spatial.get(name, False) for name in labels)
    A = None
    if need_mesh:
        if mesh is None:
            if sites is None:
                raise ConfigError("spatial fields need sites or a prebuilt mesh")
            from .spde import build_mesh

            mesh = build_mesh(np.asarray(sites, dtype=float))
        A = projector(mesh, np.asarray(sites, dtype=float) if sites is not None
                      else mesh.points[:J])
    params = []
    for name in labels:
        X = designs.get(name)
        if X is None:
            X = np.ones((J, 1))
        X = np.asarray(X, dtype=float)
        names_l = tuple((covariate_names or {}).get(name, ()))
        if names_l and len(names_l) != X.shape[1] - 1:
            raise ConfigError(f"covariate names for {name!r} do not match the design")
        params.append(ParamModel(name=name, design=X, spatial=bool(spatial.get(name, False)),
                                 covariate_names=names_l))
    if rho0 is None:
        rho0 = 0.1 * mesh.diameter if mesh is not None else 1.0
    prec = np.stack([f.precision for f in stacked.site_fits])
    return LatentStructure(
        eta_hat=stacked.eta.copy(), prec_blocks=prec, params=params, mesh=mesh, A=A,
        s0=s0, rho0=rho0, eps0=eps0, sigma_beta=sigma_beta,
    )


# ----------------------------------------------------------------------------
# Marginal likelihood of eta_hat given theta
# ----------------------------------------------------------------------------

def _w_sparse(structure: LatentStructure, theta: np.ndarray):
    """Per-site W blocks and their parameter-major sparse scatter.

    W_i = (Q_eta_i^-1 + diag(sigma_eps^2))^-1 marginalizes the nugget into
    the pseudo-observation noise.
    """
    J = structure.n_sites
    q = structure.n_params
    sig2 = structure.sigma_eps2_by_param(theta)
    D = structure._cov_blocks + np.diag(sig2)[None, :, :]
    W = np.linalg.inv(D)
    sign, logdet_d = np.linalg.slogdet(D)
    if np.any(sign <= 0):
        raise NumericalError("noise covariance block lost positive definiteness")
    a_idx, b_idx = np.meshgrid(np.arange(q), np.arange(q), indexing="ij")
    i_idx = np.arange(J)
    rows = (a_idx[None, :, :] * J + i_idx[:, None, None]).ravel()
    cols = (b_idx[None, :, :] * J + i_idx[:, None, None]).ravel()
    W_sp = sparse.coo_matrix((W.ravel(), (rows, cols)), shape=(q * J, q * J)).tocsc()
    return W_sp, -float(logdet_d.sum())


def marginal_loglik(structure: LatentStructure, theta: np.ndarray) -> float:
    """Collapsed route: nu integrated out analytically, block algebra per site."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0.0) or not np.all(np.isfinite(theta)):
        return -np.inf
    n_obs = structure.eta_hat.shape[0]
    W_sp, logdet_w = _w_sparse(structure, theta)
    Q_nu = structure.q_nu(theta)
    ZtW = (structure.Z.T @ W_sp).tocsc()
    P = (Q_nu + ZtW @ structure.Z).tocsc()
    try:
        fac = SymmetricFactor(P)
    except NumericalError:
        return -np.inf
    rhs = ZtW @ structure.eta_hat
    m = fac.solve(rhs)
    quad = float(structure.eta_hat @ (W_sp @ structure.eta_hat)) - float(rhs @ m)
    logdet_q_nu = structure.logdet_q_nu(theta)
    return float(
        -0.5 * n_obs * math.log(2.0 * math.pi)
        + 0.5 * (logdet_w + logdet_q_nu - fac.logdet)
        - 0.5 * quad
    )


def _q_eta_sparse(structure: LatentStructure) -> sparse.csc_matrix:
    J = structure.n_sites
    q = structure.n_params
    a_idx, b_idx = np.meshgrid(np.arange(q), np.arange(q), indexing="ij")
    i_idx = np.arange(J)
    rows = (a_idx[None, :, :] * J + i_idx[:, None, None]).ravel()
    cols = (b_idx[None, :, :] * J + i_idx[:, None, None]).ravel()
    return sparse.coo_matrix(
        (structure.prec_blocks.ravel(), (rows, cols)), shape=(q * J, q * J)
    ).tocsc()


def _joint_system(structure: LatentStructure, theta: np.ndarray):
    """Posterior precision and shift for x = (eta, nu) given theta."""
    J, q = structure.n_sites, structure.n_params
    sig2 = structure.sigma_eps2_by_param(theta)
    sig_inv = sparse.diags(np.repeat(1.0 / sig2, J), format="csc")
    Q_eta = _q_eta_sparse(structure)
    Q_nu = structure.q_nu(theta)
    Z = structure.Z
    Q_post = sparse.bmat(
        [[Q_eta + sig_inv, -sig_inv @ Z], [-(Z.T) @ sig_inv, Q_nu + Z.T @ sig_inv @ Z]],
        format="csc",
    )
    b = np.concatenate([Q_eta @ structure.eta_hat, np.zeros(structure.n_nu)])
    return Q_post, b, Q_eta, Q_nu, sig_inv


def marginal_loglik_joint(structure: LatentStructure, theta: np.ndarray) -> float:
    """Joint route: same marginal likelihood via the full (eta, nu) precision."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0.0) or not np.all(np.isfinite(theta)):
        return -np.inf
    J, q = structure.n_sites, structure.n_params
    n_obs = q * J
    Q_post, b, Q_eta, Q_nu, sig_inv = _joint_system(structure, theta)
    try:
        fac = SymmetricFactor(Q_post)
    except NumericalError:
        return -np.inf
    mode = fac.solve(b)
    eta_star, nu_star = mode[:n_obs], mode[n_obs:]
    resid_obs = structure.eta_hat - eta_star
    resid_lat = eta_star - structure.Z @ nu_star
    quad = (
        float(resid_obs @ (Q_eta @ resid_obs))
        + float(resid_lat @ (sig_inv @ resid_lat))
        + float(nu_star @ (Q_nu @ nu_star))
    )
    sig2 = structure.sigma_eps2_by_param(theta)
    logdet_sig_inv = -float(J * np.sum(np.log(sig2)))
    return float(
        -0.5 * n_obs * math.log(2.0 * math.pi)
        + 0.5 * (structure._logdet_q_eta + logdet_sig_inv
                 + structure.logdet_q_nu(theta) - fac.logdet)
        - 0.5 * quad
    )


def log_prior_theta(structure: LatentStructure, theta: np.ndarray) -> float:
    """PC priors: exponential on each nugget sd, joint (s, rho) prior per field."""
    theta = np.asarray(theta, dtype=float)
    if np.any(theta <= 0.0):
        return -np.inf
    by_param = structure.unpack_theta(theta)
    out = 0.0
    for pm in structure.params:
        h = by_param[pm.name]
        out += float(nugget_prior_logdensity(h["eps"], structure.eps0))
        if pm.spatial:
            out += float(pc_prior_logdensity(h["s"], h["rho"], structure.s0, structure.rho0))
    return out


# ----------------------------------------------------------------------------
# Adaptive random-walk Metropolis on log theta
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class McmcConfig:
    n_chains: int = 4
    n_iterations: int = 12_500
    n_kept: int = 1_000  # per chain, taken after burn-in with even thinning
    target_accept: float = 0.234
    rhat_warn: float = 1.05
    seed: int = 0

    @property
    def n_burn(self) -> int:
        return self.n_iterations // 2

    def validate(self) -> None:
        if self.n_chains < 1 or self.n_iterations < 20:
            raise ConfigError("MCMC needs at least one chain and 20 iterations")
        if self.n_kept > self.n_iterations - self.n_burn:
            raise ConfigError("n_kept exceeds post-burn-in draws")


@dataclass
class ThetaSamples:
    """Retained hyperparameter draws with convergence diagnostics."""

    draws: np.ndarray  # (n_chains * n_kept, d), natural scale
    names: list
    rhat: np.ndarray
    ess: np.ndarray
    accept_rate: np.ndarray  # per chain
    status: str  # "ok" or "warn"
    warnings: list
    by_chain: np.ndarray = field(repr=False)  # (n_chains, n_kept, d)


def _split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-chain potential scale reduction, per coordinate."""
    m, n, d = chains.shape
    half = n // 2
    halves = np.concatenate([chains[:, :half, :], chains[:, half:2 * half, :]], axis=0)
    means = halves.mean(axis=1)  # (2m, d)
    vars_ = halves.var(axis=1, ddof=1)
    W = vars_.mean(axis=0)
    B = half * means.var(axis=0, ddof=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt((W * (half - 1) / half + B / half) / W)
    return np.where(W > 0, rhat, 1.0)


def _ess(chains: np.ndarray) -> np.ndarray:
    """Effective sample size per coordinate (Geyer initial positive sequence)."""
    m, n, d = chains.shape
    out = np.empty(d)
    for j in range(d):
        acs = []
        for c in range(m):
            x = chains[c, :, j] - chains[c, :, j].mean()
            v = float(x @ x) / n
            if v == 0.0:
                continue
            ac = np.correlate(x, x, mode="full")[n - 1:] / (v * n)
            acs.append(ac)
        if not acs:
            out[j] = float(m * n)
            continue
        ac = np.mean(acs, axis=0)
        # sum consecutive pairs until a pair goes nonpositive
        ssum = 0.0
        for k in range(1, n // 2):
            pair = ac[2 * k - 1] + ac[2 * k] if 2 * k < n else ac[2 * k - 1]
            if pair <= 0.0:
                break
            ssum += pair
        out[j] = m * n / (1.0 + 2.0 * ssum)
    return out


def run_mcmc(structure: LatentStructure, config: McmcConfig | None = None) -> ThetaSamples:
    """Sample theta from its marginal posterior by adaptive random walk.

    The walk lives on log theta (with the Jacobian included); the proposal
    covariance adapts during burn-in (empirical covariance scaled toward the
    target acceptance rate) and is frozen afterwards so the kept draws come
    from a fixed Markov kernel.  Fixed seed gives bit-identical output.
    """
    config = config or McmcConfig()
    config.validate()
    d = structure.n_theta

    def log_post(x: np.ndarray) -> float:
        theta = np.exp(x)
        lp = log_prior_theta(structure, theta)
        if not np.isfinite(lp):
            return -np.inf
        ll = marginal_loglik(structure, theta)
        if not np.isfinite(ll):
            return -np.inf
        return ll + lp + float(x.sum())  # Jacobian of the log transform

    # deterministic starting point: nugget at a tenth of its prior scale,
    # field sd at half its prior scale, range at three times rho0
    x0 = []
    for pm in structure.params:
        x0.append(math.log(0.1 * structure.eps0))
        if pm.spatial:
            x0.append(math.log(0.5 * structure.s0))
            x0.append(math.log(3.0 * structure.rho0))
    x0 = np.asarray(x0)

    seeds = np.random.SeedSequence(config.seed).spawn(config.n_chains)
    n_iter, n_burn = config.n_iterations, config.n_burn
    n_post = n_iter - n_burn
    thin = max(1, n_post // config.n_kept)
    first_kept = n_burn + n_post - thin * config.n_kept

    kept = np.empty((config.n_chains, config.n_kept, d))
    acc_rates = np.empty(config.n_chains)
    for c in range(config.n_chains):
        rng = np.random.default_rng(seeds[c])
        x = x0 + 0.1 * rng.standard_normal(d)
        fx = log_post(x)
        tries = 0
        while not np.isfinite(fx) and tries < 50:
            x = x0 + 0.1 * rng.standard_normal(d)
            fx = log_post(x)
            tries += 1
        if not np.isfinite(fx):
            raise NumericalError("could not find a valid starting point for MCMC")
        log_scale = math.log(2.38 / math.sqrt(d))
        mean = x.copy()
        cov = np.eye(d) * 0.01
        chol = np.linalg.cholesky(cov)
        n_acc = 0
        k_keep = 0
        for t in range(n_iter):
            prop = x + math.exp(log_scale) * (chol @ rng.standard_normal(d))
            fp = log_post(prop)
            log_alpha = fp - fx
            accept = math.log(rng.uniform()) < log_alpha if np.isfinite(fp) else False
            if accept:
                x, fx = prop, fp
                n_acc += 1
            if t < n_burn:
                # Robbins-Monro scale plus running covariance (Haario)
                alpha = min(1.0, math.exp(log_alpha)) if np.isfinite(log_alpha) else 0.0
                gamma = (t + 1) ** -0.6
                log_scale += gamma * (alpha - config.target_accept)
                dx = x - mean
                mean += gamma * dx
                cov = (1.0 - gamma) * cov + gamma * np.outer(dx, dx)
                if (t + 1) % 25 == 0:
                    try:
                        chol = np.linalg.cholesky(cov + 1e-9 * np.eye(d))
                    except np.linalg.LinAlgError:
                        pass
            elif t >= first_kept and (t - first_kept) % thin == thin - 1:
                kept[c, k_keep] = x
                k_keep += 1
        if k_keep != config.n_kept:
            raise NumericalError("thinning bookkeeping is inconsistent")
        acc_rates[c] = n_acc / n_iter

    rhat = _split_rhat(kept)
    ess = _ess(kept)
    warnings = []
    status = "ok"
    if np.any(rhat > config.rhat_warn):
        status = "warn"
        bad = [structure.theta_names[j] for j in np.where(rhat > config.rhat_warn)[0]]
        warnings.append(
            f"split-Rhat above {config.rhat_warn} for {', '.join(bad)}; "
            "chains may not have mixed"
        )
    draws = np.exp(kept.reshape(-1, d))
    return ThetaSamples(
        draws=draws,
        names=list(structure.theta_names),
        rhat=rhat,
        ess=ess,
        accept_rate=acc_rates,
        status=status,
        warnings=warnings,
        by_chain=np.exp(kept),
    )


# ----------------------------------------------------------------------------
# Conditional draws of the latent field
# ----------------------------------------------------------------------------

def sample_latent(structure: LatentStructure, theta_draws: np.ndarray,
                  rng: np.random.Generator, max_draws: int | None = None):
    """One exact joint draw of (eta, nu) per theta draw.

    Returns (eta_draws, nu_draws) with shapes (n, q*J) and (n, n_nu).
    """
    theta_draws = np.atleast_2d(np.asarray(theta_draws, dtype=float))
    n = theta_draws.shape[0] if max_draws is None else min(max_draws, theta_draws.shape[0])
    n_obs = structure.eta_hat.shape[0]
    eta_out = np.empty((n, n_obs))
    nu_out = np.empty((n, structure.n_nu))
    for k in range(n):
        Q_post, b, *_ = _joint_system(structure, theta_draws[k])
        fac = SymmetricFactor(Q_post)
        mode = fac.solve(b)
        draw = mode + fac.sample(rng)
        eta_out[k] = draw[:n_obs]
        nu_out[k] = draw[n_obs:]
    return eta_out, nu_out


@dataclass
class SmoothResult:
    """Posterior of the smoothing stage: theta and latent draws together."""

    structure: LatentStructure = field(repr=False)
    theta: ThetaSamples
    eta_draws: np.ndarray = field(repr=False)  # (n, q*J)
    nu_draws: np.ndarray = field(repr=False)  # (n, n_nu)

    @property
    def n_draws(self) -> int:
        return self.eta_draws.shape[0]

    @property
    def theta_used(self) -> np.ndarray:
        """Hyperparameter draws row-aligned with the latent draws."""
        return self.theta.draws[: self.n_draws]

    def eta_by_param(self, name: str) -> np.ndarray:
        """Draws of one link parameter across sites, (n, J)."""
        q_names = [pm.name for pm in self.structure.params]
        a = q_names.index(name)
        J = self.structure.n_sites
        return self.eta_draws[:, a * J:(a + 1) * J]

    def nu_block(self, name: str, part: str) -> np.ndarray:
        """Draws of a beta or u block, (n, size)."""
        sl = self.structure.nu_slices[name][part]
        return self.nu_draws[:, sl]


def smooth_step(structure: LatentStructure, config: McmcConfig | None = None,
                latent_seed: int = 1, max_latent_draws: int | None = None) -> SmoothResult:
    """Run the hyperparameter MCMC and draw the latent field per kept theta."""
    theta = run_mcmc(structure, config)
    rng = np.random.default_rng(latent_seed)
    eta_draws, nu_draws = sample_latent(structure, theta.draws, rng,
                                        max_draws=max_latent_draws)
    return SmoothResult(structure=structure, theta=theta,
                        eta_draws=eta_draws, nu_draws=nu_draws)

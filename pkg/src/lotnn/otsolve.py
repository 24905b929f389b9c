"""Wasserstein-2 machinery.

Two convex potentials are trained per target cloud: psi, whose gradient
pushes the reference measure onto the target, and phi, approximating the
conjugate (inverse direction). Training minimizes jointly

    E_mu[phi(y)] + E_sigma[<x, grad psi(x)> - phi(grad psi(x))]
        + lambda_cyc * E_sigma || grad phi(grad psi(x)) - x ||^2

i.e. the dual objective with exact conjugacy replaced by a
cycle-consistency penalty, which avoids adversarial min-max training.

The networks are trained in standardized coordinates: both measures are
centered on their means and divided by one shared scalar scale. A single
scalar (unlike per-coordinate whitening) keeps the composite map an
exact gradient of a convex potential,

    psi(x) = s^2 * psi_net((x - m_sigma)/s) + <m_mu, x>,
    grad psi(x) = s * grad psi_net((x - m_sigma)/s) + m_mu,

so the bulk displacement between the measures is carried by the frame
instead of being ground out of the optimizer, and the joint objective
stays away from its runaway regime (maps far from the data let phi
profit by growing a wall at the stray image points).

The module also carries the exact oracles everything is validated
against: assignment-based discrete OT on equal-size clouds and the
closed-form Gaussian (diagonal covariance) distance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import NumericError, ShapeError
from .icnn import (
    IcnnConfig,
    IcnnParams,
    icnn_backward,
    icnn_cache,
    icnn_forward,
    icnn_input_grad,
    icnn_inputgrad_vjp,
    init_icnn,
    project_nonneg,
)
from .nncore import Array, OptimState, Rng, adam_step, as_f64

if TYPE_CHECKING:  # pragma: no cover
    from .lot import ReferenceMeasure


@dataclass(frozen=True)
class Frame:
    """Affine standardization shared by a potential pair.

    Network inputs are (x - sigma_mean)/scale on the reference side and
    (y - mu_mean)/scale on the target side; one scalar scale for both
    sides keeps gradient maps gradients of convex functions.
    """

    sigma_mean: tuple[float, ...]
    mu_mean: tuple[float, ...]
    scale: float = 1.0

    @classmethod
    def identity(cls, dim: int) -> "Frame":
        return cls(sigma_mean=(0.0,) * dim, mu_mean=(0.0,) * dim, scale=1.0)

    def __post_init__(self):
        if self.scale <= 0:
            raise ValueError("frame scale must be > 0")
        if len(self.sigma_mean) != len(self.mu_mean):
            raise ShapeError("frame mean dims differ")


@dataclass
class DualPair:
    """A trained (psi, phi) potential pair for one target measure.

    grad psi maps reference samples onto the target; grad phi is the
    learned inverse. Both parameter sets satisfy the nonnegativity
    projection at all times. The public potentials and maps compose the
    stored networks with the standardization frame.
    """

    psi: IcnnParams
    psi_cfg: IcnnConfig
    phi: IcnnParams
    phi_cfg: IcnnConfig
    frame: Frame
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.psi_cfg.dim

    def _sigma_side(self, x: Array) -> Array:
        return (np.atleast_2d(as_f64(x)) - np.asarray(self.frame.sigma_mean)) \
            / self.frame.scale

    def _mu_side(self, y: Array) -> Array:
        return (np.atleast_2d(as_f64(y)) - np.asarray(self.frame.mu_mean)) \
            / self.frame.scale

    def potential_psi(self, x: Array) -> Array:
        s = self.frame.scale
        x2 = np.atleast_2d(as_f64(x))
        return (s * s * icnn_forward(self.psi, self.psi_cfg, self._sigma_side(x))
                + x2 @ np.asarray(self.frame.mu_mean))

    def potential_phi(self, y: Array) -> Array:
        s = self.frame.scale
        y2 = np.atleast_2d(as_f64(y))
        return (s * s * icnn_forward(self.phi, self.phi_cfg, self._mu_side(y))
                + y2 @ np.asarray(self.frame.sigma_mean))

    def map_forward(self, x: Array) -> Array:
        """Transport-map values grad psi(x)."""
        single = np.asarray(x).ndim == 1
        g = (self.frame.scale
             * icnn_input_grad(self.psi, self.psi_cfg, self._sigma_side(x))
             + np.asarray(self.frame.mu_mean))
        return g[0] if single else g

    def map_inverse(self, y: Array) -> Array:
        """Inverse-direction map values grad phi(y)."""
        single = np.asarray(y).ndim == 1
        g = (self.frame.scale
             * icnn_input_grad(self.phi, self.phi_cfg, self._mu_side(y))
             + np.asarray(self.frame.sigma_mean))
        return g[0] if single else g

    def copy(self) -> "DualPair":
        return DualPair(self.psi.copy(), self.psi_cfg,
                        self.phi.copy(), self.phi_cfg, self.frame,
                        dict(self.meta))


@dataclass(frozen=True)
class SolverConfig:
    """Hyperparameters of the non-minimax dual solver.

    The underlying publication states none of these; the defaults here
    are echoed into every run report.
    """

    batch_size: int = 256
    iters: int = 5000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_cyc: float = 1.0
    hidden: tuple[int, ...] = (64, 64, 64)
    activation: str = "smooth_relu"
    sharpness: float = 1.0
    # each network's quadratic skip bounds its gradient-map Jacobian
    # below. The forward map often contracts strongly (wide fitted
    # reference onto a narrow cloud), so psi gets a small q; the inverse
    # map then expands, so phi affords a large q, whose strong convexity
    # is also what keeps the jointly-minimized objective from running
    # away (the conjugate side is exactly where the quadratic term is
    # added in the duality argument).
    quad_psi: float = 0.05
    quad_phi: float = 0.5
    # pick the quads per cloud from the data's per-coordinate spread
    # ratios instead of the static values above
    adaptive_quad: bool = True
    init_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")
        # iters == 0 is a legal no-op budget (returns the initialized pair)
        if self.iters < 0:
            raise ValueError("iteration budget must be >= 0")
        if self.lambda_cyc < 0:
            raise ValueError("lambda_cyc must be >= 0")

    def psi_config(self, dim: int, quad: float | None = None) -> IcnnConfig:
        return IcnnConfig(dim=dim, hidden=self.hidden, activation=self.activation,
                          sharpness=self.sharpness,
                          quad=self.quad_psi if quad is None else quad)

    def phi_config(self, dim: int, quad: float | None = None) -> IcnnConfig:
        return IcnnConfig(dim=dim, hidden=self.hidden, activation=self.activation,
                          sharpness=self.sharpness,
                          quad=self.quad_phi if quad is None else quad)


def _batch_pair(sigma_batch: Array, mu_batch: Array, dim: int) -> tuple[Array, Array]:
    X = np.atleast_2d(as_f64(sigma_batch))
    Y = np.atleast_2d(as_f64(mu_batch))
    if X.size == 0 or Y.size == 0:
        raise ShapeError("empty batch")
    if X.shape[1] != dim or Y.shape[1] != dim:
        raise ShapeError(f"batch dims {X.shape[1]}/{Y.shape[1]} != pair dim {dim}")
    return X, Y


def dual_objective_V(pair: DualPair, sigma_batch: Array, mu_batch: Array) -> float:
    """Empirical dual objective -E_mu[phi] - E_sigma[<x, grad psi> - phi(grad psi)]."""
    X, Y = _batch_pair(sigma_batch, mu_batch, pair.dim)
    G = pair.map_forward(X)
    phi_y = pair.potential_phi(Y)
    phi_g = pair.potential_phi(G)
    corr = np.sum(X * G, axis=1)
    return float(-np.mean(phi_y) - np.mean(corr - phi_g))


def estimate_w2_dual(pair: DualPair, sigma_batch: Array, mu_batch: Array) -> float:
    """Dual-based W2 estimate from finite batches.

    At optimal potentials V + C equals half the squared distance, so the
    estimate is sqrt(2 * (V + C)) with C the empirical second-moment
    constant, clamped at zero: finite batches and imperfect potentials
    can push the argument slightly negative, and the clamp is flagged in
    run reports rather than silently hidden.
    """
    X, Y = _batch_pair(sigma_batch, mu_batch, pair.dim)
    V = dual_objective_V(pair, X, Y)
    C = 0.5 * float(np.mean(np.sum(X * X, axis=1))) + \
        0.5 * float(np.mean(np.sum(Y * Y, axis=1)))
    val = 2.0 * (V + C)
    if not np.isfinite(val):
        raise NumericError("non-finite dual estimate")
    return float(np.sqrt(max(0.0, val)))


def solver_loss_and_grads(
    pair: DualPair, Xs: Array, Ys: Array, lambda_cyc: float
) -> tuple[float, dict[str, Array]]:
    """Loss and exact gradients of the cycle-regularized dual objective.

    Xs/Ys are batches already in the pair's standardized coordinates.
    Keys are prefixed "psi." / "phi.". The psi-gradient flows through
    grad psi (and, in the cycle term, through the Hessian of phi), which
    is where the second-order pass earns its keep.
    """
    n = Xs.shape[0]
    c_psi_x = icnn_cache(pair.psi, pair.psi_cfg, Xs)
    G = icnn_input_grad(pair.psi, pair.psi_cfg, Xs, cache=c_psi_x)  # grad psi(x)
    c_phi_g = icnn_cache(pair.phi, pair.phi_cfg, G)
    c_phi_y = icnn_cache(pair.phi, pair.phi_cfg, Ys)
    H = icnn_input_grad(pair.phi, pair.phi_cfg, G, cache=c_phi_g)   # grad phi(G)
    corr = np.sum(Xs * G, axis=1)
    cyc = np.sum((H - Xs) ** 2, axis=1)
    loss = float(np.mean(c_phi_y.out) + np.mean(corr - c_phi_g.out)
                 + lambda_cyc * np.mean(cyc))

    # phi parameter grads: direct terms at Ys and at G
    g_phi_y, _ = icnn_backward(pair.phi, pair.phi_cfg, Ys,
                               np.full(Ys.shape[0], 1.0 / Ys.shape[0]),
                               prefix="phi.", cache=c_phi_y)
    g_phi_g, h_at_g = icnn_backward(pair.phi, pair.phi_cfg, G,
                                    np.full(n, -1.0 / n),
                                    prefix="phi.", cache=c_phi_g)
    # cycle term: d/d(omega, u) of sum <w, grad phi(u)>, w = (2 lambda/n)(H - X)
    w = (2.0 * lambda_cyc / n) * (H - Xs)
    g_phi_cyc, u_grad = icnn_inputgrad_vjp(pair.phi, pair.phi_cfg, G, w,
                                           prefix="phi.", cache=c_phi_g)

    grads: dict[str, Array] = {}
    for k in g_phi_y:
        grads[k] = g_phi_y[k] + g_phi_g[k] + g_phi_cyc[k]

    # psi parameter grads, all through G: v collects every dLoss/dG term.
    # h_at_g above is -(1/n) grad phi(G) = -(1/n) H, reused instead of
    # recomputing.
    v = Xs / n + h_at_g + u_grad
    g_psi, _ = icnn_inputgrad_vjp(pair.psi, pair.psi_cfg, Xs, v,
                                  prefix="psi.", cache=c_psi_x)
    grads.update(g_psi)
    return loss, grads


def make_frame(sigma: "ReferenceMeasure", points: Array) -> Frame:
    return Frame(sigma_mean=tuple(float(v) for v in sigma.mean_vector()),
                 mu_mean=tuple(float(v) for v in points.mean(axis=0)),
                 scale=float(sigma.scale_scalar()))


def adaptive_quads(sigma: "ReferenceMeasure", points: Array) -> tuple[float, float]:
    """Per-cloud quadratic skips from the spread ratios.

    Each q must stay below the smallest Jacobian eigenvalue of the map
    its network represents; the min per-coordinate std ratio with a 0.8
    safety factor is a cheap proxy. phi's q is floored because its
    strong convexity is what stabilizes training.
    """
    s_sigma = sigma.std_vector()
    s_mu = points.std(axis=0)
    if np.any(s_mu <= 0):  # degenerate spread (one-point clouds)
        return 0.05, 0.5
    fwd = float(np.min(s_mu / s_sigma))
    inv = float(np.min(s_sigma / s_mu))
    q_psi = float(np.clip(0.8 * fwd, 1e-3, 5.0))
    q_phi = float(np.clip(0.8 * inv, 0.05, 5.0))
    return q_psi, q_phi


def init_dual_pair(dim: int, cfg: SolverConfig, rng: Rng,
                   frame: Frame | None = None,
                   quads: tuple[float, float] | None = None) -> DualPair:
    q_psi, q_phi = quads if quads is not None else (None, None)
    psi_cfg = cfg.psi_config(dim, q_psi)
    phi_cfg = cfg.phi_config(dim, q_phi)
    psi = project_nonneg(init_icnn(psi_cfg, rng.spawn(1), scale=cfg.init_scale))
    phi = project_nonneg(init_icnn(phi_cfg, rng.spawn(2), scale=cfg.init_scale))
    return DualPair(psi, psi_cfg, phi, phi_cfg,
                    frame if frame is not None else Frame.identity(dim),
                    meta={"iterations": 0, "seed": rng.seed})


def pair_for_cloud(sigma: "ReferenceMeasure", points: Array,
                   cfg: SolverConfig, rng: Rng) -> DualPair:
    """Initialized pair with the cloud's frame and (optionally) adaptive quads."""
    quads = adaptive_quads(sigma, points) if cfg.adaptive_quad else None
    return init_dual_pair(sigma.dim, cfg, rng,
                          frame=make_frame(sigma, points), quads=quads)


def solver_step(
    pair: DualPair, X: Array, Y: Array, lambda_cyc: float, state: OptimState
) -> tuple[DualPair, OptimState, float]:
    """One joint Adam update on both potentials, followed by projection.

    X and Y are original-coordinates batches; standardization happens
    here using the pair's frame.
    """
    Xs = pair._sigma_side(X)
    Ys = pair._mu_side(Y)
    loss, grads = solver_loss_and_grads(pair, Xs, Ys, lambda_cyc)
    params = pair.psi.to_flat("psi.") | pair.phi.to_flat("phi.")
    new_params, state = adam_step(params, grads, state)
    psi = project_nonneg(pair.psi.from_flat(new_params, "psi."))
    phi = project_nonneg(pair.phi.from_flat(new_params, "phi."))
    return (DualPair(psi, pair.psi_cfg, phi, pair.phi_cfg, pair.frame, pair.meta),
            state, loss)


def train_map(sigma: "ReferenceMeasure", mu, cfg: SolverConfig) -> DualPair:
    """Train a DualPair pushing the reference measure onto one cloud.

    Deterministic given cfg.seed (single-threaded). A zero budget
    returns the initialized pair untouched. Loss history is stored in
    the pair metadata.
    """
    points = mu.points if hasattr(mu, "points") else np.atleast_2d(as_f64(mu))
    if points.size == 0:
        raise ShapeError("empty target cloud")
    if points.shape[1] != sigma.dim:
        raise ShapeError(f"cloud dim {points.shape[1]} != reference dim {sigma.dim}")
    rng = Rng(cfg.seed)
    pair = pair_for_cloud(sigma, points, cfg, rng.spawn(0))
    state = OptimState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    batch_rng = rng.spawn(3)
    losses: list[float] = []
    for t in range(cfg.iters):
        X = sigma.sample(cfg.batch_size, seed=int(batch_rng.integers(0, 2**62)))
        idx = batch_rng.integers(0, points.shape[0], size=cfg.batch_size)
        Y = points[idx]
        try:
            pair, state, loss = solver_step(pair, X, Y, cfg.lambda_cyc, state)
        except NumericError as e:
            raise NumericError(f"{e} (train_map iteration {t})") from e
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss at train_map iteration {t}")
        losses.append(loss)
    pair.meta.update({
        "iterations": cfg.iters,
        "final_loss": losses[-1] if losses else None,
        "seed": cfg.seed,
        "loss_history": losses,
    })
    return pair


# ---------------------------------------------------------------------------
# Exact oracles
# ---------------------------------------------------------------------------

def exact_ot_discrete(X, Y) -> tuple[Array, float]:
    """Minimum-cost perfect matching between equal-size uniform clouds.

    Returns (pi, cost) where pi[k] matches X[k] with Y[pi[k]] and
    cost = (1/n) sum ||x_k - y_{pi(k)}||^2. The W2 distance is
    sqrt(cost); see exact_w2_discrete.
    """
    Xp = np.atleast_2d(as_f64(X.points if hasattr(X, "points") else X))
    Yp = np.atleast_2d(as_f64(Y.points if hasattr(Y, "points") else Y))
    if Xp.size == 0 or Yp.size == 0:
        raise ShapeError("empty cloud")
    if Xp.shape != Yp.shape:
        raise ShapeError(f"clouds must match in size and dim: {Xp.shape} vs {Yp.shape}")
    d2 = np.sum((Xp[:, None, :] - Yp[None, :, :]) ** 2, axis=2)
    rows, cols = linear_sum_assignment(d2)
    perm = np.empty(Xp.shape[0], dtype=np.int64)
    perm[rows] = cols
    cost = float(d2[rows, cols].mean())
    return perm, cost


def exact_w2_discrete(X, Y) -> float:
    """sqrt of the exact assignment cost; a true metric on equal-size clouds."""
    _, cost = exact_ot_discrete(X, Y)
    return float(np.sqrt(cost))


@dataclass(frozen=True)
class GaussianSpec:
    """Diagonal-covariance Gaussian used as a closed-form oracle."""

    mean: tuple[float, ...]
    var: tuple[float, ...]

    def __post_init__(self):
        if len(self.mean) != len(self.var):
            raise ShapeError("mean and var dims differ")
        if any(v <= 0 for v in self.var):
            raise ValueError("variances must be > 0")

    @property
    def dim(self) -> int:
        return len(self.mean)


def gaussian_w2(a: GaussianSpec, b: GaussianSpec) -> float:
    """Closed-form W2 between diagonal Gaussians."""
    if a.dim != b.dim:
        raise ShapeError("dimension mismatch")
    ma, mb = np.asarray(a.mean), np.asarray(b.mean)
    sa, sb = np.sqrt(np.asarray(a.var)), np.sqrt(np.asarray(b.var))
    return float(np.sqrt(np.sum((ma - mb) ** 2) + np.sum((sa - sb) ** 2)))

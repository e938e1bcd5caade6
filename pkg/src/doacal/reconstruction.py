"""Sparse spatial-spectrum reconstruction with a learned calibrator.

The spectrum image produced by the coarray beamformer is related to the
sparse source spectrum through the known Gram matrix P of the coarray
manifold.  Reconstruction alternates two blocks for a fixed number of
outer iterations:

* a small 1-D CNN that outputs a calibrated spectrum z from the
  current iterate (one shared set of weights across all iterations),
* a conjugate-gradient solve of the ridge system
  (P + lambda I) eta = eta_prev + lambda z, augmented with a reweighted
  zero-attracting step that sparsifies the iterate (SCG).

Training fits the CNN weights end to end against one-hot labels on the
grid.  Two backward paths through the solver are provided: exact
reverse-mode through the executed iterations (default; handles the
sparsity step's a.e. subgradient), and the cheaper converged-solve
adjoint that backsolves the same symmetric system.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .coarray import ProjectionMatrix
from .estimators import SpatialSpectrum, pick_aoa
from .simulate import DirectionGrid

DEFAULT_KERNEL_COUNTS = (4, 8, 4, 1)
DEFAULT_KERNEL_WIDTH = 32


@dataclass(frozen=True)
class SsrConfig:
    """Reconstruction knobs.

    reg_weight:        ridge/regularization weight on the calibrated term.
    sparsity_eps:      approximation parameter of the zero-attracting term.
    sparsity_step:     multiplier on the attractor step (0 = plain CG).
    outer_iterations:  number of calibrate/solve alternations.
    cg_tol:            stop when the L2 norm of an update step drops below.
    max_cg_iterations: hard cap on solver iterations.
    """

    reg_weight: float = 0.1
    sparsity_eps: float = 0.5
    sparsity_step: float = 1.0
    outer_iterations: int = 3
    cg_tol: float = 1e-6
    max_cg_iterations: int = 200

    def __post_init__(self):
        if self.reg_weight <= 0:
            raise ValueError("reg_weight must be positive")
        if self.sparsity_eps <= 0:
            raise ValueError("sparsity_eps must be positive")
        if self.sparsity_step < 0:
            raise ValueError("sparsity_step must be nonnegative")
        if self.outer_iterations < 1 or self.max_cg_iterations < 1:
            raise ValueError("iteration counts must be at least 1")

    def to_dict(self) -> dict:
        return {
            "reg_weight": self.reg_weight,
            "sparsity_eps": self.sparsity_eps,
            "sparsity_step": self.sparsity_step,
            "outer_iterations": self.outer_iterations,
            "cg_tol": self.cg_tol,
            "max_cg_iterations": self.max_cg_iterations,
        }


def one_hot_label(grid: DirectionGrid, angle_deg: float) -> np.ndarray:
    """Unit vector at the grid index of the (nearest) true direction.

    Off-grid angles snap to the nearest grid point, so the label error
    is at most half the grid spacing.
    """
    label = np.zeros(len(grid))
    label[grid.nearest_index(angle_deg)] = 1.0
    return label


@dataclass
class CalibratorParams:
    """Weights of the spectrum-calibration CNN.

    Four 1-D conv layers (channel counts 4, 8, 4, 1 by default, kernel
    width 32), each followed by batch normalization; ReLU on all but the
    final layer so the output can go negative.  ``weights`` maps
    parameter names to arrays; batchnorm running statistics ride along
    as non-trainable entries.

    With ``residual`` (the default for trained pipelines) the calibrated
    spectrum is input + conv-stack output, so the stack learns only the
    correction and the regularization term input - z reduces to the raw
    stack output.  Without it, z is the bare conv-stack output.  The
    residual form is what keeps the solver's data term visible: the
    ridge solve passes the null-space content of z at unit gain while
    attenuating the data spectrum by the eigenvalues of P, so an
    unconstrained z swamps the measurement unless it is anchored to the
    input.
    """

    weights: dict
    kernel_counts: tuple = DEFAULT_KERNEL_COUNTS
    kernel_width: int = DEFAULT_KERNEL_WIDTH
    grid_len: int | None = None
    residual: bool = False

    @property
    def num_layers(self) -> int:
        return len(self.kernel_counts)

    def trainable_keys(self) -> list:
        keys = []
        for i in range(self.num_layers):
            keys += [f"w{i}", f"bn{i}_gamma", f"bn{i}_beta"]
        return keys

    @classmethod
    def init(cls, seed: int = 0, kernel_counts: tuple = DEFAULT_KERNEL_COUNTS,
             kernel_width: int = DEFAULT_KERNEL_WIDTH,
             grid_len: int | None = None, residual: bool = True,
             zero_final: bool = True) -> "CalibratorParams":
        """Random weights; the final layer starts at zero by default so an
        untrained residual calibrator is the identity (z = input) and the
        unrolled pipeline begins from plain spectrum reconstruction."""
        rng = np.random.default_rng(seed)
        weights = {}
        c_in = 1
        for i, c_out in enumerate(kernel_counts):
            scale = np.sqrt(2.0 / (c_in * kernel_width))
            weights[f"w{i}"] = scale * rng.standard_normal((c_out, c_in, kernel_width))
            weights[f"bn{i}_gamma"] = np.ones(c_out)
            weights[f"bn{i}_beta"] = np.zeros(c_out)
            weights[f"bn{i}_mean"] = np.zeros(c_out)
            weights[f"bn{i}_var"] = np.ones(c_out)
            c_in = c_out
        if kernel_counts[-1] != 1:
            raise ValueError("final layer must produce a single channel")
        if zero_final:
            weights[f"w{len(kernel_counts) - 1}"][:] = 0.0
        return cls(weights, kernel_counts, kernel_width, grid_len, residual)

    def copy(self) -> "CalibratorParams":
        return CalibratorParams({k: v.copy() for k, v in self.weights.items()},
                                self.kernel_counts, self.kernel_width,
                                self.grid_len, self.residual)


def _cnn_forward(x: np.ndarray, params: CalibratorParams, training: bool):
    """x: (B, 1, L) -> (output (B, 1, L), caches for backward)."""
    w = params.weights
    caches = []
    h = x
    last = params.num_layers - 1
    for i in range(params.num_layers):
        y = nn.conv1d_forward(h, w[f"w{i}"])
        y, bn_cache = nn.batchnorm_forward(
            y, w[f"bn{i}_gamma"], w[f"bn{i}_beta"],
            w[f"bn{i}_mean"], w[f"bn{i}_var"], training=training)
        mask = None
        if i < last:
            y, mask = nn.relu_forward(y)
        caches.append((h, bn_cache, mask))
        h = y
    return h, caches


def _cnn_backward(grad_out: np.ndarray, caches, params: CalibratorParams):
    """Reverse of ``_cnn_forward``; returns (grad_input, param grads)."""
    w = params.weights
    grads = {}
    g = grad_out
    for i in reversed(range(params.num_layers)):
        x_in, bn_cache, mask = caches[i]
        if mask is not None:
            g = nn.relu_backward(mask, g)
        g, g_gamma, g_beta = nn.batchnorm_backward(bn_cache, g)
        g, g_w = nn.conv1d_backward(x_in, w[f"w{i}"], g)
        grads[f"w{i}"] = g_w
        grads[f"bn{i}_gamma"] = g_gamma
        grads[f"bn{i}_beta"] = g_beta
    return g, grads


def calibrate(spectrum: SpatialSpectrum, params: CalibratorParams) -> SpatialSpectrum:
    """Run the calibration CNN on one spectrum (inference mode)."""
    v = spectrum.values
    if params.grid_len is not None and v.size != params.grid_len:
        raise ValueError("spectrum length does not match the trained calibrator")
    out, _ = _cnn_forward(v[None, None, :], params, training=False)
    z = out[0, 0] + v if params.residual else out[0, 0]
    return SpatialSpectrum(z, spectrum.grid)


# ---------------------------------------------------------------------------
# SCG solver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScgResult:
    spectrum: SpatialSpectrum
    converged: bool
    iterations: int


class _ScgTape:
    """Recorded per-iteration state for reverse-mode differentiation."""

    __slots__ = ("steps", "p_tilde", "mu", "eps")

    def __init__(self, p_tilde, mu, eps):
        self.steps = []
        self.p_tilde = p_tilde
        self.mu = mu
        self.eps = eps


def _scg_forward(b: np.ndarray, p_tilde: np.ndarray, config: SsrConfig,
                 record: bool = False):
    """Batched SCG on columns of ``b``; all columns share ``p_tilde``.

    Columns whose update step drops below ``cg_tol`` freeze (stop
    updating), which both implements the stop rule and keeps the
    Polak-Ribiere ratio away from 0/0 after convergence.  Returns
    (eta (L, B), converged (B,), iterations, tape or None).
    """
    l, bsz = b.shape
    mu, eps_s = config.sparsity_step, config.sparsity_eps
    eta = np.zeros((l, bsz))
    g = -b.copy()
    c = b.copy()
    frozen = np.zeros(bsz, dtype=bool)
    tape = _ScgTape(p_tilde, mu, eps_s) if record else None
    iterations = 0

    for _ in range(config.max_cg_iterations):
        if frozen.all():
            break
        active = ~frozen
        q = p_tilde @ c
        denom = np.einsum("lb,lb->b", c, q)
        num = np.einsum("lb,lb->b", g, c)

        bad = active & (denom <= 0.0)
        if bad.any():
            if record:
                # Unreachable for PD systems; treat as converged.
                frozen = frozen | bad
                active = ~frozen
            else:
                c[:, bad] = -g[:, bad]
                q[:, bad] = p_tilde @ c[:, bad]
                denom[bad] = np.einsum("lb,lb->b", c[:, bad], q[:, bad])
                num[bad] = np.einsum("lb,lb->b", g[:, bad], c[:, bad])
                dead = active & (denom <= 0.0)
                frozen = frozen | dead
                active = ~frozen
            if frozen.all():
                break

        safe_denom = np.where(denom != 0.0, denom, 1.0)
        alpha = np.where(active, -num / safe_denom, 0.0)
        l1 = np.abs(eta).sum(axis=0)
        attract = np.sign(eta) / (1.0 + eps_s * l1)[None, :]
        step = alpha[None, :] * c - mu * attract
        step[:, frozen] = 0.0

        eta_new = eta + step
        g_new = p_tilde @ eta_new - b
        g_new[:, frozen] = g[:, frozen]
        gg = np.einsum("lb,lb->b", g, g)
        beta_num = np.einsum("lb,lb->b", g_new - g, g_new)
        safe_gg = np.where(gg != 0.0, gg, 1.0)
        beta = np.where(active & (gg > 0.0), beta_num / safe_gg, 0.0)
        c_new = -g_new + beta[None, :] * c
        c_new[:, frozen] = c[:, frozen]

        if record:
            tape.steps.append({
                "active": active.copy(), "eta": eta, "g": g, "c": c, "q": q,
                "g_next": g_new, "denom": denom, "num": num, "l1": l1,
                "gg": gg, "alpha": alpha, "beta": beta,
            })

        step_norm = np.sqrt(np.einsum("lb,lb->b", step, step))
        frozen = frozen | (active & (step_norm < config.cg_tol))
        eta, g, c = eta_new, g_new, c_new
        iterations += 1

    return eta, frozen.copy(), iterations, tape


def _scg_backward(tape: _ScgTape, grad_eta: np.ndarray,
                  attractor_grad: str = "exact") -> np.ndarray:
    """Reverse-mode through the recorded SCG iterations.

    Returns the gradient with respect to the right-hand side b.  With
    ``attractor_grad='exact'`` the a.e. subgradient of the
    zero-attracting step is propagated; 'straight_through' treats the
    attractor as a constant.
    """
    p_tilde, mu, eps_s = tape.p_tilde, tape.mu, tape.eps
    eta_bar = grad_eta.copy()
    g_bar = np.zeros_like(grad_eta)
    c_bar = np.zeros_like(grad_eta)
    b_bar = np.zeros_like(grad_eta)

    for rec in reversed(tape.steps):
        act = rec["active"][None, :].astype(np.float64)
        g_n, c_n, q_n, eta_n = rec["g"], rec["c"], rec["q"], rec["eta"]
        g_next = rec["g_next"]
        denom = np.where(rec["denom"] != 0.0, rec["denom"], 1.0)
        gg = np.where(rec["gg"] != 0.0, rec["gg"], 1.0)
        alpha, beta, num = rec["alpha"], rec["beta"], rec["num"]

        # c_{n+1} = -g_{n+1} + beta c_n  (active columns only)
        g_next_bar = -c_bar * act
        beta_bar = np.einsum("lb,lb->b", c_bar, c_n) * rec["active"]
        c_bar_n = beta[None, :] * c_bar * act + c_bar * (1.0 - act)

        # beta = ((g+ - g) . g+) / (g . g)
        g_next_bar += beta_bar[None, :] * (2.0 * g_next - g_n) / gg[None, :]
        g_bar_n = beta_bar[None, :] * (-g_next - 2.0 * beta[None, :] * g_n) / gg[None, :]

        # g_{n+1} = P~ eta_{n+1} - b  (frozen columns copy g_n through)
        g_next_bar += g_bar * act
        g_bar_n += g_bar * (1.0 - act)
        eta_bar_next = eta_bar + (p_tilde @ g_next_bar) * act
        b_bar += -g_next_bar * act

        # eta_{n+1} = eta_n + alpha c_n - mu s(eta_n)
        eta_bar_n = eta_bar_next.copy()
        alpha_bar = np.einsum("lb,lb->b", eta_bar_next, c_n) * rec["active"]
        c_bar_n += alpha[None, :] * eta_bar_next * act

        if mu != 0.0 and attractor_grad == "exact":
            s_bar = -mu * eta_bar_next
            sgn = np.sign(eta_n)
            denom_s = (1.0 + eps_s * rec["l1"])
            coeff = np.einsum("lb,lb->b", s_bar, sgn) * (-eps_s) / (denom_s ** 2)
            eta_bar_n += coeff[None, :] * sgn * act

        # alpha = -(g . c) / (c . P~ c)
        g_bar_n += alpha_bar[None, :] * (-c_n) / denom[None, :] * act
        c_bar_n += (alpha_bar[None, :]
                    * (-g_n / denom[None, :]
                       + 2.0 * (num / denom ** 2)[None, :] * q_n)) * act

        eta_bar = eta_bar_n
        g_bar = g_bar_n
        c_bar = c_bar_n

    # Initialization: eta(0) = 0, g(0) = -b, c(0) = b.
    b_bar += -g_bar + c_bar
    return b_bar


def scg_solve(data: SpatialSpectrum, reference: SpatialSpectrum,
              projection: ProjectionMatrix, config: SsrConfig) -> ScgResult:
    """Sparsity-modified conjugate gradient on the ridge normal equation.

    Solves (P + lambda I) eta = data + lambda * reference by CG with
    exact line search and Polak-Ribiere directions, subtracting the
    reweighted zero-attracting step sgn(eta) / (1 + eps ||eta||_1)
    scaled by ``sparsity_step`` after each CG update.  Stops when the L2
    norm of an update step falls below ``cg_tol`` or at the iteration
    cap; with ``sparsity_step`` = 0 it reduces to plain CG.
    """
    if data.values.shape != reference.values.shape:
        raise ValueError("spectrum shapes differ")
    p = projection.p
    if p.shape[0] != data.values.size:
        raise ValueError("projection matrix does not match the spectrum length")
    lam = config.reg_weight
    p_tilde = p + lam * np.eye(p.shape[0])
    b = (data.values + lam * reference.values)[:, None]
    eta, frozen, iterations, _ = _scg_forward(b, p_tilde, config)
    return ScgResult(SpatialSpectrum(eta[:, 0], data.grid),
                     converged=bool(frozen[0]), iterations=iterations)


# ---------------------------------------------------------------------------
# Unrolled reconstruction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IterationRecord:
    """One calibrate/solve alternation, kept for diagnostics."""

    eta_in: np.ndarray
    calibrated: np.ndarray
    converged: bool
    iterations: int


def reconstruct(eta0: SpatialSpectrum, projection: ProjectionMatrix,
                params: CalibratorParams, config: SsrConfig,
                renormalize: bool = True):
    """Run the full unrolled pipeline on one spectrum.

    Alternates calibration and SCG for ``outer_iterations`` rounds with
    the same CNN weights at every round.  Trained models expect the
    input scaled to unit maximum; with ``renormalize`` (the default,
    matching training) every solver output is rescaled to unit maximum
    before the next round, which keeps all stages at a common scale
    (each ridge solve otherwise shrinks its input by the spectrum of
    P + lambda I).  Returns (final spectrum, trace).
    """
    eta = eta0
    trace = []
    for _ in range(config.outer_iterations):
        z = calibrate(eta, params)
        # The calibrated spectrum plays the data role in the ridge solve;
        # the incoming iterate is the prior.
        res = scg_solve(z, eta, projection, config)
        trace.append(IterationRecord(eta.values.copy(), z.values.copy(),
                                     res.converged, res.iterations))
        eta = res.spectrum.normalized() if renormalize else res.spectrum
    return eta, trace


def estimate_aoa(spectrum: SpatialSpectrum) -> float:
    """Grid angle of the spectrum maximum (ties to the smaller angle)."""
    return pick_aoa(spectrum)


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CalibratorTrainConfig:
    """Optimizer settings and backward-path selection for training.

    ``solver_grad`` picks the gradient path through the SCG block:
    'unrolled' differentiates the executed iterations exactly,
    'adjoint' uses the converged-solve approximation (a backsolve
    against the same symmetric system).  ``attractor_grad`` applies in
    unrolled mode only.

    ``pretrain_epochs`` warm-starts the CNN on a supervised proxy before
    the end-to-end phase: the calibrated spectrum is regressed onto the
    clean reconvolved label lobe (P + lambda I) e, unit-max scaled.
    This anchors the calibrator at the one operating point the solve
    treats gently; starting the unrolled training cold leaves it in a
    regime where the ridge solve amplifies calibration noise and the
    optimizer stalls.
    """

    lr: float = 0.01
    batch_size: int = 64
    epochs: int = 30
    lr_halve_every: int = 5
    seed: int = 0
    solver_grad: str = "unrolled"
    attractor_grad: str = "exact"
    pretrain_epochs: int = 10

    def __post_init__(self):
        if self.solver_grad not in ("unrolled", "adjoint"):
            raise ValueError("solver_grad must be 'unrolled' or 'adjoint'")
        if self.attractor_grad not in ("exact", "straight_through"):
            raise ValueError("attractor_grad must be 'exact' or 'straight_through'")
        if self.pretrain_epochs < 0:
            raise ValueError("pretrain_epochs must be nonnegative")


def _pipeline_batch(eta0: np.ndarray, labels: np.ndarray, p_tilde: np.ndarray,
                    params: CalibratorParams, config: SsrConfig,
                    train_config: CalibratorTrainConfig, training: bool):
    """Forward + backward over one mini-batch.

    eta0, labels: (B, L).  Returns (loss, param grads, per-stage grad
    norms).  Weight sharing means gradients from every unrolled stage
    accumulate into the same parameter arrays.  Each solver output is
    renormalized to unit maximum before the next stage; the
    normalization is differentiated exactly (its argmax is locally
    constant).
    """
    lam = config.reg_weight
    h = eta0.T.copy()  # (L, B)
    last = config.outer_iterations - 1
    stages = []
    for i in range(config.outer_iterations):
        z_cnn, cnn_cache = _cnn_forward(h.T[:, None, :], params, training=training)
        z = z_cnn[:, 0, :].T
        if params.residual:
            z = z + h
        # The calibrated spectrum is the measurement being reconstructed;
        # the incoming iterate acts as the ridge prior.
        b = z + lam * h
        eta_next, _, _, tape = _scg_forward(b, p_tilde, config, record=True)
        if i < last:
            # Unit-max rescale between stages (nonpositive peaks pass through).
            am = np.argmax(eta_next, axis=0)
            peaks = eta_next[am, np.arange(eta_next.shape[1])]
            pos = peaks > 0.0
            scale = np.where(pos, peaks, 1.0)
            h_next = eta_next / scale[None, :]
            norm_info = ("max", am, scale, pos, h_next)
        else:
            # Final output enters the loss directionally: unit L2 scale,
            # so the one-hot target is exactly reachable regardless of the
            # solve's absolute scale.
            nrm = np.sqrt(np.einsum("lb,lb->b", eta_next, eta_next))
            nrm = np.where(nrm > 0.0, nrm, 1.0)
            h_next = eta_next / nrm[None, :]
            norm_info = ("l2", nrm, h_next)
        stages.append({"cnn_cache": cnn_cache, "tape": tape, "norm": norm_info})
        h = h_next

    loss, grad_pred = nn.mse_loss(h.T, labels)

    total = {k: np.zeros_like(params.weights[k]) for k in params.trainable_keys()}
    stage_norms = []
    h_bar = grad_pred.T
    for stage in reversed(stages):
        info = stage["norm"]
        if info[0] == "max":
            # y = eta/m, m = eta[argmax]: eta_bar = y_bar/m - e_am (y_bar.y)/m
            _, am, scale, pos, y = info
            eta_bar = h_bar / scale[None, :]
            cols = np.arange(y.shape[1])
            eta_bar[am, cols] -= (np.einsum("lb,lb->b", h_bar, y) / scale) * pos
        else:
            # y = eta/||eta||: eta_bar = y_bar/n - y (y_bar.y)/n
            _, nrm, y = info
            eta_bar = (h_bar - y * np.einsum("lb,lb->b", h_bar, y)[None, :]) / nrm[None, :]
        if train_config.solver_grad == "unrolled":
            b_bar = _scg_backward(stage["tape"], eta_bar,
                                  attractor_grad=train_config.attractor_grad)
        else:
            b_bar = np.linalg.solve(p_tilde, eta_bar)
        z_bar = b_bar
        g_in, grads = _cnn_backward(z_bar.T[:, None, :], stage["cnn_cache"], params)
        norm = 0.0
        for k, g in grads.items():
            total[k] += g
            norm += float(np.sum(g * g))
        stage_norms.append(np.sqrt(norm))
        h_bar = lam * b_bar + g_in[:, 0, :].T
        if params.residual:
            h_bar = h_bar + z_bar
    return loss, total, stage_norms[::-1]


def train_calibrator(eta0s: np.ndarray, labels: np.ndarray,
                     projection: ProjectionMatrix, config: SsrConfig,
                     train_config: CalibratorTrainConfig = CalibratorTrainConfig(),
                     params: CalibratorParams | None = None):
    """Fit the shared-weight calibrator on (input spectrum, one-hot) pairs.

    eta0s, labels: arrays of shape (N, L) on the same (sub)grid as the
    projection matrix.  Inputs are expected pre-normalized to unit max.
    Returns (params, per-epoch mean loss curve).
    """
    eta0s = np.asarray(eta0s, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if eta0s.shape != labels.shape or eta0s.ndim != 2:
        raise ValueError("inputs and labels must both have shape (N, L)")
    n, l = eta0s.shape
    if projection.p.shape[0] != l:
        raise ValueError("projection matrix does not match the grid length")

    lam = config.reg_weight
    p_tilde = projection.p + lam * np.eye(l)
    if params is None:
        params = CalibratorParams.init(seed=train_config.seed, grid_len=l)
    else:
        params = params.copy()
        params.grid_len = l

    rng = np.random.default_rng(train_config.seed)
    trainable = {k: params.weights[k] for k in params.trainable_keys()}

    if train_config.pretrain_epochs > 0:
        # Supervised warm start: calibrated spectrum -> clean label lobe.
        targets = labels @ p_tilde.T
        targets = targets / np.maximum(targets.max(axis=1, keepdims=True), 1e-12)
        state = nn.AdamState(lr=train_config.lr)
        for epoch in range(train_config.pretrain_epochs):
            state.lr = nn.scheduled_lr(train_config.lr, epoch,
                                       train_config.lr_halve_every)
            order = rng.permutation(n)
            for start in range(0, n, train_config.batch_size):
                idx = order[start:start + train_config.batch_size]
                x = eta0s[idx]
                out, caches = _cnn_forward(x[:, None, :], params, training=True)
                z = out[:, 0, :] + x if params.residual else out[:, 0, :]
                loss, grad = nn.mse_loss(z, targets[idx])
                if not np.isfinite(loss):
                    raise FloatingPointError(
                        f"calibrator pretraining diverged at epoch {epoch}")
                _, grads = _cnn_backward(grad[:, None, :], caches, params)
                nn.adam_step(trainable, grads, state)

    state = nn.AdamState(lr=train_config.lr)
    curve = []
    for epoch in range(train_config.epochs):
        state.lr = nn.scheduled_lr(train_config.lr, epoch,
                                   train_config.lr_halve_every)
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, train_config.batch_size):
            idx = order[start:start + train_config.batch_size]
            loss, grads, _ = _pipeline_batch(eta0s[idx], labels[idx], p_tilde,
                                             params, config, train_config,
                                             training=True)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"calibrator training diverged at epoch {epoch} (loss={loss})")
            nn.adam_step(trainable, grads, state)
            losses.append(loss)
        curve.append(float(np.mean(losses)))
    return params, curve

"""Frequency-diverse multi-task autoencoder used as a bank of spatial
pre-filters.

Each subcarrier gets its own single-layer encoder; each (subregion,
subcarrier) pair gets its own single-layer decoder.  Training drives
the p-th decoder output toward the input when the true direction falls
in subregion p and toward zero otherwise, so the trained bank gates CSI
into angular subregions.  Downstream processing then runs independently
per subregion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .simulate import CfrSet, DirectionGrid


@dataclass(frozen=True)
class SubregionPartition:
    """Uniform split of an L-point grid into P contiguous subregions.

    Boundary indices follow floor(L * p / P); each grid angle belongs to
    exactly one subregion, and an angle exactly on a boundary belongs to
    the subregion starting there.
    """

    grid: DirectionGrid
    num_subregions: int

    def __post_init__(self):
        if self.num_subregions < 1:
            raise ValueError("need at least one subregion")
        if self.num_subregions > len(self.grid):
            raise ValueError("more subregions than grid points")

    @property
    def boundaries(self) -> list:
        l, p = len(self.grid), self.num_subregions
        return [(l * i) // p for i in range(p + 1)]

    def index_range(self, p: int) -> tuple:
        b = self.boundaries
        return b[p], b[p + 1]

    def subgrid(self, p: int) -> DirectionGrid:
        lo, hi = self.index_range(p)
        return DirectionGrid(self.grid.angles[lo:hi])

    def assign(self, angle_deg: float) -> int:
        """Subregion index owning the given on-grid angle."""
        idx = self.grid.index_of(angle_deg)
        b = self.boundaries
        for p in range(self.num_subregions):
            if b[p] <= idx < b[p + 1]:
                return p
        raise RuntimeError("partition does not cover the grid")  # pragma: no cover

    def span(self, p: int) -> tuple:
        lo, hi = self.index_range(p)
        return float(self.grid.angles[lo]), float(self.grid.angles[hi - 1])


@dataclass
class AutoencoderParams:
    """Per-subcarrier encoder and per-(subregion, subcarrier) decoder.

    Weight conventions are (out_dim, in_dim): encoders map the 2M-dim
    real stack to a ``code_dim`` code through tanh, decoders map the
    code back to 2M through an identity output activation (targets are
    signed real stacks).  Arrays are stacked across subcarriers (and
    subregions) on the leading axes.
    """

    enc_w: np.ndarray   # (K, code, 2M)
    enc_b: np.ndarray   # (K, code)
    dec_w: np.ndarray   # (P, K, 2M, code)
    dec_b: np.ndarray   # (P, K, 2M)
    hidden_activation: str = "tanh"
    output_activation: str = "identity"

    def __post_init__(self):
        k, code, twom = self.enc_w.shape
        if self.enc_b.shape != (k, code):
            raise ValueError("encoder bias shape mismatch")
        if self.dec_w.shape[1:] != (k, twom, code):
            raise ValueError("decoder weight shape mismatch")
        if self.dec_b.shape != (self.dec_w.shape[0], k, twom):
            raise ValueError("decoder bias shape mismatch")
        if code > twom:
            raise ValueError("code dimension larger than the input stack")

    @property
    def num_subcarriers(self) -> int:
        return self.enc_w.shape[0]

    @property
    def code_dim(self) -> int:
        return self.enc_w.shape[1]

    @property
    def num_subregions(self) -> int:
        return self.dec_w.shape[0]

    @classmethod
    def init(cls, num_elements: int, num_subcarriers: int, num_subregions: int,
             code_dim: int = 8, seed: int = 0) -> "AutoencoderParams":
        """Random init, identical across subcarrier tasks.

        Sharing one draw across the per-subcarrier blocks keeps the
        tasks exchangeable: permuting the subcarrier axis of the data
        permutes the trained per-subcarrier parameters identically.
        """
        twom = 2 * num_elements
        rng = np.random.default_rng(seed)
        ew = rng.standard_normal((code_dim, twom)) / np.sqrt(twom)
        dw = rng.standard_normal((num_subregions, 1, twom, code_dim)) / np.sqrt(code_dim)
        return cls(
            enc_w=np.broadcast_to(ew, (num_subcarriers, code_dim, twom)).copy(),
            enc_b=np.zeros((num_subcarriers, code_dim)),
            dec_w=np.broadcast_to(dw, (num_subregions, num_subcarriers, twom, code_dim)).copy(),
            dec_b=np.zeros((num_subregions, num_subcarriers, twom)),
        )


def realify(h: np.ndarray) -> np.ndarray:
    """Stack a complex M-vector as [Re(h); Im(h)] (fixed order)."""
    h = np.asarray(h, dtype=np.complex128)
    if not (np.all(np.isfinite(h.real)) and np.all(np.isfinite(h.imag))):
        raise ValueError("input contains non-finite entries")
    return np.concatenate([h.real, h.imag])


def complexify(v: np.ndarray) -> np.ndarray:
    """Inverse of ``realify``."""
    v = np.asarray(v, dtype=np.float64)
    m = v.shape[-1] // 2
    return v[..., :m] + 1j * v[..., m:]


def _activate(x: np.ndarray, tag: str):
    if tag == "tanh":
        return nn.tanh_forward(x)
    if tag == "identity":
        return x, None
    raise ValueError(f"unknown activation '{tag}'")


def encode(h_tilde: np.ndarray, k: int, params: AutoencoderParams) -> np.ndarray:
    """Subcarrier-k encoder: activation(enc_w[k] @ h + enc_b[k])."""
    w, b = params.enc_w[k], params.enc_b[k]
    if h_tilde.shape != (w.shape[1],):
        raise ValueError("input length does not match the encoder")
    y, _ = _activate(w @ h_tilde + b, params.hidden_activation)
    return y

def decode(code: np.ndarray, p: int, k: int, params: AutoencoderParams) -> np.ndarray:
    """Subregion-p, subcarrier-k decoder: activation(dec_w @ c + dec_b)."""
    w, b = params.dec_w[p, k], params.dec_b[p, k]
    if code.shape != (w.shape[1],):
        raise ValueError("code length does not match the decoder")
    y, _ = _activate(w @ code + b, params.output_activation)
    return y


def gating_target(h_tilde: np.ndarray, true_aoa: float,
                  partition: SubregionPartition) -> list:
    """Desired decoder outputs: the input in its owning subregion, zero
    elsewhere.  The true direction must lie on the partition's grid."""
    own = partition.assign(true_aoa)
    return [h_tilde if p == own else np.zeros_like(h_tilde)
            for p in range(partition.num_subregions)]


@dataclass(frozen=True)
class ResponseMetrics:
    """Beamformer response against the raw input.

    ``r_amp`` is |h^H h_p|; ``r_phase`` is the normalized correlation
    |h^H h_p| / (||h|| ||h_p||), in [0, 1], and is None (undefined) for
    a zero filtered vector.
    """

    r_amp: float
    r_phase: float | None


def response_metrics(h: np.ndarray, h_p: np.ndarray) -> ResponseMetrics:
    nh = np.linalg.norm(h)
    if nh == 0:
        raise ValueError("reference vector must be nonzero")
    amp = float(abs(np.vdot(h, h_p)))
    nhp = np.linalg.norm(h_p)
    if nhp == 0:
        return ResponseMetrics(r_amp=0.0, r_phase=None)
    return ResponseMetrics(r_amp=amp, r_phase=amp / float(nh * nhp))


@dataclass(frozen=True)
class AutoencoderTrainConfig:
    lr: float = 0.01
    batch_size: int = 64
    epochs: int = 30
    lr_halve_every: int = 5
    seed: int = 0


def _stack_dataset(dataset: list) -> tuple:
    """CfrSets -> real stacks (N, K, 2M) and angle labels (N,)."""
    xs, angles = [], []
    for cfr, aoa in dataset:
        h = cfr.h  # (M, K)
        xs.append(np.concatenate([h.real, h.imag], axis=0).T)  # (K, 2M)
        angles.append(aoa)
    return np.stack(xs), np.array(angles)


def _forward_batch(x: np.ndarray, params: AutoencoderParams):
    """x: (B, K, 2M) -> outputs (B, P, K, 2M) plus caches."""
    pre = np.einsum("kcd,bkd->bkc", params.enc_w, x) + params.enc_b[None]
    code, code_cache = _activate(pre, params.hidden_activation)
    out = (np.einsum("pkdc,bkc->bpkd", params.dec_w, code)
           + params.dec_b[None])
    return out, (x, code, code_cache)


def _backward_batch(grad_out: np.ndarray, cache, params: AutoencoderParams) -> dict:
    x, code, code_cache = cache
    grads = {}
    grads["dec_w"] = np.einsum("bpkd,bkc->pkdc", grad_out, code, optimize=True)
    grads["dec_b"] = grad_out.sum(axis=0)
    gcode = np.einsum("bpkd,pkdc->bkc", grad_out, params.dec_w, optimize=True)
    if params.hidden_activation == "tanh":
        gpre = nn.tanh_backward(code_cache, gcode)
    else:
        gpre = gcode
    grads["enc_w"] = np.einsum("bkc,bkd->kcd", gpre, x, optimize=True)
    grads["enc_b"] = gpre.sum(axis=0)
    return grads


def train_autoencoder(dataset: list, partition: SubregionPartition,
                      config: AutoencoderTrainConfig = AutoencoderTrainConfig(),
                      code_dim: int = 8,
                      params: AutoencoderParams | None = None):
    """Fit the gating autoencoder by MSE against the gated targets.

    ``dataset`` is a list of (CfrSet, true_aoa) pairs with on-grid
    labels.  Returns (params, per-epoch mean loss curve).  Raises if the
    loss diverges to a non-finite value.
    """
    if not dataset:
        raise ValueError("empty training dataset")
    x, angles = _stack_dataset(dataset)
    n, k, twom = x.shape
    p_regions = partition.num_subregions

    targets = np.zeros((n, p_regions, k, twom))
    for i in range(n):
        own = partition.assign(angles[i])
        targets[i, own] = x[i]

    if params is None:
        params = AutoencoderParams.init(twom // 2, k, p_regions,
                                        code_dim=code_dim, seed=config.seed)
    pdict = {"enc_w": params.enc_w, "enc_b": params.enc_b,
             "dec_w": params.dec_w, "dec_b": params.dec_b}
    state = nn.AdamState(lr=config.lr)
    rng = np.random.default_rng(config.seed)

    curve = []
    for epoch in range(config.epochs):
        state.lr = nn.scheduled_lr(config.lr, epoch, config.lr_halve_every)
        order = rng.permutation(n)
        epoch_losses = []
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            out, cache = _forward_batch(x[idx], params)
            loss, grad = nn.mse_loss(out, targets[idx])
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"autoencoder training diverged at epoch {epoch} (loss={loss})")
            grads = _backward_batch(grad, cache, params)
            nn.adam_step(pdict, grads, state)
            epoch_losses.append(loss)
        curve.append(float(np.mean(epoch_losses)))
    return params, curve


def beamform(cfr: CfrSet, params: AutoencoderParams) -> np.ndarray:
    """All subregion reconstructions of one CFR set, complex (P, M, K)."""
    h = cfr.h
    x = np.concatenate([h.real, h.imag], axis=0).T[None]  # (1, K, 2M)
    out, _ = _forward_batch(x, params)                     # (1, P, K, 2M)
    return complexify(out[0]).transpose(0, 2, 1)           # (P, M, K)


def route(cfr: CfrSet, params: AutoencoderParams) -> tuple:
    """Pick the subregion whose decoder output carries the most energy.

    Returns (subregion index, its complex (M, K) reconstruction).
    """
    recon = beamform(cfr, params)
    energy = np.sum(np.abs(recon) ** 2, axis=(1, 2))
    p = int(np.argmax(energy))
    return p, recon[p]

"""Conditional-VAE survival model over a discrete time grid.

An LSTM encoder reads the replicated static + longitudinal matrix and its
final hidden state feeds two linear heads, mu and logvar. Training samples
z = mu + eps * sigma, reconstructs the input through a dense decoder that
also sees a condition vector built from the outcome, and pushes z through
a softmax head over K + 1 bins: K interval bins plus one beyond-horizon
bin, which keeps every censored likelihood term strictly positive. At
inference z = mu and the decoder is not used.

The survival likelihood for an event in bin b conditions on surviving the
observation window: -log( a_b / (1 - sum_{n <= l} a_n) ) with l the last
observed bin; censored subjects contribute -log(1 - F(bin)). Complements
are evaluated as suffix sums of the softmax, which is the same quantity
without cancellation. The VAE term is the per-subject reconstruction MSE
plus the Gaussian KL, 0.5 * sum(mu^2 + sigma^2 - 1 - log sigma^2), and the
total training loss is alpha * L_nll + (1 - alpha) * L_vae.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Param, Tape, Tensor
from .data import SubjectRecord, TimeGrid, replicate_static
from .errors import ContractError, DomainError, NumericalError
from .nn import (
    DenseLayerParams,
    LSTMCellParams,
    dense_forward,
    init_dense,
    init_lstm,
    lstm_forward,
)

Array = np.ndarray

PROB_FLOOR = 1e-12
CONDITION_MODES = ("labels", "times", "both")


@dataclass
class ModelConfig:
    """Architecture knobs; sizes follow the data, these set capacity."""

    hidden_size: int = 64
    z_dim: int = 16
    decoder_hidden: tuple[int, ...] = (64,)
    survival_hidden: tuple[int, ...] = (32,)
    condition_mode: str = "both"

    def __post_init__(self):
        if self.condition_mode not in CONDITION_MODES:
            raise ContractError(
                f"condition_mode '{self.condition_mode}' not one of {CONDITION_MODES}"
            )
        if self.hidden_size < 1 or self.z_dim < 1:
            raise ContractError("hidden_size and z_dim must be positive")

    def canonical(self) -> dict:
        return {
            "hidden_size": self.hidden_size,
            "z_dim": self.z_dim,
            "decoder_hidden": list(self.decoder_hidden),
            "survival_hidden": list(self.survival_hidden),
            "condition_mode": self.condition_mode,
        }

    @staticmethod
    def from_canonical(d: dict) -> "ModelConfig":
        return ModelConfig(
            hidden_size=int(d["hidden_size"]),
            z_dim=int(d["z_dim"]),
            decoder_hidden=tuple(d["decoder_hidden"]),
            survival_hidden=tuple(d["survival_hidden"]),
            condition_mode=d["condition_mode"],
        )


def condition_dim(mode: str, n_bins: int) -> int:
    if mode == "labels":
        return 2
    if mode == "times":
        return n_bins + 1
    return 2 + n_bins + 1


@dataclass
class DySurvParams:
    """All trainable parameters plus the shape contract they were built for."""

    encoder: LSTMCellParams
    mu_head: DenseLayerParams
    logvar_head: DenseLayerParams
    decoder: list[DenseLayerParams]
    survival: list[DenseLayerParams]
    d_in: int
    seq_len: int
    n_bins: int
    z_dim: int
    condition_mode: str

    @property
    def cond_dim(self) -> int:
        return condition_dim(self.condition_mode, self.n_bins)

    def parameters(self) -> list[Param]:
        out = self.encoder.parameters()
        out += self.mu_head.parameters() + self.logvar_head.parameters()
        for layer in self.decoder:
            out += layer.parameters()
        for layer in self.survival:
            out += layer.parameters()
        return out


def init_dysurv_params(
    rng: np.random.Generator,
    d_in: int,
    seq_len: int,
    n_bins: int,
    config: ModelConfig | None = None,
) -> DySurvParams:
    config = config or ModelConfig()
    if d_in < 1 or seq_len < 1 or n_bins < 1:
        raise ContractError("d_in, seq_len and n_bins must all be positive")
    encoder = init_lstm(rng, d_in, config.hidden_size, "enc")
    mu_head = init_dense(rng, config.hidden_size, config.z_dim, "identity", "mu")
    logvar_head = init_dense(rng, config.hidden_size, config.z_dim, "identity", "logvar")

    survival = []
    prev = config.z_dim
    for i, width in enumerate(config.survival_hidden):
        survival.append(init_dense(rng, prev, width, "tanh", f"sur{i}"))
        prev = width
    survival.append(init_dense(rng, prev, n_bins + 1, "softmax", "sur_out"))

    decoder = []
    prev = config.z_dim + condition_dim(config.condition_mode, n_bins)
    for i, width in enumerate(config.decoder_hidden):
        decoder.append(init_dense(rng, prev, width, "tanh", f"dec{i}"))
        prev = width
    decoder.append(init_dense(rng, prev, seq_len * d_in, "identity", "dec_out"))

    return DySurvParams(
        encoder=encoder,
        mu_head=mu_head,
        logvar_head=logvar_head,
        decoder=decoder,
        survival=survival,
        d_in=d_in,
        seq_len=seq_len,
        n_bins=n_bins,
        z_dim=config.z_dim,
        condition_mode=config.condition_mode,
    )


def condition_matrix(events: Array, bins: Array, n_bins: int, mode: str) -> Array:
    """Outcome conditioning for the decoder: event one-hot [censored, event]
    and/or a duration-bin one-hot of width n_bins + 1."""
    if mode not in CONDITION_MODES:
        raise ContractError(f"condition mode '{mode}' not one of {CONDITION_MODES}")
    events = np.asarray(events, dtype=np.int64)
    bins = np.asarray(bins, dtype=np.int64)
    n = events.shape[0]
    parts = []
    if mode in ("labels", "both"):
        lab = np.zeros((n, 2))
        lab[np.arange(n), events] = 1.0
        parts.append(lab)
    if mode in ("times", "both"):
        if np.any(bins < 0) or np.any(bins > n_bins):
            raise DomainError("duration bins outside [0, n_bins]")
        tim = np.zeros((n, n_bins + 1))
        tim[np.arange(n), bins] = 1.0
        parts.append(tim)
    return np.concatenate(parts, axis=1)


# ---------------------------------------------------------------------------
# estimates and curves
# ---------------------------------------------------------------------------


@dataclass
class RiskEstimate:
    """Softmax bin masses and the curves derived from them.

    ``probs`` has n_bins + 1 entries; ``cif``/``survival`` cover the K
    interval bins, with survival[k] the probability of outliving bin k.
    """

    probs: Array
    cif: Array = field(init=False)
    survival: Array = field(init=False)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1 or self.probs.size < 2:
            raise ContractError("probs must be a 1-D array of n_bins + 1 masses")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-9:
            raise NumericalError("bin masses must be nonnegative and sum to one")
        cum = np.cumsum(self.probs)
        self.cif = cum[:-1]
        self.survival = 1.0 - self.cif

    @property
    def n_bins(self) -> int:
        return self.probs.size - 1


@dataclass
class LatentSample:
    mu: Array
    logvar: Array
    eps: Array
    z: Array

    @property
    def sigma(self) -> Array:
        return np.exp(0.5 * self.logvar)


def reparameterize(mu: Array, sigma: Array, eps: Array) -> Array:
    """z = mu + eps * sigma with externally supplied standard-normal eps."""
    mu, sigma, eps = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, eps))
    if mu.shape != sigma.shape or mu.shape != eps.shape:
        raise ContractError("mu, sigma and eps must share a shape")
    if np.any(sigma <= 0):
        raise DomainError("sigma must be strictly positive")
    return mu + eps * sigma


def interpolate_survival(estimate: RiskEstimate, grid: TimeGrid, t):
    """Piecewise-linear survival through the knots (0, 1) and
    (boundary_{k+1}, survival_k). Defined on [0, t_max] only."""
    if estimate.n_bins != grid.n_bins:
        raise ContractError(
            f"estimate has {estimate.n_bins} bins but grid has {grid.n_bins}"
        )
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or np.any(arr > grid.t_max):
        raise DomainError(f"query time outside [0, {grid.t_max}]")
    knots_y = np.concatenate([[1.0], estimate.survival])
    out = np.interp(arr, grid.boundaries, knots_y)
    if np.isscalar(t) or arr.ndim == 0:
        return float(out)
    return out


# ---------------------------------------------------------------------------
# forward graph
# ---------------------------------------------------------------------------


def draw_dropout_masks(
    rng: np.random.Generator, params: DySurvParams, batch: int, keep: float
) -> dict[str, Array]:
    """Pre-draw 0/1 keep masks for every dropout site of one forward pass."""
    masks = {"enc": (rng.random((batch, params.encoder.hidden)) < keep).astype(np.float64)}
    for i, layer in enumerate(params.survival[:-1]):
        masks[f"sur{i}"] = (rng.random((batch, layer.d_out)) < keep).astype(np.float64)
    for i, layer in enumerate(params.decoder[:-1]):
        masks[f"dec{i}"] = (rng.random((batch, layer.d_out)) < keep).astype(np.float64)
    return masks


def forward_graph(
    tape: Tape,
    params: DySurvParams,
    x_steps: list[Array],
    *,
    cond: Array | None = None,
    eps: Array | None = None,
    keep: float = 1.0,
    masks: dict[str, Array] | None = None,
    training: bool = False,
):
    """Build the full forward pass on the tape for a batch.

    ``x_steps`` is the input split per timestep, each (batch, d_in).
    Passing ``eps`` turns on latent sampling; passing ``cond`` builds the
    reconstruction branch. Returns (mu, logvar, z, a_hat, x_recon) tensors,
    x_recon None when ``cond`` is None.
    """
    dropping = training and keep < 1.0
    if dropping and masks is None:
        raise ContractError("training with keep < 1 requires pre-drawn dropout masks")

    h = lstm_forward(tape, params.encoder, x_steps)
    if dropping:
        h = tape.dropout(h, keep, masks["enc"], True)
    mu = dense_forward(tape, params.mu_head, h)
    logvar = dense_forward(tape, params.logvar_head, h)
    if eps is None:
        z = mu
    else:
        sigma = tape.exp(tape.mul(logvar, 0.5))
        z = tape.add(mu, tape.mul(sigma, tape.leaf(eps)))

    s = z
    for i, layer in enumerate(params.survival[:-1]):
        s = dense_forward(tape, layer, s)
        if dropping:
            s = tape.dropout(s, keep, masks[f"sur{i}"], True)
    a_hat = dense_forward(tape, params.survival[-1], s)

    x_recon = None
    if cond is not None:
        d = tape.concat([z, tape.leaf(cond)], axis=1)
        for i, layer in enumerate(params.decoder[:-1]):
            d = dense_forward(tape, layer, d)
            if dropping:
                d = tape.dropout(d, keep, masks[f"dec{i}"], True)
        x_recon = dense_forward(tape, params.decoder[-1], d)
    return mu, logvar, z, a_hat, x_recon


def _as_input_matrix(params: DySurvParams, record_or_matrix) -> Array:
    if isinstance(record_or_matrix, SubjectRecord):
        x = replicate_static(record_or_matrix)
    else:
        x = np.asarray(record_or_matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape != (params.seq_len, params.d_in):
        raise ContractError(
            f"model expects a ({params.seq_len}, {params.d_in}) input, got {x.shape}"
        )
    return x


def encode(params: DySurvParams, record_or_matrix) -> tuple[Array, Array]:
    """Posterior parameters for one subject: (mu, logvar), each (z_dim,)."""
    x = _as_input_matrix(params, record_or_matrix)
    tape = Tape()
    mu, logvar, _, _, _ = forward_graph(tape, params, [x[j : j + 1] for j in range(x.shape[0])])
    return mu.value[0].copy(), logvar.value[0].copy()


def decode(params: DySurvParams, z: Array, cond: Array) -> Array:
    """Reconstruction for one subject, reshaped to (seq_len, d_in)."""
    z = np.asarray(z, dtype=np.float64).reshape(1, -1)
    cond = np.asarray(cond, dtype=np.float64).reshape(1, -1)
    if z.shape[1] != params.z_dim:
        raise ContractError(f"z has {z.shape[1]} dims, model wants {params.z_dim}")
    if cond.shape[1] != params.cond_dim:
        raise ContractError(f"cond has {cond.shape[1]} dims, model wants {params.cond_dim}")
    tape = Tape()
    d = tape.concat([tape.leaf(z), tape.leaf(cond)], axis=1)
    for layer in params.decoder[:-1]:
        d = dense_forward(tape, layer, d)
    out = dense_forward(tape, params.decoder[-1], d)
    return out.value[0].reshape(params.seq_len, params.d_in).copy()


def predict_risk_batch(params: DySurvParams, x: Array) -> Array:
    """Bin masses for a (batch, seq_len, d_in) stack with z = mu."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[1:] != (params.seq_len, params.d_in):
        raise ContractError(
            f"expected (batch, {params.seq_len}, {params.d_in}) inputs, got {x.shape}"
        )
    tape = Tape()
    steps = [x[:, j, :] for j in range(params.seq_len)]
    _, _, _, a_hat, _ = forward_graph(tape, params, steps)
    return a_hat.value.copy()


def predict_risk(params: DySurvParams, record_or_matrix) -> RiskEstimate:
    """Inference-mode risk for one subject: deterministic latent, no decoder."""
    x = _as_input_matrix(params, record_or_matrix)
    probs = predict_risk_batch(params, x[None, :, :])[0]
    return RiskEstimate(probs=probs)


# ---------------------------------------------------------------------------
# losses: numpy references
# ---------------------------------------------------------------------------


def _suffix_sums(probs: Array) -> Array:
    """suffix[i, k] = sum of probs[i, k:]; column K+1 would be zero."""
    return np.cumsum(probs[:, ::-1], axis=1)[:, ::-1]


def _validate_nll_inputs(probs, bins, events, last_obs_bins):
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[1] < 2:
        raise ContractError("probs must be (n, n_bins + 1)")
    n, kp1 = probs.shape
    bins = np.asarray(bins, dtype=np.int64)
    events = np.asarray(events, dtype=np.int64)
    if last_obs_bins is None:
        last_obs_bins = np.full(n, -1, dtype=np.int64)
    else:
        last_obs_bins = np.asarray(last_obs_bins, dtype=np.int64)
    if not (bins.shape == events.shape == last_obs_bins.shape == (n,)):
        raise ContractError("bins, events and last_obs_bins must all be (n,)")
    if np.any(bins < 0) or np.any(bins > kp1 - 2):
        raise DomainError("event/censor bins must lie in [0, n_bins - 1]")
    if np.any((events != 0) & (events != 1)):
        raise DomainError("events must be 0 or 1")
    if np.any(last_obs_bins < -1) or np.any(last_obs_bins > bins):
        raise DomainError(
            "last observed bin must lie in [-1, bin]; -1 means no observation window"
        )
    return probs, bins, events, last_obs_bins


def loss_survival_nll(probs, bins, events, last_obs_bins=None) -> float:
    """Discrete-time negative log likelihood, summed over the batch.

    Event subjects contribute -log(a_bin / sum_{n > l} a_n) with l the last
    observed bin (l = -1 conditions on nothing); censored subjects
    contribute -log(sum_{n > bin} a_n). Probabilities are clamped to
    [1e-12, 1] before the log.
    """
    probs, bins, events, last_obs = _validate_nll_inputs(probs, bins, events, last_obs_bins)
    n = probs.shape[0]
    idx = np.arange(n)
    suffix = _suffix_sums(probs)
    pick = probs[idx, bins]
    den_evt = suffix[idx, last_obs + 1]
    den_cen = suffix[idx, bins + 1]
    bad_evt = (events == 1) & (den_evt <= 0)
    bad_cen = (events == 0) & (den_cen <= 0)
    if bad_evt.any() or bad_cen.any():
        offenders = np.where(bad_evt | bad_cen)[0][:8].tolist()
        raise NumericalError(
            f"nonpositive likelihood denominator for subjects {offenders}"
        )
    clamp = lambda v: np.clip(v, PROB_FLOOR, 1.0)
    evt_terms = -(np.log(clamp(pick)) - np.log(clamp(den_evt)))
    cen_terms = -np.log(clamp(den_cen))
    return float(np.where(events == 1, evt_terms, cen_terms).sum())


def loss_vae(x, x_recon, mu, sigma) -> float:
    """Reconstruction MSE plus Gaussian KL, summed over the batch.

    The MSE is the mean over each subject's input entries, so its scale
    does not grow with the sequence length or feature count.
    """
    x = np.asarray(x, dtype=np.float64)
    x_recon = np.asarray(x_recon, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.ndim == 1:
        mu, sigma = mu[None, :], sigma[None, :]
        x, x_recon = x[None, ...], x_recon[None, ...]
    if x.shape != x_recon.shape:
        raise ContractError(f"x {x.shape} and x_recon {x_recon.shape} differ")
    if mu.shape != sigma.shape:
        raise ContractError("mu and sigma must share a shape")
    if np.any(sigma <= 0):
        raise DomainError("sigma must be strictly positive")
    n = mu.shape[0]
    mse = ((x - x_recon) ** 2).reshape(n, -1).mean(axis=1)
    kl = 0.5 * (mu**2 + sigma**2 - 1.0 - np.log(sigma**2)).sum(axis=1)
    return float((mse + kl).sum())


def loss_total(l1: float, l2: float, alpha: float) -> float:
    """alpha-weighted blend; alpha = 1 recovers the plain logistic hazard."""
    if not (0.0 <= alpha <= 1.0):
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    return alpha * l1 + (1.0 - alpha) * l2


# ---------------------------------------------------------------------------
# losses: tape graphs
# ---------------------------------------------------------------------------


@dataclass
class LossMasks:
    """Constant 0/1 matrices that express the likelihood as tape primitives."""

    onehot: Array
    after_last: Array
    after_bin: Array
    is_event: Array
    is_censored: Array

    @staticmethod
    def build(bins, events, last_obs_bins, n_bins: int) -> "LossMasks":
        bins = np.asarray(bins, dtype=np.int64)
        events = np.asarray(events, dtype=np.int64)
        n = bins.shape[0]
        if last_obs_bins is None:
            last_obs = np.full(n, -1, dtype=np.int64)
        else:
            last_obs = np.asarray(last_obs_bins, dtype=np.int64)
        cols = np.arange(n_bins + 1)
        onehot = (cols[None, :] == bins[:, None]).astype(np.float64)
        after_last = (cols[None, :] > last_obs[:, None]).astype(np.float64)
        after_bin = (cols[None, :] > bins[:, None]).astype(np.float64)
        return LossMasks(
            onehot=onehot,
            after_last=after_last,
            after_bin=after_bin,
            is_event=(events == 1).astype(np.float64),
            is_censored=(events == 0).astype(np.float64),
        )


def nll_graph(tape: Tape, a_hat: Tensor, masks: LossMasks) -> Tensor:
    """Tape twin of :func:`loss_survival_nll` (same clamping, same formula)."""
    pick = tape.sum(tape.mul(a_hat, tape.leaf(masks.onehot)), axis=1)
    den_evt = tape.sum(tape.mul(a_hat, tape.leaf(masks.after_last)), axis=1)
    den_cen = tape.sum(tape.mul(a_hat, tape.leaf(masks.after_bin)), axis=1)
    log_pick = tape.log(tape.clip(pick, PROB_FLOOR, 1.0))
    log_den_evt = tape.log(tape.clip(den_evt, PROB_FLOOR, 1.0))
    log_den_cen = tape.log(tape.clip(den_cen, PROB_FLOOR, 1.0))
    evt_terms = tape.sub(log_den_evt, log_pick)
    cen_terms = tape.mul(log_den_cen, -1.0)
    per_subject = tape.add(
        tape.mul(evt_terms, tape.leaf(masks.is_event)),
        tape.mul(cen_terms, tape.leaf(masks.is_censored)),
    )
    return tape.sum(per_subject)


def vae_graph(tape: Tape, x_flat: Array, x_recon: Tensor, mu: Tensor, logvar: Tensor) -> Tensor:
    """Tape twin of :func:`loss_vae`, parameterized by logvar."""
    diff = tape.sub(x_recon, tape.leaf(x_flat))
    mse = tape.mean(tape.square(diff), axis=1)
    sig2 = tape.exp(logvar)
    inner = tape.sub(tape.sub(tape.add(tape.square(mu), sig2), 1.0), logvar)
    kl = tape.mul(tape.sum(inner, axis=1), 0.5)
    return tape.sum(tape.add(mse, kl))


def total_loss_graph(tape: Tape, l1: Tensor, l2: Tensor | None, alpha: float) -> Tensor:
    if not (0.0 <= alpha <= 1.0):
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 1.0:
        return l1
    if l2 is None:
        raise ContractError("alpha < 1 needs the VAE branch on the tape")
    return tape.add(tape.mul(l1, alpha), tape.mul(l2, 1.0 - alpha))

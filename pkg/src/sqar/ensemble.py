"""Ensemble classifier with stochastic quantization at input and features.

One parent network, many stochastic members: each member draws a quantized
input sample, pushes it through the feature extractor, quantizes the feature
vector on a per-sample min/max grid, draws a quantized feature sample, and
classifies it.  Member outputs are aggregated by averaging softmax
probabilities.  Because every quantizer PMF is known exactly, the ensemble
also reports the mutual information between quantized input and quantized
features, plus the feature diversity (conditional entropy) and the feature
grid spacing.

The differentiable member graph (`member_graph`) is shared verbatim by the
trainer and by the white-box attacker, so the attacker's relaxed-sampling
path is the training path with a different random stream.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels, tensorcore as tc
from .infotheory import MIEstimate, mi_from_stack
from .quant import SqParams, gumbel_softmax_weights, padded_range, sample_gumbel


@dataclass
class SQEnsembleModel:
    """Parent network parameters plus quantizer configuration.

    arch lists layer widths input..features..classes.  All feature layers
    except the last carry relu; the last feature layer is linear.  For a
    two-entry arch the classifier is the identity (toy models).
    """

    arch: tuple
    weights: list                       # [(W, b), ...] in declaration order
    sq_input: Optional[SqParams] = None
    sq_feature: Optional[SqParams] = None
    input_range: tuple = (0.0, 1.0)
    n_members: int = 16

    def __post_init__(self):
        if self.n_members < 1:
            raise ValueError("n_members must be >= 1")
        if len(self.arch) < 2:
            raise ValueError("arch needs at least input and output sizes")

    @property
    def has_classifier(self) -> bool:
        return len(self.arch) > 2

    @property
    def n_classes(self) -> int:
        return self.arch[-1]

    def parameters(self):
        out = []
        for W, b in self.weights:
            out.extend((W, b))
        return out

    def copy(self) -> "SQEnsembleModel":
        return replace(self, weights=[(W.copy(), b.copy()) for W, b in self.weights])


@dataclass
class MemberForward:
    """Everything one member pass produces, PMFs included."""

    logits: np.ndarray        # (B, C)
    input_probs: np.ndarray   # (B, D, n_in) or None for vanilla models
    x_sample: np.ndarray      # (B, D)
    features: np.ndarray      # (B, d) pre-quantization
    feat_probs: np.ndarray    # (B, d, n_feat) or None
    feat_sample: np.ndarray   # (B, d)
    feat_lo: np.ndarray       # (B,)
    feat_hi: np.ndarray       # (B,)
    degenerate: np.ndarray    # (B,) bool, feature range was padded


@dataclass
class EnsembleOutput:
    """Aggregated prediction plus the information-theoretic readouts."""

    probs: np.ndarray                 # (C,) aggregated class probabilities
    member_logits: np.ndarray         # (M, C)
    mi: Optional[MIEstimate]
    diversity: float                  # mean conditional feature entropy, nats
    feature_bin_spacing: float


def he_uniform(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def build_model(arch, sq_input=None, sq_feature=None, n_members=16,
                seed=0) -> SQEnsembleModel:
    """Fresh model with He-uniform weights and zero biases."""
    arch = tuple(int(a) for a in arch)
    if any(a < 1 for a in arch):
        raise ValueError(f"invalid architecture {arch}")
    rng = np.random.default_rng(seed)
    weights = []
    for fan_in, fan_out in zip(arch[:-1], arch[1:]):
        weights.append((he_uniform(rng, fan_in, fan_out), np.zeros(fan_out)))
    return SQEnsembleModel(arch=arch, weights=weights, sq_input=sq_input,
                           sq_feature=sq_feature, n_members=n_members)


def softmax(z, axis=-1):
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _feature_layers(model):
    return model.weights[:-1] if model.has_classifier else model.weights


def features_np(model, x):
    """Feature extractor forward in plain numpy; x is (B, D)."""
    layers = _feature_layers(model)
    h = x
    for i, (W, b) in enumerate(layers):
        h = h @ W + b
        if i < len(layers) - 1:
            h = np.maximum(h, 0.0)
    return h


def classify_np(model, t):
    if not model.has_classifier:
        return t
    W, b = model.weights[-1]
    return t @ W + b


def input_pmfs(model, x):
    """Input-layer quantizer PMFs for a (B, D) batch on the fixed range."""
    sq = model.sq_input
    lo, hi = model.input_range
    flat = x.ravel()
    probs = _kernels.sq_pmf_flat(flat, np.full(flat.size, lo),
                                 np.full(flat.size, hi), sq.n_bins, sq.alpha)
    return probs.reshape(x.shape + (sq.n_bins,))


def feature_grids(model, t):
    """Per-row (lo, hi, degenerate) for a (B, d) feature batch."""
    lo = t.min(axis=1)
    hi = t.max(axis=1)
    degenerate = hi - lo <= 0.0
    pad = np.maximum(1e-6, 1e-6 * np.abs(hi))
    lo = np.where(degenerate, lo - pad, lo)
    hi = np.where(degenerate, hi + pad, hi)
    return lo, hi, degenerate


def feature_pmfs(model, t, lo, hi):
    sq = model.sq_feature
    B, d = t.shape
    probs = _kernels.sq_pmf_flat(
        t.ravel(), np.repeat(lo, d), np.repeat(hi, d), sq.n_bins, sq.alpha)
    return probs.reshape(B, d, sq.n_bins)


def _bin_matrix(lo, hi, n):
    frac = np.arange(n) / (n - 1)
    return lo[..., None] * (1.0 - frac) + hi[..., None] * frac


def _sample_values(probs, lo, hi, rng):
    """Hard categorical draws mapped to bin values; probs is (..., n)."""
    n = probs.shape[-1]
    flat = probs.reshape(-1, n)
    idx = _kernels.categorical_rows(np.ascontiguousarray(flat),
                                    rng.random(flat.shape[0]))
    b = _bin_matrix(np.broadcast_to(lo, probs.shape[:-1]).ravel(),
                    np.broadcast_to(hi, probs.shape[:-1]).ravel(), n)
    return b[np.arange(flat.shape[0]), idx].reshape(probs.shape[:-1])


def forward_member(model, image, rng, relaxed=False) -> MemberForward:
    """One stochastic member pass; accepts (D,) or (B, D) images."""
    x = np.atleast_2d(np.asarray(image, dtype=np.float64))
    lo_in, hi_in = model.input_range
    if x.min() < lo_in or x.max() > hi_in:
        raise ValueError("image values outside the input grid range")

    if model.sq_input is not None:
        probs_in = input_pmfs(model, x)
        if relaxed:
            g = sample_gumbel(probs_in.shape, rng)
            w = gumbel_softmax_weights(probs_in, model.sq_input.tau, g)
            xt = w @ _bin_matrix(np.array(lo_in), np.array(hi_in),
                                 model.sq_input.n_bins)
        else:
            xt = _sample_values(probs_in, lo_in, hi_in, rng)
    else:
        probs_in, xt = None, x

    t = features_np(model, xt)
    if not np.isfinite(t).all():
        raise FloatingPointError("non-finite feature activations")

    if model.sq_feature is not None:
        lo, hi, degenerate = feature_grids(model, t)
        probs_f = feature_pmfs(model, t, lo, hi)
        if relaxed:
            g = sample_gumbel(probs_f.shape, rng)
            w = gumbel_softmax_weights(probs_f, model.sq_feature.tau, g)
            tt = (w * _bin_matrix(lo[:, None], hi[:, None],
                                  model.sq_feature.n_bins)).sum(axis=-1)
        else:
            tt = _sample_values(probs_f, lo[:, None], hi[:, None], rng)
    else:
        lo = t.min(axis=1)
        hi = t.max(axis=1)
        degenerate = np.zeros(t.shape[0], dtype=bool)
        probs_f, tt = None, t

    logits = classify_np(model, tt)
    return MemberForward(logits=logits, input_probs=probs_in, x_sample=xt,
                         features=t, feat_probs=probs_f, feat_sample=tt,
                         feat_lo=lo, feat_hi=hi, degenerate=degenerate)


def forward_ensemble(model, image, n_members=None, rng=None) -> EnsembleOutput:
    """Aggregate n member passes on one image and report MI/diversity."""
    if rng is None:
        rng = np.random.default_rng(0)
    M = model.n_members if n_members is None else int(n_members)
    if M < 1:
        raise ValueError("need at least one member")
    x = np.asarray(image, dtype=np.float64).reshape(1, -1)
    xs = np.repeat(x, M, axis=0)
    fwd = forward_member(model, xs, rng, relaxed=False)
    probs = softmax(fwd.logits).mean(axis=0)
    n_feat = model.sq_feature.n_bins if model.sq_feature is not None else None
    if fwd.feat_probs is not None:
        mi = mi_from_stack(fwd.feat_probs)
        diversity = float(mi.h_conditional.mean())
        spacing = float(np.mean((fwd.feat_hi - fwd.feat_lo) / (n_feat - 1)))
    else:
        mi, diversity = None, 0.0
        spacing = float(np.mean(fwd.feat_hi - fwd.feat_lo))
    return EnsembleOutput(probs=probs, member_logits=fwd.logits, mi=mi,
                          diversity=diversity, feature_bin_spacing=spacing)


def predict(model, image, n_members=None, rng=None) -> int:
    """Aggregated class decision; ties break toward the lowest index."""
    out = forward_ensemble(model, image, n_members, rng)
    return int(np.argmax(out.probs))


def ensemble_eval(model, images, labels=None, n_members=None, rng=None,
                  collect_mi=False):
    """Batch evaluation with hard samples.

    Returns a dict with aggregated probabilities (N, C), predictions,
    accuracy (if labels given), and per-image mean MI / diversity when
    collect_mi is set.  Members accumulate incrementally so memory stays
    O(N * d * n).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    M = model.n_members if n_members is None else int(n_members)
    X = np.asarray(images, dtype=np.float64)
    N = X.shape[0]
    prob_sum = np.zeros((N, model.n_classes))
    marg_sum = None
    hc_sum = None
    for _ in range(M):
        fwd = forward_member(model, X, rng, relaxed=False)
        prob_sum += softmax(fwd.logits)
        if collect_mi and fwd.feat_probs is not None:
            if marg_sum is None:
                marg_sum = np.zeros_like(fwd.feat_probs)
                hc_sum = np.zeros(fwd.feat_probs.shape[:2])
            marg_sum += fwd.feat_probs
            hc_sum += _kernels.entropy_rows(fwd.feat_probs)
    out = {"probs": prob_sum / M}
    out["pred"] = out["probs"].argmax(axis=1)
    if labels is not None:
        out["accuracy"] = float((out["pred"] == np.asarray(labels)).mean())
    if collect_mi and marg_sum is not None:
        marg = marg_sum / M
        hm = _kernels.entropy_rows(marg)           # (N, d)
        hc = hc_sum / M
        out["mi"] = np.clip(hm - hc, 0.0, None).mean(axis=1)   # (N,)
        out["diversity"] = hc.mean(axis=1)
    return out


# -- differentiable member graph ----------------------------------------

@dataclass
class ParamTensors:
    """Model parameters wrapped as graph nodes, in declaration order."""

    weights: list     # [(W Tensor, b Tensor), ...]

    def all(self):
        out = []
        for W, b in self.weights:
            out.extend((W, b))
        return out


def wrap_parameters(model, requires_grad=True) -> ParamTensors:
    return ParamTensors([(tc.Tensor(W, requires_grad=requires_grad),
                          tc.Tensor(b, requires_grad=requires_grad))
                         for W, b in model.weights])


@dataclass
class MemberGraph:
    logits: tc.Tensor
    feat_probs: Optional[tc.Tensor]    # (B, d, n)
    feat_lo: Optional[tc.Tensor]       # (B,)
    feat_hi: Optional[tc.Tensor]


def member_graph(model, params: ParamTensors, x, rng) -> MemberGraph:
    """Relaxed-sampling member forward on the tape.

    x may be a Tensor (attacker: gradients flow into the image through the
    input quantizer) or a plain array (trainer: the input sample is drawn
    outside the tape since no data gradient is needed).  The sampling code
    and random-stream layout are identical in both cases.
    """
    lo_in, hi_in = model.input_range

    if model.sq_input is not None:
        sq = model.sq_input
        if isinstance(x, tc.Tensor):
            probs = tc.sq_pmf_op(x, tc.Tensor(lo_in), tc.Tensor(hi_in),
                                 sq.n_bins, sq.alpha)
            mask = probs.data > 0.0
            g = sample_gumbel(probs.data.shape, rng)
            logits_q = tc.mul(tc.add(tc.masked_log(probs, mask), g), 1.0 / sq.tau)
            w = tc.masked_softmax(logits_q, mask)
            bins = _bin_matrix(np.array(lo_in), np.array(hi_in), sq.n_bins)
            xt = tc.tsum(tc.mul(w, bins), axis=-1)
        else:
            xb = np.atleast_2d(np.asarray(x, dtype=np.float64))
            probs = input_pmfs(model, xb)
            g = sample_gumbel(probs.shape, rng)
            w = gumbel_softmax_weights(probs, sq.tau, g)
            xt = tc.Tensor(w @ _bin_matrix(np.array(lo_in), np.array(hi_in),
                                           sq.n_bins))
    else:
        xt = x if isinstance(x, tc.Tensor) else tc.Tensor(np.atleast_2d(x))

    layers = params.weights[:-1] if model.has_classifier else params.weights
    h = xt
    for i, (W, b) in enumerate(layers):
        h = tc.affine(h, W, b)
        if i < len(layers) - 1:
            h = tc.relu(h)
    t = h

    if model.sq_feature is not None:
        sq = model.sq_feature
        lo = tc.tmin(t, axis=1)
        hi = tc.tmax(t, axis=1)
        degenerate = (hi.data - lo.data) <= 0.0
        pad = np.where(degenerate, np.maximum(1e-6, 1e-6 * np.abs(hi.data)), 0.0)
        lo = tc.add(lo, -pad)
        hi = tc.add(hi, pad)
        probs_f = tc.sq_pmf_op(t, tc.reshape(lo, (-1, 1)),
                               tc.reshape(hi, (-1, 1)), sq.n_bins, sq.alpha)
        mask = probs_f.data > 0.0
        g = sample_gumbel(probs_f.data.shape, rng)
        logits_q = tc.mul(tc.add(tc.masked_log(probs_f, mask), g), 1.0 / sq.tau)
        w = tc.masked_softmax(logits_q, mask)
        bins = tc.bin_values(tc.reshape(lo, (-1, 1)), tc.reshape(hi, (-1, 1)),
                             sq.n_bins)
        tt = tc.tsum(tc.mul(w, bins), axis=-1)
    else:
        probs_f, lo, hi = None, None, None
        tt = t

    if model.has_classifier:
        W, b = params.weights[-1]
        logits = tc.affine(tt, W, b)
    else:
        logits = tt
    return MemberGraph(logits=logits, feat_probs=probs_f, feat_lo=lo,
                       feat_hi=hi)

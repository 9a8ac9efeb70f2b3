"""Training loop for the regularized ensemble objective.

The per-batch loss is

    cross-entropy  +  beta * I(quantized input; quantized features)
                   +  mu * mean feature-grid spacing

with every term averaged over ensemble members and the batch.  Members use
relaxed (Gumbel-softmax) sampling so gradients flow through both quantizers.
Optimization is plain momentum SGD; runs are deterministic given the seed.

Checkpoints are a small binary container: magic "SQAR", a version word, a
length-prefixed JSON header (architecture, config, history), then the raw
little-endian float64 parameter blocks in declaration order.
"""

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensorcore as tc
from .ensemble import SQEnsembleModel, build_model, ensemble_eval, member_graph, wrap_parameters
from .quant import SqParams

MAGIC = b"SQAR"
VERSION = 1


class CheckpointError(IOError):
    """Checkpoint file is unreadable."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an incompatible format version."""


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the last finite-epoch model."""

    def __init__(self, message, last_good: SQEnsembleModel):
        super().__init__(message)
        self.last_good = last_good


@dataclass
class TrainConfig:
    alpha: float = 4.0
    beta: float = 0.0
    mu: float = 1.0
    n_bins: int = 16
    n_members: int = 16
    tau: float = 0.5
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 128
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.beta < 0 or self.mu < 0:
            raise ValueError("beta and mu must be non-negative")
        if self.n_members < 1 or self.epochs < 0 or self.batch_size < 1:
            raise ValueError("invalid training configuration")

    def sq_params(self) -> SqParams:
        return SqParams(alpha=self.alpha, n_bins=self.n_bins, tau=self.tau)


def loss_graph(model, params, images, labels, config, rng):
    """Build the full objective on the tape; returns (total, parts dict)."""
    ce_terms = []
    feat_prob_nodes = []
    spacing_terms = []
    for _ in range(config.n_members):
        mg = member_graph(model, params, images, rng)
        ce_terms.append(tc.softmax_cross_entropy(mg.logits, labels))
        if mg.feat_probs is not None:
            feat_prob_nodes.append(mg.feat_probs)
            spacing_terms.append(
                tc.tmean(tc.mul(tc.add(mg.feat_hi, tc.mul(mg.feat_lo, -1.0)),
                                1.0 / (model.sq_feature.n_bins - 1))))

    ce = tc.tmean(tc.stack(ce_terms))
    parts = {"l_class": float(ce.data)}
    total = ce

    if feat_prob_nodes and config.beta > 0:
        stackp = tc.stack(feat_prob_nodes)               # (M, B, d, n)
        marg = tc.tmean(stackp, axis=0)                  # (B, d, n)
        h_marg = tc.mul(tc.tsum(tc.xlogx(marg), axis=-1), -1.0)
        h_cond = tc.mul(tc.tmean(tc.tsum(tc.xlogx(stackp), axis=-1), axis=0), -1.0)
        mi = tc.tmean(tc.add(h_marg, tc.mul(h_cond, -1.0)))
        parts["mi"] = float(mi.data)
        total = tc.add(total, tc.mul(mi, config.beta))
    else:
        parts["mi"] = _mi_value(feat_prob_nodes)

    if spacing_terms:
        spacing = tc.tmean(tc.stack(spacing_terms))
        parts["bin_spacing"] = float(spacing.data)
        if config.mu > 0:
            total = tc.add(total, tc.mul(spacing, config.mu))
    else:
        parts["bin_spacing"] = 0.0

    parts["total"] = parts["l_class"] + config.beta * parts["mi"] \
        + config.mu * parts["bin_spacing"]
    return total, parts


def _mi_value(feat_prob_nodes):
    """MI readout (no gradient) when the beta term is inactive."""
    if not feat_prob_nodes:
        return 0.0
    stackp = np.stack([p.data for p in feat_prob_nodes])
    marg = stackp.mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        hm = -np.where(marg > 0, marg * np.log(marg), 0.0).sum(axis=-1)
        hc = -np.where(stackp > 0, stackp * np.log(stackp), 0.0).sum(axis=-1).mean(axis=0)
    return float((hm - hc).mean())


def loss(model, batch, config, rng):
    """Objective value and component breakdown for one batch."""
    images, labels = batch
    params = wrap_parameters(model, requires_grad=False)
    total, parts = loss_graph(model, params, np.asarray(images, dtype=np.float64),
                              np.asarray(labels), config, rng)
    if not np.isfinite(parts["total"]):
        bad = [k for k, val in parts.items() if not np.isfinite(val)]
        raise FloatingPointError(f"non-finite loss terms: {bad}")
    return parts["total"], parts


def train(model, dataset, config: TrainConfig, verbose=False):
    """Momentum-SGD training; returns (trained model, per-epoch history)."""
    X = np.asarray(dataset[0], dtype=np.float64)
    y = np.asarray(dataset[1])
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    model = model.copy()
    rng = np.random.default_rng(config.seed)
    velocity = [np.zeros_like(p) for p in model.parameters()]
    history = []
    last_good = model.copy()

    for epoch in range(config.epochs):
        order = rng.permutation(X.shape[0])
        sums = {"l_class": 0.0, "mi": 0.0, "bin_spacing": 0.0, "total": 0.0}
        n_batches = 0
        for start in range(0, X.shape[0], config.batch_size):
            idx = order[start:start + config.batch_size]
            params = wrap_parameters(model, requires_grad=True)
            total, parts = loss_graph(model, params, X[idx], y[idx], config, rng)
            if not np.isfinite(parts["total"]):
                bad = [k for k, val in parts.items() if not np.isfinite(val)]
                raise TrainingDiverged(
                    f"non-finite loss terms {bad} at epoch {epoch}", last_good)
            total.backward()
            for p, node, vel in zip(model.parameters(), params.all(), velocity):
                vel *= config.momentum
                vel -= config.learning_rate * node.grad
                p += vel
            for k in sums:
                sums[k] += parts[k]
            n_batches += 1
        eval_rng = np.random.default_rng((config.seed, epoch))
        acc = ensemble_eval(model, X[:2000], y[:2000],
                            n_members=min(4, config.n_members),
                            rng=eval_rng)["accuracy"]
        record = {k: sums[k] / n_batches for k in sums}
        record["epoch"] = epoch
        record["clean_accuracy"] = acc
        history.append(record)
        last_good = model.copy()
        if verbose:
            print(f"epoch {epoch}: total={record['total']:.4f} "
                  f"ce={record['l_class']:.4f} mi={record['mi']:.4f} "
                  f"spacing={record['bin_spacing']:.4f} acc={acc:.4f}")
    return model, history


# -- checkpoint container ------------------------------------------------

def _model_header(model, config, history):
    return {
        "arch": list(model.arch),
        "sq_input": asdict(model.sq_input) if model.sq_input else None,
        "sq_feature": asdict(model.sq_feature) if model.sq_feature else None,
        "input_range": list(model.input_range),
        "n_members": model.n_members,
        "arrays": [list(a.shape) for a in model.parameters()],
        "config": asdict(config) if isinstance(config, TrainConfig) else config,
        "history": history,
    }


def save_checkpoint(model, path, config=None, history=None):
    header = json.dumps(_model_header(model, config, history),
                        sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        for p in model.parameters():
            f.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (model, config dict or None, history or None)."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}")
    version = struct.unpack("<I", raw[4:8])[0]
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported version {version}")
    hlen = struct.unpack("<I", raw[8:12])[0]
    if 12 + hlen > len(raw):
        raise CheckpointError("truncated header")
    try:
        header = json.loads(raw[12:12 + hlen])
    except ValueError as e:
        raise CheckpointError(f"corrupt header: {e}") from None
    offset = 12 + hlen
    arrays = []
    for shape in header["arrays"]:
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise CheckpointError("truncated parameter block")
        arrays.append(np.frombuffer(raw, dtype="<f8", count=count,
                                    offset=offset).reshape(shape).copy())
        offset += nbytes
    if offset != len(raw):
        raise CheckpointError("trailing bytes after parameter blocks")
    weights = [(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]
    model = SQEnsembleModel(
        arch=tuple(header["arch"]),
        weights=weights,
        sq_input=SqParams(**header["sq_input"]) if header["sq_input"] else None,
        sq_feature=SqParams(**header["sq_feature"]) if header["sq_feature"] else None,
        input_range=tuple(header["input_range"]),
        n_members=header["n_members"],
    )
    return model, header.get("config"), header.get("history")

"""White-box L-infinity attacks on the quantized ensemble.

Fast gradient method and projected gradient descent, both with
expectation-over-transformation: the attacker averages over fresh stochastic
members, backpropagating through the quantizers with the same relaxed
sampler the trainer uses (only the random stream differs).  The attack loss
is the cross-entropy of the aggregated ensemble output and excludes the
training regularizers.
"""

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensorcore as tc
from .ensemble import ensemble_eval, member_graph, softmax, wrap_parameters


@dataclass(frozen=True)
class AttackConfig:
    kind: str = "pgd"               # "fgm" | "pgd"
    epsilon: float = 0.1
    steps: int = 20
    step_size: Optional[float] = None   # default 2.5 * epsilon / steps
    eot_samples: int = 16
    random_init: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("fgm", "pgd"):
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.kind == "pgd" and self.steps < 1:
            raise ValueError("pgd needs at least one step")
        if self.eot_samples < 1:
            raise ValueError("eot_samples must be >= 1")

    def resolved_step_size(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.steps


@dataclass
class AttackReport:
    """Per-(attack, epsilon) accuracy and MI rows plus the clean baseline."""

    clean_accuracy: float
    clean_mean_mi: float
    rows: list = field(default_factory=list)
    # each row: dict(kind, epsilon, eot_samples, adversarial_accuracy, mean_mi)


def eot_gradient(model, image, label, n_samples, rng):
    """Mean-ensemble cross-entropy gradient with respect to the image."""
    x = tc.Tensor(np.asarray(image, dtype=np.float64).reshape(1, -1),
                  requires_grad=True)
    params = wrap_parameters(model, requires_grad=False)
    member_probs = []
    for _ in range(n_samples):
        mg = member_graph(model, params, x, rng)
        z = mg.logits.data
        shift = z.max(axis=-1, keepdims=True)
        e = tc.exp(tc.add(mg.logits, -shift))
        member_probs.append(tc.div(e, tc.tsum(e, axis=-1, keepdims=True)))
    agg = tc.tmean(tc.stack(member_probs), axis=0)       # (1, C)
    mask = agg.data > 0.0
    nll = tc.mul(tc.masked_log(agg, mask), -1.0)
    lab = int(label)
    pick = np.zeros_like(agg.data)
    pick[0, lab] = 1.0
    out = tc.tsum(tc.mul(nll, pick))
    out.backward()
    return x.grad.reshape(np.asarray(image).shape)


def fgm(model, image, label, epsilon, eot_samples=16, rng=None):
    """Single-step sign attack, clipped to the valid image box."""
    if rng is None:
        rng = np.random.default_rng(0)
    x = np.asarray(image, dtype=np.float64)
    if epsilon == 0:
        return x.copy()
    g = eot_gradient(model, x, label, eot_samples, rng)
    lo, hi = model.input_range
    return np.clip(x + epsilon * np.sign(g), lo, hi)


def pgd(model, image, label, config: AttackConfig, rng=None):
    """Iterated sign steps projected onto the epsilon ball and image box."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    x0 = np.asarray(image, dtype=np.float64)
    eps = config.epsilon
    if eps == 0:
        return x0.copy()
    lo, hi = model.input_range
    step = config.resolved_step_size()
    x = x0.copy()
    if config.random_init:
        x = np.clip(x + rng.uniform(-eps, eps, size=x.shape), lo, hi)
    for _ in range(config.steps):
        g = eot_gradient(model, x, label, config.eot_samples, rng)
        x = x + step * np.sign(g)
        x = np.clip(x, x0 - eps, x0 + eps)
        x = np.clip(x, lo, hi)
    return x


def attack_batch(model, images, labels, config: AttackConfig):
    """Attack each image with its own stream derived from (seed, index)."""
    X = np.asarray(images, dtype=np.float64)
    out = np.empty_like(X)
    for i in range(X.shape[0]):
        rng = np.random.default_rng((config.seed, i))
        if config.kind == "fgm":
            out[i] = fgm(model, X[i], labels[i], config.epsilon,
                         config.eot_samples, rng)
        else:
            out[i] = pgd(model, X[i], labels[i], config, rng)
    return out


def evaluate_robustness(model, dataset, configs, n_members=None,
                        eval_seed=10_000, collect_mi=True) -> AttackReport:
    """Accuracy and mean MI under each attack configuration.

    Evaluation always uses hard samples with a fresh seed disjoint from the
    attack seeds.
    """
    X = np.asarray(dataset[0], dtype=np.float64)
    y = np.asarray(dataset[1])
    if X.shape[0] == 0:
        raise ValueError("empty dataset")
    clean = ensemble_eval(model, X, y, n_members=n_members,
                          rng=np.random.default_rng(eval_seed),
                          collect_mi=collect_mi)
    report = AttackReport(
        clean_accuracy=clean["accuracy"],
        clean_mean_mi=float(np.mean(clean["mi"])) if "mi" in clean else 0.0)
    for cfg in configs:
        if cfg.epsilon == 0:
            res = clean        # zero budget leaves the images untouched
        else:
            adv = attack_batch(model, X, y, cfg)
            res = ensemble_eval(model, adv, y, n_members=n_members,
                                rng=np.random.default_rng((eval_seed, cfg.seed)),
                                collect_mi=collect_mi)
        report.rows.append({
            "kind": cfg.kind,
            "epsilon": cfg.epsilon,
            "eot_samples": cfg.eot_samples,
            "adversarial_accuracy": res["accuracy"],
            "mean_mi": float(np.mean(res["mi"])) if "mi" in res else 0.0,
        })
    return report


def write_report_csv(report: AttackReport, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["kind", "epsilon", "eot_samples",
                    "adversarial_accuracy", "mean_mi",
                    "clean_accuracy", "clean_mean_mi"])
        for row in report.rows:
            w.writerow([row["kind"], repr(row["epsilon"]), row["eot_samples"],
                        repr(row["adversarial_accuracy"]), repr(row["mean_mi"]),
                        repr(report.clean_accuracy), repr(report.clean_mean_mi)])

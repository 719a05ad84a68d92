"""Reconstruction-stage bias mitigation at desk scale.

Two strategies operate on a toy differentiable pipeline whose gradients are
derived by hand:

* inverse joint-subgroup-frequency sample reweighting with the original
  reconstruction (MSE) loss, and
* a fairness-constrained composite loss: reconstruction MSE plus an
  EMA-smoothed term of classifier BCE and the squared soft equalized-odds
  gap, with the classifier frozen throughout.

The reconstructor is a single trainable convolution kernel plus bias; the
classifier is a frozen logistic model over mean-pooled patch features. That
keeps every gradient exact and checkable against finite differences, which
a full deep-learning stack cannot offer reproducibly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .dataset import SubjectRecord
from .quality import psnr
from .util import rng_for


@dataclass(frozen=True)
class SoftEoddConfig:
    """Soft-prediction and loss knobs for the fairness constraint."""

    tau: float = 0.5
    temperature: float = 0.3
    lambda_fair: float = 1.0
    ema_momentum: float = 0.1

    def __post_init__(self) -> None:
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (0, 1)")
        if not 0.0 < self.ema_momentum <= 1.0:
            raise ValueError("ema_momentum must lie in (0, 1]")
        if self.lambda_fair < 0:
            raise ValueError("lambda_fair must be non-negative")


@dataclass
class SampleWeights:
    """Normalized draw weights equalizing joint-subgroup frequency."""

    weights: dict[str, float]
    joint_attributes: list[str]


@dataclass
class ToyPipeline:
    """Trainable linear-convolution denoiser + frozen logistic classifier.

    The classifier reads mean-pooled non-overlapping patch features of the
    reconstruction; its parameters never change during mitigation.
    """

    kernel: np.ndarray  # (k, k), trainable
    bias: float  # trainable
    clf_weights: np.ndarray  # (n_features,), frozen
    clf_bias: float  # frozen
    patch: int
    ema_state: float | None = None

    def copy(self) -> "ToyPipeline":
        return ToyPipeline(
            kernel=self.kernel.copy(),
            bias=float(self.bias),
            clf_weights=self.clf_weights.copy(),
            clf_bias=float(self.clf_bias),
            patch=self.patch,
            ema_state=self.ema_state,
        )

    def reconstruct(self, x: np.ndarray) -> np.ndarray:
        """Apply the denoising kernel to a batch (N, H, W)."""
        return conv2d_same(x, self.kernel) + self.bias

    def features(self, xhat: np.ndarray) -> np.ndarray:
        """Mean-pool non-overlapping patch features, flattened to (N, F)."""
        n, h, w = xhat.shape
        p = self.patch
        if h % p or w % p:
            raise ValueError(f"image {h}x{w} not divisible by patch {p}")
        pooled = xhat.reshape(n, h // p, p, w // p, p).mean(axis=(2, 4))
        return pooled.reshape(n, -1)

    def predict_scores(self, xhat: np.ndarray) -> np.ndarray:
        """Frozen classifier scores in (0, 1) for a batch of reconstructions."""
        z = self.features(xhat) @ self.clf_weights + self.clf_bias
        return sigmoid(z)

    @staticmethod
    def initialize(
        kernel_size: int = 5,
        n_features: int = 16,
        patch: int = 8,
        seed: int = 0,
    ) -> "ToyPipeline":
        """Identity-kernel reconstructor with a random frozen classifier."""
        rng = np.random.default_rng(seed)
        kernel = np.zeros((kernel_size, kernel_size))
        kernel[kernel_size // 2, kernel_size // 2] = 1.0
        return ToyPipeline(
            kernel=kernel,
            bias=0.0,
            clf_weights=rng.normal(0.0, 1.0, size=n_features),
            clf_bias=0.0,
            patch=patch,
        )


@dataclass
class MitigationData:
    """Aligned arrays for mitigation: degraded inputs, clean targets,
    binary task labels, and per-attribute group labels."""

    inputs: np.ndarray  # (N, H, W) degraded reconstructions
    targets: np.ndarray  # (N, H, W) clean references
    labels: np.ndarray  # (N,) binary
    groups: dict[str, np.ndarray]  # attribute -> (N,) group labels
    subject_ids: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        n = self.inputs.shape[0]
        if self.targets.shape != self.inputs.shape:
            raise ValueError("inputs and targets must share one shape")
        if self.labels.shape != (n,):
            raise ValueError("labels must be (N,)")
        for attr, g in self.groups.items():
            if np.asarray(g).shape != (n,):
                raise ValueError(f"group array for {attr!r} must be (N,)")

    def subset(self, idx: np.ndarray) -> "MitigationData":
        return MitigationData(
            inputs=self.inputs[idx],
            targets=self.targets[idx],
            labels=self.labels[idx],
            groups={a: np.asarray(g)[idx] for a, g in self.groups.items()},
            subject_ids=[self.subject_ids[i] for i in idx] if self.subject_ids else [],
        )


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=np.float64)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def conv2d_same(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Batched 2D cross-correlation with zero same-padding. x: (N, H, W)."""
    k = kernel.shape[0]
    pad = k // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    n, h, w = x.shape
    out = np.zeros_like(x, dtype=np.float64)
    for u in range(k):
        for v in range(k):
            out += kernel[u, v] * xp[:, u:u + h, v:v + w]
    return out


def conv2d_same_param_grads(
    x: np.ndarray, upstream: np.ndarray, kernel_size: int
) -> tuple[np.ndarray, float]:
    """Gradients of sum(upstream * conv2d_same(x, K) + b) w.r.t. K and b."""
    pad = kernel_size // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    n, h, w = x.shape
    grad_k = np.zeros((kernel_size, kernel_size))
    for u in range(kernel_size):
        for v in range(kernel_size):
            grad_k[u, v] = float(np.sum(upstream * xp[:, u:u + h, v:v + w]))
    return grad_k, float(upstream.sum())


def compute_reweights(
    records: list[SubjectRecord], attributes: list[str]
) -> SampleWeights:
    """Inverse joint-subgroup-frequency weights, normalized to sum 1.

    Each subject's weight is 1 / (k * count(joint subgroup)) for k non-empty
    joint subgroups, so every subgroup's total draw probability is exactly
    1/k. Age is dichotomized at the median of the supplied records; subjects
    missing any listed attribute are excluded with a warning. An attribute
    with a single observed value degenerates the joint partition, which is
    warned about but allowed.
    """
    if not attributes:
        raise ValueError("need at least one attribute")
    age_cut: float | None = None
    if "age" in attributes:
        ages = [r.age_years for r in records if r.age_years is not None]
        if ages:
            age_cut = float(np.median(ages))

    keys: dict[str, tuple] = {}
    for r in records:
        parts = []
        ok = True
        for attr in attributes:
            val = r.attribute(attr)
            if val is None:
                ok = False
                break
            if attr == "age":
                val = f"<={age_cut:g}" if val <= age_cut else f">{age_cut:g}"
            parts.append(str(val))
        if not ok:
            warnings.warn(
                f"subject {r.subject_id}: missing {attributes} value, excluded "
                "from reweighting",
                stacklevel=2,
            )
            continue
        keys[r.subject_id] = tuple(parts)

    if not keys:
        raise ValueError("no subjects with complete attribute values")
    for i, attr in enumerate(attributes):
        observed = {k[i] for k in keys.values()}
        if len(observed) < 2:
            warnings.warn(
                f"attribute {attr!r} has a single observed value; joint "
                "partition is degenerate along it",
                stacklevel=2,
            )

    counts: dict[tuple, int] = {}
    for key in keys.values():
        counts[key] = counts.get(key, 0) + 1
    k = len(counts)
    weights = {sid: (1.0 / k) / counts[key] for sid, key in keys.items()}
    return SampleWeights(weights=weights, joint_attributes=list(attributes))


def joint_group_weights(groups: dict[str, np.ndarray]) -> np.ndarray:
    """Array-level inverse joint-frequency weights for a training batch."""
    arrays = [np.asarray(g) for g in groups.values()]
    n = arrays[0].size
    keys = [tuple(str(a[i]) for a in arrays) for i in range(n)]
    counts: dict[tuple, int] = {}
    for key in keys:
        counts[key] = counts.get(key, 0) + 1
    k = len(counts)
    return np.array([(1.0 / k) / counts[key] for key in keys])


def soft_predict(score: float | np.ndarray, cfg: SoftEoddConfig) -> float | np.ndarray:
    """Temperature-scaled logistic relaxation of thresholding:
    sigma((score - tau) / T). As T -> 0 this approaches 1{score > tau}."""
    return sigmoid((np.asarray(score, dtype=np.float64) - cfg.tau) / cfg.temperature)


@dataclass
class _GapArgmax:
    value: float
    attribute: str | None
    idx_hi: np.ndarray | None  # sample indices of the cell with larger mean
    idx_lo: np.ndarray | None


def _max_rate_gap(
    values: np.ndarray, labels: np.ndarray, groups: dict[str, np.ndarray]
) -> _GapArgmax:
    """Max over attributes, label classes, and eligible group pairs of the
    gap in cell-mean values. Eligibility requires both classes per group."""
    best = _GapArgmax(value=-1.0, attribute=None, idx_hi=None, idx_lo=None)
    for attr in sorted(groups):
        garr = np.asarray(groups[attr])
        names = sorted(set(garr.tolist()))
        eligible = [
            g for g in names
            if ((garr == g) & (labels == 1)).any() and ((garr == g) & (labels == 0)).any()
        ]
        if len(eligible) < 2:
            continue
        for y in (1, 0):
            for i, gi in enumerate(eligible):
                cell_i = np.flatnonzero((garr == gi) & (labels == y))
                mean_i = values[cell_i].mean()
                for gj in eligible[i + 1:]:
                    cell_j = np.flatnonzero((garr == gj) & (labels == y))
                    mean_j = values[cell_j].mean()
                    gap = abs(mean_i - mean_j)
                    if gap > best.value:
                        hi, lo = (cell_i, cell_j) if mean_i >= mean_j else (cell_j, cell_i)
                        best = _GapArgmax(value=gap, attribute=attr, idx_hi=hi, idx_lo=lo)
    return best


def soft_eodd(
    soft_preds: np.ndarray,
    labels: np.ndarray,
    groups: np.ndarray | dict[str, np.ndarray],
    cfg: SoftEoddConfig | None = None,
) -> float:
    """Differentiable equalized-odds surrogate on soft predictions.

    Max over label classes and eligible group pairs (and attributes, when a
    dict of group arrays is given) of the absolute gap in cell-mean soft
    predictions. With temperature -> 0 and scores bounded away from tau this
    converges to the hard equalized-odds gap of thresholded predictions.
    """
    del cfg  # soft predictions are already tempered; kept for call symmetry
    group_dict = groups if isinstance(groups, dict) else {"group": np.asarray(groups)}
    labels = np.asarray(labels)
    values = np.asarray(soft_preds, dtype=np.float64)
    best = _max_rate_gap(values, labels, group_dict)
    if best.attribute is None:
        raise ValueError("soft equalized odds needs >= 2 eligible groups")
    return best.value


def hard_eodd(
    scores: np.ndarray,
    labels: np.ndarray,
    groups: np.ndarray | dict[str, np.ndarray],
    threshold: float = 0.5,
) -> float:
    """Hard equalized-odds gap of thresholded scores (pred = score > thr)."""
    preds = (np.asarray(scores) > threshold).astype(np.float64)
    group_dict = groups if isinstance(groups, dict) else {"group": np.asarray(groups)}
    best = _max_rate_gap(preds, np.asarray(labels), group_dict)
    if best.attribute is None:
        raise ValueError("equalized odds needs >= 2 eligible groups")
    return best.value


@dataclass
class LossAndGrads:
    """Composite mitigation loss with exact parameter gradients."""

    loss: float
    grad_kernel: np.ndarray
    grad_bias: float
    l_rec: float
    l_bce: float
    soft_eodd: float
    ema: float
    fairness_active: bool


def mse_loss_and_grads(batch: MitigationData, pipeline: ToyPipeline) -> LossAndGrads:
    """Plain reconstruction MSE and its gradients (the original loss)."""
    xhat = pipeline.reconstruct(batch.inputs)
    diff = xhat - batch.targets
    l_rec = float(np.mean(diff**2))
    upstream = 2.0 * diff / diff.size
    gk, gb = conv2d_same_param_grads(batch.inputs, upstream, pipeline.kernel.shape[0])
    return LossAndGrads(
        loss=l_rec, grad_kernel=gk, grad_bias=gb, l_rec=l_rec,
        l_bce=0.0, soft_eodd=0.0, ema=0.0, fairness_active=False,
    )


def eodd_loss(
    batch: MitigationData,
    pipeline: ToyPipeline,
    cfg: SoftEoddConfig,
    ema_prev: float | None = None,
) -> LossAndGrads:
    """Fairness-constrained loss:

        l_rec + lambda_fair * EMA(l_bce + soft_eodd^2)

    The EMA update is e <- (1 - m) * e + m * v with the first observed value
    as initial state. Gradients are exact for the current step's
    differentiable path: the EMA history is a constant, so the current
    fairness term enters with coefficient m (or 1 on the first step).
    Batches without two eligible groups contribute a zero gap for the step.
    """
    n, h, w = batch.inputs.shape
    k = pipeline.kernel.shape[0]
    xhat = pipeline.reconstruct(batch.inputs)
    diff = xhat - batch.targets
    l_rec = float(np.mean(diff**2))
    d_xhat = 2.0 * diff / diff.size  # dl_rec / dxhat

    # frozen classifier forward
    feats = pipeline.features(xhat)  # (N, F)
    z = feats @ pipeline.clf_weights + pipeline.clf_bias
    yhat = sigmoid(z)
    y = batch.labels.astype(np.float64)
    l_bce = float(np.mean(np.logaddexp(0.0, -z) + (1.0 - y) * z))
    dz = (yhat - y) / n  # dl_bce / dz

    ytilde = sigmoid((yhat - cfg.tau) / cfg.temperature)
    gap = _max_rate_gap(ytilde, batch.labels, batch.groups)
    fairness_active = gap.attribute is not None
    eodd_val = gap.value if fairness_active else 0.0

    # d(eodd^2)/dytilde routed through the argmax cells only
    d_ytilde = np.zeros(n)
    if fairness_active and eodd_val > 0.0:
        d_ytilde[gap.idx_hi] = 2.0 * eodd_val / gap.idx_hi.size
        d_ytilde[gap.idx_lo] = -2.0 * eodd_val / gap.idx_lo.size
    dz = dz + d_ytilde * ytilde * (1.0 - ytilde) / cfg.temperature * yhat * (1.0 - yhat)

    fair_raw = l_bce + eodd_val**2
    if ema_prev is None:
        ema_new = fair_raw
        coeff = 1.0
    else:
        m = cfg.ema_momentum
        ema_new = (1.0 - m) * ema_prev + m * fair_raw
        coeff = m

    loss = l_rec + cfg.lambda_fair * ema_new
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite mitigation loss")

    # backprop dz into image space: unpool classifier weights over patches
    p = pipeline.patch
    w_img = pipeline.clf_weights.reshape(h // p, w // p)
    w_unpooled = np.repeat(np.repeat(w_img, p, axis=0), p, axis=1) / (p * p)
    upstream = d_xhat + cfg.lambda_fair * coeff * dz[:, None, None] * w_unpooled[None, :, :]
    gk, gb = conv2d_same_param_grads(batch.inputs, upstream, k)
    return LossAndGrads(
        loss=float(loss), grad_kernel=gk, grad_bias=gb, l_rec=l_rec,
        l_bce=l_bce, soft_eodd=eodd_val, ema=float(ema_new),
        fairness_active=fairness_active,
    )


@dataclass
class FinetuneLogEntry:
    epoch: int
    l_rec: float
    soft_eodd: float
    hard_eodd: float
    psnr_db: float


@dataclass
class FinetuneResult:
    pipeline: ToyPipeline
    log: list[FinetuneLogEntry]
    diverged: bool = False


def finetune(
    pipeline: ToyPipeline,
    data: MitigationData,
    strategy: str,
    cfg: SoftEoddConfig,
    epochs: int,
    seed: int,
    lr: float = 0.05,
    batch_size: int = 32,
) -> FinetuneResult:
    """Gradient descent on the reconstructor only; the classifier is frozen.

    Strategies: "standard" (uniform sampling, MSE loss), "reweight"
    (inverse-joint-frequency sampling, MSE loss), "eodd" (uniform sampling,
    fairness-constrained loss with EMA state threaded across steps).
    With equal joint-subgroup counts the reweight draw weights are exactly
    uniform, so reweight and standard produce identical runs for one seed.
    A non-finite loss aborts with the last good parameters.
    """
    if strategy not in ("standard", "reweight", "eodd"):
        raise ValueError(f"unknown strategy {strategy!r}")
    n = data.inputs.shape[0]
    if strategy == "reweight":
        w = joint_group_weights(data.groups)
    else:
        w = np.full(n, 1.0 / n)
    probs = w / w.sum()

    current = pipeline.copy()
    log: list[FinetuneLogEntry] = []
    ema: float | None = current.ema_state
    steps_per_epoch = max(1, int(np.ceil(n / batch_size)))

    for epoch in range(epochs):
        for step in range(steps_per_epoch):
            rng = rng_for(seed, "finetune", strategy, f"e{epoch}", f"s{step}")
            idx = rng.choice(n, size=min(batch_size, n), replace=True, p=probs)
            batch = data.subset(idx)
            try:
                if strategy == "eodd":
                    res = eodd_loss(batch, current, cfg, ema_prev=ema)
                    ema = res.ema
                else:
                    res = mse_loss_and_grads(batch, current)
            except FloatingPointError:
                return FinetuneResult(pipeline=current, log=log, diverged=True)
            new_kernel = current.kernel - lr * res.grad_kernel
            new_bias = current.bias - lr * res.grad_bias
            if not (np.all(np.isfinite(new_kernel)) and np.isfinite(new_bias)):
                return FinetuneResult(pipeline=current, log=log, diverged=True)
            current.kernel = new_kernel
            current.bias = new_bias
        log.append(_evaluate_epoch(epoch, current, data, cfg))
    current.ema_state = ema
    return FinetuneResult(pipeline=current, log=log)


def _evaluate_epoch(
    epoch: int, pipeline: ToyPipeline, data: MitigationData, cfg: SoftEoddConfig
) -> FinetuneLogEntry:
    xhat = pipeline.reconstruct(data.inputs)
    l_rec = float(np.mean((xhat - data.targets) ** 2))
    scores = pipeline.predict_scores(xhat)
    try:
        soft = soft_eodd(soft_predict(scores, cfg), data.labels, data.groups)
        hard = hard_eodd(scores, data.labels, data.groups, threshold=cfg.tau)
    except ValueError:
        soft, hard = float("nan"), float("nan")
    clipped = np.clip(xhat, 0.0, 1.0)
    psnrs = [psnr(data.targets[i], clipped[i]) for i in range(data.inputs.shape[0])]
    return FinetuneLogEntry(
        epoch=epoch, l_rec=l_rec, soft_eodd=soft, hard_eodd=hard,
        psnr_db=float(np.mean(psnrs)),
    )


@dataclass
class ProportionalityPairCheck:
    """Per-pair verification of the rate-gap / conditional-covariance link."""

    pair: tuple[str, str]
    skipped: str | None = None
    per_class: dict[int, dict[str, float]] = field(default_factory=dict)

    @property
    def max_rel_error(self) -> float:
        if not self.per_class:
            return 0.0
        return max(entry["rel_error"] for entry in self.per_class.values())


@dataclass
class ProportionalityReport:
    checks: list[ProportionalityPairCheck]

    @property
    def max_rel_error(self) -> float:
        active = [c.max_rel_error for c in self.checks if c.skipped is None]
        return max(active) if active else 0.0


def verify_covariance_proportionality(
    scores: np.ndarray, labels: np.ndarray, groups: np.ndarray
) -> ProportionalityReport:
    """Numerically verify, per label class, that the signed group rate gap of
    scores equals a data-dependent constant times the conditional covariance
    between group membership and scores.

    For class y the gap term is
        sum(f*a*1{Y=y})/sum(a*1{Y=y}) - sum(f*(1-a)*1{Y=y})/sum((1-a)*1{Y=y})
    and the identity is term_y = c_y * Cov(A, f | Y=y) with
        c_1 = S_Y^2 / (S_AY * (S_Y - S_AY))
        c_0 = (N - S_Y)^2 / ((S_A - S_AY) * (N - S_Y - S_A + S_AY)),
    both independent of the scores. Multi-group inputs are reduced to all
    group pairs, treating the pair as a binary attribute. Pairs with a
    degenerate marginal (a class missing in a group) are skipped with the
    reason recorded.
    """
    f = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    g = np.asarray(groups)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    names = sorted(set(g.tolist()))
    if len(names) < 2:
        raise ValueError("need at least 2 groups")

    checks: list[ProportionalityPairCheck] = []
    for i, gi in enumerate(names):
        for gj in names[i + 1:]:
            sel = (g == gi) | (g == gj)
            checks.append(
                _check_pair(f[sel], y[sel], (g[sel] == gj).astype(np.float64),
                            (str(gi), str(gj)))
            )
    return ProportionalityReport(checks=checks)


def _check_pair(
    f: np.ndarray, y: np.ndarray, a: np.ndarray, pair: tuple[str, str]
) -> ProportionalityPairCheck:
    n = f.size
    s_y = y.sum()
    s_a = a.sum()
    s_ay = (a * y).sum()
    # degenerate marginals: some (group, class) cell is empty
    if s_ay in (0.0, s_y) or (s_a - s_ay) in (0.0, n - s_y):
        return ProportionalityPairCheck(pair=pair, skipped="empty (group, class) cell")

    check = ProportionalityPairCheck(pair=pair)
    for cls in (1, 0):
        if cls == 1:
            ind = y
            n_cls = s_y
            n_in_group = s_ay
        else:
            ind = 1.0 - y
            n_cls = n - s_y
            n_in_group = s_a - s_ay
        term = (f * a * ind).sum() / n_in_group - (f * (1.0 - a) * ind).sum() / (
            n_cls - n_in_group
        )
        cov = (f * a * ind).sum() / n_cls - (
            (a * ind).sum() / n_cls) * ((f * ind).sum() / n_cls)
        constant = n_cls**2 / (n_in_group * (n_cls - n_in_group))
        denom = max(abs(term), abs(constant * cov), 1e-12)
        check.per_class[cls] = {
            "term": float(term),
            "cov": float(cov),
            "constant": float(constant),
            "rel_error": float(abs(term - constant * cov) / denom),
        }
    return check

"""The affinity network: appearance features plus pairwise association.

A shared convolutional trunk (backbone + extension) produces feature maps
at several scales. At each tap listed in the reduction plan, a 1x1
projection shrinks the channel count and the map is sampled at every
object center, giving one concatenated feature vector per object. The
feature matrices of two frames are paired exhaustively into a tensor that
a stack of 1x1 convolutions compresses to a raw score matrix M. Appending
a constant row/column of ``gamma`` and taking row-/column-wise softmax
yields forward (A1) and backward (A2) association probabilities; their
trimmed combination plus A1's final column is the predicted affinity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .labels import AssociationLabel
from .layers import LayerSpec, LayerStack, SGD, conv, layer_output_shapes, pool
from .weightfile import load_tensors, save_tensors

LOG_FLOOR = 1e-12


@dataclass(frozen=True)
class ReductionTap:
    subnet: str  # "backbone" or "extension"
    layer_id: int  # expanded unit index within that sub-network
    out_channels: int


@dataclass(frozen=True)
class ModelConfig:
    input_h: int
    input_w: int
    n_m: int
    gamma: float
    backbone: tuple[LayerSpec, ...]
    extension: tuple[LayerSpec, ...]
    compression: tuple[LayerSpec, ...]
    reduction_plan: tuple[ReductionTap, ...]
    assemble_mode: str = "max"

    @property
    def feature_dim(self) -> int:
        return sum(t.out_channels for t in self.reduction_plan)

    def tap_shapes(self) -> list[tuple[int, int, int]]:
        """(C, H, W) of each reduction tap input, in plan order."""
        backbone_shapes = layer_output_shapes(self.backbone, (3, self.input_h, self.input_w))
        extension_shapes = layer_output_shapes(self.extension, backbone_shapes[-1])
        shapes = {"backbone": backbone_shapes, "extension": extension_shapes}
        out = []
        for tap in self.reduction_plan:
            if tap.subnet not in shapes:
                raise ValueError(f"unknown sub-network {tap.subnet!r} in reduction plan")
            table = shapes[tap.subnet]
            if not 0 <= tap.layer_id < len(table):
                raise ValueError(f"reduction tap {tap.subnet}:{tap.layer_id} outside the network")
            out.append(table[tap.layer_id])
        return out

    def validate(self) -> None:
        if self.n_m < 1:
            raise ValueError("n_m must be positive")
        if self.assemble_mode not in ("max", "mean"):
            raise ValueError(f"assemble_mode must be 'max' or 'mean', got {self.assemble_mode!r}")
        shapes = self.tap_shapes()
        for tap, (chan, height, width) in zip(self.reduction_plan, shapes):
            if height < 1 or width < 1:
                raise ValueError(f"tap {tap.subnet}:{tap.layer_id} has empty spatial extent")
        if self.compression[0].in_channels != 2 * self.feature_dim:
            raise ValueError(
                f"compression expects {self.compression[0].in_channels} channels, "
                f"but paired features have {2 * self.feature_dim}"
            )
        if self.compression[-1].out_channels != 1:
            raise ValueError("compression must end in a single channel")


def full_config() -> ModelConfig:
    """Full-scale profile: 900x900 input, 80 object slots, 520-dim features.

    The trunk is a VGG-style stack indexed with normalization and
    activation counted as separate layers; reduction taps sit at backbone
    ids 16/23/36 and extension ids 5/11/17/23/29/35. Three extension
    convolutions run stride 1 without padding so the tap maps shrink
    through 14, 12, 10, 5 and 3 pixels.
    """
    backbone = (
        conv(3, 64), conv(64, 64), pool(2),
        conv(64, 128), conv(128, 128), pool(2),
        conv(128, 256),                      # relu at id 16, 256ch @ 225
        conv(256, 256), pool(3, 2, 1),       # pool at id 20 -> 113
        conv(256, 512),                      # relu at id 23, 512ch @ 113
        conv(512, 512), pool(2),             # pool at id 27 -> 56
        conv(512, 512), conv(512, 512),
        conv(512, 1024),                     # relu at id 36, 1024ch @ 56
    )
    extension = (
        conv(1024, 256, kernel=1, padding=0),
        conv(256, 512, stride=2),            # relu at id 5, 512ch @ 28
        conv(512, 128, kernel=1, padding=0),
        conv(128, 256, stride=2),            # relu at id 11, 256ch @ 14
        conv(256, 128, kernel=1, padding=0),
        conv(128, 256, stride=1, padding=0),  # relu at id 17, 256ch @ 12
        conv(256, 128, kernel=1, padding=0),
        conv(128, 256, stride=1, padding=0),  # relu at id 23, 256ch @ 10
        conv(256, 128, kernel=1, padding=0),
        conv(128, 256, stride=2),            # relu at id 29, 256ch @ 5
        conv(256, 128, kernel=1, padding=0),
        conv(128, 256, stride=1, padding=0),  # relu at id 35, 256ch @ 3
    )
    compression = (
        conv(1040, 512, kernel=1, padding=0),
        conv(512, 256, kernel=1, padding=0),
        conv(256, 128, kernel=1, padding=0),
        conv(128, 64, kernel=1, padding=0, bn=False),
        conv(64, 1, kernel=1, padding=0, bn=False),
    )
    plan = (
        ReductionTap("backbone", 16, 60),
        ReductionTap("backbone", 23, 80),
        ReductionTap("backbone", 36, 100),
        ReductionTap("extension", 5, 80),
        ReductionTap("extension", 11, 60),
        ReductionTap("extension", 17, 50),
        ReductionTap("extension", 23, 40),
        ReductionTap("extension", 29, 30),
        ReductionTap("extension", 35, 20),
    )
    cfg = ModelConfig(900, 900, 80, 10.0, backbone, extension, compression, plan)
    cfg.validate()
    return cfg


def toy_config() -> ModelConfig:
    """Desk-scale profile: 128x128 input, 8 object slots, 72-dim features."""
    backbone = (
        conv(3, 12), pool(2),
        conv(12, 24), pool(2),
        conv(24, 36),   # relu at id 10, 36ch @ 32
        pool(2),
        conv(36, 48),   # relu at id 14, 48ch @ 16
        pool(2),
    )
    extension = (
        conv(48, 48, stride=2),               # 48ch @ 4
        conv(48, 48, kernel=1, padding=0),    # relu at id 5, 48ch @ 4
    )
    compression = (
        conv(144, 64, kernel=1, padding=0),
        conv(64, 32, kernel=1, padding=0),
        conv(32, 16, kernel=1, padding=0),
        conv(16, 8, kernel=1, padding=0, bn=False),
        conv(8, 1, kernel=1, padding=0, bn=False),
    )
    plan = (
        ReductionTap("backbone", 10, 24),
        ReductionTap("backbone", 14, 24),
        ReductionTap("extension", 5, 24),
    )
    cfg = ModelConfig(128, 128, 8, 10.0, backbone, extension, compression, plan)
    cfg.validate()
    return cfg


def micro_config() -> ModelConfig:
    """Tiny profile for gradient checking: 12x12 input, 3 slots, 6-dim features.

    The border score is 1 rather than 10: a large border squashes every
    real-pair probability toward zero, which parks the consistency loss's
    absolute value on its kink and makes finite differences ill-posed at
    random initialization.
    """
    backbone = (
        conv(3, 4), pool(2),
        conv(4, 4),    # relu at id 6, 4ch @ 6
        pool(2),
    )
    extension = (
        conv(4, 4, stride=2),  # relu at id 2, 4ch @ 2
    )
    compression = (
        conv(12, 6, kernel=1, padding=0),
        conv(6, 3, kernel=1, padding=0, bn=False),
        conv(3, 1, kernel=1, padding=0, bn=False),
    )
    plan = (
        ReductionTap("backbone", 6, 3),
        ReductionTap("extension", 2, 3),
    )
    cfg = ModelConfig(12, 12, 3, 1.0, backbone, extension, compression, plan)
    cfg.validate()
    return cfg


PROFILES: dict[str, Callable[[], ModelConfig]] = {
    "full": full_config,
    "toy": toy_config,
    "micro": micro_config,
}


@dataclass
class FeatureMatrix:
    """D x N_m embedding matrix; columns past ``n_real`` are exactly zero."""

    F: Tensor
    n_real: int


@dataclass
class AffinityBundle:
    M: Tensor
    M1: Tensor
    M2: Tensor
    A1: Tensor
    A2: Tensor
    A1_hat: Tensor
    A2_hat: Tensor
    A: Tensor


def affinity_from_scores(m: Tensor, gamma: float, assemble_mode: str = "max",
                         n_real_prev: int | None = None,
                         n_real_cur: int | None = None) -> AffinityBundle:
    """Augment a raw score matrix with the gamma border and normalize.

    A1 = row softmax of [M | gamma], A2 = column softmax of [M ; gamma],
    the hats drop the added border, and the affinity matrix re-appends
    A1's final column to the assembled (max or mean) hat matrices.

    Dummy slots (indices at or past the real-object counts) are excluded
    from the softmax normalization and their probabilities set to zero:
    zero-feature padding must not shift any real association probability,
    so growing the padding leaves every loss value unchanged.
    """
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ag.ShapeError(f"score matrix must be square, got {m.shape}")
    n = m.shape[0]
    prev = n if n_real_prev is None else n_real_prev
    cur = n if n_real_cur is None else n_real_cur
    if not (0 <= prev <= n and 0 <= cur <= n):
        raise ag.ShapeError(f"real-object counts {prev}/{cur} outside 0..{n}")
    col = ag.constant(np.full((n, 1), gamma, dtype=m.dtype))
    row = ag.constant(np.full((1, n), gamma, dtype=m.dtype))
    m1 = ag.concat([m, col], axis=1)
    m2 = ag.concat([m, row], axis=0)
    a1 = _masked_softmax_rows(m1, cur)
    a2 = ag.transpose(_masked_softmax_rows(ag.transpose(m2), prev))
    a1_hat = a1[:, :n]
    a2_hat = a2[:n, :]
    assembled = _assemble(a1_hat, a2_hat, assemble_mode)
    affinity = ag.concat([assembled, a1[:, n : n + 1]], axis=1)
    return AffinityBundle(M=m, M1=m1, M2=m2, A1=a1, A2=a2, A1_hat=a1_hat, A2_hat=a2_hat, A=affinity)


def _masked_softmax_rows(scores: Tensor, n_real: int) -> Tensor:
    """Row softmax over the first ``n_real`` slots plus the final border
    column; dummy slots in between come out exactly zero."""
    rows, cols = scores.shape
    n_slots = cols - 1
    if n_real >= n_slots:
        return ag.softmax_rows(scores)
    kept = ag.concat([scores[:, :n_real], scores[:, n_slots:]], axis=1)
    soft = ag.softmax_rows(kept)
    zeros = ag.constant(np.zeros((rows, n_slots - n_real), dtype=scores.dtype))
    return ag.concat([soft[:, :n_real], zeros, soft[:, n_real:]], axis=1)


def _assemble(a1_hat: Tensor, a2_hat: Tensor, mode: str) -> Tensor:
    if mode == "max":
        return ag.maximum(a1_hat, a2_hat)
    if mode == "mean":
        return (a1_hat + a2_hat) * 0.5
    raise ValueError(f"unknown assemble mode {mode!r}")


class AffinityModel:
    def __init__(self, config: ModelConfig, rng: np.random.Generator | None = None, dtype=np.float32):
        config.validate()
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(0) if rng is None else rng
        self.backbone = LayerStack(config.backbone, rng, dtype)
        self.extension = LayerStack(config.extension, rng, dtype)
        self.compression = LayerStack(config.compression, rng, dtype)
        self.reductions: list[tuple[Tensor, Tensor]] = []
        for tap, (chan, _, _) in zip(config.reduction_plan, config.tap_shapes()):
            bound = 1.0 / math.sqrt(chan)
            weight = Tensor(rng.uniform(-bound, bound, size=(tap.out_channels, chan)).astype(dtype),
                            requires_grad=True)
            bias = Tensor(np.zeros((tap.out_channels, 1), dtype=dtype), requires_grad=True)
            self.reductions.append((weight, bias))
        # The score head ends in a ReLU; with a zero bias its single output
        # channel starts fully dead often enough to stall learning, so it
        # begins slightly positive.
        from .layers import Conv2d

        last_conv = [u for u in self.compression.units if isinstance(u, Conv2d)][-1]
        last_conv.bias.data[...] = 0.5
        self.training = True

    def train(self) -> "AffinityModel":
        self.training = True
        return self

    def eval(self) -> "AffinityModel":
        self.training = False
        return self

    # -- parameter plumbing ------------------------------------------------

    def named_parameters(self) -> dict[str, Tensor]:
        named: dict[str, Tensor] = {}
        for prefix, stack in (("backbone", self.backbone), ("extension", self.extension),
                              ("compression", self.compression)):
            for key, tensor in stack.parameters().items():
                named[f"{prefix}.{key}"] = tensor
        for index, (weight, bias) in enumerate(self.reductions):
            named[f"reduction.{index}.weight"] = weight
            named[f"reduction.{index}.bias"] = bias
        return named

    def named_buffers(self) -> dict[str, np.ndarray]:
        named: dict[str, np.ndarray] = {}
        for prefix, stack in (("backbone", self.backbone), ("extension", self.extension),
                              ("compression", self.compression)):
            for key, arr in stack.buffers().items():
                named[f"{prefix}.{key}"] = arr
        return named

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t in self.named_parameters().items()}
        state.update({name: arr.copy() for name, arr in self.named_buffers().items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        buffers = self.named_buffers()
        expected = set(params) | set(buffers)
        provided = {k for k in state if not k.startswith("meta/")}
        if provided != expected:
            missing = sorted(expected - provided)
            extra = sorted(provided - expected)
            raise ValueError(f"state does not match model: missing {missing[:4]}, unexpected {extra[:4]}")
        for name, tensor in params.items():
            arr = np.asarray(state[name], dtype=self.dtype)
            if arr.shape != tensor.data.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {tensor.data.shape}")
            tensor.data = np.ascontiguousarray(arr)
        for name, buf in buffers.items():
            arr = np.asarray(state[name], dtype=buf.dtype)
            if arr.shape != buf.shape:
                raise ValueError(f"{name}: shape {arr.shape} does not match {buf.shape}")
            buf[...] = arr

    def save(self, path, extra: dict[str, np.ndarray] | None = None) -> None:
        state = self.state_dict()
        if extra:
            state.update(extra)
        save_tensors(path, state)

    # -- forward passes ------------------------------------------------------

    def _wanted(self, subnet: str) -> list[int]:
        return [t.layer_id for t in self.config.reduction_plan if t.subnet == subnet]

    def forward_taps(self, x: Tensor) -> dict[tuple[str, int], Tensor]:
        trunk_out, backbone_taps = self.backbone.forward(x, self.training, self._wanted("backbone"))
        _, extension_taps = self.extension.forward(trunk_out, self.training, self._wanted("extension"))
        taps: dict[tuple[str, int], Tensor] = {}
        for layer_id, tensor in backbone_taps.items():
            taps[("backbone", layer_id)] = tensor
        for layer_id, tensor in extension_taps.items():
            taps[("extension", layer_id)] = tensor
        return taps

    def extract_features_batch(self, frames: Sequence[np.ndarray],
                               centers_list: Sequence[np.ndarray]) -> list[FeatureMatrix]:
        if len(frames) != len(centers_list):
            raise ValueError("need one center set per frame")
        cfg = self.config
        for centers in centers_list:
            centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
            if len(centers) > cfg.n_m:
                raise ValueError(f"{len(centers)} centers exceed the {cfg.n_m} object slots")
            if centers.size and (centers.min() < 0 or centers.max() >= 1):
                raise ValueError("normalized centers must lie in [0, 1)")
        stacked = np.stack([np.asarray(f, dtype=self.dtype) for f in frames]) / 255.0
        x = ag.constant(stacked.transpose(0, 3, 1, 2).copy())
        taps = self.forward_taps(x)
        depth = cfg.feature_dim
        out: list[FeatureMatrix] = []
        for index, centers in enumerate(centers_list):
            centers = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
            n_real = len(centers)
            if n_real == 0:
                out.append(FeatureMatrix(
                    F=ag.constant(np.zeros((depth, cfg.n_m), dtype=self.dtype)), n_real=0))
                continue
            parts = []
            for tap, (weight, bias) in zip(cfg.reduction_plan, self.reductions):
                tensor = taps[(tap.subnet, tap.layer_id)]
                _, _, grid_h, grid_w = tensor.shape
                rows = np.floor(centers[:, 1] * grid_h).astype(np.intp)
                cols = np.floor(centers[:, 0] * grid_w).astype(np.intp)
                sampled = ag.gather_pixels(tensor, index, rows, cols)  # (C, n)
                parts.append(ag.matmul(weight, sampled) + bias)
            full = ag.concat(parts, axis=0)  # (D, n)
            if n_real < cfg.n_m:
                padding = ag.constant(np.zeros((depth, cfg.n_m - n_real), dtype=self.dtype))
                full = ag.concat([full, padding], axis=1)
            out.append(FeatureMatrix(F=full, n_real=n_real))
        return out

    def extract_features(self, frame: np.ndarray, centers: np.ndarray) -> FeatureMatrix:
        return self.extract_features_batch([frame], [centers])[0]

    def estimate_affinity(self, prev: FeatureMatrix, cur: FeatureMatrix) -> AffinityBundle:
        cfg = self.config
        psi = ag.pair_tensor(prev.F, cur.F)
        psi = ag.reshape(psi, (1, 2 * cfg.feature_dim, cfg.n_m, cfg.n_m))
        scores, _ = self.compression.forward(psi, self.training)
        m = ag.reshape(scores, (cfg.n_m, cfg.n_m))
        return affinity_from_scores(m, cfg.gamma, cfg.assemble_mode,
                                    n_real_prev=prev.n_real, n_real_cur=cur.n_real)


# ---------------------------------------------------------------------------
# losses


@dataclass
class LossTerms:
    forward: Tensor
    backward: Tensor
    consistency: Tensor
    assembly: Tensor
    total: Tensor

    def values(self) -> dict[str, float]:
        return {
            "forward": self.forward.item(),
            "backward": self.backward.item(),
            "consistency": self.consistency.item(),
            "assembly": self.assembly.item(),
            "total": self.total.item(),
        }


def _masked_nll(mask: np.ndarray, probs: Tensor) -> Tensor:
    """Mean negative log probability over the cells the mask selects.

    An empty mask contributes zero. Probabilities are floored before the
    log so unselected zero cells cannot poison the product with infinities.
    """
    weight = float(mask.sum())
    if weight == 0:
        return ag.constant(np.zeros((), dtype=probs.dtype))
    neg_log = -ag.log(ag.clip(probs, LOG_FLOOR, 1.0))
    picked = ag.constant(mask.astype(probs.dtype)) * neg_log
    return picked.sum() * (1.0 / weight)


def association_losses(bundle: AffinityBundle, label: AssociationLabel,
                       assemble_mode: str = "max") -> LossTerms:
    """The four association losses and their mean.

    forward/backward: masked cross-entropy on A1 rows and A2 columns;
    consistency: L1 distance between the trimmed matrices, restricted to
    real-object rows and columns so dummy padding cannot shift the value;
    assembly: masked cross-entropy on the assembled hat matrices.
    """
    l1, l2, l3 = label.trims()
    if bundle.A1.shape != l1.shape or bundle.A2.shape != l2.shape:
        raise ag.ShapeError(
            f"bundle shapes {bundle.A1.shape}/{bundle.A2.shape} do not match label "
            f"{l1.shape}/{l2.shape}")
    loss_f = _masked_nll(l1, bundle.A1)
    loss_b = _masked_nll(l2, bundle.A2)
    n_prev, n_cur = label.n_real_prev, label.n_real_cur
    if n_prev and n_cur:
        diff = bundle.A1_hat[:n_prev, :n_cur] - bundle.A2_hat[:n_prev, :n_cur]
        loss_c = ag.absolute(diff).sum()
    else:
        loss_c = ag.constant(np.zeros((), dtype=bundle.A1.dtype))
    loss_a = _masked_nll(l3, _assemble(bundle.A1_hat, bundle.A2_hat, assemble_mode))
    total = (loss_f + loss_b + loss_c + loss_a) * 0.25
    return LossTerms(forward=loss_f, backward=loss_b, consistency=loss_c, assembly=loss_a, total=total)


def association_accuracy(affinity: np.ndarray, label: AssociationLabel) -> tuple[int, int]:
    """Row-argmax agreement with the label over real objects.

    Candidate columns are the real objects of the later frame plus the
    un-identified column; dummy slots are excluded, mirroring the tracker.
    """
    n_max = label.n_max
    candidates = list(range(label.n_real_cur)) + [n_max]
    correct = 0
    for i in range(label.n_real_prev):
        predicted = candidates[int(np.argmax(affinity[i, candidates]))]
        truth = int(np.argmax(label.L[i, :]))
        correct += int(predicted == truth)
    return correct, label.n_real_prev


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainSettings:
    lr: float = 0.01
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_drops: tuple[int, ...] = (50, 80, 100)
    epochs: int = 120
    batch_size: int = 8
    seed: int = 0


@dataclass
class EpochLog:
    epoch: int
    lr: float
    mean_loss: float
    forward: float
    backward: float
    consistency: float
    assembly: float


def learning_rate(base: float, drops: Sequence[int], epoch: int) -> float:
    """Base rate divided by ten at each listed (1-based) epoch."""
    return base * (0.1 ** sum(1 for d in drops if epoch >= d))


def pair_batch_loss(model: AffinityModel, samples: Sequence) -> tuple[Tensor, dict[str, float]]:
    """Mean association loss over a batch of pairs (one shared trunk pass)."""
    frames = []
    centers = []
    for sample in samples:
        centers_a, centers_b = sample.centers()
        frames.extend([sample.frame_a, sample.frame_b])
        centers.extend([centers_a, centers_b])
    features = model.extract_features_batch(frames, centers)
    totals = []
    sums = {"forward": 0.0, "backward": 0.0, "consistency": 0.0, "assembly": 0.0, "total": 0.0}
    for index, sample in enumerate(samples):
        bundle = model.estimate_affinity(features[2 * index], features[2 * index + 1])
        terms = association_losses(bundle, sample.label, model.config.assemble_mode)
        totals.append(terms.total)
        for key, value in terms.values().items():
            sums[key] += value
    batch_total = totals[0]
    for term in totals[1:]:
        batch_total = batch_total + term
    batch_total = batch_total * (1.0 / len(samples))
    means = {key: value / len(samples) for key, value in sums.items()}
    return batch_total, means


def train_model(model: AffinityModel, dataset, settings: TrainSettings,
                progress: Callable[[EpochLog], None] | None = None) -> list[EpochLog]:
    """SGD over pair samples with the stepped learning-rate schedule."""
    if len(dataset) == 0:
        raise ValueError("training dataset is empty")
    model.train()
    optimizer = SGD(model.named_parameters(), settings.lr, settings.momentum, settings.weight_decay)
    logs: list[EpochLog] = []
    for epoch in range(1, settings.epochs + 1):
        optimizer.lr = learning_rate(settings.lr, settings.lr_drops, epoch)
        order = np.random.default_rng([settings.seed, 7, epoch]).permutation(len(dataset))
        epoch_sums = {"forward": 0.0, "backward": 0.0, "consistency": 0.0, "assembly": 0.0, "total": 0.0}
        batches = 0
        for start in range(0, len(order), settings.batch_size):
            chunk = order[start : start + settings.batch_size]
            samples = [
                dataset.materialize(int(i), np.random.default_rng([settings.seed, epoch, int(i)]))
                for i in chunk
            ]
            optimizer.zero_grad()
            total, means = pair_batch_loss(model, samples)
            ag.backward(total)
            optimizer.step()
            for key in epoch_sums:
                epoch_sums[key] += means[key]
            batches += 1
        log = EpochLog(
            epoch=epoch,
            lr=optimizer.lr,
            mean_loss=epoch_sums["total"] / batches,
            forward=epoch_sums["forward"] / batches,
            backward=epoch_sums["backward"] / batches,
            consistency=epoch_sums["consistency"] / batches,
            assembly=epoch_sums["assembly"] / batches,
        )
        logs.append(log)
        if progress is not None:
            progress(log)
    return logs


def load_model(path, config: ModelConfig, dtype=np.float32) -> AffinityModel:
    model = AffinityModel(config, dtype=dtype)
    model.load_state_dict(load_tensors(path))
    return model

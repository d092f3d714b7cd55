"""Finite-difference verification of the analytic gradients.

For each random model instantiation, the full association loss is
differentiated analytically and compared against central finite
differences over every parameter. The per-tensor discrepancy is the
vector-norm ratio ||g_a - g_fd|| / max(||g_a|| + ||g_fd||, eps), which
stays meaningful when individual entries sit near an activation kink.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .labels import build_label
from .model import AffinityModel, ModelConfig, micro_config, pair_batch_loss
from .data import PairSample

FD_STEP = 1e-4
TOLERANCE = 1e-3


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Norm-ratio discrepancy with an absolute floor on the scale.

    Gradients whose true value is zero still differ by finite-difference
    noise; the floor keeps comparisons below the oracle's resolution from
    registering as disagreement (it amounts to an absolute bound there).
    """
    diff = float(np.linalg.norm(analytic - numeric))
    scale = float(np.linalg.norm(analytic) + np.linalg.norm(numeric))
    return diff / max(scale, floor)


def random_pair_sample(config: ModelConfig, rng: np.random.Generator) -> PairSample:
    """A random frame pair with consistent boxes, identities and label."""
    def one_frame():
        frame = rng.integers(0, 256, size=(config.input_h, config.input_w, 3), dtype=np.uint8)
        count = int(rng.integers(1, config.n_m + 1))
        boxes = []
        for _ in range(count):
            w = rng.uniform(2, config.input_w / 2)
            h = rng.uniform(2, config.input_h / 2)
            left = rng.uniform(0, config.input_w - w - 1e-3)
            top = rng.uniform(0, config.input_h - h - 1e-3)
            boxes.append((left, top, w, h))
        return frame, np.asarray(boxes)

    frame_a, boxes_a = one_frame()
    frame_b, boxes_b = one_frame()
    pool = list(range(1, 2 * config.n_m + 1))
    ids_a = list(rng.choice(pool, size=len(boxes_a), replace=False))
    ids_b = list(rng.choice(pool, size=len(boxes_b), replace=False))
    label = build_label(ids_a, ids_b, config.n_m)
    return PairSample(frame_a=frame_a, frame_b=frame_b, boxes_a=boxes_a, boxes_b=boxes_b,
                      ids_a=ids_a, ids_b=ids_b, label=label)


def _loss_value(model: AffinityModel, sample: PairSample) -> float:
    with ag.no_grad():
        total, _ = pair_batch_loss(model, [sample])
    return total.item()


@dataclass
class GradCheckReport:
    worst: dict[str, float]  # parameter name -> max relative error over trials
    trials: int

    @property
    def max_error(self) -> float:
        return max(self.worst.values()) if self.worst else 0.0

    def passed(self, tolerance: float = TOLERANCE) -> bool:
        return self.max_error <= tolerance


def check_model_gradients(
    trials: int = 100,
    seed: int = 0,
    config: ModelConfig | None = None,
    step: float = FD_STEP,
    corrupt: bool = False,
) -> GradCheckReport:
    """Compare analytic and finite-difference gradients on random models.

    Runs in float64; ``corrupt`` deliberately perturbs one analytic
    gradient so the checker itself can be exercised.
    """
    config = micro_config() if config is None else config
    worst: dict[str, float] = {}
    for trial in range(trials):
        rng = np.random.default_rng([seed, trial])
        model = AffinityModel(config, rng=rng, dtype=np.float64)
        sample = random_pair_sample(config, rng)

        total, _ = pair_batch_loss(model, [sample])
        for tensor in model.named_parameters().values():
            tensor.zero_grad()
        ag.backward(total)

        for name, tensor in model.named_parameters().items():
            grad = np.zeros_like(tensor.data) if tensor.grad is None else tensor.grad.copy()
            if corrupt and name.startswith("backbone.0."):
                grad = grad + 0.05 * (1.0 + np.abs(grad))
            numeric = _fd_gradient(lambda: _loss_value(model, sample), tensor.data, grad, step)
            error = rel_error(grad, numeric)
            if error > worst.get(name, 0.0):
                worst[name] = error
    return GradCheckReport(worst=worst, trials=trials)


def _fd_gradient(value_fn, data: np.ndarray, analytic: np.ndarray, step: float) -> np.ndarray:
    """Central differences over every entry of ``data``.

    Entries whose disagreement would matter at the reporting tolerance are
    re-measured at a hundredth of the step: a ReLU or max kink inside the
    first window produces an O(step) artifact that collapses at the smaller
    step, while a genuinely wrong gradient keeps its error at any step.
    """
    numeric = np.zeros_like(data)
    flat = data.reshape(-1)
    numeric_flat = numeric.reshape(-1)
    analytic_flat = analytic.reshape(-1)
    scale = max(float(np.linalg.norm(analytic)), 1e-5)
    trigger = max(0.25 * TOLERANCE * scale / math.sqrt(flat.size), 1e-9)

    def central(index: int, h: float) -> float:
        original = flat[index]
        flat[index] = original + h
        up = value_fn()
        flat[index] = original - h
        down = value_fn()
        flat[index] = original
        return (up - down) / (2 * h)

    for index in range(flat.size):
        numeric_flat[index] = central(index, step)
        if abs(numeric_flat[index] - analytic_flat[index]) > trigger:
            refined = central(index, step / 100.0)
            if abs(refined - analytic_flat[index]) < abs(numeric_flat[index] - analytic_flat[index]):
                numeric_flat[index] = refined
    return numeric


def check_operation(fn, inputs: list[np.ndarray], trials: int = 1, step: float = FD_STEP,
                    seed: int = 0) -> float:
    """Max relative error of one op's gradients against finite differences.

    ``fn`` maps Tensors to a Tensor; the check reduces the output with a
    fixed random projection so a scalar loss exists.
    """
    rng = np.random.default_rng(seed)
    tensors = [ag.Tensor(np.asarray(arr, dtype=np.float64), requires_grad=True) for arr in inputs]
    out = fn(*tensors)
    weights = ag.constant(rng.normal(size=out.shape))

    def scalar() -> float:
        with ag.no_grad():
            return (fn(*tensors) * weights).sum().item()

    loss = (out * weights).sum()
    ag.backward(loss)
    worst = 0.0
    for tensor in tensors:
        grad = np.zeros_like(tensor.data) if tensor.grad is None else tensor.grad.copy()
        numeric = np.zeros_like(tensor.data)
        flat = tensor.data.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + step
            up = scalar()
            flat[index] = original - step
            down = scalar()
            flat[index] = original
            numeric_flat[index] = (up - down) / (2 * step)
        worst = max(worst, rel_error(grad, numeric))
    return worst

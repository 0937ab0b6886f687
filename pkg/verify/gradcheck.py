"""
End-to-end gradient check: tape gradients of every model parameter against
central finite differences, in float64.
"""
import logging
from dataclasses import dataclass

import numpy as np

from backbone.config import micro_config
from backbone.model import PyramidVisionTransformerV2
from tensor.gradcheck import finite_diff_grad, relative_error
from tensor.ops import mul, sum_all
from tensor.tensor import GradTape, SeededNormal, backward, philox, tensor_create
from utils.config import DEFAULT_SEED, FINITE_DIFF_EPS, GRAD_ABS_TOL, GRADCHECK_DTYPE, MODEL_GRAD_TOL
from utils.errors import GradientCheckError
from utils.image_utils import random_image

logger = logging.getLogger(__name__)

GRADCHECK_INPUT_SIZE = 16


@dataclass(frozen=True)
class ParamCheck:
    path: str
    checked: int
    total: int
    rel_error: float
    max_abs_diff: float
    tolerance: float

    @property
    def ok(self):
        # the key bias gradient is zero up to rounding; relative error is noise there
        return self.rel_error < self.tolerance or self.max_abs_diff <= GRAD_ABS_TOL


@dataclass
class GradCheckReport:
    checks: list
    seed: int

    @property
    def ok(self):
        return all(check.ok for check in self.checks)

    @property
    def worst(self):
        return max(self.checks, key=lambda check: check.rel_error)

    def failures(self):
        return [check for check in self.checks if not check.ok]

    def to_text(self):
        width = max(len(check.path) for check in self.checks)
        lines = []
        for check in self.checks:
            status = "ok" if check.ok else "FAILED"
            lines.append(f"{check.path:<{width}}  {check.checked:>5}/{check.total:<5}  "
                         f"rel err {check.rel_error:.3e}  {status}")
        worst = self.worst
        lines.append(f"{len(self.checks)} tensors, worst {worst.path} at {worst.rel_error:.3e}")
        return "\n".join(lines)


def probe_loss(model, image, probe):
    """sum(logits * probe): every logit reaches the loss with a distinct weight."""
    return sum_all(mul(model.classify(image), probe))


def _sample(rng, size, max_elements):
    if not max_elements or max_elements >= size:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_elements, replace=False))


def check_model_gradients(model, image, probe, tol=MODEL_GRAD_TOL, max_elements=0,
                          seed=DEFAULT_SEED, eps=FINITE_DIFF_EPS):
    """
    Compare tape and finite-difference gradients for every parameter tensor.

    Args:
        model: float64 PyramidVisionTransformerV2
        image: float64 image batch
        probe: Tensor shaped like the logits
        tol: Relative-error bound per tensor
        max_elements: Elements sampled per tensor; 0 checks all of them
        seed: Seed for the sampling
        eps: Finite-difference step

    Returns:
        GradCheckReport
    """
    with GradTape() as tape:
        watched = model.weights.watch(tape)
        loss = probe_loss(model.with_weights(watched), image, probe)
    gradients = backward(loss, tape)

    rng = philox(seed)
    checks = []
    for path, tensor in watched.items():
        analytic = gradients.get(tensor.grad_id)
        analytic = np.zeros(tensor.shape) if analytic is None else analytic
        indices = _sample(rng, tensor.size, max_elements)

        def loss_at(value, path=path):
            return probe_loss(model.with_weights(model.weights.replace(path, value)), image, probe)

        numeric = finite_diff_grad(loss_at, model.weights[path], eps=eps, indices=indices).numpy()
        picked, estimate = analytic.reshape(-1)[indices], numeric.reshape(-1)[indices]
        error = relative_error(picked, estimate)
        max_abs = float(np.max(np.abs(picked - estimate)))
        checks.append(ParamCheck(path, len(indices), tensor.size, error, max_abs, tol))
        logger.debug("%s: %d/%d elements, rel err %.3e", path, len(indices), tensor.size, error)
    return GradCheckReport(checks, seed)


def run_gradcheck(config=None, seed=DEFAULT_SEED, tol=MODEL_GRAD_TOL, max_elements=0, size=GRADCHECK_INPUT_SIZE,
                  raise_on_failure=False):
    """
    Gradient check of a freshly initialized float64 model at size x size.

    Args:
        config: ModelConfig (defaults to micro_config())
        seed: Seeds the weights, image, probe and sampling
        tol: Relative-error bound per tensor
        max_elements: Elements sampled per tensor; 0 checks all
        size: Input side length
        raise_on_failure: Raise GradientCheckError instead of returning a failing report

    Returns:
        GradCheckReport
    """
    config = micro_config() if config is None else config
    model = PyramidVisionTransformerV2(config, seed=seed, dtype=GRADCHECK_DTYPE)
    image = random_image(size, seed=seed + 1, dtype=GRADCHECK_DTYPE)
    probe = tensor_create((1, config.num_classes), SeededNormal(seed + 2), dtype=GRADCHECK_DTYPE)
    report = check_model_gradients(model, image, probe, tol=tol, max_elements=max_elements, seed=seed + 3)
    failures = report.failures()
    if failures:
        logger.warning("%d of %d tensors fail the gradient check", len(failures), len(report.checks))
        if raise_on_failure:
            names = ", ".join(f"{c.path} ({c.rel_error:.3e})" for c in failures)
            raise GradientCheckError(f"tape gradients disagree with finite differences: {names}")
    return report

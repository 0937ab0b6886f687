"""
Reconciles the analytic MAC plan with the multiplies the kernels actually perform.
"""
import logging
from typing import List, NamedTuple

from analytics.cost import cost_report
from backbone.model import IN_CHANNELS
from tensor.instrument import MacCounter
from tensor.tensor import SeededUniform, tensor_create
from utils.config import DEFAULT_SEED, MAX_INSTRUMENTED_MACS
from utils.errors import InvalidConfigError

logger = logging.getLogger(__name__)


class Discrepancy(NamedTuple):
    path: str
    analytic: int
    instrumented: int


class CounterCheck(NamedTuple):
    analytic: int
    instrumented: int
    discrepancies: List[Discrepancy]

    @property
    def ok(self):
        return not self.discrepancies and self.analytic == self.instrumented


def instrumented_macs(model, height, width=None, seed=DEFAULT_SEED):
    """
    Run one forward pass (batch 1, head included) under a MacCounter.

    Returns:
        MacCounter: per-path multiplies reported by the kernels
    """
    width = height if width is None else width
    image = tensor_create((1, IN_CHANNELS, height, width), SeededUniform(seed, -1.0, 1.0), dtype=model.dtype)
    with MacCounter() as counter:
        model.classify(image)
    return counter


def verify_counter(model, height, width=None, seed=DEFAULT_SEED):
    """
    Compare analytic and instrumented MAC counts layer by layer.

    Args:
        model: PyramidVisionTransformerV2 (small: at most MAX_INSTRUMENTED_MACS)
        height, width: Input size
        seed: Seed for the random input image

    Returns:
        CounterCheck: (analytic, instrumented, discrepancies)
    """
    width = height if width is None else width
    report = cost_report(model, height, width)
    if report.total_macs > MAX_INSTRUMENTED_MACS:
        raise InvalidConfigError(
            f"{report.total_macs:,} MACs exceeds the instrumented-pass limit of {MAX_INSTRUMENTED_MACS:,}"
        )
    counter = instrumented_macs(model, height, width, seed)

    analytic = {layer.path: layer.macs for layer in report.per_layer if layer.macs}
    discrepancies = []
    for path in list(analytic) + [p for p in counter.per_path if p not in analytic]:
        expected, measured = analytic.get(path, 0), counter.per_path.get(path, 0)
        if expected != measured:
            discrepancies.append(Discrepancy(path, expected, measured))
    for item in discrepancies:
        logger.warning("MAC mismatch at %s: analytic %d, instrumented %d", *item)
    return CounterCheck(report.total_macs, counter.total, discrepancies)

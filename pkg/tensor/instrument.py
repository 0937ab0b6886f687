"""
Multiply-accumulate instrumentation for the compute kernels.

Kernels report the number of scalar multiplies they perform, derived from the
operand shapes they actually multiplied. Counts land in the active MacCounter
under the current dotted scope path; with no counter active reporting is a no-op.
"""
import contextvars
from collections import OrderedDict
from contextlib import contextmanager

_active_counter = contextvars.ContextVar("active_mac_counter", default=None)
_scope = contextvars.ContextVar("mac_scope", default=())


class MacCounter:
    """Accumulates reported multiplies per scope path for one evaluation."""

    def __init__(self):
        self.per_path = OrderedDict()
        self._token = None

    @property
    def total(self):
        return sum(self.per_path.values())

    def add(self, path, count):
        self.per_path[path] = self.per_path.get(path, 0) + int(count)

    def __enter__(self):
        self._token = _active_counter.set(self)
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        _active_counter.reset(self._token)
        self._token = None
        return False


@contextmanager
def mac_scope(name):
    """Push one component onto the dotted scope path used for reporting."""
    token = _scope.set(_scope.get() + (str(name),))
    try:
        yield
    finally:
        _scope.reset(token)


def current_scope():
    return ".".join(_scope.get())


def report_macs(count):
    """Called by kernels after each multiply-accumulate pass."""
    counter = _active_counter.get()
    if counter is not None:
        counter.add(current_scope(), count)

"""Differentiable tensor core: immutable tensors, the gradient tape and instrumentation."""

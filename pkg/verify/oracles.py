"""
Naive-loop references for convolution and both attention variants, and a
randomized suite comparing them with the vectorized kernels.

The references index one element at a time with Python floats and share no
code with the kernels beyond the weight containers.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from attention.attention import AttentionWeights
from attention.sra import linear_sra_forward, sra_forward
from layers.conv import Conv2dParams, conv2d
from tensor.tensor import Tensor, philox
from utils.config import DEFAULT_SEED, LAYER_NORM_EPS, ORACLE_CASES, ORACLE_TOL
from utils.errors import OracleError

logger = logging.getLogger(__name__)


# Naive references

def naive_conv2d(x, weight, bias, stride, padding, groups):
    """Seven nested loops over batch, output channel, output row/col, input channel, kernel row/col."""
    n, c_in, h, w = x.shape
    c_out, c_group, k, _ = weight.shape
    out_per_group = c_out // groups
    h_out = (h + 2 * padding - k) // stride + 1
    w_out = (w + 2 * padding - k) // stride + 1
    out = np.zeros((n, c_out, h_out, w_out))
    for b in range(n):
        for oc in range(c_out):
            g = oc // out_per_group
            for oy in range(h_out):
                for ox in range(w_out):
                    total = 0.0 if bias is None else float(bias[oc])
                    for ic in range(c_group):
                        for ky in range(k):
                            for kx in range(k):
                                iy = oy * stride + ky - padding
                                ix = ox * stride + kx - padding
                                if 0 <= iy < h and 0 <= ix < w:
                                    total += float(x[b, g * c_group + ic, iy, ix]) * float(weight[oc, ic, ky, kx])
                    out[b, oc, oy, ox] = total
    return out


def naive_linear(rows, weight, bias):
    t, c_in = rows.shape
    c_out = weight.shape[1]
    out = np.zeros((t, c_out))
    for i in range(t):
        for o in range(c_out):
            total = float(bias[o])
            for j in range(c_in):
                total += float(rows[i, j]) * float(weight[j, o])
            out[i, o] = total
    return out


def naive_layer_norm(rows, gamma, beta, eps=LAYER_NORM_EPS):
    out = np.zeros(rows.shape)
    for i in range(rows.shape[0]):
        values = [float(v) for v in rows[i]]
        mean = sum(values) / len(values)
        var = sum((v - mean) ** 2 for v in values) / len(values)
        for j, v in enumerate(values):
            out[i, j] = (v - mean) / math.sqrt(var + eps) * float(gamma[j]) + float(beta[j])
    return out


def naive_gelu(rows):
    out = np.zeros(rows.shape)
    for index, v in np.ndenumerate(rows):
        out[index] = 0.5 * float(v) * (1.0 + math.erf(float(v) / math.sqrt(2.0)))
    return out


def naive_adaptive_pool(fmap, pool_size):
    """fmap [c, h, w] -> [c, P, P] with floor/ceil bins."""
    c, h, w = fmap.shape
    out = np.zeros((c, pool_size, pool_size))
    for ch in range(c):
        for i in range(pool_size):
            y0, y1 = (i * h) // pool_size, -((-(i + 1) * h) // pool_size)
            for j in range(pool_size):
                x0, x1 = (j * w) // pool_size, -((-(j + 1) * w) // pool_size)
                total = 0.0
                for y in range(y0, y1):
                    for x in range(x0, x1):
                        total += float(fmap[ch, y, x])
                out[ch, i, j] = total / ((y1 - y0) * (x1 - x0))
    return out


def _array(tensor):
    return None if tensor is None else tensor.numpy()


def naive_attention(queries, keys_values, heads, weights):
    """
    Multi-head attention on one image's tokens, one score at a time.

    Args:
        queries: [t_q, c] array
        keys_values: [t_kv, c] array
        heads: Head count
        weights: AttentionWeights

    Returns:
        [t_q, c] array
    """
    q = naive_linear(queries, _array(weights.q_weight), _array(weights.q_bias))
    k = naive_linear(keys_values, _array(weights.k_weight), _array(weights.k_bias))
    v = naive_linear(keys_values, _array(weights.v_weight), _array(weights.v_bias))
    t_q, c = q.shape
    t_kv = k.shape[0]
    d = c // heads
    merged = np.zeros((t_q, c))
    for head in range(heads):
        base = head * d
        for i in range(t_q):
            scores = []
            for j in range(t_kv):
                dot = 0.0
                for e in range(d):
                    dot += q[i, base + e] * k[j, base + e]
                scores.append(dot / math.sqrt(d))
            top = max(scores)
            exps = [math.exp(s - top) for s in scores]
            norm = sum(exps)
            for e in range(d):
                merged[i, base + e] = sum(exps[j] / norm * v[j, base + e] for j in range(t_kv))
    return naive_linear(merged, _array(weights.proj_weight), _array(weights.proj_bias))


def _tokens_to_map(tokens, h, w):
    t, c = tokens.shape
    fmap = np.zeros((c, h, w))
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                fmap[ch, y, x] = tokens[y * w + x, ch]
    return fmap


def _map_to_tokens(fmap):
    c, h, w = fmap.shape
    tokens = np.zeros((h * w, c))
    for y in range(h):
        for x in range(w):
            for ch in range(c):
                tokens[y * w + x, ch] = fmap[ch, y, x]
    return tokens


def naive_sra(x, h, w, reduction_ratio, heads, weights):
    """x [n, h*w, c] array -> [n, h*w, c]"""
    out = np.zeros(x.shape)
    r = reduction_ratio
    for b in range(x.shape[0]):
        tokens = x[b]
        kv = tokens
        if r > 1:
            fmap = _tokens_to_map(tokens, h, w)[None]
            reduced = naive_conv2d(fmap, _array(weights.sr_weight), _array(weights.sr_bias), r, 0, 1)[0]
            kv = naive_layer_norm(_map_to_tokens(reduced), _array(weights.norm_weight), _array(weights.norm_bias))
        out[b] = naive_attention(tokens, kv, heads, weights)
    return out


def naive_linear_sra(x, h, w, pool_size, heads, weights):
    """x [n, h*w, c] array -> [n, h*w, c]"""
    out = np.zeros(x.shape)
    for b in range(x.shape[0]):
        tokens = x[b]
        pooled = naive_adaptive_pool(_tokens_to_map(tokens, h, w), pool_size)
        if weights.has_reduction:
            refined = naive_conv2d(pooled[None], _array(weights.sr_weight), _array(weights.sr_bias), 1, 0, 1)[0]
            kv = naive_gelu(naive_layer_norm(_map_to_tokens(refined), _array(weights.norm_weight),
                                             _array(weights.norm_bias)))
        else:
            kv = _map_to_tokens(pooled)
        out[b] = naive_attention(tokens, kv, heads, weights)
    return out


# Randomized suite

@dataclass(frozen=True)
class OracleResult:
    name: str
    cases: int
    max_error: float
    tolerance: float
    worst_case: str

    @property
    def ok(self):
        return self.max_error <= self.tolerance

    def summary(self):
        status = "ok" if self.ok else "FAILED"
        return (f"{self.name:<11} {self.cases:>4} cases  max |diff| {self.max_error:.3e}  "
                f"(tol {self.tolerance:.0e})  {status}")


def _random(rng, shape, spread=1.0):
    return Tensor(rng.uniform(-spread, spread, size=shape), dtype=np.float64)


def random_attention_weights(rng, c, reduction_kernel=None):
    """Projection weights for c channels, plus an sr conv of the given kernel and a norm if requested."""
    spread = 1.0 / math.sqrt(c)
    fields = {}
    for name in ("q", "k", "v", "proj"):
        fields[f"{name}_weight"] = _random(rng, (c, c), spread)
        fields[f"{name}_bias"] = _random(rng, (c,), 0.1)
    if reduction_kernel is not None:
        fan_in = c * reduction_kernel * reduction_kernel
        fields["sr_weight"] = _random(rng, (c, c, reduction_kernel, reduction_kernel), 1.0 / math.sqrt(fan_in))
        fields["sr_bias"] = _random(rng, (c,), 0.1)
        fields["norm_weight"] = Tensor(1.0 + rng.uniform(-0.2, 0.2, size=(c,)), dtype=np.float64)
        fields["norm_bias"] = _random(rng, (c,), 0.1)
    return AttentionWeights(**fields)


def _heads_for(rng, c):
    return int(rng.choice([n for n in range(1, c + 1) if c % n == 0]))


def conv_case(rng):
    groups = int(rng.choice([1, 1, 2]))
    c_in = groups * int(rng.integers(1, 4))
    c_out = groups * int(rng.integers(1, 4))
    kernel = int(rng.integers(1, 4))
    stride = int(rng.integers(1, 3))
    padding = int(rng.integers(0, 2))
    h = int(rng.integers(max(1, kernel - 2 * padding), 8))
    w = int(rng.integers(max(1, kernel - 2 * padding), 8))
    n = int(rng.integers(1, 3))
    params = Conv2dParams(c_in, c_out, kernel=kernel, stride=stride, padding=padding, groups=groups)
    x = _random(rng, (n, c_in, h, w))
    weight = _random(rng, params.weight_shape)
    bias = _random(rng, (c_out,)) if rng.random() < 0.7 else None
    fast = conv2d(x, params, weight, bias).numpy()
    slow = naive_conv2d(x.numpy(), weight.numpy(), _array(bias), stride, padding, groups)
    return float(np.max(np.abs(fast - slow))), f"{params} on {h}x{w}, n={n}"


def sra_case(rng):
    r = int(rng.choice([1, 2, 2, 3]))
    h = r * int(rng.integers(1, 4))
    w = r * int(rng.integers(1, 4))
    c = int(rng.choice([2, 4, 6, 8]))
    heads = _heads_for(rng, c)
    n = int(rng.integers(1, 3))
    weights = random_attention_weights(rng, c, r if r > 1 else None)
    x = _random(rng, (n, h * w, c))
    fast = sra_forward(x, h, w, r, heads, weights).numpy()
    slow = naive_sra(x.numpy(), h, w, r, heads, weights)
    return float(np.max(np.abs(fast - slow))), f"R={r} h={h} w={w} c={c} N={heads} n={n}"


def linear_sra_case(rng):
    pool = int(rng.integers(1, 4))
    h = int(rng.integers(1, 7))
    w = int(rng.integers(1, 7))
    c = int(rng.choice([2, 4, 6, 8]))
    heads = _heads_for(rng, c)
    n = int(rng.integers(1, 3))
    refine = bool(rng.random() < 0.5)
    weights = random_attention_weights(rng, c, 1 if refine else None)
    x = _random(rng, (n, h * w, c))
    fast = linear_sra_forward(x, h, w, pool, heads, weights).numpy()
    slow = naive_linear_sra(x.numpy(), h, w, pool, heads, weights)
    return float(np.max(np.abs(fast - slow))), f"P={pool} h={h} w={w} c={c} N={heads} n={n} refine={refine}"


SUITES = {
    "conv2d": conv_case,
    "sra": sra_case,
    "linear_sra": linear_sra_case,
}


def run_oracle(name, seed=DEFAULT_SEED, cases=ORACLE_CASES, tol=ORACLE_TOL):
    """
    Run one randomized comparison.

    Args:
        name: Key of SUITES
        seed: Philox seed for the case grid
        cases: Number of random cases
        tol: Max absolute difference allowed

    Returns:
        OracleResult
    """
    rng = philox(seed)
    worst, worst_case = 0.0, ""
    for _ in range(cases):
        error, description = SUITES[name](rng)
        if error >= worst:
            worst, worst_case = error, description
    result = OracleResult(name, cases, worst, tol, worst_case)
    if not result.ok:
        logger.warning("%s oracle: max |diff| %.3e at %s", name, worst, worst_case)
    return result


def run_oracle_suite(seed=DEFAULT_SEED, cases=ORACLE_CASES, tol=ORACLE_TOL, raise_on_failure=False):
    """
    Run every oracle comparison.

    Returns:
        list: OracleResult per suite

    Raises:
        OracleError: If raise_on_failure and any suite exceeds tol
    """
    results = [run_oracle(name, seed + offset, cases, tol) for offset, name in enumerate(SUITES)]
    failed = [r for r in results if not r.ok]
    if failed and raise_on_failure:
        details = "; ".join(f"{r.name} {r.max_error:.3e} ({r.worst_case})" for r in failed)
        raise OracleError(f"kernels disagree with naive references: {details}")
    return results

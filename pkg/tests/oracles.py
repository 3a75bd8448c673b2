"""Scalar-loop reference implementations used as independent test oracles."""
import math


def ref_mean_std(x):
    h, w = len(x), len(x[0])
    n = h * w
    s = 0.0
    for i in range(h):
        for j in range(w):
            s += x[i][j]
    mean = s / n
    v = 0.0
    for i in range(h):
        for j in range(w):
            v += (x[i][j] - mean) ** 2
    return mean, math.sqrt(v / n)


def ref_threshold(x):
    h, w = len(x), len(x[0])
    mean, std = ref_mean_std(x)
    flat = all(x[i][j] == x[0][0] for i in range(h) for j in range(w))
    return [[0.0 if flat else (1.0 if x[i][j] > mean + 2 * std else 0.0) for j in range(w)] for i in range(h)]


def ref_kernel(sigma):
    r = math.ceil(3 * sigma)
    k = [math.exp(-0.5 * (d / sigma) ** 2) for d in range(-r, r + 1)]
    s = 0.0
    for v in k:
        s += v
    return [v / s for v in k]


def _reflect(i, n):
    # half-sample symmetric extension: ... b a | a b c | c b ...
    period = 2 * n
    i %= period
    return i if i < n else period - 1 - i


def ref_blur(x, sigma):
    """Explicit separable convolution: along rows (vertical) then columns."""
    k = ref_kernel(sigma)
    r = len(k) // 2
    h, w = len(x), len(x[0])
    tmp = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for t in range(len(k)):
                acc += k[t] * x[_reflect(i + t - r, h)][j]
            tmp[i][j] = acc
    out = [[0.0] * w for _ in range(h)]
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for t in range(len(k)):
                acc += k[t] * tmp[i][_reflect(j + t - r, w)]
            out[i][j] = acc
    return out


def ref_latent_masks(stack, active, sigma):
    """stack: list (layers) of N x H x W nested lists."""
    L = len(stack)
    n, h, w = len(stack[0]), len(stack[0][0]), len(stack[0][0][0])
    out = []
    for tok in range(n):
        if tok not in active:
            out.append([[0.0] * w for _ in range(h)])
            continue
        mean = [[0.0] * w for _ in range(h)]
        for i in range(h):
            for j in range(w):
                s = 0.0
                for l in range(L):
                    s += stack[l][tok][i][j]
                mean[i][j] = s / L
        out.append(ref_threshold(ref_blur(mean, sigma)))
    return out


def ref_union(masks, active):
    h, w = len(masks[0]), len(masks[0][0])
    return [[1.0 if any(masks[t][i][j] > 0 for t in active) else 0.0 for j in range(w)] for i in range(h)]


def ref_miou(m, s, active):
    scores = []
    for t in active:
        inter = union = 0
        for i in range(len(m[t])):
            for j in range(len(m[t][0])):
                a, b = m[t][i][j] > 0.5, s[t][i][j] > 0.5
                inter += a and b
                union += a or b
        scores.append(1.0 if union == 0 else inter / union)
    return sum(scores) / len(scores)

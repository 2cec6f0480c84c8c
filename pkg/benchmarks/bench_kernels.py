"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--json]

Shapes match a toy training batch (B=40, M=8, k=20, d=32, 4 heads). The
last row times one full training step (forward, focal loss, backward,
Adam) under each backend.
"""

import argparse
import json
import sys
import timeit

import numpy as np

from hpac import kernels
from hpac.kernels import _numpy

try:
    from hpac.kernels import _numba
except ImportError:
    _numba = None


def best_ms(fn, repeat):
    fn()  # warm-up (and JIT compile)
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def kernel_cases(rng):
    n, length, d, heads = 320, 20, 32, 4
    x = rng.normal(size=(n, length, d))
    w = rng.normal(size=(3, d, d))
    g = rng.normal(size=(n, length, d))
    att = rng.normal(size=(n * heads * length, length))
    mask = rng.random(att.shape) > 0.1
    y = _numpy.masked_softmax_forward(att, mask)
    gy = rng.normal(size=att.shape)
    ids = rng.integers(0, 257, size=n * length)
    ge = rng.normal(size=(n * length, d))
    cases = [
        ("conv1d_forward", lambda m: m.conv1d_forward(x, w)),
        ("conv1d_backward", lambda m: m.conv1d_backward(x, w, g)),
        ("masked_softmax_forward", lambda m: m.masked_softmax_forward(att, mask)),
        ("masked_softmax_backward", lambda m: m.masked_softmax_backward(y, gy)),
        ("embedding_backward", lambda m: m.embedding_backward(ids, ge, 257)),
    ]
    loops = [
        ("conv1d_forward (loops)", lambda: _numba.conv1d_forward_loops(x, w)),
        ("conv1d_backward (loops)", lambda: _numba.conv1d_backward_loops(x, w, g)),
    ]
    return cases, loops


def train_step_ms(repeat):
    from hpac import autodiff as ad
    from hpac.model import ModelConfig, forward, init_model
    from hpac.segmenter import batch_labels, batch_segments, segment_all
    from hpac.toy import make_toy_corpus
    from hpac.trainer import AdamState, adam_step, focal_loss

    model = init_model(ModelConfig(k=20, d=32, heads=4))
    packets = segment_all(make_toy_corpus(n=40, seed=3), 20)
    batch, labels = batch_segments(packets, 64), batch_labels(packets)
    state = AdamState.for_params(model.params)

    def step():
        ad.reset_grads(model.parameters())
        loss = focal_loss(forward(model, batch).probs, labels)
        ad.backward(loss)
        adam_step(model.params, {k: p.grad for k, p in model.params.items()}, state, 1e-3)

    return best_ms(step, max(3, repeat // 4))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--json", action="store_true", help="one JSON object per row")
    args = ap.parse_args(argv)
    if _numba is None:
        print("numba is not importable; nothing to compare", file=sys.stderr)
        return 1

    rng = np.random.default_rng(0)
    cases, loops = kernel_cases(rng)
    rows = []
    for name, call in cases:
        rows.append((name, best_ms(lambda: call(_numpy), args.repeat),
                     best_ms(lambda: call(_numba), args.repeat)))
    numpy_conv = {r[0]: r[1] for r in rows}
    for name, call in loops:
        rows.append((name, numpy_conv[name.split(" ")[0]], best_ms(call, args.repeat)))
    step = {}
    for backend in ("numpy", "numba"):
        prev = kernels.set_backend(backend)
        try:
            step[backend] = train_step_ms(args.repeat)
        finally:
            kernels.set_backend(prev)
    rows.append(("train step (B=40)", step["numpy"], step["numba"]))

    if args.json:
        for name, a, b in rows:
            print(json.dumps({"kernel": name, "numpy_ms": a, "numba_ms": b, "speedup": a / b}))
        return 0
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, a, b in rows:
        print(f"{name:<26}{a:>10.3f}{b:>10.3f}{a / b:>8.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())

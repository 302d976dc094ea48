"""Time conv forward + backward on the compiled and numpy backends.

    python benchmarks/bench_conv.py [--length 16000] [--repeat 5]
"""
import argparse
import time

import numpy as np

from wvad.core import ConvLayer, available_backends, conv1d_backward, conv1d_forward, use_backend

CASES = [
    # (in_channels, out_channels, kernel, stride, padding)
    (1, 16, 55, 1, 27),
    (16, 8, 55, 1, 27),
    (2, 2, 160, 80, 0),
]


def time_case(backend, x, layer, repeat):
    with use_backend(backend):
        out = conv1d_forward(x, layer)
        grad = np.ones_like(out)
        best = float("inf")
        for _ in range(repeat):
            t0 = time.perf_counter()
            out = conv1d_forward(x, layer)
            conv1d_backward(x, layer, grad, output=out)
            best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    p = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    p.add_argument("--length", type=int, default=16000)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    rng = np.random.default_rng(0)
    backends = available_backends()
    print(f"backends: {', '.join(backends)}; length {args.length}; best of {args.repeat}")
    print(f"{'case':<22}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}")
    for cin, cout, k, stride, pad in CASES:
        layer = ConvLayer.create(cin, cout, k, stride=stride, padding=pad,
                                 activation="leaky_relu", rng=rng)
        x = rng.standard_normal((cin, args.length)).astype(np.float32)
        times, outs = [], []
        for b in backends:
            t, out = time_case(b, x, layer, args.repeat)
            times.append(t)
            outs.append(out)
        for out in outs[1:]:
            np.testing.assert_allclose(out, outs[0], rtol=1e-4, atol=1e-5)
        speed = f"{times[-1] / times[0]:.2f}x" if len(times) > 1 else "-"
        label = f"{cin}->{cout} k{k} s{stride}"
        print(f"{label:<22}" + "".join(f"{t * 1000:>10.1f}ms" for t in times) + f"{speed:>10}")


if __name__ == "__main__":
    main()

"""Compare the compiled and numpy backends kernel by kernel.

    python3 benchmarks/bench_kernels.py [--batch 64] [--channels 16] [--repeat 5]

Shapes default to one training batch of the desk profile: 12x96 frames,
16 hidden channels, 3x3 kernels. Reports the best of ``--repeat`` runs.
"""
import argparse
import timeit

import numpy as np

from fpconvlstm import _fallback, kernels
from fpconvlstm.recurrent import ConvLstmParams, convlstm_step, zero_state


def _best(fn, repeat):
    fn()  # warm-up
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(batch, channels, rng):
    h, w, kh, kw = 12, 96, 3, 3
    cin = channels + 1
    xp = rng.random((batch, h + 2, w + 2, cin), dtype=np.float32)
    cols = kernels.im2col(xp, kh, kw)
    m = batch * h * w
    pre = rng.standard_normal((m, 4 * channels), dtype=np.float32)
    c_prev = rng.standard_normal((m, channels), dtype=np.float32)
    gates, _, tanh_c, _ = kernels.lstm_gates_forward(pre, c_prev)
    dh = rng.standard_normal((m, channels), dtype=np.float32)
    dc = rng.standard_normal((m, channels), dtype=np.float32)
    img = rng.random((batch, h, w, channels), dtype=np.float32)
    pooled, argmax = kernels.maxpool_forward(img, 2, 2)
    return {
        "im2col": lambda: kernels.im2col(xp, kh, kw),
        "col2im": lambda: kernels.col2im(cols, xp.shape),
        "lstm_gates_forward": lambda: kernels.lstm_gates_forward(pre, c_prev),
        "lstm_gates_backward": lambda: kernels.lstm_gates_backward(gates, c_prev, tanh_c, dh, dc),
        "maxpool_forward": lambda: kernels.maxpool_forward(img, 2, 2),
        "maxpool_backward": lambda: kernels.maxpool_backward(pooled, argmax, 2, 2),
    }


def compiled_gate_forward(batch, channels, rng):
    """The compiled gate forward that the cython backend does not dispatch to."""
    from fpconvlstm import _kernels
    m = batch * 12 * 96
    pre = rng.standard_normal((m, 4 * channels), dtype=np.float32)
    c_prev = rng.standard_normal((m, channels), dtype=np.float32)
    bufs = [np.empty((m, 4 * channels), np.float32)] + [np.empty_like(c_prev) for _ in range(3)]
    return (lambda: _kernels.lstm_gates_forward(pre, c_prev, *bufs),
            lambda: _fallback.lstm_gates_forward(pre, c_prev, *bufs))


def convlstm_step_case(batch, channels, rng):
    k = rng.uniform(-0.1, 0.1, (3, 3, channels + 1, channels)).astype(np.float32)
    b = np.zeros(channels, np.float32)
    params = ConvLstmParams(k, k.copy(), k.copy(), k.copy(), b, b.copy(), b.copy(), b.copy())
    x = rng.random((batch, 12, 96, 1), dtype=np.float32)
    prev = zero_state(params, x)
    return lambda: convlstm_step(params, prev, x)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--channels", type=int, default=16)
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args(argv)

    backends = [b for b in ("cython", "python") if b in kernels.BACKENDS]
    rows = {}
    for backend in backends:
        kernels.use_backend(backend)
        rng = np.random.default_rng(0)
        cases = kernel_cases(args.batch, args.channels, rng)
        cases["convlstm_step (full)"] = convlstm_step_case(args.batch, args.channels, rng)
        for name, fn in cases.items():
            rows.setdefault(name, {})[backend] = _best(fn, args.repeat)

    print(f"batch {args.batch}, 12x96 frames, {args.channels} channels; seconds (best of "
          f"{args.repeat})")
    print(f"{'kernel':<24}" + "".join(f"{b:>10}" for b in backends)
          + ("   speedup" if len(backends) == 2 else ""))
    for name, times in rows.items():
        line = f"{name:<24}" + "".join(f"{times[b]:10.4f}" for b in backends)
        if len(backends) == 2:
            line += f"{times['python'] / times['cython']:9.2f}x"
        print(line)
    if "cython" in kernels.BACKENDS:
        comp, nump = compiled_gate_forward(args.batch, args.channels, np.random.default_rng(0))
        tc, tn = _best(comp, args.repeat), _best(nump, args.repeat)
        print(f"\ngate forward, compiled scalar loop {tc:.4f}s vs numpy {tn:.4f}s "
              f"(the cython backend uses {'numpy' if tn < tc else 'compiled'} here)")
    kernels.use_backend(kernels._select())


if __name__ == "__main__":
    main()

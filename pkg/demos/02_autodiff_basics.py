"""Tour of the reverse-mode autodiff engine.

Shows scalar gradients, a convolution gradient checked against finite
differences, and the FFT pair's Parseval identity.
"""

import numpy as np

from iwsr.autodiff import (Tensor, backward, conv3d, fft3, reduce_sum,
                           uniform_init, zero_grads)

# A scalar chain: d/dw of sum((w * x)^2) = 2 * w * sum(x^2).
w = Tensor(np.array(3.0))
w.requires_grad = True
x = Tensor(np.arange(4.0))
loss = reduce_sum((x * w) * (x * w))
visits = backward(loss)
print(f"loss {float(loss.data):.1f}, dloss/dw {float(w.grad):.1f} "
      f"(expected {2 * 3.0 * float((x.data ** 2).sum()):.1f}); "
      f"{visits} graph nodes visited once each")

# Convolution gradient vs central differences.
rng = np.random.default_rng(0)
kernel = uniform_init((2, 3, 3, 3, 3), 81, rng, dtype=np.float64)
inp = Tensor(rng.standard_normal((3, 4, 5, 5)))


def f():
    return reduce_sum(conv3d(inp, kernel) * conv3d(inp, kernel))


zero_grads([kernel])
backward(f())
i = (0, 1, 2, 2, 1)
eps = 1e-6
kernel.data[i] += eps
fp = float(f().data)
kernel.data[i] -= 2 * eps
fm = float(f().data)
kernel.data[i] += eps
numeric = (fp - fm) / (2 * eps)
print(f"conv3d gradient: analytic {kernel.grad[i]:+.6f}, "
      f"numeric {numeric:+.6f}")

# Orthonormal FFT preserves energy (Parseval).
field = Tensor(rng.standard_normal((2, 4, 4, 4)))
spec = fft3(field)
space = float((field.data ** 2).sum())
freq = float((spec.real.data ** 2 + spec.imag.data ** 2).sum())
print(f"Parseval: spatial energy {space:.6f} vs spectral energy {freq:.6f}")

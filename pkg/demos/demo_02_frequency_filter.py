"""
What the frequency filter does to a sequence
============================================

Each block filters every stream in the frequency domain with a learnable
complex response, then blends the result with the unfiltered input and
normalises. Here we push a noisy trend through a hand-set low-pass response
and compare the circular form with the causal one used for training.
"""

import numpy as np

from tasif.core import Tensor, irfft, rfft
from tasif.model import ModelConfig, adaptive_frequency_filter, spectral_filter

n = 32
t = np.arange(n)
rng = np.random.default_rng(0)
signal = np.sin(2 * np.pi * t / n) + 0.4 * rng.standard_normal(n)
h = signal[None, :, None]  # batch x positions x channels

# The transform pair: rfft keeps n/2 + 1 bins, irfft scales by 1/n.
spec = rfft(signal[:, None], axis=0)
print("bins", spec.shape[0], "round-trip error", np.abs(irfft(spec, n, axis=0)[:, 0] - signal).max())

# Keep the four lowest bins.
low = np.zeros((n // 2 + 1, 1))
low[:4] = 1.0
circular = spectral_filter(Tensor(h), Tensor(low), causal=False).data[0, :, 0]
causal = spectral_filter(Tensor(h), Tensor(low), causal=True).data[0, :, 0]


def roughness(x):
    return np.abs(np.diff(x)).mean()


print(f"roughness  input {roughness(signal):.3f}  circular {roughness(circular):.3f}  "
      f"causal {roughness(causal):.3f}")
print("circular", np.round(circular[:8], 2))
print("causal  ", np.round(causal[:8], 2))

# The circular filter wraps around: the first outputs already know the end of
# the sequence. The causal one only looks back, so editing the second half
# leaves the first half bit-for-bit unchanged.
h2 = h.copy()
h2[0, n // 2:] += 5.0
for flag in (False, True):
    a = spectral_filter(Tensor(h), Tensor(low), causal=flag).data
    b = spectral_filter(Tensor(h2), Tensor(low), causal=flag).data
    print("causal" if flag else "circular", "first half unchanged:",
          np.array_equal(a[:, : n // 2], b[:, : n // 2]))

# In the model the filtered stream is blended with its input by alpha, then layer-normed.
cfg = ModelConfig(d=4, n=n, heads=1)
bins = n // 2 + 1
params = {"f.re": Tensor(np.repeat(low, 4, axis=1)), "f.im": Tensor(np.zeros((bins, 4))),
          "f.alpha": Tensor([0.0]), "f.ln.g": Tensor(np.ones(4)), "f.ln.b": Tensor(np.zeros(4))}
x = rng.standard_normal((1, n, 4))
out = adaptive_frequency_filter(Tensor(x), params, "f", cfg).data
print("block output mean/std per position:", out.mean(-1)[0, :3].round(12), out.std(-1)[0, :3].round(6))

"""Power normalisation, superposition and equalisation on hand-made symbol vectors.

No training here: two random "SSVs" are sent over one shared fading channel
and we look at what each receiver gets back after dividing by its own link.

    python3 demos/01_symbols_and_channel.py
"""

import numpy as np

from deepma.channel import draw_noise, equalize, sample_csi, transmit
from deepma.metrics import corr_complex
from deepma.model import power_normalize

K = 256
P = 2.0
rng = np.random.default_rng(0)

# Any real feature of even length becomes K complex symbols with mean power P.
z1 = power_normalize(rng.standard_normal((1, 2 * K)), P)
z2 = power_normalize(rng.standard_normal((1, 2 * K)), P)
print(f"average power: {z1.average_power()[0]:.6f} and {z2.average_power()[0]:.6f}")

# Random vectors are nearly orthogonal already at this K, which is the
# property a trained DMANet has to create for its own codes.
print(f"R_z(z1, z2) = {corr_complex(z1.to_complex()[0], z2.to_complex()[0]):.4f}")

ch = sample_csi(2, seed=1, snr_db=10.0, power=P)
print("CSI (row = transmitter, column = receiver):")
print(np.round(ch.csi, 3))

rx = transmit([z1, z2], ch, "d2d", rng=rng)
r1 = equalize(rx[0], ch.csi[0, 0]).to_complex()[0]
own = corr_complex(r1, z1.to_complex()[0])
leak = corr_complex(r1, z2.to_complex()[0])
print(f"receiver 1 after equalisation: <z1> = {own:.3f}, <z2> = {leak:.3f}")
print("the z2 term is scaled by h21/h11; an encoder pair must learn to ignore it.")

# Noise alone, at 0 dB.
n = draw_noise(sample_csi(1, 2, snr_db=0.0, power=P), "d2d", 1, 2 * 10**5, rng)[0]
print(f"empirical noise power at 0 dB: {np.mean(n ** 2) * 2:.4f} (target {P})")

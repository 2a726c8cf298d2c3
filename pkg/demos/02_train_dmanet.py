"""Train a two-user DMANet on synthetic shapes and run the three transmission tests.

The default budget is small so the script finishes in a few minutes on one
core; pass a larger iteration count as the first argument for better images.
Recovered images land in ``demo_out/`` as PPM files.

    python3 demos/02_train_dmanet.py 600
"""

import os
import sys

import numpy as np

from deepma.data import synthetic_set, write_ppm
from deepma.model import ArchConfig, DmaNet
from deepma.scenarios import run_scenario
from deepma.training import TrainConfig, evaluate, train_loop

iterations = int(sys.argv[1]) if len(sys.argv) > 1 else 600
out = "demo_out"
os.makedirs(out, exist_ok=True)

arch = ArchConfig(height=16, width=16, channels=(16, 32, 32, 16), n_edps=2)
print(f"K = {arch.n_symbols} complex symbols per image, CSPP = {arch.cspp}")
net = DmaNet.init(arch, seed=0)

train = synthetic_set(4000, 16, 16, seed=1)
val = synthetic_set(200, 16, 16, seed=2)
cfg = TrainConfig(
    batch_size=32,
    max_epochs=10**6,
    lr_schedule=((0, 1e-3),),
    channel="awgn",
    max_iterations=iterations,
    validate_every=5,
)
_, history = train_loop(net, train, val, cfg, out_dir=out)
for row in history:
    print("epoch {} it {} loss {} val {} dB".format(*row[:4]))

test = synthetic_set(40, 16, 16, seed=12345).images
for snr in (0.0, 10.0, 20.0):
    print(f"all users on air, {snr:4.1f} dB: {evaluate(net, test, snr, 'awgn', draws=3).avg_psnr_db:.2f} dB")

pair = [test[:4], test[4:8]]
for kind in ("multiplex", "dedicated", "cross"):
    res = run_scenario(net, pair, kind, 15.0, "awgn", seed=1)
    print(f"{kind:>9}: mean PSNR {np.mean(res.psnrs()):.2f} dB")
    for i, imgs in res.recovered.items():
        write_ppm(os.path.join(out, f"{kind}_edp{i}.ppm"), imgs[0])
for i, imgs in enumerate(pair):
    write_ppm(os.path.join(out, f"original_edp{i}.ppm"), imgs[0])
print(f"images written to {out}/")

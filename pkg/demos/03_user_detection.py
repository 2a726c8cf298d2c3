"""User detection with the AACD gate on a trained checkpoint.

Each receiver keeps two reference SSVs from its own encoder. A recovered
vector is decoded only when its average absolute correlation with those
references clears a threshold, calibrated here from paired and unpaired trials.

    python3 demos/02_train_dmanet.py 3000   # writes demo_out/best.dman
    python3 demos/03_user_detection.py demo_out/best.dman
"""

import sys

import numpy as np

from deepma.checkpoint import load_checkpoint
from deepma.data import synthetic_set
from deepma.detection import GateConfig, calibrate_threshold
from deepma.scenarios import detection_trials, reference_banks, run_scenario

net = load_checkpoint(sys.argv[1] if len(sys.argv) > 1 else "demo_out/best.dman")
h, w = net.arch.height, net.arch.width
pool = synthetic_set(202, h, w, seed=777).images
banks = reference_banks(net, pool[-2:], m=2)

print(" SNR   paired AACD       unpaired AACD     accuracy")
for snr in (0.0, 5.0, 10.0, 20.0):
    p, u = detection_trials(net, pool[:-2], snr, banks, trials=100, kind="awgn", seed=1)
    cal = calibrate_threshold(p, u)
    print(f"{snr:4.0f}  {p.mean():.3f} +- {p.std():.3f}   {u.mean():.3f} +- {u.std():.3f}   {cal.accuracy:.3f}")

p, u = detection_trials(net, pool[:-2], 10.0, banks, trials=100, kind="awgn", seed=2)
gate_cfg = GateConfig(calibrate_threshold(p, u).threshold)
test = synthetic_set(8, h, w, seed=4242).images
for kind in ("multiplex", "cross"):
    res = run_scenario(net, [test[:4], test[4:]], kind, 10.0, "awgn", banks=banks, gate_cfg=gate_cfg)
    kept = np.mean([r.gate == "accept" for r in res.reports])
    print(f"{kind:>9} at 10 dB: {kept:.0%} of recovered vectors pass the gate")

"""Reference volume-rendering values at 50 significant digits (mpmath).

Regenerate with: python3 gen_render_oracle.py > render_oracle.json
"""
import json
import random

import mpmath as mp

mp.mp.dps = 50
rng = random.Random(20240531)


def density():
    u = rng.random()
    if u < 0.1:
        return 0.0
    return 10 ** rng.uniform(-3, 2)


cases = []
for _ in range(1000):
    n = rng.randint(1, 12)
    sigma = [density() for _ in range(n)]
    delta = [10 ** rng.uniform(-3, -0.3) for _ in range(n)]
    color = [[rng.random() for _ in range(3)] for _ in range(n)]
    acc = mp.mpf(0)
    trans, weights = [], []
    rgb = [mp.mpf(0)] * 3
    for s, d, c in zip(sigma, delta, color):
        t_i = mp.exp(-acc)
        alpha = 1 - mp.exp(-mp.mpf(s) * mp.mpf(d))
        w = t_i * alpha
        trans.append(t_i)
        weights.append(w)
        rgb = [rgb[k] + w * mp.mpf(c[k]) for k in range(3)]
        acc += mp.mpf(s) * mp.mpf(d)
    cases.append(
        {
            "sigma": sigma,
            "delta": delta,
            "color": color,
            "rgb": [float(v) for v in rgb],
            "transmittance": [float(v) for v in trans],
            "weights": [float(v) for v in weights],
            "final_transmittance": float(mp.exp(-acc)),
        }
    )

print(json.dumps({"cases": cases}))

"""Regenerates ttest_oracle.json: paired samples with two-sided p-values
computed at 50 significant digits with mpmath."""
import json
import random

import mpmath

mpmath.mp.dps = 50
rng = random.Random(20240917)
cases = []
for i in range(20):
    n = rng.randint(3, 30)
    shift = rng.choice([0.0, 0.01, 0.05, 0.2, 1.0]) * rng.choice([-1, 1])
    scale = rng.choice([0.01, 0.1, 1.0, 10.0])
    a = [round(rng.gauss(0.5, scale), 6) for _ in range(n)]
    b = [round(x - shift + rng.gauss(0, scale * 0.5), 6) for x in a]
    d = [mpmath.mpf(x) - mpmath.mpf(y) for x, y in zip(a, b)]
    mean = mpmath.fsum(d) / n
    var = mpmath.fsum((x - mean) ** 2 for x in d) / (n - 1)
    t = mean / mpmath.sqrt(var / n)
    df = n - 1
    p = mpmath.betainc(mpmath.mpf(df) / 2, mpmath.mpf(1) / 2, 0, df / (df + t * t), regularized=True)
    cases.append({"a": a, "b": b, "t": float(t), "p": float(p), "p_digits": mpmath.nstr(p, 30)})
with open("ttest_oracle.json", "w") as f:
    json.dump(cases, f, indent=1)
    f.write("\n")

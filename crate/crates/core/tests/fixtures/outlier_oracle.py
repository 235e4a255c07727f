#!/usr/bin/env python3
# Copyright 2026 The Unimart Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Reference two-stage outlier filter, used to freeze outliers.json.

Stage 1 keeps Q1 <= v <= Q3 (numpy linear quantiles); stage 2 keeps values
within mean +- 1.5 population standard deviations of the stage-1 survivors.

    python3 outlier_oracle.py > outliers.json
"""
import json
import sys

import numpy as np


def survivors(xs):
    a = np.asarray(xs, dtype=float)
    q1, q3 = np.quantile(a, [0.25, 0.75], method="linear")
    s1 = a[(a >= q1) & (a <= q3)]
    mu, sd = s1.mean(), s1.std()
    s2 = s1[(s1 >= mu - 1.5 * sd) & (s1 <= mu + 1.5 * sd)]
    return (s2 if len(s2) else s1).tolist()


def main():
    rng = np.random.default_rng(20261016)
    cases = []
    for i in range(50):
        n = int(rng.integers(4, 80))
        base = rng.lognormal(mean=3.0, sigma=0.3, size=n)
        spikes = rng.random(n) < 0.1
        base[spikes] *= rng.uniform(2, 10, size=spikes.sum())
        # Every fifth case is rounded so ties land on the quartiles.
        xs = np.round(base, 1 if i % 5 == 0 else 6).tolist()
        cases.append({"samples": xs, "survivors": survivors(xs)})
    json.dump({"cases": cases}, sys.stdout, indent=1)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()

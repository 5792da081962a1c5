#!/usr/bin/env python3
# SPDX-License-Identifier: Apache-2.0
"""Prints the 16 NormalFloat-4 levels used by include/lorasp/quant.hpp.

Eight positive and seven negative standard-normal quantiles, each side
normalized so its extreme is exactly +-1, plus an exact zero.
"""

import numpy as np
from scipy.stats import norm

OFFSET = 0.9677083


def codebook():
    pos = norm.ppf(np.linspace(OFFSET, 0.5, 9)[:-1])
    neg = -norm.ppf(np.linspace(OFFSET, 0.5, 8)[:-1])
    levels = np.sort(np.concatenate([pos, [0.0], neg]))
    return levels / levels.max()


if __name__ == "__main__":
    for v in codebook():
        print(repr(float(v)) + ",")

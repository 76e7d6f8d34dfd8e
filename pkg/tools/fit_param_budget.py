"""Search architecture hyperparameters for a ~555k trainable parameter total.

Enumerates (growth_rate, layers_per_block, final_block_layers) at depth 4,
computes the exact trainable count analytically, and prints every candidate
inside [550k, 610k] sorted by distance from 555k. The winner is cross-checked
against a real model build.

Run from the repository root:

    python3 tools/fit_param_budget.py
"""

import sys

sys.path.insert(0, "src")

from hpsep.network import BRANCH_KERNELS, MaskSeparator, NetworkConfig, param_count

TARGET = 555_000
LO, HI = 550_000, 610_000
DEPTH = 4


def composite(c_in, k, kh, kw):
    # conv weight + bias, then batchnorm gamma + beta
    return k * (c_in * kh * kw + 1) + 2 * k


def dense_block(n, k, layers, kh, kw):
    return sum(composite(n + (i - 1) * k, k, kh, kw) for i in range(1, layers + 1))


def branch(k, layers, kh, kw):
    total = dense_block(1, k, layers, kh, kw)
    total += (DEPTH - 1) * dense_block(k, k, layers, kh, kw)  # enc1..enc3
    total += dense_block(k, k, layers, kh, kw)  # bottleneck
    total += DEPTH * (k * k * 4 + k)  # 2x2 transposed convs
    total += DEPTH * dense_block(2 * k, k, layers, kh, kw)  # decoder blocks
    return total


def model_total(k, layers, final_layers):
    total = sum(branch(k, layers, kh, kw) for kh, kw in BRANCH_KERNELS)
    total += dense_block(3 * k, k, final_layers, 3, 3)
    total += 2 * (k + 1)  # two 1x1 mask heads
    return total


def main():
    hits = []
    for k in range(8, 19):
        for layers in range(2, 6):
            for final_layers in range(2, 7):
                n = model_total(k, layers, final_layers)
                if LO <= n <= HI:
                    hits.append((abs(n - TARGET), n, k, layers, final_layers))
    hits.sort()
    for dist, n, k, layers, final_layers in hits:
        print(f"k={k:2d} L={layers} Lf={final_layers}  params={n:7d}  |d|={dist}")
    if not hits:
        print("no candidate inside the window")
        return
    _, n, k, layers, final_layers = hits[0]
    cfg = NetworkConfig(growth_rate=k, layers_per_block=layers, final_block_layers=final_layers)
    built = param_count(MaskSeparator(cfg).store)
    print(f"\nwinner k={k} L={layers} Lf={final_layers}: analytic {n}, built {built}")
    assert built == n, "analytic count disagrees with the built model"


if __name__ == "__main__":
    main()

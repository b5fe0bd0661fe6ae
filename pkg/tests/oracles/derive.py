"""Independent reference values, frozen to frozen.json.

Everything here is computed from closed forms or brute-force loops with
numpy and the standard library only; nothing is imported from echotrace.
Re-run with ``python3 tests/oracles/derive.py`` to regenerate.
"""

import itertools
import json
import math
from pathlib import Path

C = 343.0
FS = 44100
BOX = (4.0, 3.0, 2.5)


def image_count(order):
    """Integer lattice points (i, j, k) with |i| + |j| + |k| <= order, by enumeration."""
    r = range(-order, order + 1)
    return sum(1 for i, j, k in itertools.product(r, r, r) if abs(i) + abs(j) + abs(k) <= order)


def axis_image(x, length, i):
    """Image coordinate along one axis after |i| reflections (i < 0 starts at the 0 wall)."""
    # unfold: even i keeps orientation, odd i mirrors
    if i % 2 == 0:
        return x + i * length
    return (i + 1) * length - x


def axis_hits(i):
    """(hits on the wall at 0, hits on the wall at L) for lattice index i."""
    n = abs(i)
    if i > 0:
        return n // 2, n - n // 2
    return n - n // 2, n // 2


def image_sources(size, src, rcv, alpha, max_order, max_delay=None):
    """Brute-force loop over lattice indices; energies prod(1 - alpha) / (4 pi r^2)."""
    out = []
    r = range(-max_order, max_order + 1)
    for idx in itertools.product(r, r, r):
        if sum(abs(i) for i in idx) > max_order:
            continue
        img = [axis_image(src[a], size[a], idx[a]) for a in range(3)]
        d = math.dist(img, rcv)
        if max_delay is not None and d / C > max_delay:
            continue
        g = 1.0
        for a in range(3):
            lo, hi = axis_hits(idx[a])
            g *= (1.0 - alpha[2 * a]) ** lo * (1.0 - alpha[2 * a + 1]) ** hi
        out.append((d / C, g / (4.0 * math.pi * d * d), sum(abs(i) for i in idx)))
    return sorted(out)


def drr_from_images(images, window=2.5e-3, pre=0.5e-3):
    t0 = images[0][0]
    direct = sum(e for t, e, _ in images if t0 - pre <= t <= t0 + window)
    late = sum(e for t, e, _ in images if t > t0 + window)
    return 10.0 * math.log10(direct / late)


def sabine(v, s, a):
    return 0.161 * v / (s * a)


def eyring(v, s, a):
    return 0.161 * v / (-s * math.log(1.0 - a))


def main():
    out = {}
    # image sources: spec geometry
    src, rcv = (1.0, 1.0, 1.0), (3.0, 2.0, 1.5)
    out["direct_delay_s"] = math.sqrt(5.25) / C
    out["floor_image_delay_s"] = math.sqrt(11.25) / C
    out["image_count_by_order"] = {str(k): image_count(k) for k in range(6)}
    first = [x for x in image_sources(BOX, src, rcv, (0.2,) * 6, 1) if x[2] == 1]
    out["first_order_delays_s"] = [t for t, _, _ in first]
    out["first_order_energies"] = [e for _, e, _ in first]

    # validation shoebox used by the tracer checks
    vs, vl = (1.0, 1.0, 1.2), (2.7, 2.1, 1.5)
    first = [x for x in image_sources(BOX, vs, vl, (0.2,) * 6, 1) if x[2] == 1]
    out["validation_first_order_delays_s"] = [t for t, _, _ in first]
    out["validation_first_order_energies"] = [e for _, e, _ in first]
    out["validation_direct_energy"] = 1.0 / (4.0 * math.pi * math.dist(vs, vl) ** 2)
    imgs = image_sources(BOX, vs, vl, (0.2,) * 6, 40, max_delay=1.0)
    out["validation_drr_db"] = drr_from_images(imgs)

    # reverberation formulas (10 x 8 x 3 m room)
    v, s = 240.0, 268.0
    out["sabine_10x8x3_a02"] = sabine(v, s, 0.2)
    out["sabine_10x8x3_a04"] = sabine(v, s, 0.4)
    out["eyring_10x8x3_a02"] = eyring(v, s, 0.2)
    out["eyring_over_sabine_a002"] = eyring(v, s, 0.02) / sabine(v, s, 0.02)

    # decay laws
    out["rt60_per_tau"] = 60.0 / (20.0 * math.log10(math.e))
    out["edc_slope_db_per_tau"] = -20.0 * math.log10(math.e)

    # head model and arrays
    out["woodworth_itd_90_samples"] = 0.0875 * (math.pi / 2 + 1.0) / C * FS
    out["endfire_delay_0p2m_samples"] = 0.2 / C * FS

    # diffraction: knife-edge loss at grazing incidence (v = 0)
    out["knife_edge_loss_v0_db"] = 6.9 + 20.0 * math.log10(math.sqrt(0.01 + 1.0) - 0.1)

    # ISO 9613-1 Table 1, 20 degC, 70 % RH, 101.325 kPa, 4 kHz (transcribed)
    out["iso9613_20c_70rh_4k_db_per_m"] = 22.9e-3

    path = Path(__file__).with_name("frozen.json")
    path.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")
    print(path)


if __name__ == "__main__":
    main()

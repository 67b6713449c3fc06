#!/usr/bin/env python3
"""Communication cost model at a large-model reference scale.

A 1456 MB full-model upload against a head-only mask covering 0.21% of the
coordinates: traffic drops by ~99.8% and the upload delay by ~470x on the
same link.
"""

import numpy as np

from dpfedsim.comm import MB, CommModel, delay_seconds, traffic_per_round
from dpfedsim.masking import PartitionMask


def fraction_mask(d_t, d):
    flags = np.zeros(d, dtype=bool)
    flags[:d_t] = True
    return PartitionMask(("head",), flags)


link = CommModel(bandwidth_mbps=1456.0 / 174.72, full_model_bytes=1456.0 * MB)
print(f"link bandwidth: {link.bandwidth_mbps:.4f} MB/s, full model {link.full_model_bytes / MB:.0f} MB\n")

print(f"{'d_t/d':>8}  {'traffic (MB)':>12}  {'delay (s)':>10}  {'speedup':>8}")
full = fraction_mask(10000, 10000)
full_bytes = traffic_per_round(full, link)
full_delay = delay_seconds(full_bytes, link)
for d_t in (10000, 1000, 100, 21):
    mask = fraction_mask(d_t, 10000)
    nbytes = traffic_per_round(mask, link)
    delay = delay_seconds(nbytes, link)
    print(
        f"{mask.trainable_fraction:8.4f}  {nbytes / MB:12.4f}  {delay:10.4f}  "
        f"{full_delay / delay:8.1f}x"
    )

mask = fraction_mask(21, 10000)
print(
    f"\nat d_t/d = {mask.trainable_fraction}: "
    f"{traffic_per_round(mask, link) / MB:.4f} MB per client per round, "
    f"{delay_seconds(traffic_per_round(mask, link), link):.3f} s upload delay"
)

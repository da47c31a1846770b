"""What the attention generators produce.

A softmax map sums to one over the image; a mean-field (CRF) map is a
per-pixel sigmoid that is smoothed by repeatedly convolving the previous
estimate. The script prints both for a summary map with two bright blobs.

    python demos/03_attention_maps.py
"""

import numpy as np

from mcapose import Tensor
from mcapose.attention import CRFSettings, crf_attention, softmax_attention

size = 8
s = np.zeros((1, 1, size, size))
s[0, 0, 2, 2] = 4.0
s[0, 0, 5, 6] = 3.0
s = Tensor(s)

soft = softmax_attention(s).values.data[0, 0]
print("softmax (sums to %.6f):" % soft.sum())
print(np.array2string(soft, precision=3, suppress_small=True))

kernel = Tensor(np.full((1, 1, 3, 3), 1.0 / 9.0))
for steps in (1, 3):
    for unary in (False, True):
        m = crf_attention(s, kernel, None, CRFSettings(steps=steps, include_unary=unary)).values.data[0, 0]
        print(f"\nCRF, {steps} step(s), unary re-added: {unary}  range [{m.min():.3f}, {m.max():.3f}]")
        print(np.array2string(m, precision=2))

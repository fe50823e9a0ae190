import os

# single-core BLAS before numpy first loads: keeps the timing-sensitive
# acceptance criteria honest and small-matrix math fast
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import numpy as np
import pytest

from textgraphnet import tensorcore as tc


@pytest.fixture(autouse=True)
def _float64_default():
    # verification dtype; individual tests may switch and must not leak
    old = tc.set_default_dtype(np.float64)
    yield
    tc.set_default_dtype(old)

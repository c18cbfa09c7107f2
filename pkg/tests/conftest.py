import os
import sys

# Pin BLAS thread pools before numpy loads anywhere: bit-reproducibility of
# the equivalence tests must not depend on runtime thread-count heuristics.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

sys.path.insert(0, os.path.dirname(__file__))

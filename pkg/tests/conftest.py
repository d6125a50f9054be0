import os

# Pin BLAS threading before numpy loads anywhere, so metric logs and
# checkpoint bytes are reproducible across the whole suite.
os.environ.setdefault("OMP_NUM_THREADS", "2")
os.environ.setdefault("OPENBLAS_NUM_THREADS", "2")

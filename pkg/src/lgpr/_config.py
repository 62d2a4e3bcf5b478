import os

_threads = os.environ.get("LGPR_THREADS")
if _threads:
    # must be in place before XLA starts its thread pools
    n = max(int(_threads), 1)
    os.environ.setdefault("OMP_NUM_THREADS", str(n))
    os.environ["XLA_FLAGS"] = (os.environ.get("XLA_FLAGS", "")
                               + f" --xla_cpu_multi_thread_eigen={'true' if n > 1 else 'false'}"
                               + f" intra_op_parallelism_threads={n}").strip()

import jax

# every numerical path in the package assumes double precision
jax.config.update("jax_enable_x64", True)

JITTER = 1e-9
MAX_JITTER = 1e-4
LOG_BOUNDS = (-12.0, 12.0)

"""Counter-keyed random streams.

Every random stream in the package is a Philox generator keyed by a 64-bit
master seed plus a path of integer counters (stream tag, round, chunk, ...).
Two tasks with different paths get statistically independent streams, and a
task's stream does not depend on which worker runs it or in what order.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

_MASK64 = (1 << 64) - 1

# Stream tags. Values are arbitrary but frozen: changing one changes outputs.
PRIOR = 1
REJECT = 2
PILOT = 3
MCMC_PROPOSAL = 4
MCMC_SIMULATION = 5
SMC = 6
BSL_PROPOSAL = 7
BSL_SIMULATION = 8
PM_PROPOSAL = 9
PM_ESTIMATOR = 10
PREDICTIVE = 11
ELBO = 12
SVI = 13
INIT = 14


def make_rng(seed, *path):
    """Return a Philox generator keyed by ``(seed, *path)``.

    A ``numpy.random.Generator`` passed with an empty path is returned
    unchanged so that callers can thread an existing stream through.
    """
    if isinstance(seed, np.random.Generator):
        if path:
            raise TypeError("cannot derive a keyed stream from a Generator")
        return seed
    if seed is None:
        raise ValueError("an explicit integer seed is required")
    key = [int(seed) & _MASK64] + [int(c) & _MASK64 for c in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))


def fan_out(fn, n_tasks, n_workers=1):
    """Evaluate ``fn(i)`` for ``i in range(n_tasks)``, results in index order.

    With ``n_workers > 1`` the tasks run on a thread pool; since each task
    derives its own stream from its index the results are identical.
    """
    if n_workers is None or n_workers <= 1 or n_tasks <= 1:
        return [fn(i) for i in range(n_tasks)]
    with ThreadPoolExecutor(max_workers=n_workers) as pool:
        return list(pool.map(fn, range(n_tasks)))

"""Energy-efficiency maximization for a shared-UE-side distributed-antenna
OFDMA system.

Library layout:

- numerics: small dense complex linear algebra (SVD, Cholesky, diagonality)
- channel: random channel realizations and effective per-stream CNRs
- model: system configuration, allocation policies, rates, power, feasibility
- precoder: SVD-matched precoder construction and MMSE receive processing
- solver: fractional-programming outer loop + alternating inner allocation
- baselines: single-hop reference systems and the noise-free upper bound
- oracle: brute-force reference optimizers for validation
- harness: Monte Carlo experiment runner and command line interface
"""

from . import numerics
from . import channel
from . import model
from . import precoder
from . import solver
from . import baselines
from . import oracle
from . import harness

__all__ = [
    "numerics",
    "channel",
    "model",
    "precoder",
    "solver",
    "baselines",
    "oracle",
    "harness",
]

__version__ = "0.1.0"

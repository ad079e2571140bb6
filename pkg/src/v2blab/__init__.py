"""Vehicle-to-building charging laboratory.

Simulates a building with bidirectional and unidirectional EV chargers under
time-of-use energy prices and a demand charge, and compares rule-based
charging policies, a linear-programming oracle and a masked DDPG policy.
"""

from .core import (
    BillBreakdown,
    ChargerSpec,
    ConfigError,
    Episode,
    EvSession,
    FeasibilityError,
    InvalidInputError,
    Tariff,
    V2BError,
    check_feasibility,
    compute_bill,
    default_chargers,
    energy_rate,
    soc_step,
)

__version__ = "0.1.0"

"""Symbolic regression with control variables.

Discovers closed-form multi-variable equations by reducing the search to a
sequence of single-variable problems: a learned data generator answers queries
at chosen inputs, all but one variable are held fixed per round, and the
per-round fitted coefficients become the targets of the next round.
"""

__version__ = "0.1.0"

from .expr import (  # noqa: F401
    Binary,
    Const,
    DomainError,
    Expr,
    InsufficientDomain,
    Param,
    ParseError,
    Skeleton,
    Unary,
    Var,
    complexity,
    equivalent,
    evaluate,
    evaluate_batch,
    instantiate,
    parse,
    simplify,
    skeletonize,
    to_string,
)
from .data import (  # noqa: F401
    Dataset,
    OdeSystem,
    get_benchmark,
    integrate_ode,
    load_csv,
    make_derivative_dataset,
    save_csv,
    split,
    synthesize,
    toggle_switch,
)
from .exprspace import count_tables, sample_expression, search_space  # noqa: F401
from .neuralgen import TrainConfig, load_generator, save_generator, train  # noqa: F401
from .svsr import SearchConfig, discover_single  # noqa: F401
from .driver import (  # noqa: F401
    DiscoveryResult,
    DriverConfig,
    msre,
    recovery_check,
    run,
)

import enum


STORE_FORMAT_VERSION = 1

CURVATURE_EPS = 1e-10
FULL_HESSIAN_BUDGET = 4096
DEFAULT_DFP_MEMORY = 3
MAX_DFP_MEMORY = 10
DEFAULT_COLD_PERIOD = 16
DEFAULT_FORGETTING_GRID = (0.8, 0.9, 0.95, 1.0)

FIXED_COMPONENT = "fixed"
OBJECTIVE_WINDOW = 3


class HessianMode(enum.Enum):
    """Enum for the representations of the prior precision"""

    FULL = "full"
    DIAG = "diag"
    DFP = "dfp"
    ADAM = "adam"


class TrainModeKind(enum.Enum):
    """Enum for the ways a component can be trained in one round"""

    COLD = "cold"
    WARM = "warm"
    INCREMENTAL = "incremental"


class RoundBranch(enum.Enum):
    """Enum for the branch taken by one scheduler round"""

    COLD = "cold"
    INCREMENTAL = "incre"


class Strategy(enum.Enum):
    """Enum for the strategies compared by the benchmark harness"""

    COLD = "cold"
    WARM = "warm"
    INCRE_DIAG = "incre_diag"
    INCRE_FULL = "incre_full"
    INCRE_DFP = "incre_dfp"
    INCRE_ADAM = "incre_adam"

    @property
    def hessian_mode(self) -> HessianMode | None:
        """Precision representation used by an incremental strategy, None otherwise"""
        return {
            Strategy.INCRE_DIAG: HessianMode.DIAG,
            Strategy.INCRE_FULL: HessianMode.FULL,
            Strategy.INCRE_DFP: HessianMode.DFP,
            Strategy.INCRE_ADAM: HessianMode.ADAM,
        }.get(self)


class ReportFormat(enum.Enum):
    """Enum for the report outputs of the CLI"""

    CSV = "csv"
    MD = "md"
    BOTH = "both"


class ExitCode(enum.IntEnum):
    """Enum for the process exit codes of the CLI"""

    SUCCESS = 0
    FAILURE = 1
    VALIDATION_ERROR = 2
    NUMERICAL_ERROR = 3
    STORE_VERSION_ERROR = 4


class StopReason(enum.Enum):
    """Enum for the reasons a minimizer stopped"""

    GRADIENT = "gradient"
    OBJECTIVE = "objective"
    MAX_ITERATIONS = "max_iterations"
    LINE_SEARCH = "line_search"
    EPOCHS = "epochs"

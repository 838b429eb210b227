"""Stochastic variance-reduced optimization on the Grassmann manifold."""

from .errors import (
    ConfigurationError,
    ContractViolation,
    ConvergenceError,
    DomainError,
    NumericError,
    ParseError,
    RiemannSvrgError,
)
from .manifold import (
    Geometry,
    GrassmannPoint,
    TangentVector,
    same_point,
    subspace_distance,
)
from .grassmann import (
    ExactGeometry,
    GeometryKind,
    QrGeometry,
    dist,
    exp,
    karcher_mean,
    log,
    make_geometry,
    parallel_translate,
    project_transport,
    qr_retract,
    random_point,
    random_tangent,
)

from .problems import (
    CompletionProblem,
    KarcherProblem,
    Objective,
    PcaProblem,
    pca_oracle,
)
from .optimizers import (
    RunRecord,
    RunResult,
    ScheduleKind,
    ScheduleSpec,
    SnapshotOption,
    Substreams,
    SvrgConfig,
    run_rsd,
    run_rsgd,
    run_rsvrg,
    snapshot,
    substreams,
    svrg_modified_grad,
    variance_probe,
)
from .datasets import (
    SyntheticCompletionSpec,
    detect_format,
    gen_completion,
    gen_karcher,
    gen_pca,
    load_jester,
    load_movielens,
)
from .experiment import (
    AlgoKind,
    DataSource,
    ExperimentConfig,
    ProblemKind,
    build_problem,
    run_experiment,
    sweep,
    write_metrics_csv,
)

__version__ = "0.1.0"

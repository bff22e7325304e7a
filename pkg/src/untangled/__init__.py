"""Forward-untangled flows for discontinuous velocity fields.

The package builds convex velocity envelopes for rough fields, approximates
the solution funnel of the resulting differential inclusion, selects a flow
by iterated functional maximization (deterministic, semigroup-consistent,
forward untangled), pushes densities forward along it, and solves the
induced transport equation both by explicit characteristic ODEs and by an
optimally stable Petrov-Galerkin method with residual-based error control.
"""

from .errors import (
    AssemblyError,
    ConfigError,
    DataError,
    DomainError,
    InfeasibleError,
    NumericalError,
    SamplingWarning,
    SolverError,
    UntangledError,
)
from .field import (
    FieldDiagnostics,
    ScalarField,
    SpatialDomain,
    TimeGrid,
    VelocityField,
    check_growth,
    estimate_osl_modulus,
    eval_velocity,
    grid_sampled_field,
    make_field,
    make_scalar,
    tangent_cone_admissible,
)
from .filippov import (
    DirectionSet,
    EnvelopeParams,
    FilippovEnvelope,
    direction_set,
    essential_support,
    extreme_velocity,
    filippov_envelope,
    membership,
    project_to_envelope,
    set_distance,
    support_function,
)
from .funnel import (
    Funnel,
    FunnelParams,
    Trajectory,
    gronwall_violations,
    inclusion_residual,
    integrate_branching,
    restrict,
    splice,
)
from .select import (
    FlowMap,
    FunctionalSchedule,
    TentFunction,
    build_flow,
    check_semigroup,
    check_untangled,
    classical_flow,
    functional_value,
    iterated_argmax,
)
from .density import (
    DensitySnapshot,
    ParticleEnsemble,
    SpaceTimeBump,
    continuity_residual,
    near_incompressibility,
    push_forward,
    uniform_ensemble,
)
from .transport import (
    CharacteristicSolution,
    PulledBackProblem,
    assemble_flow_solution,
    pull_back_data,
    shift_zeroth_order,
    solve_characteristic_ode,
    undo_shift,
)
from .galerkin import (
    GalerkinSystem,
    TestSpace,
    apply_adjoint,
    assemble_system,
    discrete_inf_sup,
    make_test_space,
    residual_norm,
    trial_to_test,
)

__version__ = "0.1.0"

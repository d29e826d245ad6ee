"""Model-based forests for heterogeneous treatment effect estimation."""

from .data import (
    BINARY,
    CONTINUOUS,
    GAO,
    GAO_W,
    INTERVAL,
    NAIVE,
    ORDINAL,
    ROBINSON,
    ROBINSON_W,
    SURVIVAL,
    VARIANTS,
    Binary,
    CenteredDesign,
    Continuous,
    Dataset,
    Interval,
    Ordinal,
    Sample,
    Survival,
    load_csv,
    split_train_test,
    write_csv,
)
from .errors import (
    FitError,
    SchemaError,
    SingularFitError,
    UnsupportedVariantError,
    ValidationError,
)
from .families import (
    BinomialLogit,
    CoxPartial,
    LinearGaussian,
    ModelParams,
    ProportionalOdds,
    WeibullPH,
    dina,
    family_for,
    fit_node,
    neg_log_lik,
    score,
)

__version__ = "0.1.0"

"""Nonparametric double-shift instrumental-variable effects."""
from .dataset import ColumnMap, Dataset, FoldAssignment, Observation, kfold_split, load_csv, validate, write_csv
from .estimator import (EstimateRecord, InfluenceMatrix, ShiftSpec, cross_fit_run, effective_shifts,
                        estimate_if, estimate_ipw, estimate_plugin, estimate_tsls, xi, xi_contrast)
from .inference import homogeneity_test, multiplier_bootstrap, pointwise_ci
from .nuisance import (DensityConfig, LearnerConfig, NuisanceConfig, NuisanceModel, density_ratio,
                       fit_density, fit_nuisance, fit_regression)

__version__ = "0.1.0"

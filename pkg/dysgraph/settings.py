"""This module contains all default settings."""

DEFAULT_SETTINGS = """
workdir: '.'
db: '{workdir}/dysgraph.db'
raw_path: '{workdir}/raw'
output_path: '{workdir}/output'
log_dir: '{output_path}/logs'
loglevel: info
n_jobs: 1
seed: 42

features:
  bins: 32
  pen_stop_threshold: 0.1
  pen_stop_min_duration: 0.03
  include_boundary_air: false
  units_per_mm: null
  smoothing_window: null
  tick_rate: 1000.0
  sampling_rate: 200.0

stats:
  alpha: 0.05
  fdr_family: separate
  confound: sex
  top_k: 5
  group_by: null
  targets:
    - diagnosis
    - hpsqc_legibility
    - hpsqc_performance_time
    - hpsqc_well_being
    - hpsqc_total

model:
  objective: null
  n_iter: 500
  folds: 10
  repeats: 10
  n_rounds: 100
  early_stopping_rounds: null
  validation_fraction: 0.2
  confound_within_folds: false
  group_by: null
  grid: {}

explain:
  top_k: 10

synth:
  n_intact: 60
  n_dd: 60
  seed: 0
  in_air_duration_factor: 1.6
  interruption_rate_factor: 1.4
  stroke_height_factor: 1.5
  angular_velocity_ncv_factor: 1.3
  in_air_tempo_factor: 0.7
  strokes_per_session: 30
  sampling_rate: 200.0
  tick_rate: 1000.0
  position_noise: 0.5
  duration_noise: 0.3
  severity_spread: 0.2
  score_noise: 2.5
  p_boy_intact: 0.5
  p_boy_dd: 0.7
  sex_effect: 1.0
"""
"""
Built-in settings, used when no settings file is found. A user settings file
is merged on top of these values.
"""

PATH_KEYS = ("workdir", "db", "raw_path", "output_path", "log_dir")
"""Top-level keys where ``~`` is expanded."""

HPSQC_RANGES = {
    "legibility": 12,
    "performance_time": 12,
    "well_being": 16,
    "total": 40,
}
"""Theoretical maximum of each HPSQ-C score (the minimum is 0)."""

HPSQC_COLUMNS = {f"hpsqc_{name}": name for name in HPSQC_RANGES}

META_COLUMNS = (
    "subject_id",
    "sex",
    "class_year",
    "diagnosis",
    "hpsqc_legibility",
    "hpsqc_performance_time",
    "hpsqc_well_being",
    "hpsqc_total",
)
"""Per-session metadata columns of a feature matrix, in order."""

DIAGNOSIS_CODES = {"intact": 0, "dysgraphic": 1}

PARAM_GRID = {
    "learning_rate": (0.001, 0.01, 0.1, 0.2, 0.3),
    "gamma": (0, 0.05, 0.10, 0.15, 0.20, 0.25, 0.5),
    "max_depth": (6, 8, 10, 12, 15),
    "subsample": (0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    "colsample_bylevel": (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    "colsample_bytree": (0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    "min_child_weight": (0.5, 1.0, 3.0, 5.0, 7.0, 10.0),
    "scale_pos_weight": (1, 2, 3, 4),
}
"""Hyperparameter values explored by the randomized search. The dict order
is the order in which fields are drawn."""

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_PARSE_ERROR = 3
EXIT_VALIDATION_ERROR = 4
EXIT_MODEL_ERROR = 5
EXIT_PARTIAL = 6

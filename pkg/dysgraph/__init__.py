def _setup_logging():
    from mpdaf.log import clear_loggers, setup_logging

    setup_logging(name="", level="INFO", color=True, fmt="%(levelname)s %(message)s")
    clear_loggers("mpdaf")


_setup_logging()

from .boost import GbtConfig, GbtModel, random_search, train  # noqa
from .dysgraph import DysGraph  # noqa
from .explain import global_importance, shap_values, tree_shap  # noqa
from .features import FeatureExtractor, extract_all, feature_catalog  # noqa
from .flags import DIAGNOSTICS, Diagnostic  # noqa
from .matrix import FeatureMatrix  # noqa
from .recipes import *  # noqa
from .signals import Session, parse_svc, read_session, validate  # noqa
from .stats import exploratory_analysis, fdr_bh, mann_whitney_u, spearman  # noqa
from .synth import CohortSpec, generate_cohort, write_cohort  # noqa
from .version import version as __version__  # noqa

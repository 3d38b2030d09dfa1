"""Rule extraction with metafeatures for classifiers on sparse behavioral and textual data."""

__version__ = "0.1.0"

from .errors import ConfigError, DegenerateWarning, DomainError, NumericalError, ParseError
from .sparse import (Dataset, as_csr, bootstrap_sample, load_libsvm, make_folds,
                     row_active_counts, split_train_val_test, tfidf_transform, write_libsvm)
from .blackbox import (calibrate_threshold, classification_metrics, predict_labels,
                       predict_proba, train_logreg, tune_C)
from .metafeatures import (binarize_R, build_ddmf, build_domain_mf, fit_nmf, fit_svd,
                           match_metafeatures, project_and_normalize, top_features)
from .tree import (best_split, extract_rules, feature_set, fit_cart, gini,
                   impurity_reduction_ranking, predict, truncate)
from .evaluation import (accuracy, explanation_jaccard_ddmf, f_fidel, fidelity, jaccard,
                         stability, wilcoxon_signed_rank)
from .harness import ExperimentConfig, compare_representations, emit_report, run_experiment

"""Active mean-field segmentation.

Binary label probabilities are computed by TV-denoising the logit likelihood
field; the package also samples the exact boundary-length posterior for
comparison, generates synthetic scenes and evaluates segmentations.
"""

from .field import (TvMode, boundary_length, curvature, divergence, gradient,
                    total_variation)
from .likelihood import (ClampRange, GaussianClassModel, KdeModel, MixtureModel, kde_fit,
                         logit, psi_from_probability, psi_gaussian, psi_kde, psi_mixture,
                         sigmoid)
from .meanfield import (AlternatingConfig, AmfParams, ConvergenceWarning, Estimator,
                        alternating_fit, amf_energy, amf_solve, chan_vese_segment,
                        ising_vmf_fixed_point, level_set_labels, map_labels, otsu_init)
from .posterior import (GibbsConfig, SampleSet, compare_correlation, gelman_rubin,
                        gibbs_sample, log_posterior_unnorm, log_q, log_ratio_gap,
                        map_agreement, q_area_moments, sample_area_moments)
from .rof import RofParams, RofResult, rof_energy, rof_solve, rof_solve_reference
from .synth import (MaternConfig, add_gaussian_noise, make_ground_truth, matern_covariance,
                    sample_gp_field, synth_ambiguous_circle)
from .evaluation import (dice, multi_label_dice, one_vs_rest, q_area, quasi_multilabel,
                         simplex_project)

__version__ = "0.1.0"

"""Cyclic causal discovery from interventional, noise-corrupted measurements.

The pipeline: estimate measurement-noise variances from interventional
regimes, model the latent mechanism with a masked contractive network,
approximate latent posteriors by sampling importance resampling, and learn
the edge structure by penalized EM on the measurement likelihood.
"""

from .errors import (ConvergenceError, DegeneratePosteriorError, EStepError,
                     IdentifiabilityError, ParameterError, RankError,
                     SamplingFailureError, UndefinedMetricError)
from .graphs import (DirectedGraph, auprc, erdos_renyi, graph_from_json,
                     graph_to_json, shd, threshold_edges)
from .scm import (GroundTruthScm, InterventionFamily, InterventionRegime,
                  linear_latent_logpdf_oracle, mechanism,
                  rescale_to_contractive, sample_benchmark_scm, sample_latents,
                  single_node_family, solve_fixed_point)
from .measurement import (GaussianAdditiveChannel, LinearChannel,
                          channel_from_json, channel_logpdf, channel_to_json,
                          measure, proposal_covariance, proposal_mean)
from .noise import (ProjectionSet, check_channel_identifiability,
                    estimate_channel_noise, estimate_gan_variances,
                    estimate_linear_variances, nnls_projected_gradient,
                    null_space_basis, sample_projection_vectors)
from .model import (LogDetConfig, MaskSample, ModelParams, edge_scores,
                    init_params, jacobian, latent_logpdf, latent_logpdf_batch,
                    latent_logpdf_grads, lipschitz_estimate, log_det_exact,
                    log_det_series, log_det_unbiased, masked_forward,
                    params_from_json, params_to_json, sample_mask,
                    solve_model_fixed_point, spectral_normalize)
from .posterior import (WeightedParticles, effective_sample_size, sir_sample,
                        sir_sample_batch)
from .em import (EmConfig, FitReport, e_step, elbo_estimate, fit, m_step,
                 surrogate_q)

__version__ = "0.1.0"

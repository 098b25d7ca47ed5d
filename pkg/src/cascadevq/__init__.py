"""Multi-scale residual vector quantization of sequences, a coarse-to-fine
categorical prior, token-level Bayes guidance, and gradient-based test-time
refinement — all on a self-contained float64 reverse-mode autodiff core."""

from .autodiff import Var, gradients
from .containers import (load_corpus, load_prior, load_refiner, load_vqvae,
                         save_corpus, save_prior, save_refiner, save_vqvae)
from .corpus import Corpus, TrajectorySpec, default_specs, denormalize, \
    generate_corpus, normalize
from .errors import (CascadeError, ConfigError, ContractError, NumericsError,
                     ShapeError)
from .generate import GenerationResult, generate
from .goals import (CompositeGoal, ControlMask, GoalTerm, JointGoal,
                    ObstacleGoal, RegionGoal, SdfGoal, SdfGrid,
                    goal_from_spec, load_sdf_grid, save_sdf_grid)
from .guidance import (BoundReport, GuidedDistribution, exact_posterior,
                       first_order_posterior, guided_scale_step,
                       kl_categorical, norm_comparison_instance, verify_bound)
from .metrics import (ControlReport, band_energies, eval_control,
                      high_freq_fraction, scale_spectra, write_spectra_csv)
from .prior import (NULL_LABEL, Prior, PriorConfig, SamplerConfig,
                    sample_hierarchy, train_prior)
from .quantize import (Codebook, ScaleSchedule, TokenHierarchy, UpsampleConvs,
                       adapt_schedule, decode_multiscale, encode_multiscale,
                       nearest_code)
from .refiner import (RefinementConfig, RefinementResult, Refiner,
                      RefinerTrainConfig, test_time_refine, train_refiner)
from .tokenizer import Vqvae, VqvaeConfig, train_vqvae

__version__ = "0.1.0"

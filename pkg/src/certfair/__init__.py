"""Feed-forward classifiers whose individual fairness survives every training step.

A structurally certified initialisation is verified once; training then
updates parameters through randomized responses over the sensitive
attribute so that the certificate, and with it fairness, is preserved.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (Dataset, DatasetSchema, SchemaError, bundled_schemas, extract_domain,
                   load_csv, load_dataset, load_schema, parse_schema, preprocess, schema_domain,
                   split)
from .evaluation import (EvalReport, accuracy, emit_report, empirical_fairness, evaluate,
                         timing_ratio)
from .initialize import (InitConfig, InitializationError, bernoulli_init, init_until_verified,
                         zero_init)
from .network import (GradientSet, NetworkSpec, Parameters, backward, forward, logits, loss,
                      predict, subnetwork_output)
from .response import (RRConfig, SensitiveDomain, SensitiveFrontier, build_frontier,
                       keep_probability, response_prob, sample, solve_gamma)
from .train import (CertificateError, ChebyshevReport, EpochStats, InfeasibleGammaError,
                    TrainConfig, chebyshev_report, preserve_step, train_erm, train_fair,
                    train_side_by_side)
from .verify import (InputDomain, Verdict, grid_falsify, structural_certificate, verify)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"

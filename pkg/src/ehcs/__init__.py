"""Mean-square stability certification for control loops closed through an
energy harvesting sensor."""

__version__ = "0.1.0"

from .model import (ChannelModel, DisturbanceModel, EhcsSpec, EhcsValidationError, PlantModel,
                    ValidatedEhcs, validate_ehcs)
from .harvest import (HarvestSource, SolarSourceSpec, build_deterministic_periodic,
                      build_ergodic, build_periodic_stochastic)
from .policy import (DwellProbTable, TransmissionPolicy, build_dwell_policy, dwell_probabilities,
                     greedy_policy, validate_policy)
from .embedding import (ModeChain, build_mode_chain, enumerate_mode_states,
                        second_moment_operator)
from .stability import (LyapunovCertificate, StabilityReport, certify, decay_constants,
                        lyapunov_certificate, spectral_radius_test)
from .sim import draw_sample_path, monte_carlo, simulate
from .design import critical_battery_capacity, scalar_stabilizability, search_dwell_policies

"""Beamforming for holographic surfaces with few RF chains.

The package covers the whole workflow: channel simulation over a planar
holographic surface, a permutation-equivariant graph network that emits
holographic amplitudes and an equivalent beamformer, projection modules
that map the network output onto realizable hardware, an
alternating-optimization baseline with first-order optimality diagnostics,
and executable checks of the permutation properties.
"""

from .surface import (SurfaceConfig, PhasePattern, PathSet, ChannelSample,
                      canonical_surface, edge_feed_positions, element_positions,
                      build_phase_pattern, steering_vector, sample_paths,
                      assemble_channel, sum_rate, sum_rate_equiv, noise_variance)
from .precoding import (BeamformerSet, project_to_range, normalize_power,
                        effective_channel)
from .gnn import (GnnParams, LayerParams, HiddenState, init_params,
                  encode_inputs, edge_layer, vertex_layer, run_layers, readout,
                  raw_forward, full_forward)
from .training import (TrainConfig, OptimizerState, loss, grad_params,
                       loss_and_grads, adam_step, init_optimizer, train)
from .ao import (AoOptions, AoResult, KktReport, grad_sum_rate_Ve,
                 grad_sum_rate_a, ao_solve, kkt_residuals, zero_forcing_rate)
from .equivariance import (PermTriple, permute_inputs,
                           check_pipeline_equivariance,
                           check_network_equivariance,
                           check_projection_equivariance)
from .dataio import (Dataset, write_dataset, read_dataset, write_checkpoint,
                     read_checkpoint, DataFormatError, ChecksumError)

__version__ = "0.1.0"

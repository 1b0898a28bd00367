"""Digital waveguide physical modeling: delay lines, scattering junctions,
string and tube models, a 2D mesh, a scattering delay network reverberator,
parameter calibration and a batch rendering CLI."""

__version__ = "0.1.0"

from .core import DelayLine, FractionalDelay, LoopFilter, lagrange_coefficients, filter_phase_delay
from .scattering import (
    FREE,
    RIGID,
    WaveKind,
    reflection_coefficient,
    scatter,
    scatter_nport_equal,
    scatter_two_port,
)
from .strings import BowedString, BowParams, Excitation, FdlParams, TravelingWaveLine, fdl_render
from .tubes import clarinet_build, clarinet_render, kl_build, kl_tick, reed_table_build
from .mesh import mesh_build, mesh_excite, mesh_read, mesh_step
from .sdn import sdn_build, sdn_render_ir, sdn_rt60
from .calibration import GaConfig, ModalComponent, estimate_f0, ga_optimize, loss_filter_fit, modal_fit

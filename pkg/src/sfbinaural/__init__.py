"""Binaural rendering of sampled sound fields (ambisonic and direct routes)."""
from ._version import __version__
from ._kernels import BACKEND
from .grids import (GridFamily, SamplingGrid, aliasing_frequency, default_max_order, make_cubical_surface,
                    make_cubical_volume, make_grid, make_spherical_surface, read_grid, write_grid)
from .fields import NodeSignals, PlaneWaveSpec, plane_wave_bins, plane_wave_ir
from .sht import (DEFAULT_REG, DecompositionMatrix, RegProfile, ShSignal, analyze, decomposition_matrix,
                  mode_response, real_sh, sh_basis)
from .hrtf import HrtfSet, HrtfSh, fit_ls, fit_magls, load_hrtf, save_hrtf, sphere_hrtf
from .renderers import (EqFilter, RendererMatrix, design_ambisonic, design_direct, design_eq_filter,
                        read_renderer, renderer_to_fir, rotate_sh, write_renderer)
from .engine import ConvolverState, convolver_new, render_offline
from .groundtruth import SdmResponse, brir_from_sdm, field_from_sdm, synth_shoebox

__all__ = [name for name in dir() if not name.startswith("_")]

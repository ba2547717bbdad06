"""Independent post-processing used by the PDE tests."""

import numpy as np

from fepstefan.measures import ProfileSpec
from fepstefan.stefan import DensityField, SolverParams, solve_weak


def first_mode_amplitude(values: np.ndarray) -> float:
    return 2.0 * abs(np.fft.rfft(values)[1]) / values.size


def fitted_decay_rate(mean: float, amplitude: float, m: int, times) -> float:
    """Least-squares slope of -log(first Fourier amplitude) in time."""
    field = DensityField.from_profile(ProfileSpec.sine(mean, amplitude), m)
    fields = solve_weak(field, SolverParams(m=m, end_time=times[-1]), times)
    amps = np.array([first_mode_amplitude(f.values) for f in fields])
    slope, _ = np.polyfit(np.asarray(times), np.log(amps), 1)
    return -slope


def refine_to_double(values: np.ndarray) -> np.ndarray:
    """Linear interpolation from nodes i/M onto nodes j/(2M), periodically."""
    out = np.empty(2 * values.size)
    out[0::2] = values
    out[1::2] = 0.5 * (values + np.roll(values, -1))
    return out


def refinement_ratio(profile, sizes, end_time: float) -> tuple[float, list[float]]:
    """Ratio of successive L1 differences between M and 2M solutions."""
    finals = {m: solve_weak(DensityField.from_profile(profile, m), SolverParams(m=m, end_time=end_time))[-1].values
              for m in sizes}
    diffs = [float(np.mean(np.abs(refine_to_double(finals[a]) - finals[b]))) for a, b in zip(sizes, sizes[1:])]
    return diffs[-1] / diffs[0], diffs

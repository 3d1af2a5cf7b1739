#pragma once

#include "pbn/training.hpp"

namespace pbn {

/// Band-limited smooth complex phantom: seeded Gaussian spectrum under a
/// low-pass envelope, normalized to unit peak magnitude.
Tensor make_phantom(const Shape& shape, std::uint64_t seed, double cutoff_fraction = 0.25);

/// Smooth coil sensitivity maps with unit sum-of-squares at every pixel.
std::vector<Tensor> make_sensitivity_maps(const Shape& shape, std::size_t coils,
                                          std::uint64_t seed);

/// Cartesian column undersampling pattern with a fully sampled center band;
/// returns flat indices into a {coils, h, w} stack, the same columns per coil.
std::vector<std::size_t> make_undersampling_indices(std::size_t h, std::size_t w,
                                                    std::size_t coils, double acceleration,
                                                    double center_fraction,
                                                    std::uint64_t seed);

/// Learned multiplexed acquisition: each measurement channel sees the image
/// through a learnable nonnegative combination of spectral-band selections,
/// reconstructed by unrolled gradient / smooth-prox iterations.
BuiltApp build_sr_design_app(const ExperimentConfig& cfg);

/// Multi-coil Fourier reconstruction with a learned invertible residual
/// prior shared across the unrolled iterations.
BuiltApp build_mri_prior_app(const ExperimentConfig& cfg);

}  // namespace pbn

#include "pbn/apps.hpp"

#include <algorithm>
#include <cmath>

#include "pbn/errors.hpp"

namespace pbn {

namespace {

constexpr std::uint64_t kPhantomStream = 100;
constexpr std::uint64_t kTestStream = 200;
constexpr std::uint64_t kNoiseStream = 300;
constexpr std::uint64_t kDesignStream = 400;
constexpr std::uint64_t kPriorStream = 500;
constexpr std::uint64_t kMaskStream = 600;
constexpr std::uint64_t kCoilStream = 700;

StoragePolicy policy_for(const ExperimentConfig& cfg, std::size_t layers_per_unroll) {
  switch (cfg.engine) {
    case EngineKind::Standard:
      return StoragePolicy::store_all();
    case EngineKind::MemoryEfficient:
      return StoragePolicy::store_none();
    case EngineKind::Hybrid:
      return StoragePolicy::checkpoint_every(
          std::max<std::size_t>(1, cfg.checkpoint_every * layers_per_unroll));
  }
  return StoragePolicy::store_all();
}

TrainingExample make_example(const Tensor& x_gt, std::size_t n_terms, const Shape& y_shape,
                             double noise_std, std::uint64_t seed) {
  TrainingExample ex;
  ex.x_gt = x_gt;
  ex.noise.reserve(n_terms);
  for (std::size_t l = 0; l < n_terms; ++l) {
    Rng rng = Rng::derive(seed, kNoiseStream + l);
    Tensor n(y_shape);
    for (auto& v : n.values()) v = noise_std * rng.normal_complex();
    ex.noise.push_back(std::move(n));
  }
  ex.y.assign(n_terms, Tensor(y_shape));
  ex.x0 = Tensor(x_gt.shape());
  return ex;
}

}  // namespace

Tensor make_phantom(const Shape& shape, std::uint64_t seed, double cutoff_fraction) {
  Rng rng(seed);
  Tensor spectrum(shape);
  const auto strides = shape_strides(shape);
  const std::size_t rank = shape.size();
  for (std::size_t i = 0; i < spectrum.numel(); ++i) {
    double r2 = 0.0;
    std::size_t rem = i;
    for (std::size_t d = 0; d < rank; ++d) {
      const std::size_t c = rem / strides[d];
      rem %= strides[d];
      const double n = static_cast<double>(shape[d]);
      // Signed frequency in [-n/2, n/2).
      double f = static_cast<double>(c);
      if (f >= n / 2.0) f -= n;
      const double fn = f / (cutoff_fraction * n / 2.0);
      r2 += fn * fn;
    }
    spectrum[i] = rng.normal_complex() * std::exp(-0.5 * r2);
  }
  const LinOp f = LinOp::dft(shape);
  Tensor img = f.adjoint(spectrum);
  const double peak = max_abs(img);
  if (peak > 0.0) img.scale(1.0 / peak);
  return img;
}

std::vector<Tensor> make_sensitivity_maps(const Shape& shape, std::size_t coils,
                                          std::uint64_t seed) {
  if (shape.size() != 2) raise(ErrorKind::Shape, "sensitivity maps expect a 2-d image");
  Rng rng = Rng::derive(seed, kCoilStream);
  const double h = static_cast<double>(shape[0]);
  const double w = static_cast<double>(shape[1]);
  std::vector<Tensor> maps;
  maps.reserve(coils);
  std::vector<std::pair<double, double>> centers;
  for (std::size_t c = 0; c < coils; ++c) {
    const double ang = 6.2831853071795864769 * static_cast<double>(c) /
                       static_cast<double>(coils);
    centers.emplace_back(0.5 * h + 0.45 * h * std::cos(ang) + 0.05 * h * rng.uniform(),
                         0.5 * w + 0.45 * w * std::sin(ang) + 0.05 * w * rng.uniform());
  }
  const double width2 = 0.7 * h * 0.7 * w;
  for (std::size_t c = 0; c < coils; ++c) {
    Tensor m(shape);
    const double phase_slope = 0.2 * (static_cast<double>(c) + 1.0);
    for (std::size_t i = 0; i < shape[0]; ++i) {
      for (std::size_t j = 0; j < shape[1]; ++j) {
        const double di = static_cast<double>(i) - centers[c].first;
        const double dj = static_cast<double>(j) - centers[c].second;
        const double mag = std::exp(-(di * di + dj * dj) / (2.0 * width2)) + 0.05;
        const double ph = phase_slope * (static_cast<double>(i) + static_cast<double>(j)) /
                          (h + w);
        m[i * shape[1] + j] = std::polar(mag, ph);
      }
    }
    maps.push_back(std::move(m));
  }
  // Normalize to unit sum of squares per pixel so the stacked operator has
  // spectral norm 1 under full sampling.
  const std::size_t n = shape_numel(shape);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (const auto& m : maps) ss += std::norm(m[i]);
    const double inv = 1.0 / std::sqrt(ss);
    for (auto& m : maps) m[i] *= inv;
  }
  return maps;
}

std::vector<std::size_t> make_undersampling_indices(std::size_t h, std::size_t w,
                                                    std::size_t coils, double acceleration,
                                                    double center_fraction,
                                                    std::uint64_t seed) {
  if (acceleration < 1.0) raise(ErrorKind::Config, "acceleration must be >= 1");
  Rng rng = Rng::derive(seed, kMaskStream);
  std::vector<bool> column(w, false);
  const std::size_t center = std::max<std::size_t>(
      1, static_cast<std::size_t>(center_fraction * static_cast<double>(w)));
  // Fully sampled low-frequency band: columns around 0 in unshifted DFT order.
  for (std::size_t j = 0; j < (center + 1) / 2; ++j) column[j] = true;
  for (std::size_t j = 0; j < center / 2; ++j) column[w - 1 - j] = true;
  for (std::size_t j = 0; j < w; ++j) {
    if (!column[j] && rng.uniform() < 1.0 / acceleration) column[j] = true;
  }
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < coils; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      for (std::size_t j = 0; j < w; ++j) {
        if (column[j]) keep.push_back((c * h + i) * w + j);
      }
    }
  }
  if (keep.empty()) raise(ErrorKind::Config, "undersampling mask kept nothing");
  return keep;
}

BuiltApp build_sr_design_app(const ExperimentConfig& cfg) {
  if (cfg.image_size < 8) raise(ErrorKind::Config, "image_size must be at least 8");
  const std::size_t S = cfg.sr.sources;
  const std::size_t L = cfg.sr.channels;
  if (L >= S) raise(ErrorKind::Config, "multiplexed channels must be fewer than sources");
  if (cfg.image_size % S != 0) {
    raise(ErrorKind::Config, "image_size must be divisible by sr.sources");
  }
  const Shape img{cfg.image_size, cfg.image_size};
  const std::size_t n = shape_numel(img);

  // Source s selects spectral band s (rows of k-space) as a 0/1 indicator, so
  // a multiplexed channel is one transform followed by a cheap diagonal.
  std::vector<LinOp> band_diagonals;
  const std::size_t band = cfg.image_size / S;
  for (std::size_t s = 0; s < S; ++s) {
    Tensor ind(img);
    for (std::size_t i = s * band; i < (s + 1) * band; ++i) {
      for (std::size_t j = 0; j < cfg.image_size; ++j) {
        ind[i * cfg.image_size + j] = cdouble(1.0, 0.0);
      }
    }
    band_diagonals.push_back(LinOp::diagonal(std::move(ind)));
  }
  const LinOp fourier = LinOp::dft(img);

  Rng design_rng = Rng::derive(cfg.seed, kDesignStream);
  auto make_channel_op = [&](std::vector<double> coeffs) {
    return LinOp::compose({LinOp::weighted_sum(std::move(coeffs), band_diagonals), fourier});
  };
  std::vector<FidelityTerm> terms;
  terms.reserve(L);
  for (std::size_t l = 0; l < L; ++l) {
    std::vector<double> coeffs(S);
    for (auto& c : coeffs) c = design_rng.uniform(0.2, 1.0);
    FidelityTerm term;
    term.weight = 1.0;
    term.weight_learnable = false;
    term.design_learnable = cfg.learn.design;
    term.op = make_channel_op(std::move(coeffs));
    term.measurement = Tensor(img);
    terms.push_back(std::move(term));
  }

  GradientLayer grad0 = make_gradient_layer(0.0, cfg.learn.alpha, std::move(terms));
  grad0.alpha = grad0.curvature_bound > 0.0 ? cfg.alpha_scale / grad0.curvature_bound : 0.0;

  // High-pass roughness penalty for the smooth prox; the kernel anchor is
  // immaterial because only C^H C enters the layer.
  Tensor lap({3, 3});
  lap[0] = cdouble(4.0, 0.0);
  lap[1] = cdouble(-1.0, 0.0);
  lap[2] = cdouble(-1.0, 0.0);
  lap[3] = cdouble(-1.0, 0.0);
  lap[6] = cdouble(-1.0, 0.0);
  const LinOp filter = LinOp::circular_conv(std::move(lap), img);
  FixedPointConfig inner{cfg.fixed_point_iters, 0.0, false};
  SmoothProxLayer prox0 =
      make_smooth_prox_layer(0.0, cfg.learn.prox_strength, filter, inner);
  prox0.lambda = prox0.filter_norm_sq > 0.0
                     ? cfg.sr.prox_lambda_scale / prox0.filter_norm_sq
                     : 0.0;

  // Shared parameters across unrolls: every gradient layer joins group 0,
  // every prox layer group 1.
  std::vector<Layer> layers;
  for (std::size_t k = 0; k < cfg.unrolls; ++k) {
    layers.push_back(Layer{grad0, 0});
    layers.push_back(Layer{prox0, 1});
  }

  BuiltApp app;
  app.kind = ApplicationKind::SrDesign;
  app.net = make_network(std::move(layers));
  app.layout = build_layout(app.net);
  app.policy = policy_for(cfg, 2);
  app.inversion = FixedPointConfig{cfg.fixed_point_iters, 0.0, false};
  app.engine = cfg.engine;
  app.seed = cfg.seed;

  for (std::size_t i = 0; i < cfg.train_examples; ++i) {
    const Tensor gt = make_phantom(img, cfg.seed * 1000003 + kPhantomStream + i);
    app.train_set.push_back(
        make_example(gt, L, img, cfg.noise_std, cfg.seed + 31 * i));
  }
  for (std::size_t i = 0; i < cfg.test_examples; ++i) {
    const Tensor gt = make_phantom(img, cfg.seed * 1000003 + kTestStream + i);
    app.test_set.push_back(
        make_example(gt, L, img, cfg.noise_std, cfg.seed + 7919 * (i + 1)));
  }
  (void)n;
  return app;
}

BuiltApp build_mri_prior_app(const ExperimentConfig& cfg) {
  if (cfg.image_size < 8) raise(ErrorKind::Config, "image_size must be at least 8");
  if (cfg.mri.coils < 2) raise(ErrorKind::Config, "mri needs at least two coils");
  const Shape img{cfg.image_size, cfg.image_size};
  const std::size_t h = cfg.image_size, w = cfg.image_size;

  const auto maps = make_sensitivity_maps(img, cfg.mri.coils, cfg.seed);
  const LinOp coils = LinOp::coil_stack(maps);
  const LinOp fourier = LinOp::dft(coils.out_shape(), {1, 2});
  const auto keep = make_undersampling_indices(h, w, cfg.mri.coils, cfg.mri.acceleration,
                                               cfg.mri.center_fraction, cfg.seed);
  const LinOp sampler = LinOp::mask(keep, coils.out_shape());
  const LinOp A = LinOp::compose({sampler, fourier, coils});

  FidelityTerm term;
  term.weight = 1.0;
  term.op = A;
  term.measurement = Tensor(A.out_shape());
  GradientLayer grad0 = make_gradient_layer(0.0, cfg.learn.alpha, {std::move(term)});
  grad0.alpha = grad0.curvature_bound > 0.0 ? cfg.alpha_scale / grad0.curvature_bound : 0.0;

  FixedPointConfig inner{cfg.fixed_point_iters, 0.0, false};
  Rng prior_rng = Rng::derive(cfg.seed, kPriorStream);
  const Shape taps{cfg.mri.kernel_size, cfg.mri.kernel_size};
  InvertibleResidualLayer prior;
  prior.w1 = make_conv_bank(2, cfg.mri.hidden_channels, img, taps, prior_rng, 0.3);
  prior.w2 = make_conv_bank(cfg.mri.hidden_channels, 2, img, taps, prior_rng, 0.05);
  prior.kernels_learnable = cfg.learn.prior;
  prior.lip_budget = cfg.mri.lipschitz_budget;
  prior.inner = inner;
  prior = constrain_lipschitz(std::move(prior), cfg.seed ^ 0x9155u);

  std::vector<Layer> layers;
  for (std::size_t k = 0; k < cfg.unrolls; ++k) {
    layers.push_back(Layer{grad0, 0});
    layers.push_back(Layer{prior, cfg.mri.share_prior ? 1 : -1});
  }

  BuiltApp app;
  app.kind = ApplicationKind::MriPrior;
  app.net = make_network(std::move(layers));
  app.layout = build_layout(app.net);
  app.policy = policy_for(cfg, 2);
  app.inversion = inner;
  app.engine = cfg.engine;
  app.seed = cfg.seed;

  auto build_case = [&](std::uint64_t phantom_seed, std::uint64_t noise_seed) {
    const Tensor gt = make_phantom(img, phantom_seed);
    TrainingExample ex;
    ex.x_gt = gt;
    ex.y.push_back(simulate_measurements(A, gt, cfg.noise_std, noise_seed));
    ex.x0 = A.adjoint(ex.y.front());  // zero-filled initialization
    return ex;
  };
  for (std::size_t i = 0; i < cfg.train_examples; ++i) {
    app.train_set.push_back(build_case(cfg.seed * 1000003 + kPhantomStream + i,
                                       cfg.seed + 31 * i + 11));
  }
  for (std::size_t i = 0; i < cfg.test_examples; ++i) {
    app.test_set.push_back(build_case(cfg.seed * 1000003 + kTestStream + i,
                                      cfg.seed + 7919 * (i + 1) + 11));
  }
  return app;
}

}  // namespace pbn

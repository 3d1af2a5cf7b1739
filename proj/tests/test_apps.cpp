#include <doctest.h>

#include <cmath>
#include <set>

#include "pbn/apps.hpp"
#include "pbn/errors.hpp"
#include "test_helpers.hpp"

using namespace pbn;
using namespace pbn::testing;

namespace {

ExperimentConfig sr_cfg(std::uint64_t seed = 7) {
  ExperimentConfig cfg;
  cfg.application = ApplicationKind::SrDesign;
  cfg.seed = seed;
  cfg.image_size = 16;
  cfg.unrolls = 3;
  cfg.fixed_point_iters = 30;
  cfg.train_examples = 2;
  cfg.test_examples = 1;
  cfg.sr.sources = 4;
  cfg.sr.channels = 2;
  return cfg;
}

ExperimentConfig mri_cfg(std::uint64_t seed = 9) {
  ExperimentConfig cfg;
  cfg.application = ApplicationKind::MriPrior;
  cfg.seed = seed;
  cfg.image_size = 16;
  cfg.unrolls = 3;
  cfg.fixed_point_iters = 10;
  cfg.train_examples = 2;
  cfg.test_examples = 1;
  cfg.mri.coils = 3;
  cfg.mri.hidden_channels = 3;
  return cfg;
}

}  // namespace

TEST_SUITE("apps") {

TEST_CASE("phantoms are deterministic, finite, unit peak") {
  const Tensor a = make_phantom({16, 16}, 42);
  const Tensor b = make_phantom({16, 16}, 42);
  const Tensor c = make_phantom({16, 16}, 43);
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
  CHECK(norm(a - c) > 0.0);
  CHECK(a.finite());
  CHECK(max_abs(a) == doctest::Approx(1.0));
}

TEST_CASE("sensitivity maps have unit sum of squares") {
  const auto maps = make_sensitivity_maps({12, 12}, 4, 5);
  REQUIRE(maps.size() == 4);
  for (std::size_t i = 0; i < maps[0].numel(); ++i) {
    double ss = 0.0;
    for (const auto& m : maps) ss += std::norm(m[i]);
    CHECK(ss == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("undersampling keeps the center band and replicates per coil") {
  const std::size_t h = 16, w = 16, coils = 3;
  const auto keep = make_undersampling_indices(h, w, coils, 2.0, 0.25, 3);
  std::set<std::size_t> kept(keep.begin(), keep.end());
  // fully sampled center: columns 0, 1 and 15 (low frequencies, unshifted order)
  for (std::size_t c = 0; c < coils; ++c) {
    for (std::size_t i = 0; i < h; ++i) {
      CHECK(kept.count((c * h + i) * w + 0) == 1);
      CHECK(kept.count((c * h + i) * w + 1) == 1);
      CHECK(kept.count((c * h + i) * w + (w - 1)) == 1);
    }
  }
  // the same columns per coil
  for (std::size_t idx : keep) {
    const std::size_t within = idx % (h * w);
    for (std::size_t c = 0; c < coils; ++c) CHECK(kept.count(c * h * w + within) == 1);
  }
}

TEST_CASE("sr app construction and invariants") {
  const auto app = build_sr_design_app(sr_cfg());
  CHECK(app.net.layers.size() == 6);
  CHECK(certify_invertible(app.net).all_certified);
  // shared design: one design block per term
  std::size_t design_blocks = 0;
  for (const auto& b : app.layout.blocks) {
    if (b.field == ParamField::Design) ++design_blocks;
  }
  CHECK(design_blocks == 2);
  CHECK(app.train_set.size() == 2);
  CHECK(app.train_set[0].x0.shape() == Shape{16, 16});
  CHECK(norm(app.train_set[0].x0) == 0.0);
}

TEST_CASE("sr rejects as many channels as sources") {
  auto cfg = sr_cfg();
  cfg.sr.channels = 4;
  CHECK_THROWS_AS(build_sr_design_app(cfg), Error);
}

TEST_CASE("one-hot design reduces to the unmultiplexed acquisition") {
  auto cfg = sr_cfg(17);
  cfg.noise_std = 0.0;
  BuiltApp app = build_sr_design_app(cfg);
  // Design rows picking exactly source l reproduce a per-band acquisition.
  const ParamLayout& layout = app.layout;
  auto params = collect_params(app.net, layout);
  for (const auto& b : layout.blocks) {
    if (b.field != ParamField::Design) continue;
    for (std::size_t s = 0; s < b.count; ++s) {
      params[b.offset + s] = (s == b.term) ? 1.0 : 0.0;
    }
  }
  const Network onehot = with_params(app.net, layout, params);
  // Reference: the same fidelity built directly from the selected bands.
  Network reference = onehot;
  for (auto& layer : reference.layers) {
    if (auto* g = std::get_if<GradientLayer>(&layer.op)) {
      for (std::size_t l = 0; l < g->terms.size(); ++l) {
        g->terms[l].op = g->terms[l].op.weighted_sum_component(l);
        g->terms[l].design_learnable = false;
      }
      *g = make_gradient_layer(g->alpha, g->alpha_learnable, g->terms);
    }
  }
  TrainingExample ex = app.train_set[0];
  const double loss_onehot = evaluate_loss(app, onehot, ex);
  BuiltApp ref_app = app;
  ref_app.net = reference;
  const double loss_ref = evaluate_loss(ref_app, reference, ex);
  CHECK(loss_onehot == doctest::Approx(loss_ref).epsilon(1e-12));
}

TEST_CASE("all-zero design still produces a nonzero design gradient") {
  auto cfg = sr_cfg(19);
  cfg.noise_std = 0.05;  // noise keeps the measurements informative at c = 0
  BuiltApp app = build_sr_design_app(cfg);
  auto params = collect_params(app.net, app.layout);
  for (const auto& b : app.layout.blocks) {
    if (b.field == ParamField::Design) {
      for (std::size_t s = 0; s < b.count; ++s) params[b.offset + s] = 0.0;
    }
  }
  BuiltApp zero_app = app;
  zero_app.engine = EngineKind::Standard;
  zero_app.policy = StoragePolicy::store_all();
  const Network net0 = with_params(app.net, app.layout, params);
  const auto res = evaluate_gradient(zero_app, net0, app.train_set[0]);
  double design_norm = 0.0;
  for (const auto& b : app.layout.blocks) {
    if (b.field != ParamField::Design) continue;
    for (std::size_t s = 0; s < b.count; ++s) {
      design_norm += res.flat_grads[b.offset + s] * res.flat_grads[b.offset + s];
    }
  }
  CHECK(std::sqrt(design_norm) > 0.0);
}

TEST_CASE("mri app: zero-filled initialization and consistency") {
  const auto app = build_mri_prior_app(mri_cfg());
  CHECK(app.net.layers.size() == 6);
  // x0 was built as the adjoint of the measurements
  const auto& g = std::get<GradientLayer>(app.net.layers[0].op);
  for (const auto& ex : app.train_set) {
    const Tensor expect = g.terms[0].op.adjoint(ex.y[0]);
    CHECK(rel_err(ex.x0, expect) == 0.0);
  }
  CHECK(certify_invertible(app.net).all_certified);
}

TEST_CASE("mri full sampling with the prior off recovers the phantom") {
  auto cfg = mri_cfg(23);
  cfg.noise_std = 0.0;
  cfg.mri.acceleration = 1.0;   // keep every sample
  cfg.mri.center_fraction = 1.0;
  cfg.unrolls = 6;
  cfg.alpha_scale = 0.9;
  BuiltApp app = build_mri_prior_app(cfg);
  // switch the prior off
  Network net = app.net;
  for (auto& layer : net.layers) {
    if (auto* r = std::get_if<InvertibleResidualLayer>(&layer.op)) {
      r->w2.kernels.scale(0.0);
      r->certified_bound = 0.0;
    }
  }
  TrainingExample ex = app.train_set[0];
  const Network net_ex = network_for_example(app, net, ex);
  const auto rec = forward(net_ex, ex.x0, StoragePolicy::store_none());
  CHECK(metric_nrmse(rec.output, ex.x_gt) <= 1e-3);
}

TEST_CASE("apps honor the engine storage policy") {
  auto cfg = sr_cfg();
  cfg.engine = EngineKind::Hybrid;
  cfg.checkpoint_every = 2;  // unrolled iterations -> 4 chain layers
  const auto app = build_sr_design_app(cfg);
  CHECK(app.policy.mode == StoragePolicy::Mode::CheckpointEveryK);
  CHECK(app.policy.interval == 4);
}

TEST_CASE("prior sharing is configurable") {
  auto cfg = mri_cfg();
  const auto shared = build_mri_prior_app(cfg);
  std::set<int> shared_groups;
  for (const auto& l : shared.net.layers) {
    if (std::holds_alternative<InvertibleResidualLayer>(l.op)) {
      shared_groups.insert(l.param_group);
    }
  }
  CHECK(shared_groups.size() == 1);

  cfg.mri.share_prior = false;
  const auto unshared = build_mri_prior_app(cfg);
  std::set<int> groups;
  for (const auto& l : unshared.net.layers) {
    if (std::holds_alternative<InvertibleResidualLayer>(l.op)) {
      groups.insert(l.param_group);
    }
  }
  CHECK(groups.size() == cfg.unrolls);
  // one kernel block pair per unroll instead of one in total
  CHECK(build_layout(unshared.net).total ==
        cfg.unrolls * build_layout(shared.net).total);
}

}  // TEST_SUITE

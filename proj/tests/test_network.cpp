#include <doctest.h>

#include <set>

#include "pbn/errors.hpp"
#include "pbn/network.hpp"
#include "test_helpers.hpp"

using namespace pbn;
using namespace pbn::testing;

namespace {

Layer scalar_grad(double alpha) {
  FidelityTerm term;
  term.op = LinOp::identity({1});
  term.measurement = Tensor({1});
  GradientLayer g = make_gradient_layer(alpha, false, {std::move(term)});
  return Layer{std::move(g), -1};
}

Network quad_chain(std::size_t n, double lambda) {
  std::vector<Layer> layers;
  for (std::size_t i = 0; i < n; ++i) {
    layers.push_back(Layer{QuadraticProxLayer{lambda, false}, -1});
  }
  return make_network(std::move(layers));
}

}  // namespace

TEST_SUITE("network") {

TEST_CASE("single gradient layer forward record") {
  const Network net = make_network({scalar_grad(0.5)});
  const auto rec = forward(net, Tensor::scalar(cdouble(2, 0)), StoragePolicy::store_all());
  CHECK(rec.output[0] == cdouble(1, 0));
  REQUIRE(rec.stored.size() == 2);
  CHECK(rec.stored.at(0)[0] == cdouble(2, 0));
  CHECK(rec.stored.at(1)[0] == cdouble(1, 0));
  CHECK(rec.counters.peak_stored_states == 2);
}

TEST_CASE("storage policies keep exactly the contracted indices") {
  // store-none keeps {0, N}; checkpointing keeps multiples of K plus the output.
  const Network net10 = quad_chain(10, 0.1);
  const auto none =
      forward(net10, Tensor::scalar(cdouble(1, 0)), StoragePolicy::store_none());
  std::set<std::size_t> got;
  for (const auto& [k, v] : none.stored) got.insert(k);
  CHECK(got == std::set<std::size_t>{0, 10});
  CHECK(none.counters.peak_stored_states == 2);

  const auto ck =
      forward(net10, Tensor::scalar(cdouble(1, 0)), StoragePolicy::checkpoint_every(4));
  got.clear();
  for (const auto& [k, v] : ck.stored) got.insert(k);
  CHECK(got == std::set<std::size_t>{0, 4, 8, 10});
}

TEST_CASE("policy index property over all N and K") {
  for (std::size_t n = 1; n <= 64; ++n) {
    const auto all = stored_indices(StoragePolicy::store_all(), n);
    CHECK(all.size() == n + 1);
    const auto none = stored_indices(StoragePolicy::store_none(), n);
    CHECK(none == std::vector<std::size_t>{0, n});
    for (std::size_t k = 1; k <= n; ++k) {
      const auto ck = stored_indices(StoragePolicy::checkpoint_every(k), n);
      std::set<std::size_t> expect;
      for (std::size_t i = 0; i < n; i += k) expect.insert(i);
      expect.insert(n);
      CHECK(ck.size() == expect.size());
      for (std::size_t v : ck) CHECK(expect.count(v) == 1);
      CHECK(ck.size() == (n + k - 1) / k + 1);
    }
  }
}

TEST_CASE("forward values are identical under every policy") {
  Rng rng(17);
  const Shape img{8, 8};
  Tensor w(img);
  for (auto& v : w.values()) v = cdouble(rng.uniform(0.4, 1.0), 0);
  FidelityTerm term;
  term.op = LinOp::diagonal(std::move(w));
  term.measurement = random_tensor(img, rng);
  GradientLayer g = make_gradient_layer(0.0, false, {std::move(term)});
  g.alpha = 0.5 / g.curvature_bound;
  std::vector<Layer> layers;
  for (int i = 0; i < 6; ++i) {
    layers.push_back(Layer{g, -1});
    layers.push_back(Layer{QuadraticProxLayer{0.2, false}, -1});
  }
  const Network net = make_network(std::move(layers));
  const Tensor x0 = random_tensor(img, rng);
  const auto a = forward(net, x0, StoragePolicy::store_all());
  const auto b = forward(net, x0, StoragePolicy::store_none());
  const auto c = forward(net, x0, StoragePolicy::checkpoint_every(5));
  for (std::size_t i = 0; i < a.output.numel(); ++i) {
    CHECK(a.output[i] == b.output[i]);
    CHECK(a.output[i] == c.output[i]);
  }
  CHECK(a.counters.peak_stored_states == net.layers.size() + 1);
  CHECK(b.counters.peak_stored_states == 2);
}

TEST_CASE("certify_invertible verdicts") {
  {
    const Network net = make_network({scalar_grad(0.8)});
    const auto rep = certify_invertible(net);
    CHECK(rep.all_certified);
    CHECK(rep.layers[0].bound == doctest::Approx(0.8));
    CHECK(rep.layers[0].margin == doctest::Approx(0.2));
  }
  {
    const Network net = make_network({scalar_grad(1.2)});
    const auto rep = certify_invertible(net);
    CHECK(!rep.all_certified);
    REQUIRE(rep.first_failure() != nullptr);
    CHECK(rep.first_failure()->index == 0);
  }
  {
    const Network net = quad_chain(5, 0.3);
    CHECK(certify_invertible(net).all_certified);
  }
}

TEST_CASE("layer errors carry the layer index") {
  std::vector<Layer> layers;
  layers.push_back(Layer{QuadraticProxLayer{0.1, false}, -1});
  layers.push_back(Layer{QuadraticProxLayer{-2.0, false}, -1});  // invalid strength
  const Network net = make_network(std::move(layers));
  try {
    forward(net, Tensor::scalar(cdouble(1, 0)), StoragePolicy::store_all());
    FAIL("expected validation failure");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("fresh param groups are assigned and shared groups respected") {
  std::vector<Layer> layers;
  layers.push_back(Layer{QuadraticProxLayer{0.1, true}, 7});
  layers.push_back(Layer{QuadraticProxLayer{0.2, true}, -1});
  layers.push_back(Layer{QuadraticProxLayer{0.1, true}, 7});
  const Network net = make_network(std::move(layers));
  CHECK(net.layers[0].param_group == 7);
  CHECK(net.layers[2].param_group == 7);
  CHECK(net.layers[1].param_group != 7);
}

TEST_CASE("network shape chain validation") {
  std::vector<Layer> layers;
  {
    FidelityTerm t1;
    t1.op = LinOp::identity({4});
    t1.measurement = Tensor({4});
    layers.push_back(Layer{make_gradient_layer(0.1, false, {std::move(t1)}), -1});
  }
  {
    FidelityTerm t2;
    t2.op = LinOp::identity({5});
    t2.measurement = Tensor({5});
    layers.push_back(Layer{make_gradient_layer(0.1, false, {std::move(t2)}), -1});
  }
  CHECK_THROWS_AS(make_network(std::move(layers)), Error);
  CHECK_THROWS_AS(make_network({}), Error);
}

}  // TEST_SUITE

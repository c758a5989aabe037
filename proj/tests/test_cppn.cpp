#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "metadiv/cppn.hpp"

using namespace metadiv;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

TEST_CASE("new_random_genome is deterministic") {
  CppnConfig cfg;
  auto a = new_random_genome(42, cfg);
  auto b = new_random_genome(42, cfg);
  REQUIRE(a == b);
}

TEST_CASE("zero hidden nodes gives a direct weighted sum") {
  CppnConfig cfg;
  cfg.min_hidden = 0;
  cfg.max_hidden = 0;
  auto g = new_random_genome(5, cfg);
  REQUIRE(g.hidden.empty());
  REQUIRE(g.connections.size() == 4);
  for (const auto& c : g.connections) {
    REQUIRE(c.src < 4);
    REQUIRE(c.dst == CppnGenome::kOutputId);
  }
  // output = sigmoid(sum w_i * x_i + bias), checked directly
  double x = 0.3, y = -0.7, z = 0.1, r = 0.5;
  double sum = g.output_bias;
  for (const auto& c : g.connections)
    sum += c.weight * (c.src == 0 ? x : c.src == 1 ? y : c.src == 2 ? z : r);
  auto out = evaluate(g, {{x, y, z, r}});
  REQUIRE(out[0] == Catch::Approx(sigmoid(sum)).margin(1e-15));
}

TEST_CASE("different seeds differ in at least one weight") {
  CppnConfig cfg;
  auto a = new_random_genome(1, cfg);
  auto b = new_random_genome(2, cfg);
  REQUIRE(!(a == b));
}

TEST_CASE("zero mutation rates leave the genome unchanged") {
  auto g = new_random_genome(3, CppnConfig{});
  CppnMutationRates rates{0, 0, 0, 0, 0};
  auto m = mutate_genome(g, 99, rates, CppnConfig{});
  REQUIRE(m == g);
}

TEST_CASE("forced add-node splits exactly one connection") {
  CppnGenome g;
  g.connections.push_back({0, CppnGenome::kOutputId, 0.75, true});
  CppnMutationRates rates{0, 0, 1.0, 0, 0};  // add-node only
  auto m = mutate_genome(g, 7, rates, CppnConfig{});
  REQUIRE(m.hidden.size() == 1);
  REQUIRE(m.connections.size() == 3);
  REQUIRE_FALSE(m.connections[0].enabled);  // original disabled
  std::uint32_t nid = m.hidden[0].id;
  // src -> new with weight 1, new -> dst with the old weight
  bool found_in = false, found_out = false;
  for (const auto& c : m.connections) {
    if (c.src == 0 && c.dst == nid && c.enabled) {
      found_in = true;
      REQUIRE(c.weight == 1.0);
    }
    if (c.src == nid && c.dst == CppnGenome::kOutputId && c.enabled) {
      found_out = true;
      REQUIRE(c.weight == 0.75);
    }
  }
  REQUIRE(found_in);
  REQUIRE(found_out);
  REQUIRE(is_feed_forward(m));
}

TEST_CASE("identical seeds give identical mutants") {
  auto g = new_random_genome(11, CppnConfig{});
  CppnMutationRates rates;
  auto a = mutate_genome(g, 123, rates, CppnConfig{});
  auto b = mutate_genome(g, 123, rates, CppnConfig{});
  REQUIRE(a == b);
}

TEST_CASE("mutation leaves the input unmodified") {
  auto g = new_random_genome(11, CppnConfig{});
  auto copy = g;
  CppnMutationRates rates{1.0, 0.5, 1.0, 1.0, 1.0};
  (void)mutate_genome(g, 5, rates, CppnConfig{});
  REQUIRE(g == copy);
}

TEST_CASE("evaluate squash passes through 0.5 at zero input") {
  CppnGenome g;
  g.connections.push_back({0, CppnGenome::kOutputId, 1.7, true});
  auto out = evaluate(g, {{0.0, 0.3, -0.2, 0.9}});
  REQUIRE(out[0] == 0.5);  // sigmoid(1.7 * 0) exactly
}

TEST_CASE("gaussian hidden node peaks at r = 0") {
  CppnGenome g;
  std::uint32_t h = g.innovation_counter++;
  g.hidden.push_back({h, Activation::gaussian});
  g.connections.push_back({3, h, 1.0, true});                       // r -> hidden
  g.connections.push_back({h, CppnGenome::kOutputId, 1.0, true});   // hidden -> out
  auto out = evaluate(g, {{0.5, -0.5, 0.0, 0.0}});
  REQUIRE(out[0] == Catch::Approx(sigmoid(1.0)).margin(1e-15));  // gaussian(0) = 1
}

TEST_CASE("hand-traced three-node forward pass") {
  // v5 = tanh(0.7 x - 0.3 y); out = sigmoid(1.2 v5 + 0.5 r + 0.1)
  CppnGenome g;
  std::uint32_t h = g.innovation_counter++;
  g.hidden.push_back({h, Activation::tanh_fn});
  g.connections.push_back({0, h, 0.7, true});
  g.connections.push_back({1, h, -0.3, true});
  g.connections.push_back({h, CppnGenome::kOutputId, 1.2, true});
  g.connections.push_back({3, CppnGenome::kOutputId, 0.5, true});
  g.output_bias = 0.1;

  auto oracle = [](double x, double y, double r) {
    double v5 = std::tanh(0.7 * x - 0.3 * y);
    return sigmoid(1.2 * v5 + 0.5 * r + 0.1);
  };
  auto out = evaluate(g, {{0.25, -0.5, 0.0, 0.6}, {-1.0, 1.0, 0.5, 1.2}});
  REQUIRE(out[0] == Catch::Approx(oracle(0.25, -0.5, 0.6)).margin(1e-15));
  REQUIRE(out[1] == Catch::Approx(oracle(-1.0, 1.0, 1.2)).margin(1e-15));
}

TEST_CASE("evaluate is pure and outputs stay in [0,1]") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto g = new_random_genome(seed, CppnConfig{});
    Rng rng(seed + 1000);
    std::vector<std::array<double, 4>> coords;
    for (int i = 0; i < 50; ++i)
      coords.push_back({rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1),
                        rng.uniform(0, 1.8)});
    auto a = evaluate(g, coords);
    auto b = evaluate(g, coords);
    REQUIRE(a == b);
    for (double v : a) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }
}

TEST_CASE("acyclicity survives long mutation chains") {
  auto g = new_random_genome(17, CppnConfig{});
  CppnMutationRates rates{0.8, 0.1, 0.2, 0.3, 0.1};  // aggressive structural rates
  Rng rng(555);
  for (int i = 0; i < 1000; ++i) {
    g = mutate_genome(g, rng, rates, CppnConfig{});
    REQUIRE(is_feed_forward(g));
  }
  // evaluator construction performs a full structural validation
  REQUIRE_NOTHROW(CppnEvaluator(g));
}

TEST_CASE("render_kernel normalizes to sum 1") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto g = new_random_genome(seed, CppnConfig{});
    auto k = render_kernel(g, 2, 3, 1);
    REQUIRE(k.weights.sx == 5);
    REQUIRE(k.weights.sy == 7);
    REQUIRE(k.weights.sz == 3);
    double sum = 0;
    for (double v : k.weights.data) {
      REQUIRE(v >= 0.0);
      sum += v;
    }
    REQUIRE(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("render_kernel shape and determinism") {
  auto g = new_random_genome(4, CppnConfig{});
  auto a = render_kernel(g, 1, 1, 1);
  REQUIRE(a.weights.sx == 3);
  REQUIRE(a.weights.sy == 3);
  REQUIRE(a.weights.sz == 3);
  auto b = render_kernel(g, 1, 1, 1);
  REQUIRE(a.weights == b.weights);
}

TEST_CASE("an all-zero render raises DegenerateKernel") {
  CppnGenome g;  // no connections: output = sigmoid(bias)
  g.output_bias = -1000.0;  // sigmoid underflows to exactly 0
  REQUIRE_THROWS_AS(render_kernel(g, 1, 1, 1), DegenerateKernel);
}

TEST_CASE("render_init_pattern occupies a centered sub-box") {
  auto g = new_random_genome(8, CppnConfig{});

  SECTION("full occupation covers the grid") {
    auto f = render_init_pattern(g, 8, 8, 8, 1.0);
    for (double v : f.data) {
      REQUIRE(v >= 0.0);
      REQUIRE(v <= 1.0);
    }
  }

  SECTION("ratio 1/8 on a 32-cube gives a centered 16-cube") {
    auto f = render_init_pattern(g, 32, 32, 32, 1.0 / 8.0);
    // support must be exactly [8, 24) per axis
    for (int z = 0; z < 32; ++z)
      for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x) {
          bool inside = x >= 8 && x < 24 && y >= 8 && y < 24 && z >= 8 && z < 24;
          if (!inside) REQUIRE(f.at(x, y, z) == 0.0);
        }
    // volume of the sub-box never exceeds the requested ratio
    std::int64_t support = 0;
    for (double v : f.data) support += (v != 0.0);
    REQUIRE(support <= 32 * 32 * 32 / 8);
  }

  SECTION("anisotropic grids keep the proportional volume under the ratio") {
    auto f = render_init_pattern(g, 20, 12, 7, 0.3);
    int lox = 20, hix = -1, loy = 12, hiy = -1, loz = 7, hiz = -1;
    for (int z = 0; z < 7; ++z)
      for (int y = 0; y < 12; ++y)
        for (int x = 0; x < 20; ++x)
          if (f.at(x, y, z) != 0.0) {
            lox = std::min(lox, x); hix = std::max(hix, x);
            loy = std::min(loy, y); hiy = std::max(hiy, y);
            loz = std::min(loz, z); hiz = std::max(hiz, z);
          }
    double volume = double(hix - lox + 1) * (hiy - loy + 1) * (hiz - loz + 1);
    REQUIRE(volume <= 0.3 * 20 * 12 * 7 + 1e-9);
  }
}

TEST_CASE("cppn serialization round-trips bit-exactly") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto g = new_random_genome(seed, CppnConfig{});
    g = mutate_genome(g, seed + 1, CppnMutationRates{}, CppnConfig{});
    ByteWriter w;
    serialize_cppn(g, w);
    ByteReader r(w.bytes());
    auto back = deserialize_cppn(r);
    REQUIRE(back == g);
    ByteWriter w2;
    serialize_cppn(back, w2);
    REQUIRE(w.bytes() == w2.bytes());
  }
}

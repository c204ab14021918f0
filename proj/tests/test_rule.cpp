#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include "geca/diffusion.hpp"

using namespace geca;
using namespace geca::testing;

namespace {

PixCellGrid<float> random_grid(const ChannelLayout& layout, Index h, Index w, std::uint64_t seed, Index batch = 1) {
  Rng rng(seed);
  PixCellGrid<float> g(GridDims{batch, h, w}, layout);
  g.state = Tensor<float>::normal(g.state.shape(), rng);
  return g;
}

// Chebyshev distance of every cell whose state differs between a and b
// (item 0), or -1 when they are identical.
Index influence_radius(const PixCellGrid<float>& a, const PixCellGrid<float>& b, CellIndex from, Index* changed_at_max = nullptr) {
  Index radius = -1;
  for (Index i = 0; i < a.height(); ++i)
    for (Index j = 0; j < a.width(); ++j) {
      const Index r = a.dims.row(0, i, j);
      if ((a.cells().row(r) - b.cells().row(r)).cwiseAbs().maxCoeff() == 0.f) continue;
      radius = std::max(radius, std::max(std::abs(i - from.i), std::abs(j - from.j)));
    }
  if (changed_at_max) {
    *changed_at_max = 0;
    for (Index i = 0; i < a.height(); ++i)
      for (Index j = 0; j < a.width(); ++j)
        if (std::max(std::abs(i - from.i), std::abs(j - from.j)) == radius) {
          const Index r = a.dims.row(0, i, j);
          *changed_at_max += (a.cells().row(r) - b.cells().row(r)).cwiseAbs().maxCoeff() > 0.f ? 1 : 0;
        }
  }
  return radius;
}

// Not a constant shift: layer norm would erase that.
PixCellGrid<float> perturbed(PixCellGrid<float> g, CellIndex at) {
  Rng rng(99);
  const auto kick = Tensor<float>::normal({g.layout.total()}, rng);
  g.cells().row(g.dims.row(0, at.i, at.j)) += 0.5f * kick.matrix();
  return g;
}

}  // namespace

TEST_CASE("parameter count has a closed form") {
  Rng rng(0);
  ThetaConfig c;
  c.layout = ChannelLayout::make(1);
  c.num_labels = 5;
  const auto p = ThetaParams<float>::init(c, rng);
  CHECK(p.parameter_count() == theta_parameter_count(26, 128, 64, 5));
  const auto s = small_theta_config(3);
  CHECK(ThetaParams<float>::init(s, rng).parameter_count() == theta_parameter_count(10, 12, 8, 3));
}

TEST_CASE("conditioning inputs") {
  const auto f = timestep_features<double>({0, 5}, 8);
  for (Index k = 0; k < 4; ++k) {
    CHECK(f.matrix()(0, k) == 1.0);
    CHECK(f.matrix()(0, 4 + k) == 0.0);
  }
  CHECK(f.matrix()(1, 0) == doctest::Approx(std::cos(5.0)));
  const auto sel = label_selector<double>({Label::parse("101"), Label::null()}, 3);
  CHECK(sel.matrix().row(0) == (Eigen::RowVector4d() << 1, 0, 1, 0).finished());
  CHECK(sel.matrix().row(1) == (Eigen::RowVector4d() << 0, 0, 0, 1).finished());
}

TEST_CASE("zero-initialised gates give a zero update") {
  Rng rng(1);
  ThetaConfig c;
  c.layout = ChannelLayout::make(1);
  c.num_labels = 2;
  const auto p = ThetaParams<float>::init(c, rng);
  const auto g = random_grid(c.layout, 6, 5, 2, 2);
  const auto delta = theta_forward(g, Conditioning::uniform(2, 100, Label::parse("10")), p);
  CHECK(delta.shape() == Shape{2, 6, 5, 17});
  CHECK(delta.array().abs().maxCoeff() == 0.f);

  Rng step_rng(3);
  CHECK(evolve(g, Conditioning::uniform(2, 100, Label::null()), p, 3, 1.0, step_rng) == g);
}

TEST_CASE("no firing leaves the grid unchanged") {
  const auto c = small_theta_config();
  const auto p = random_theta<float>(c, 4);
  const auto g = random_grid(c.layout, 5, 5, 5);
  Rng rng(6);
  CHECK(evolve(g, Conditioning::uniform(1, 3, Label::null()), p, 4, 0.0, rng) == g);
}

TEST_CASE("fire mask rate") {
  Rng rng(7);
  double total = 0;
  for (int k = 0; k < 10000; ++k) total += fire_mask<float>(32 * 32, 0.5, rng).array().mean();
  const double rate = total / 10000;
  CHECK(rate >= 0.48);
  CHECK(rate <= 0.52);
  CHECK_THROWS_AS(fire_mask<float>(4, 1.5, rng), ConfigError);
  CHECK_THROWS_AS(fire_mask<float>(4, -0.1, rng), ConfigError);
}

TEST_CASE("firing is independent per cell and redrawn each step") {
  Rng rng(8);
  const auto a = fire_mask<float>(64, 0.5, rng);
  const auto b = fire_mask<float>(64, 0.5, rng);
  CHECK_FALSE(a == b);
}

TEST_CASE("a single update only reaches the 3x3 neighbourhood") {
  const auto c = small_theta_config();
  for (int seed = 0; seed < 5; ++seed) {
    const auto p = random_theta<float>(c, static_cast<std::uint64_t>(seed));
    const auto g = random_grid(c.layout, 7, 7, static_cast<std::uint64_t>(seed) + 50);
    const CellIndex at{3, 2};
    const auto cond = Conditioning::uniform(1, 20, Label::parse("11"));
    const auto delta_a = theta_forward(g, cond, p);
    const auto delta_b = theta_forward(perturbed(g, at), cond, p);
    PixCellGrid<float> da(g.dims, c.layout), db(g.dims, c.layout);
    da.block(Channel::Out) = delta_a.reshaped({49, 5}).matrix().leftCols(1);
    db.block(Channel::Out) = delta_b.reshaped({49, 5}).matrix().leftCols(1);
    da.block(Channel::Hidden) = delta_a.reshaped({49, 5}).matrix().rightCols(4);
    db.block(Channel::Hidden) = delta_b.reshaped({49, 5}).matrix().rightCols(4);
    Index ring = 0;
    CHECK(influence_radius(da, db, at, &ring) == 1);
    CHECK(ring == 8);
  }
}

TEST_CASE("M updates reach at most M cells away") {
  const auto c = small_theta_config();
  const auto p = random_theta<float>(c, 9);
  const auto g = random_grid(c.layout, 9, 9, 10);
  const CellIndex at{4, 4};
  const auto cond = Conditioning::uniform(1, 5, Label::parse("01"));
  for (double rate : {1.0, 0.5}) {
    Rng ra(11), rb(11);
    const auto a = evolve(g, cond, p, 3, rate, ra);
    const auto b = evolve(perturbed(g, at), cond, p, 3, rate, rb);
    const Index radius = influence_radius(a, b, at);
    CHECK(radius <= 3);
    if (rate == 1.0) CHECK(radius == 3);
  }
}

TEST_CASE("one-step evolve is geca_step") {
  const auto c = small_theta_config();
  const auto p = random_theta<float>(c, 12);
  const auto g = random_grid(c.layout, 5, 6, 13);
  const auto cond = Conditioning::uniform(1, 9, Label::null());
  Rng ra(14), rb(14);
  CHECK(evolve(g, cond, p, 1, 0.5, ra) == geca_step(g, cond, p, 0.5, rb));
  CHECK_THROWS_AS(evolve(g, cond, p, 0, 0.5, ra), ConfigError);
}

TEST_CASE("gradients survive twelve shared-weight updates") {
  const auto c = small_theta_config();
  const auto p = random_theta<float>(c, 15, 0.1);
  const auto g = random_grid(c.layout, 6, 6, 16);
  Rng rng(17);
  Tape<float> tape;
  const auto v = bind(tape, p, true);
  const auto mod = condition(tape, v, Conditioning::uniform(1, 30, Label::parse("10")));
  auto state = tape.leaf(g.state.reshaped({36, c.layout.total()}));
  auto out = evolve(v, mod, state, g.dims, 12, 0.5, rng);
  tape.backward(loss(out, c.layout, Tensor<float>::zeros({36, 1})));
  std::size_t k = 0;
  p.for_each([&](const char* name, const Tensor<float>&) {
    CAPTURE(name);
    CHECK(v.all[k].grad().all_finite());
    CHECK(v.all[k].grad().array().abs().maxCoeff() > 0.f);
    ++k;
  });
}

TEST_CASE("output depends on the label once trained") {
  ThetaConfig c = small_theta_config(2);
  Rng rng(18);
  TrainState<float> state{ThetaParams<float>::init(c, rng), {}, 0, {}};
  std::vector<Tensor<float>> images;
  std::vector<Label> labels;
  for (int k = 0; k < 4; ++k) {
    images.push_back(Tensor<float>::uniform({6, 6, 1}, rng, -1.f, 1.f));
    labels.push_back(Label::parse(k % 2 ? "10" : "01"));
  }
  TrainConfig tc;
  tc.batch = 2;
  tc.steps = 10;
  tc.updates = 2;
  tc.T = 20;
  tc.adam.lr = 1e-2;
  train<float>(images, labels, state, tc, rng);
  const auto g = random_grid(c.layout, 6, 6, 19);
  const auto a = theta_forward(g, Conditioning::uniform(1, 10, Label::parse("10")), state.params);
  const auto b = theta_forward(g, Conditioning::uniform(1, 10, Label::parse("01")), state.params);
  const auto n = theta_forward(g, Conditioning::uniform(1, 10, Label::null()), state.params);
  CHECK(max_abs_diff(a, b) > 1e-6);
  CHECK(max_abs_diff(a, n) > 1e-6);
}

TEST_CASE("malformed conditioning is rejected") {
  const auto c = small_theta_config(2);
  const auto p = random_theta<float>(c, 20);
  const auto g = random_grid(c.layout, 4, 4, 21, 2);
  CHECK_THROWS_AS(theta_forward(g, Conditioning::uniform(2, 1, Label::parse("101")), p), InputError);
  CHECK_THROWS_AS(Label::parse("12"), InputError);
  CHECK_THROWS_AS(Label::class_id(2, 2), InputError);
  CHECK_THROWS_AS(theta_forward(g, Conditioning{{1, 2, 3}, {Label::null(), Label::null(), Label::null()}}, p),
                  DimensionError);
  const auto other = random_grid(ChannelLayout::make(1, 8, 16), 4, 4, 22);
  CHECK_THROWS_AS(theta_forward(other, Conditioning::uniform(1, 1, Label::null()), p), DimensionError);
}

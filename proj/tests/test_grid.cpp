#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "support.hpp"

#include <set>

using namespace geca;
using namespace geca::testing;

namespace {

Tensor<float> image(Index h, Index w, Index c, std::uint64_t seed) {
  Rng rng(seed);
  return Tensor<float>::uniform({h, w, c}, rng, -1.f, 1.f);
}

Index nonzero_rows(const PixCellGrid<float>& grid, Channel c) {
  Index n = 0;
  const auto block = grid.block(c);
  for (Index r = 0; r < block.rows(); ++r) n += block.row(r).cwiseAbs().maxCoeff() > 0 ? 1 : 0;
  return n;
}

}  // namespace

TEST_CASE("channel layout") {
  const auto l = ChannelLayout::make(1);
  CHECK(l.total() == 26);
  CHECK(l.offset(Channel::Gamma) == 1);
  CHECK(l.offset(Channel::Out) == 9);
  CHECK(l.offset(Channel::Hidden) == 10);
  CHECK(l.updated_width() == 17);
  CHECK(ChannelLayout::make(3).total() == 3 + 8 + 3 + 16);
  CHECK_THROWS_AS(ChannelLayout::make(1, 7, 16), ConfigError);
  CHECK_THROWS_AS(ChannelLayout::make(1, 8, 0), ConfigError);
}

TEST_SUITE("positional encoding") {
  TEST_CASE("origin is sin 0 and cos 1") {
    const auto pe = positional_encoding<double>(4, 4, 8);
    for (Index c = 0; c < 8; ++c) CHECK(pe.at({0, 0, c}) == (c % 2 == 0 ? 0.0 : 1.0));
  }

  TEST_CASE("row and column are encoded separately") {
    const auto pe = positional_encoding<double>(4, 4, 8);
    const Eigen::VectorXd a = pe.matrix().row(1), b = pe.matrix().row(4);
    CHECK((a - b).norm() > 0.1);
  }

  TEST_CASE("every cell of an 8x8 grid has a distinct code") {
    const auto pe = positional_encoding<double>(8, 8, 8);
    for (Index r = 0; r < 64; ++r)
      for (Index s = r + 1; s < 64; ++s) CHECK((pe.matrix().row(r) - pe.matrix().row(s)).norm() > 1e-3);
  }

  TEST_CASE("values are bounded") {
    const auto pe = positional_encoding<float>(16, 16, 8);
    CHECK(pe.array().abs().maxCoeff() <= 1.f);
  }

  TEST_CASE("odd channel count is rejected") {
    CHECK_THROWS_AS(positional_encoding<float>(4, 4, 7), ConfigError);
    CHECK_THROWS_AS(positional_encoding<float>(0, 4, 8), ConfigError);
  }
}

TEST_SUITE("init_grid") {
  TEST_CASE("a 3x3 grid has exactly one seeded cell") {
    const auto l = ChannelLayout::make(1);
    const auto g = init_grid(image(3, 3, 1, 1), l, std::uint64_t{4});
    CHECK(nonzero_rows(g, Channel::Hidden) == 1);
    CHECK(nonzero_rows(g, Channel::Out) == 1);
    CHECK(g.block(Channel::Hidden).row(4).cwiseAbs().maxCoeff() > 0);
  }

  TEST_CASE("seed fixes the grid") {
    const auto l = ChannelLayout::make(1);
    const auto img = image(6, 7, 1, 2);
    CHECK(init_grid(img, l, std::uint64_t{9}) == init_grid(img, l, std::uint64_t{9}));
    CHECK_FALSE(init_grid(img, l, std::uint64_t{9}) == init_grid(img, l, std::uint64_t{10}));
  }

  TEST_CASE("centre of a 5x5 grid is (2, 2); even extents round down") {
    CHECK(center_cell(5, 5) == CellIndex{2, 2});
    CHECK(center_cell(4, 6) == CellIndex{2, 3});
    const auto g = init_grid(image(5, 5, 1, 3), ChannelLayout::make(1), std::uint64_t{1});
    CHECK(g.block(Channel::Hidden).row(12).cwiseAbs().maxCoeff() > 0);
  }

  TEST_CASE("C_in and C_gamma are copied in") {
    const auto img = image(5, 6, 3, 4);
    const auto l = ChannelLayout::make(3);
    const auto g = init_grid(img, l, std::uint64_t{1});
    CHECK(g.slice(Channel::In).reshaped(img.shape()) == img);
    CHECK(g.slice(Channel::Gamma).reshaped({5, 6, 8}) == positional_encoding<float>(5, 6, 8));
  }

  TEST_CASE("batched images seed every item") {
    Rng rng(5);
    const auto batch = Tensor<float>::normal({3, 4, 4, 1}, rng);
    const auto g = init_grid(batch, ChannelLayout::make(1), std::uint64_t{2});
    CHECK(g.batch() == 3);
    CHECK(nonzero_rows(g, Channel::Hidden) == 3);
  }

  TEST_CASE("mismatched input is rejected") {
    const auto l = ChannelLayout::make(1);
    CHECK_THROWS_AS(init_grid(image(4, 4, 3, 1), l, std::uint64_t{0}), DimensionError);
    CHECK_THROWS_AS(init_grid(Tensor<float>({16}), l, std::uint64_t{0}), DimensionError);
    CHECK_THROWS_AS(init_grid(image(2, 4, 1, 1), l, std::uint64_t{0}), ConfigError);
  }
}

TEST_SUITE("neighborhood8") {
  PixCellGrid<float> numbered(Index h, Index w) {
    PixCellGrid<float> g(GridDims{1, h, w}, ChannelLayout::make(1, 2, 1));
    for (Index r = 0; r < g.dims.cells(); ++r) g.cells().row(r).setConstant(static_cast<float>(r + 1));
    return g;
  }

  TEST_CASE("interior cell sees nine distinct cells") {
    const auto g = numbered(5, 5);
    const auto n = neighborhood8(g, 2, 2);
    std::set<float> ids;
    for (Index s = 0; s < 9; ++s) ids.insert(n.matrix()(s, 0));
    CHECK(ids.size() == 9);
    CHECK(n.matrix()(kSelfSlot, 0) == 13.f);
  }

  TEST_CASE("corner cell has four real neighbours and five pads") {
    const auto g = numbered(5, 5);
    const auto n = neighborhood8(g, 0, 0);
    int pads = 0;
    for (Index s = 0; s < 9; ++s) pads += n.matrix().row(s).isZero() ? 1 : 0;
    CHECK(pads == 5);
  }

  TEST_CASE("agrees with a brute-force scan on 4x4") {
    const auto g = numbered(4, 4);
    for (Index i = 0; i < 4; ++i)
      for (Index j = 0; j < 4; ++j) {
        const auto n = neighborhood8(g, i, j);
        for (Index di = -1; di <= 1; ++di)
          for (Index dj = -1; dj <= 1; ++dj) {
            const Index s = (di + 1) * 3 + (dj + 1);
            const bool inside = i + di >= 0 && i + di < 4 && j + dj >= 0 && j + dj < 4;
            const float want = inside ? static_cast<float>((i + di) * 4 + (j + dj) + 1) : 0.f;
            CHECK(n.matrix()(s, 0) == want);
          }
      }
  }

  TEST_CASE("out-of-range index is rejected") {
    const auto g = numbered(3, 3);
    CHECK_THROWS_AS(neighborhood8(g, 3, 0), DimensionError);
    CHECK_THROWS_AS(neighborhood8(g, 0, 0, 1), DimensionError);
  }
}

TEST_CASE("evolve never writes C_in or C_gamma") {
  const ThetaConfig config = small_theta_config(2);
  for (int seed = 0; seed < 5; ++seed) {
    const auto params = random_theta<float>(config, static_cast<std::uint64_t>(seed), 0.5);
    Rng rng(static_cast<std::uint64_t>(seed));
    const auto g0 = init_grid(image(6, 6, 1, static_cast<std::uint64_t>(seed)), config.layout, rng);
    const auto g1 = evolve(g0, Conditioning::uniform(1, 10, Label::parse("01")), params, 6, 0.5, rng);
    CHECK(g1.slice(Channel::In) == g0.slice(Channel::In));
    CHECK(g1.slice(Channel::Gamma) == g0.slice(Channel::Gamma));
    CHECK_FALSE(g1.slice(Channel::Hidden) == g0.slice(Channel::Hidden));
  }
}

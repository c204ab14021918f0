#pragma once

// Finite-difference cases for every differentiable primitive and the composed
// rule block, shared by the unit suite and the acceptance run.

#include <algorithm>
#include <string>

#include "support.hpp"

namespace geca::testing {

struct GradientCase {
  std::string name;
  // Inputs and the function under test for one seed.
  std::function<std::pair<std::vector<TensorD>, Builder>(int seed)> setup;
};

struct GradientSummary {
  double worst_rel_error = 0.0;
  double smallest_norm = std::numeric_limits<double>::infinity();
};

inline TensorD randn(Shape shape, Rng& rng, double stddev = 1.0) { return TensorD::normal(std::move(shape), rng, stddev); }

// Keeps entries at least `gap` away from `kink` in absolute value so central
// differences never straddle a non-smooth point.
inline TensorD away_from(TensorD t, double kink, double gap = 0.05) {
  for (Index i = 0; i < t.size(); ++i) {
    const double m = std::abs(t[i]);
    if (std::abs(m - kink) < gap) t[i] = (t[i] < 0 ? -1.0 : 1.0) * (m < kink ? kink - 2 * gap : kink + 2 * gap);
  }
  return t;
}

// Seed-independent function over randomly drawn inputs.
inline GradientCase simple_case(std::string name, std::function<std::vector<TensorD>(Rng&)> make, Builder f) {
  return {std::move(name), [make = std::move(make), f = std::move(f)](int seed) {
            Rng rng(static_cast<std::uint64_t>(seed) + 1000);
            return std::pair{make(rng), f};
          }};
}

inline std::vector<GradientCase> gradient_cases() {
  std::vector<GradientCase> cases;
  const auto add = [&](std::string name, std::function<std::vector<TensorD>(Rng&)> make, Builder f) {
    cases.push_back(simple_case(std::move(name), std::move(make), std::move(f)));
  };
  add("matmul", [](Rng& r) { return std::vector{randn({3, 4}, r), randn({4, 2}, r)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return matmul(v[0], v[1]); });
  add("add, sub, mul, scale", [](Rng& r) { return std::vector{randn({3, 5}, r), randn({3, 5}, r)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return scale((v[0] + v[1]) * (v[0] - v[1]) * v[1], 0.7); });
  add("add_bias, linear, repeat_rows, slice_cols",
      [](Rng& r) { return std::vector{randn({2, 3}, r), randn({3, 4}, r), randn({4}, r)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return slice_cols(repeat_rows(linear(v[0], v[1], v[2]), 3), 1, 2); });
  add("softmax, last axis", [](Rng& r) { return std::vector{randn({3, 6}, r, 2.0)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return softmax(v[0]); });
  add("softmax, first axis", [](Rng& r) { return std::vector{randn({4, 2, 3}, r, 2.0)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return softmax(v[0], 0); });
  add("layer_norm", [](Rng& r) { return std::vector{randn({4, 8}, r, 2.0), randn({8}, r), randn({8}, r)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return layer_norm(v[0], v[1], v[2]); });
  add("gelu, silu", [](Rng& r) { return std::vector{randn({5, 4}, r, 2.0)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return gelu(v[0]) + silu(v[0]); });
  add("relu", [](Rng& r) { return std::vector{away_from(randn({5, 4}, r, 2.0), 0.0)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return relu(v[0]); });
  add("overflow", [](Rng& r) { return std::vector{away_from(randn({5, 4}, r, 2.0), 1.0)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return overflow(v[0], 1.0); });
  add("sum, mean, mse", [](Rng& r) { return std::vector{randn({3, 4}, r), randn({3, 4}, r)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return mse(v[0], v[1]) + mean(v[0]) + sum(v[1]); });
  add("bce_with_logits",
      [](Rng& r) {
        TensorD y({3, 4});
        for (Index i = 0; i < y.size(); ++i) y[i] = uniform01(r) < 0.5 ? 0.0 : 1.0;
        return std::vector{randn({3, 4}, r, 3.0), y};
      },
      [](Tape<double>&, const std::vector<VarD>& v) { return bce_with_logits(v[0], v[1]); });
  add("modulate, gated_residual",
      [](Rng& r) { return std::vector{randn({6, 3}, r), randn({2, 3}, r), randn({2, 3}, r), randn({6, 3}, r)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return gated_residual(modulate(v[0], v[1], v[2], 3), v[2], v[3], 3); });
  add("masked_residual", [](Rng& r) { return std::vector{randn({5, 4}, r), randn({5, 2}, r)}; },
      [](Tape<double>&, const std::vector<VarD>& v) { return masked_residual(v[0], v[1], TensorD({5}, {1, 0, 1, 1, 0}), 1); });
  {
    const GridDims dims{2, 4, 3};
    add("local_attention",
        [dims](Rng& r) {
          return std::vector{randn({dims.cells(), 5}, r), randn({dims.cells(), 5}, r), randn({dims.cells(), 5}, r)};
        },
        [dims](Tape<double>&, const std::vector<VarD>& v) { return local_attention(v[0], v[1], v[2], dims, 2); });
  }
  {
    const GridDims dims{2, 4, 4};
    add("gather_neighborhood, avg_pool2, group_mean_rows", [dims](Rng& r) { return std::vector{randn({dims.cells(), 2}, r)}; },
        [dims](Tape<double>&, const std::vector<VarD>& v) {
          return group_mean_rows(avg_pool2(gather_neighborhood(v[0], dims), dims), 2);
        });
  }
  // Every parameter and the grid state are inputs; the fire mask is fixed per seed.
  cases.push_back({"rule block, 4x4 grid, M = 2", [](int seed) {
                     const ThetaConfig config = small_theta_config(2);
                     const GridDims dims{2, 4, 4};
                     const auto params = random_theta<double>(config, static_cast<std::uint64_t>(seed));
                     std::vector<TensorD> inputs;
                     params.for_each([&](const char*, const TensorD& t) { inputs.push_back(t); });
                     Rng rng(static_cast<std::uint64_t>(seed) + 77);
                     inputs.push_back(randn({dims.cells(), config.layout.total()}, rng));
                     Builder f = [config, dims, seed](Tape<double>&, const std::vector<VarD>& v) {
                       const Conditioning cond{{3, 17}, {Label::parse("10"), Label::null()}};
                       const auto vars = bind_leaves(std::vector<VarD>(v.begin(), v.end() - 1), config);
                       const auto mod = condition(*v[0].tape, vars, cond);
                       Rng mask_rng(static_cast<std::uint64_t>(seed));
                       return evolve(vars, mod, v.back(), dims, 2, 0.5, mask_rng);
                     };
                     return std::pair{std::move(inputs), std::move(f)};
                   }});
  return cases;
}

inline GradientSummary run_gradient_case(const GradientCase& c, int seeds) {
  GradientSummary s;
  for (int seed = 0; seed < seeds; ++seed) {
    const auto [inputs, f] = c.setup(seed);
    const auto r = check_gradients(inputs, f, static_cast<std::uint64_t>(seed));
    s.worst_rel_error = std::max(s.worst_rel_error, std::isnan(r.rel_error) ? 1e300 : r.rel_error);
    s.smallest_norm = std::min(s.smallest_norm, r.analytic_norm);
  }
  return s;
}

}  // namespace geca::testing

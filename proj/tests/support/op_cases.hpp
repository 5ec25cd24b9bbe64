#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "sgembed/autodiff.hpp"
#include "support/gradcheck.hpp"

namespace sgembed::testing {

/// One finite-difference case per primitive; `run` draws a random instance.
struct OpCase {
  std::string name;
  std::uint64_t seed;
  std::function<GradCheckResult(std::mt19937_64&)> run;
};

inline std::size_t random_dim(std::mt19937_64& rng, std::size_t lo = 1, std::size_t hi = 5) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline std::vector<OpCase> primitive_op_cases() {
  return {
      {"Matmul", 1,
       [](std::mt19937_64& rng) {
         const std::size_t n = random_dim(rng), k = random_dim(rng), m = random_dim(rng);
         Tensor a = random_tensor({n, k}, rng), b = random_tensor({k, m}, rng), w = random_tensor({n, m}, rng);
         return check_gradients({&a, &b}, [&](Tape& t) {
           return project(t, ops::matmul(t.parameter(a), t.parameter(b)), w);
         });
       }},
      {"AddSubMulWithBroadcast", 2,
       [](std::mt19937_64& rng) {
         const std::size_t n = random_dim(rng), m = random_dim(rng);
         Tensor a = random_tensor({n, m}, rng), b = random_tensor({n, m}, rng), r = random_tensor({m}, rng);
         Tensor w = random_tensor({n, m}, rng);
         return check_gradients({&a, &b, &r}, [&](Tape& t) {
           const Var x = ops::add(ops::mul(t.parameter(a), t.parameter(b)), t.parameter(r));
           return project(t, ops::sub(x, t.parameter(b)), w);
         });
       }},
      {"DivElementwiseAndByScalar", 3,
       [](std::mt19937_64& rng) {
         const std::size_t n = random_dim(rng), m = random_dim(rng);
         Tensor a = random_tensor({n, m}, rng), b = random_tensor({n, m}, rng, 0.5, 2.0);
         Tensor s = Tensor::scalar(std::uniform_real_distribution<double>(0.5, 2.0)(rng));
         Tensor w = random_tensor({n, m}, rng);
         return check_gradients({&a, &b, &s}, [&](Tape& t) {
           const Var q = ops::div(t.parameter(a), t.parameter(b));
           return project(t, ops::div(q, t.parameter(s)), w);
         });
       }},
      {"ScalarAffine", 4,
       [](std::mt19937_64& rng) {
         Tensor a = random_tensor({random_dim(rng), random_dim(rng)}, rng);
         Tensor w = random_tensor(a.shape(), rng);
         return check_gradients({&a}, [&](Tape& t) {
           return project(t, ops::add_scalar(ops::mul_scalar(t.parameter(a), -1.7), 0.3), w);
         });
       }},
      {"ConcatBothAxes", 5,
       [](std::mt19937_64& rng) {
         const std::size_t n = random_dim(rng), m = random_dim(rng);
         Tensor a = random_tensor({n, m}, rng), b = random_tensor({n, random_dim(rng)}, rng), c = random_tensor({random_dim(rng), m}, rng);
         Tensor w1 = random_tensor({n, m + b.cols()}, rng), w0 = random_tensor({n + c.rows(), m}, rng);
         return check_gradients({&a, &b, &c}, [&](Tape& t) {
           const Var pa = t.parameter(a);
           const std::vector<Var> cols = {pa, t.parameter(b)}, rows = {pa, t.parameter(c)};
           return ops::add(project(t, ops::concat(cols, 1), w1), project(t, ops::concat(rows, 0), w0));
         });
       }},
      {"Relu", 6,
       [](std::mt19937_64& rng) {
         Tensor a = random_away_from_zero({random_dim(rng), random_dim(rng)}, rng);
         Tensor w = random_tensor(a.shape(), rng);
         return check_gradients({&a}, [&](Tape& t) { return project(t, ops::relu(t.parameter(a)), w); });
       }},
      {"SigmoidSoftplusExp", 7,
       [](std::mt19937_64& rng) {
         Tensor a = random_tensor({random_dim(rng), random_dim(rng)}, rng, -3, 3);
         Tensor w1 = random_tensor(a.shape(), rng), w2 = random_tensor(a.shape(), rng), w3 = random_tensor(a.shape(), rng);
         return check_gradients({&a}, [&](Tape& t) {
           const Var x = t.parameter(a);
           return ops::add(ops::add(project(t, ops::sigmoid(x), w1), project(t, ops::softplus(x), w2)),
                           project(t, ops::exp(x), w3));
         });
       }},
      {"Log", 8,
       [](std::mt19937_64& rng) {
         Tensor a = random_tensor({random_dim(rng), random_dim(rng)}, rng, 0.2, 3.0);
         Tensor w = random_tensor(a.shape(), rng);
         return check_gradients({&a}, [&](Tape& t) { return project(t, ops::log(t.parameter(a)), w); });
       }},
      {"SumAxesAndMean", 9,
       [](std::mt19937_64& rng) {
         const std::size_t n = random_dim(rng), m = random_dim(rng);
         Tensor a = random_tensor({n, m}, rng), w0 = random_tensor({m}, rng), w1 = random_tensor({n}, rng);
         return check_gradients({&a}, [&](Tape& t) {
           const Var x = t.parameter(a);
           const Var s = ops::add(project(t, ops::sum(x, 0), w0), project(t, ops::sum(x, 1), w1));
           return ops::add(s, ops::mul_scalar(ops::mean(x), 2.5));
         });
       }},
      {"RowDot", 10,
       [](std::mt19937_64& rng) {
         const std::size_t n = random_dim(rng), m = random_dim(rng);
         Tensor a = random_tensor({n, m}, rng), b = random_tensor({n, m}, rng), w = random_tensor({n}, rng);
         return check_gradients({&a, &b}, [&](Tape& t) {
           return project(t, ops::row_dot(t.parameter(a), t.parameter(b)), w);
         });
       }},
      {"RowwiseL2Normalize", 11,
       [](std::mt19937_64& rng) {
         const std::size_t n = random_dim(rng), m = random_dim(rng, 2, 5);
         Tensor a = random_tensor({n, m}, rng, 0.1, 1.0), w = random_tensor({n, m}, rng);
         return check_gradients({&a}, [&](Tape& t) {
           return project(t, ops::rowwise_l2_normalize(t.parameter(a)), w);
         });
       }},
      {"SegmentMean", 12,
       [](std::mt19937_64& rng) {
         const std::size_t n = random_dim(rng, 1, 8), m = random_dim(rng), segments = random_dim(rng, 1, 4);
         std::vector<std::size_t> ids(n);
         std::uniform_int_distribution<std::size_t> pick(0, segments - 1);
         for (auto& id : ids) id = pick(rng);
         Tensor a = random_tensor({n, m}, rng), w = random_tensor({segments, m}, rng);
         return check_gradients({&a}, [&](Tape& t) {
           return project(t, ops::segment_mean(t.parameter(a), ids, segments, EmptySegment::kZero), w);
         });
       }},
      {"GatherRowsWithRepeats", 13,
       [](std::mt19937_64& rng) {
         const std::size_t n = random_dim(rng), m = random_dim(rng), k = random_dim(rng, 1, 8);
         std::vector<std::size_t> idx(k);
         std::uniform_int_distribution<std::size_t> pick(0, n - 1);
         for (auto& i : idx) i = pick(rng);
         Tensor a = random_tensor({n, m}, rng), w = random_tensor({k, m}, rng);
         return check_gradients({&a}, [&](Tape& t) {
           return project(t, ops::gather_rows(t.parameter(a), idx), w);
         });
       }},
      {"BatchNormTrainAndEval", 14,
       [](std::mt19937_64& rng) {
         const std::size_t n = random_dim(rng, 2, 6), m = random_dim(rng);
         Tensor x = random_tensor({n, m}, rng), g = random_tensor({m}, rng, 0.5, 1.5), b = random_tensor({m}, rng);
         Tensor w1 = random_tensor({n, m}, rng), w2 = random_tensor({n, m}, rng);
         BatchNormStats stats(m);
         stats.running_mean = random_tensor({m}, rng).storage();
         stats.running_var = random_tensor({m}, rng, 0.5, 2.0).storage();
         return check_gradients({&x, &g, &b}, [&](Tape& t) {
           BatchNormStats scratch = stats;  // train mode mutates its stats
           const Var px = t.parameter(x), pg = t.parameter(g), pb = t.parameter(b);
           return ops::add(project(t, ops::batchnorm(px, pg, pb, scratch, Mode::kTrain), w1),
                           project(t, ops::batchnorm(px, pg, pb, stats), w2));
         });
       }},
  };
}

}  // namespace sgembed::testing

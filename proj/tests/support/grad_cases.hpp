#pragma once

// Finite-difference cases for every autograd primitive, shared by the unit
// tests and the acceptance binary.

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "groupcap/autograd.hpp"

namespace groupcap::check {

struct GradCase {
  std::string name;
  double rel_error;
};

inline Matrix gaussian(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(r, c);
  for (auto& v : m.values()) v = n(rng);
  return m;
}

/// Values bounded away from zero so relu stays differentiable under the
/// finite-difference step.
inline Matrix away_from_zero(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.5);
  std::bernoulli_distribution sign(0.5);
  Matrix m(r, c);
  for (auto& v : m.values()) v = sign(rng) ? mag(rng) : -mag(rng);
  return m;
}

/// Reduces an output to a scalar with fixed random weights so every output
/// coordinate receives a distinct upstream gradient.
inline Var weighted_sum(Var y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix w = gaussian(y.rows(), y.cols(), rng);
  return sum(mul(y, y.tape()->constant(std::move(w))));
}

inline std::vector<GradCase> primitive_grad_cases() {
  std::mt19937_64 rng(2024);
  ParamStore s;
  Parameter& a = s.add("a", gaussian(3, 4, rng));
  Parameter& b = s.add("b", gaussian(4, 2, rng));
  Parameter& c = s.add("c", gaussian(3, 4, rng));
  Parameter& d = s.add("d", gaussian(5, 4, rng));
  Parameter& row = s.add("row", gaussian(1, 4, rng));
  Parameter& nz = s.add("nz", away_from_zero(3, 4, rng));
  Parameter& table = s.add("table", gaussian(6, 3, rng));
  Parameter& sq = s.add("sq", gaussian(4, 4, rng));

  std::vector<GradCase> out;
  auto check = [&](const std::string& name, std::function<Var(Tape&)> f, std::vector<Parameter*> ps) {
    out.push_back({name, grad_check(f, std::span<Parameter* const>(ps))});
  };
  check("matmul", [&](Tape& t) { return weighted_sum(matmul(t.param(a), t.param(b)), 1); }, {&a, &b});
  check("matmul_nt", [&](Tape& t) { return weighted_sum(matmul_nt(t.param(a), t.param(d)), 2); }, {&a, &d});
  check("add", [&](Tape& t) { return weighted_sum(add(t.param(a), t.param(c)), 3); }, {&a, &c});
  check("sub", [&](Tape& t) { return weighted_sum(sub(t.param(a), t.param(c)), 4); }, {&a, &c});
  check("mul", [&](Tape& t) { return weighted_sum(mul(t.param(a), t.param(c)), 5); }, {&a, &c});
  check("scale", [&](Tape& t) { return weighted_sum(scale(t.param(a), -1.7), 6); }, {&a});
  check("neg", [&](Tape& t) { return weighted_sum(neg(t.param(a)), 7); }, {&a});
  check("relu", [&](Tape& t) { return weighted_sum(relu(t.param(nz)), 8); }, {&nz});
  check("tanh", [&](Tape& t) { return weighted_sum(tanh(t.param(a)), 9); }, {&a});
  check("sigmoid", [&](Tape& t) { return weighted_sum(sigmoid(t.param(a)), 10); }, {&a});
  check("broadcast_add_rowvec",
        [&](Tape& t) { return weighted_sum(broadcast_add_rowvec(t.param(a), t.param(row)), 11); }, {&a, &row});
  check("concat_rows", [&](Tape& t) { return weighted_sum(concat_rows({t.param(a), t.param(d)}), 12); },
        {&a, &d});
  check("concat_cols", [&](Tape& t) { return weighted_sum(concat_cols({t.param(a), t.param(c)}), 13); },
        {&a, &c});
  check("slice_rows", [&](Tape& t) { return weighted_sum(slice_rows(t.param(d), 1, 3), 14); }, {&d});
  check("slice_cols", [&](Tape& t) { return weighted_sum(slice_cols(t.param(d), 1, 2), 15); }, {&d});
  check("mean_rows", [&](Tape& t) { return weighted_sum(mean_rows(t.param(d)), 16); }, {&d});
  check("sum", [&](Tape& t) { return sum(mul(t.param(a), t.param(a))); }, {&a});
  check("gather_rows", [&](Tape& t) { return weighted_sum(gather_rows(t.param(table), {4, 0, 4, 2}), 17); },
        {&table});
  check("row_softmax", [&](Tape& t) { return weighted_sum(row_softmax(t.param(sq)), 18); }, {&sq});
  Mask mask(4, 4);
  mask.set(0, 1, false);
  mask.set(2, 0, false);
  mask.set(2, 3, false);
  check("row_softmax_masked", [&](Tape& t) { return weighted_sum(row_softmax(t.param(sq), &mask), 19); }, {&sq});
  check("cross_entropy",
        [&](Tape& t) {
          return cross_entropy_from_logits(t.param(a), {1, 3, 0}, {false, true, false});
        },
        {&a});
  return out;
}

}  // namespace groupcap::check

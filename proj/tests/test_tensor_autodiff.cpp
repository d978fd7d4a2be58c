#include <doctest.h>

#include <cmath>

#include "mhsa/autodiff.hpp"
#include "mhsa/errors.hpp"
#include "mhsa/gradcheck.hpp"
#include "mhsa/verification.hpp"
#include "test_util.hpp"

using namespace mhsa;
using ad::Tape;
using ad::Var;

TEST_CASE("tensor construction checks shape and data") {
  CHECK_THROWS_AS(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  CHECK_THROWS_AS(Tensor({2, 0}), DimensionError);
  const Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.reshaped({3, 2}).rows() == 3);
  CHECK_THROWS_AS(t.reshaped({4, 2}), DimensionError);
}

TEST_CASE("matmul examples") {
  Tape tape;
  const Var m = tape.constant(Tensor::from_rows({{1, 2}, {3, 4}}));
  CHECK(ad::matmul(tape.constant(Tensor::eye(2)), m).value() == m.value());
  const Var sel = tape.constant(Tensor::from_rows({{1, 0}, {0, 0}}));
  CHECK(ad::matmul(sel, tape.constant(Tensor::from_rows({{5, 6}, {7, 8}}))).value() ==
        Tensor::from_rows({{5, 6}, {0, 0}}));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape tape;
  try {
    ad::matmul(tape.constant(Tensor({3, 4})), tape.constant(Tensor({3, 2})));
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("3x4") != std::string::npos);
    CHECK(msg.find("3x2") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum matches finite differences to 1e-6") {
  Rng rng(3);
  const auto r = check_gradients("matmul", [](Tape&, std::span<const Var> v) { return ad::sum(ad::matmul(v[0], v[1])); },
                                 {gaussian({3, 4}, 1.0, rng), gaussian({4, 2}, 1.0, rng)});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("softmax examples") {
  Tape tape;
  const Tensor u = ad::softmax_rows(tape.constant(Tensor({1, 4}, 0.7))).value();
  for (double v : u.values()) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));
  const Tensor big = ad::softmax_rows(tape.constant(Tensor::row({1000, 0}))).value();
  CHECK(big[0] == doctest::Approx(1.0));
  CHECK(big[1] < 1e-300);
  CHECK(big.all_finite());
  Rng rng(5);
  const Tensor s = ad::softmax_rows(tape.constant(gaussian({5, 3}, 3.0, rng))).value();
  for (std::size_t r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
      CHECK(s(r, c) >= 0.0);
      CHECK(s(r, c) <= 1.0);
      sum += s(r, c);
    }
    CHECK(std::abs(sum - 1.0) < 1e-12);
  }
}

TEST_CASE("softmax rejects non-finite input") {
  Tape tape;
  CHECK_THROWS_AS(tape.constant(Tensor::row({1.0, std::nan("")})), NumericError);
  const Var x = tape.constant(Tensor::row({1e308, 1e308}));
  CHECK_THROWS_AS(ad::softmax_rows(ad::scale(x, 10.0)), NumericError);
}

TEST_CASE("relu examples") {
  Tape tape;
  CHECK(ad::relu(tape.constant(Tensor::row({-1, 0, 2}))).value() == Tensor::row({0, 0, 2}));
  const Var x = tape.leaf(Tensor::row({-1, -2, -0.5}), true);
  const Var y = ad::relu(x);
  CHECK(y.value() == Tensor({1, 3}, 0.0));
  tape.backward(ad::sum(y));
  CHECK(x.grad() == Tensor({1, 3}, 0.0));
  // Subgradient at exactly 0 is 0.
  const Var z = tape.leaf(Tensor::row({0.0}), true);
  tape.backward(ad::sum(ad::relu(z)));
  CHECK(z.grad()[0] == 0.0);
}

TEST_CASE("relu gradient away from zero matches finite differences to 1e-6") {
  Rng rng(8);
  Tensor x = gaussian({4, 5}, 1.0, rng);
  for (double& v : x.values()) v += v > 0 ? 0.2 : -0.2;
  const auto r = check_gradients("relu", [](Tape&, std::span<const Var> v) { return ad::sum(ad::relu(v[0])); }, {x});
  CHECK(r.max_rel_error < 1e-6);
}

TEST_CASE("layer_norm examples") {
  Tape tape;
  const Var gain = tape.constant(Tensor({1, 4}, 1.0));
  const Var bias = tape.constant(Tensor({1, 4}, 0.0));
  const Tensor flat = ad::layer_norm(tape.constant(Tensor({1, 4}, 5.0)), gain, bias, 1e-5).value();
  CHECK(flat == Tensor({1, 4}, 0.0));
  // (x - 2.5) / sqrt(1.25)
  const Tensor y = ad::layer_norm(tape.constant(Tensor::row({1, 2, 3, 4})), gain, bias, 0.0).value();
  const double expect[] = {-1.3416, -0.4472, 0.4472, 1.3416};
  for (int i = 0; i < 4; ++i) CHECK(std::abs(y[i] - expect[i]) < 1e-4);
  CHECK_THROWS_AS(ad::layer_norm(tape.constant(Tensor::row({1.0})), tape.constant(Tensor::row({1.0})),
                                 tape.constant(Tensor::row({0.0})), 1e-5),
                  DimensionError);
}

TEST_CASE("layer_norm gradient matches finite differences to 1e-5") {
  Rng rng(11);
  const auto r = check_gradients(
      "layer_norm",
      [](Tape& t, std::span<const Var> v) {
        Rng w(1);
        return ad::sum(ad::mul(ad::layer_norm(v[0], v[1], v[2], 1e-5), t.constant(gaussian({3, 5}, 1.0, w))));
      },
      {gaussian({3, 5}, 1.0, rng), gaussian({1, 5}, 1.0, rng), gaussian({1, 5}, 1.0, rng)});
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("backward: analytic, unreachable and contract cases") {
  Tape tape;
  const Var x = tape.leaf(Tensor::row({1.0, -2.0, 3.5}), true);
  const Var p = tape.leaf(Tensor::row({4.0}), true);
  tape.backward(ad::sum(ad::square(x)));
  CHECK(x.grad() == Tensor::row({2.0, -4.0, 7.0}));
  CHECK(p.grad() == Tensor::row({0.0}));
  CHECK_THROWS_AS(tape.backward(ad::square(x)), ContractError);
  Tape other;
  CHECK_THROWS_AS(other.backward(ad::sum(x)), ContractError);
}

TEST_CASE("backward accumulates into leaf gradients until zero_grad") {
  Tape tape;
  const Var x = tape.leaf(Tensor::row({1.0, 2.0}), true);
  const Var loss = ad::sum(ad::square(x));
  tape.backward(loss);
  tape.backward(loss);
  CHECK(x.grad() == Tensor::row({4.0, 8.0}));
  tape.zero_grad();
  tape.backward(loss);
  CHECK(x.grad() == Tensor::row({2.0, 4.0}));
}

TEST_CASE("replaying the same tape gives bitwise-identical gradients") {
  Rng rng(2);
  Tape tape;
  const Var a = tape.leaf(gaussian({4, 3}, 1.0, rng), true);
  const Var b = tape.leaf(gaussian({3, 5}, 1.0, rng), true);
  const Var loss = ad::sum(ad::log_softmax_rows(ad::relu(ad::matmul(a, b))));
  tape.backward(loss);
  const Tensor ga = a.grad(), gb = b.grad();
  tape.zero_grad();
  tape.backward(loss);
  CHECK(a.grad() == ga);
  CHECK(b.grad() == gb);
}

TEST_CASE("pairwise squared distance is symmetric with zero diagonal") {
  Rng rng(4);
  Tape tape;
  const Var a = tape.constant(gaussian({6, 5}, 2.0, rng));
  const Tensor d = ad::pairwise_sqdist(a, a).value();
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(std::abs(d(i, i)) < 1e-12);
    for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(d(i, j) - d(j, i)) < 1e-12);
  }
}

TEST_CASE("l2 normalization of a zero row is a numeric error") {
  Tape tape;
  CHECK_THROWS_AS(ad::l2_normalize_rows(tape.constant(Tensor::from_rows({{1, 2}, {0, 0}}))), NumericError);
}

TEST_CASE("every op passes the finite-difference suite on 10 seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    for (const auto& r : run_gradcheck_suite(seed)) {
      INFO(r.component << " seed " << seed << " err " << r.max_rel_error);
      CHECK(r.passed);
      CHECK(r.checked > 0);
    }
  }
}

TEST_CASE("a corrupted analytic gradient is caught") {
  GradcheckOptions o;
  o.corrupt_analytic = [](std::vector<Tensor>& g) { g[0][0] += 0.5; };
  Rng rng(1);
  const auto r = check_gradients("square", [](Tape&, std::span<const Var> v) { return ad::sum(ad::square(v[0])); },
                                 {gaussian({2, 2}, 1.0, rng)}, o);
  CHECK_FALSE(r.passed);
}

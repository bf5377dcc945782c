#include <doctest.h>

#include "support/gradcheck.hpp"
#include "vitforge/train.hpp"

using namespace vitforge;
using namespace vitforge::testing;

namespace {
constexpr double kTol = 1e-4;
}

TEST_CASE("op gradients match central differences") {
  Rng rng(21);
  SUBCASE("matmul") {
    CHECK(input_grad_error({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng)},
                           [](Tape<double>&, const auto& v) { return ad::matmul(v[0], v[1]); }) < kTol);
  }
  SUBCASE("matmul_nt") {
    CHECK(input_grad_error({random_tensor({3, 4}, rng), random_tensor({5, 4}, rng)},
                           [](Tape<double>&, const auto& v) { return ad::matmul_nt(v[0], v[1]); }) < kTol);
  }
  SUBCASE("linear") {
    CHECK(input_grad_error({random_tensor({3, 4}, rng), random_tensor({4, 2}, rng), random_tensor({2}, rng)},
                           [](Tape<double>&, const auto& v) { return ad::linear(v[0], v[1], v[2]); }) < kTol);
  }
  SUBCASE("softmax_rows") {
    CHECK(input_grad_error({random_tensor({3, 5}, rng, -3, 3)},
                           [](Tape<double>&, const auto& v) { return ad::softmax_rows(v[0]); }) < kTol);
  }
  SUBCASE("attention") {
    CHECK(input_grad_error({random_tensor({4, 3}, rng), random_tensor({5, 3}, rng), random_tensor({5, 2}, rng)},
                           [](Tape<double>&, const auto& v) { return ad::attention(v[0], v[1], v[2], 0.7); }) < kTol);
  }
  SUBCASE("layer_norm") {
    CHECK(input_grad_error({random_tensor({3, 6}, rng, -2, 2), random_tensor({6}, rng), random_tensor({6}, rng)},
                           [](Tape<double>&, const auto& v) {
                             return ad::layer_norm(v[0], v[1], v[2], 1e-6);
                           }) < kTol);
  }
  SUBCASE("gelu") {
    CHECK(input_grad_error({random_tensor({4, 4}, rng, -3, 3)},
                           [](Tape<double>&, const auto& v) { return ad::gelu(v[0]); }) < kTol);
  }
  SUBCASE("slices and concatenations") {
    CHECK(input_grad_error({random_tensor({3, 6}, rng), random_tensor({2, 6}, rng), random_tensor({6}, rng)},
                           [](Tape<double>&, const auto& v) {
                             Var<double> stacked = ad::concat_rows<double>({v[0], v[1]});
                             Var<double> cols = ad::concat_cols<double>(
                                 {ad::slice_cols(stacked, 4, 6), ad::slice_cols(stacked, 0, 2)});
                             Var<double> rows = ad::slice_rows(cols, 1, 4);
                             return ad::add_row_vector(rows, ad::slice_vector(v[2], 2, 6));
                           }) < kTol);
  }
  SUBCASE("cross_entropy") {
    const std::vector<int> labels{2, 0, 1};
    CHECK(input_grad_error({random_tensor({3, 4}, rng, -3, 3)},
                           [&](Tape<double>&, const auto& v) { return ad::cross_entropy(v[0], labels); }) < kTol);
  }
}

TEST_CASE("linear layer gradient equals the closed-form outer product") {
  Rng rng(4);
  const auto x = random_tensor({1, 3}, rng), w = random_tensor({3, 2}, rng), b = random_tensor({2}, rng);
  const auto target = random_tensor({1, 2}, rng);
  Tape<double> tape;
  Var<double> vx = tape.constant(x), vw = tape.input(w), vb = tape.input(b);
  Var<double> y = ad::linear(vx, vw, vb);
  Var<double> residual = ad::add(y, tape.constant(scale(target, -1.0)));
  Var<double> loss = ad::scale(ad::sum(ad::hadamard(residual, residual)), 0.5);
  tape.backward(loss);
  const Tensor<double> r = residual.value();
  const Tensor<double> dw = tape.grad(vw), db = tape.grad(vb);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) CHECK(dw.at(i, j) == doctest::Approx(x[i] * r[j]).epsilon(1e-14));
  CHECK(db[0] == doctest::Approx(r[0]).epsilon(1e-14));
  CHECK(db[1] == doctest::Approx(r[1]).epsilon(1e-14));
}

TEST_CASE("parameters the loss ignores get exact zero gradients") {
  ModelParams<double> params;
  params.add("used", Tensor<double>::matrix({{1, 2}, {3, 4}}));
  params.add("unused", Tensor<double>::matrix({{5, 6}}));
  params.add("frozen", Tensor<double>::matrix({{7}}), false);
  Tape<double> tape;
  BoundParams<double> bound(tape, params);
  Var<double> loss = ad::sum(ad::matmul(tape.constant(Tensor<double>::matrix({{1, 1}})), bound("used")));
  const auto grads = backward(tape, loss);
  CHECK(grads.size() == 2);
  CHECK(grads.at("unused") == Tensor<double>({1, 2}));
  CHECK(grads.at("used") == Tensor<double>::matrix({{1, 1}, {1, 1}}));
  CHECK_FALSE(grads.contains("frozen"));
}

TEST_CASE("backward misuse is a usage error") {
  Tape<double> idle(false);
  Var<double> v = idle.constant(Tensor<double>({1}, 1.0));
  CHECK_THROWS_AS(idle.backward(v), UsageError);

  Tape<double> tape;
  Var<double> x = tape.input(Tensor<double>({1}, 2.0));
  Var<double> loss = ad::scale(x, 3.0);
  CHECK_THROWS_AS(tape.parameter_grads(), UsageError);
  tape.backward(loss);
  CHECK(tape.grad(x)[0] == 3.0);
  CHECK_THROWS_AS(tape.backward(loss), UsageError);

  Tape<double> other;
  Var<double> y = other.input(Tensor<double>({2}, 1.0));
  CHECK_THROWS_AS(other.backward(y), ShapeError);
}

TEST_CASE("cross_entropy_loss examples") {
  const std::vector<int> zero{0}, one{1}, two{2};
  CHECK(cross_entropy_loss(Tensor<double>::matrix({{0, 0}}), zero) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy_loss(Tensor<double>::matrix({{0, 0}}), one) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(cross_entropy_loss(Tensor<double>::matrix({{1000, 0}}), zero) == doctest::Approx(0.0));
  CHECK(cross_entropy_loss(Tensor<double>::matrix({{1000, 0}}), one) == doctest::Approx(1000.0).epsilon(1e-12));
  const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  CHECK(cross_entropy_loss(Tensor<double>::matrix({{1, 2, 3}}), two) ==
        doctest::Approx(-std::log(e3 / (e1 + e2 + e3))).epsilon(1e-14));
  CHECK(cross_entropy_loss(Tensor<float>::matrix({{1000, 0}}), one) == doctest::Approx(1000.0f));
}

TEST_CASE("cross_entropy rejects out-of-range labels") {
  const std::vector<int> bad{2}, negative{-1}, too_many{0, 1};
  CHECK_THROWS_AS(cross_entropy_loss(Tensor<double>::matrix({{0, 0}}), bad), ValidationError);
  CHECK_THROWS_AS(cross_entropy_loss(Tensor<double>::matrix({{0, 0}}), negative), ValidationError);
  CHECK_THROWS_AS(cross_entropy_loss(Tensor<double>::matrix({{0, 0}}), too_many), ValidationError);
}

#include <random>
#include <sstream>

#include "bssm/error.hpp"
#include "bssm/gradcheck.hpp"
#include "bssm/ops.hpp"
#include "doctest.h"

using namespace bssm;
using T = Tensor<double>;
using V = Var<double>;

namespace {

T random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  T t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (Index i = 0; i < t.numel(); ++i) t[i] = u(rng);
  return t;
}

// Weighted sum so every output coordinate gets a distinct upstream gradient.
V probe(const V& y, const T& w) { return sum(mul(y, V::constant(w))); }

double check_unary(std::mt19937_64& rng, V (*op)(const V&), double lo, double hi) {
  V x = V::parameter(random_tensor(rng, {3, 4}, lo, hi));
  const T w = random_tensor(rng, {3, 4});
  return grad_check([&] { return probe(op(x), w); }, {x}).max_rel_error;
}

}  // namespace

TEST_CASE("elementwise ops pass the finite-difference check") {
  std::mt19937_64 rng(1);
  CHECK(check_unary(rng, &bssm::exp<double>, -1, 1) < 1e-5);
  CHECK(check_unary(rng, &bssm::log<double>, 0.5, 2) < 1e-5);
  CHECK(check_unary(rng, &bssm::square<double>, -1, 1) < 1e-5);
  CHECK(check_unary(rng, &bssm::sigmoid<double>, -3, 3) < 1e-5);
  CHECK(check_unary(rng, &bssm::softplus<double>, -3, 3) < 1e-5);
  CHECK(check_unary(rng, &bssm::silu<double>, -3, 3) < 1e-5);
  CHECK(check_unary(rng, &bssm::neg<double>, -1, 1) < 1e-5);
  CHECK(check_unary(rng, &bssm::log_softmax<double>, -2, 2) < 1e-5);
  CHECK(check_unary(rng, [](const V& v) { return softmax(v); }, -2, 2) < 1e-5);
  CHECK(check_unary(rng, [](const V& v) { return scale(v, 2.5); }, -1, 1) < 1e-5);
  CHECK(check_unary(rng, [](const V& v) { return add_scalar(v, 0.5); }, -1, 1) < 1e-5);
}

TEST_CASE("binary ops with broadcasting pass the finite-difference check") {
  std::mt19937_64 rng(2);
  for (const Shape& bshape : {Shape{2, 3, 4}, Shape{4}, Shape{}}) {
    V a = V::parameter(random_tensor(rng, {2, 3, 4}));
    V b = V::parameter(random_tensor(rng, bshape, 0.5, 1.5));
    const T w = random_tensor(rng, {2, 3, 4});
    CHECK(grad_check([&] { return probe(add(a, b), w); }, {a, b}).max_rel_error < 1e-5);
    CHECK(grad_check([&] { return probe(sub(a, b), w); }, {a, b}).max_rel_error < 1e-5);
    CHECK(grad_check([&] { return probe(mul(a, b), w); }, {a, b}).max_rel_error < 1e-5);
    CHECK(grad_check([&] { return probe(div(a, b), w); }, {a, b}).max_rel_error < 1e-5);
  }
}

TEST_CASE("structural ops pass the finite-difference check") {
  std::mt19937_64 rng(3);
  V a = V::parameter(random_tensor(rng, {2, 3, 4}));
  V b = V::parameter(random_tensor(rng, {4, 5}));
  V c = V::parameter(random_tensor(rng, {2, 3, 2}));
  const T w5 = random_tensor(rng, {2, 3, 5});
  const T w6 = random_tensor(rng, {2, 3, 6});
  const T w2 = random_tensor(rng, {2, 3, 2});
  CHECK(grad_check([&] { return probe(matmul(a, b), w5); }, {a, b}).max_rel_error < 1e-5);
  CHECK(grad_check([&] { return probe(concat<double>({a, c}), w6); }, {a, c}).max_rel_error < 1e-5);
  CHECK(grad_check([&] { return probe(slice(a, 1, 2), w2); }, {a}).max_rel_error < 1e-5);
  CHECK(grad_check([&] { return mean(square(reshape(a, {6, 4}))); }, {a}).max_rel_error < 1e-5);
  const T wt = random_tensor(rng, {5, 4});
  CHECK(grad_check([&] { return probe(transpose(b), wt); }, {b}).max_rel_error < 1e-5);
}

TEST_CASE("layer norm, embedding, conv, pooling and losses pass the finite-difference check") {
  std::mt19937_64 rng(4);
  V x = V::parameter(random_tensor(rng, {6, 5}));
  V gain = V::parameter(random_tensor(rng, {5}, 0.5, 1.5));
  V bias = V::parameter(random_tensor(rng, {5}));
  const T w = random_tensor(rng, {6, 5});
  CHECK(grad_check([&] { return probe(layer_norm(x, gain, bias), w); }, {x, gain, bias}).max_rel_error < 1e-5);

  V table = V::parameter(random_tensor(rng, {7, 5}));
  const std::vector<int> ids = {3, 0, 3, 6, 1, 3};
  CHECK(grad_check([&] { return probe(embedding_lookup<double>(table, ids), w); }, {table}).max_rel_error < 1e-5);

  V kernel = V::parameter(random_tensor(rng, {4, 5}));
  V cbias = V::parameter(random_tensor(rng, {5}));
  CHECK(grad_check([&] { return probe(causal_depthwise_conv(x, kernel, cbias, 3), w); }, {x, kernel, cbias})
            .max_rel_error < 1e-5);

  const std::vector<double> mask = {1, 1, 0, 1, 0, 0};
  const T w2 = random_tensor(rng, {2, 5});
  CHECK(grad_check([&] { return probe(masked_mean_pool<double>(x, mask, 3), w2); }, {x}).max_rel_error < 1e-5);
  CHECK(grad_check([&] { return probe(mask_rows<double>(x, mask), w); }, {x}).max_rel_error < 1e-5);

  const std::vector<int> targets = {0, 4, 2, 1, 3, 0};
  const std::vector<double> weights = {1.0, 0.5, 0.0, 2.0, 1.0, 0.25};
  CHECK(grad_check([&] { return sparse_cross_entropy<double>(x, targets, weights); }, {x}).max_rel_error < 1e-5);
  const T coef = random_tensor(rng, {6, 5}, 0.0, 1.0);
  CHECK(grad_check([&] { return soft_cross_entropy(x, coef); }, {x}).max_rel_error < 1e-5);
}

TEST_CASE("composed graph with fan-out") {
  std::mt19937_64 rng(5);
  V x = V::parameter(random_tensor(rng, {4, 3}));
  V m = V::parameter(random_tensor(rng, {3, 3}));
  auto f = [&] {
    const V h = silu(matmul(x, m));
    return mean(mul(h, add(h, exp(x))));
  };
  CHECK(grad_check(f, {x, m}).max_rel_error < 1e-5);
}

TEST_CASE("forward examples") {
  const V z = softmax(V::constant(T({3}, {0, 0, 0})));
  for (Index i = 0; i < 3; ++i) CHECK(z.value()[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  const V ln = layer_norm(V::constant(T::constant({2, 4}, 3.5)), V::constant(T::constant({4}, 1)),
                          V::constant(T::zeros({4})));
  CHECK(ln.value().values().cwiseAbs().maxCoeff() == 0.0);

  std::mt19937_64 rng(6);
  const T x = random_tensor(rng, {3, 3});
  const T eye = T::from_matrix(Tensor<double>::RowMatrix::Identity(3, 3));
  CHECK(matmul(V::constant(eye), V::constant(x)).value().values() == x.values());

  const T big = random_tensor(rng, {20, 7}, -30, 30);
  const V s = softmax(V::constant(big));
  for (Index r = 0; r < 20; ++r) CHECK(std::abs(s.value().matrix().row(r).sum() - 1.0) < 1e-12);
  const auto sf = softmax(Var<float>::constant(big.cast<float>()));
  for (Index r = 0; r < 20; ++r) CHECK(std::abs(sf.value().matrix().row(r).sum() - 1.0f) < 1e-6f);
}

TEST_CASE("backward examples") {
  V x = V::parameter(T({3}, {1, 2, 3}));
  backward(sum(square(x)));
  CHECK(x.grad().values() == Eigen::Vector3d(2, 4, 6));

  V logits = V::parameter(T({1, 2}, {0, 0}));
  const std::vector<int> target = {0};
  const std::vector<double> weight = {1.0};
  backward(sparse_cross_entropy<double>(logits, target, weight));
  CHECK(logits.grad()[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(logits.grad()[1] == doctest::Approx(0.5).epsilon(1e-15));

  // Leaf gradients accumulate until cleared.
  V y = V::parameter(T({2}, {1, 1}));
  backward(sum(y));
  backward(sum(y));
  CHECK(y.grad()[0] == 2.0);
  y.zero_grad();
  CHECK_FALSE(y.has_grad());

  CHECK_THROWS_AS(backward(square(x)), ContractError);
}

TEST_CASE("no-grad guard records nothing") {
  V x = V::parameter(T({2}, {1, 2}));
  NoGradGuard guard;
  const V y = sum(square(x));
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("backward is deterministic") {
  std::mt19937_64 rng(7);
  V a = V::parameter(random_tensor(rng, {5, 4}));
  V b = V::parameter(random_tensor(rng, {4, 4}));
  auto run = [&] {
    a.zero_grad();
    b.zero_grad();
    backward(mean(softplus(matmul(layer_norm(a, V::constant(T::constant({4}, 1)), V::constant(T::zeros({4}))), b))));
    return std::make_pair(a.grad().values().eval(), b.grad().values().eval());
  };
  const auto first = run();
  const auto second = run();
  CHECK(first.first == second.first);
  CHECK(first.second == second.second);
}

TEST_CASE("grad_check on linear maps and corrupted gradients") {
  std::mt19937_64 rng(8);
  V x = V::parameter(random_tensor(rng, {4, 3}));
  const T w = random_tensor(rng, {4, 3});
  GradCheckOptions coarse;
  coarse.step = 1e-3;  // exact for a linear map at any step
  CHECK(grad_check([&] { return probe(x, w); }, {x}, coarse).max_rel_error < 1e-10);

  auto f = [&] { return mean(exp(x)); };
  x.zero_grad();
  backward(f());
  T doubled = x.grad();
  doubled.values() *= 2.0;
  x.zero_grad();
  const auto bad = grad_check_against([&] { return f().value().item(); }, {x}, {doubled});
  CHECK(bad.max_rel_error == doctest::Approx(0.5).epsilon(1e-4));

  GradCheckOptions sampled;
  sampled.max_coords_per_tensor = 5;
  const auto r = grad_check(f, {x}, sampled);
  CHECK(r.coords_checked == 5);
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("errors carry both shapes") {
  const V a = V::constant(T::zeros({2, 3}));
  const V b = V::constant(T::zeros({2, 4}));
  try {
    add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(2, 4)") != std::string::npos);
  }
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
  CHECK_THROWS_AS(log(V::constant(T({2}, {1, 0}))), DomainError);
  CHECK_THROWS_AS(div(a, V::constant(T::zeros({3}))), DomainError);
  const std::vector<int> ids = {9};
  CHECK_THROWS_AS(embedding_lookup<double>(a, ids), LookupError);
}

TEST_CASE("causal conv ignores the future") {
  std::mt19937_64 rng(9);
  const Index len = 10;
  const T x = random_tensor(rng, {2 * len, 3});
  const V kernel = V::constant(random_tensor(rng, {4, 3}));
  const V bias = V::constant(random_tensor(rng, {3}));
  const T base = causal_depthwise_conv(V::constant(x), kernel, bias, len).value();
  for (Index t = 0; t < len; ++t) {
    T cut = x;
    for (Index b = 0; b < 2; ++b)
      for (Index s = t + 1; s < len; ++s) cut.matrix().row(b * len + s).setZero();
    const T out = causal_depthwise_conv(V::constant(cut), kernel, bias, len).value();
    for (Index b = 0; b < 2; ++b) CHECK(out.matrix().row(b * len + t) == base.matrix().row(b * len + t));
  }
}

TEST_CASE("tensor dump round trip") {
  std::mt19937_64 rng(10);
  const T t = random_tensor(rng, {2, 3, 4});
  std::stringstream io;
  t.dump(io);
  const T back = T::load_dump(io);
  CHECK(back.shape() == t.shape());
  CHECK(back.values() == t.values());
  CHECK(shape_string({2, 3}) == "(2, 3)");
}

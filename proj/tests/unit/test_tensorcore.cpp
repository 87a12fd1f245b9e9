#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

#include "enfode/param_store.hpp"
#include "enfode/rng.hpp"
#include "enfode/tape.hpp"

using namespace enfode;

namespace {

Tensor random_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("softmax of uniform logits is uniform") {
  Tape t;
  Value x = t.leaf(Tensor::from({3}, {0.0, 0.0, 0.0}));
  Value y = t.softmax(x, 0);
  for (double v : y.val().data) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("softmax rows are nonnegative and sum to 1") {
  Rng rng(7);
  Tape t;
  Value x = t.leaf(random_tensor({5, 9}, rng, -30.0, 30.0));
  Value y = t.softmax(x, 1);
  const Tensor& v = y.val();
  for (double e : v.data) CHECK(e >= 0.0);
  for (int64_t r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int64_t c = 0; c < 9; ++c) s += v.at({r, c});
    CHECK(std::fabs(s - 1.0) < 1e-12);
  }
}

TEST_CASE("matmul identity") {
  Rng rng(3);
  Tape t;
  Tensor eye(Shape{3, 3});
  for (int i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
  Tensor m = random_tensor({3, 3}, rng);
  Value y = t.matmul(t.leaf(eye), t.leaf(m));
  CHECK(max_abs_diff(y.val(), m) == 0.0);
}

TEST_CASE("layer_norm gives zero mean unit variance") {
  Tape t;
  Value x = t.leaf(Tensor::from({1, 3}, {1.0, 2.0, 3.0}));
  Value gamma = t.leaf(Tensor::from({3}, {1.0, 1.0, 1.0}));
  Value beta = t.leaf(Tensor::from({3}, {0.0, 0.0, 0.0}));
  Value y = t.layer_norm(x, 1, gamma, beta);
  const auto& v = y.val().data;
  const double mean = (v[0] + v[1] + v[2]) / 3.0;
  double var = 0.0;
  for (double e : v) var += (e - mean) * (e - mean);
  var /= 3.0;
  CHECK(std::fabs(mean) < 1e-12);
  CHECK(std::fabs(var - 1.0) < 1e-9);
}

TEST_CASE("shape errors name the op") {
  Tape t;
  Value a = t.leaf(Tensor(Shape{2, 3}));
  Value b = t.leaf(Tensor(Shape{4, 5}));
  CHECK_THROWS_WITH_AS(t.matmul(a, b), doctest::Contains("matmul"), std::invalid_argument);
  CHECK_THROWS_AS(t.log(t.leaf(Tensor::from({1}, {-1.0}))), std::invalid_argument);
  CHECK_THROWS_AS(t.sqrt(t.leaf(Tensor::from({1}, {-0.5}))), std::invalid_argument);
}

TEST_CASE("backward of x^2 at 3") {
  Tape t;
  Value x = t.leaf(Tensor::scalar(3.0), true);
  Value y = t.square(x);
  auto g = t.backward(y);
  CHECK(g.at(x).val().data[0] == doctest::Approx(6.0).epsilon(1e-14));
}

TEST_CASE("softmax gradient sums to zero along the axis") {
  Rng rng(11);
  Tape t;
  Value x = t.leaf(random_tensor({4, 6}, rng, -2.0, 2.0), true);
  Value y = t.softmax(x, 1);
  // arbitrary scalar functional of the softmax output
  Value w = t.leaf(random_tensor({4, 6}, rng));
  Value loss = t.sum_all(t.mul(y, w));
  auto g = t.backward(loss);
  const Tensor& gx = g.at(x).val();
  for (int64_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (int64_t c = 0; c < 6; ++c) s += gx.at({r, c});
    CHECK(std::fabs(s) < 1e-14);
  }
}

TEST_CASE("three-layer MLP gradient matches finite differences") {
  Rng rng(13);
  const Tensor w1 = random_tensor({8, 5}, rng), b1 = random_tensor({8}, rng);
  const Tensor w2 = random_tensor({8, 8}, rng), b2 = random_tensor({8}, rng);
  const Tensor w3 = random_tensor({1, 8}, rng), b3 = random_tensor({1}, rng);
  const Tensor target = random_tensor({4, 1}, rng);
  auto f = [&](Tape& t, Value x) {
    Value h1 = t.gelu(t.linear(t.reshape(x, {4, 5}), t.leaf(w1), t.leaf(b1)));
    Value h2 = t.gelu(t.linear(h1, t.leaf(w2), t.leaf(b2)));
    Value out = t.linear(h2, t.leaf(w3), t.leaf(b3));
    return t.mse(out, t.leaf(target));
  };
  CHECK(check_gradient(f, random_tensor({20}, rng, -0.8, 0.8), 1e-5) < 1e-5);
}

TEST_CASE("every op kind matches finite differences") {
  Rng rng(17);
  using F = std::function<Value(Tape&, Value)>;
  // each entry: name, input tensor, scalar functional exercising the op
  std::vector<std::pair<Tensor, F>> cases;

  auto via_sum = [](F inner) {
    return inner;  // cases below already reduce to scalar
  };
  (void)via_sum;

  const Tensor x23 = random_tensor({2, 3}, rng, 0.3, 1.7);
  const Tensor aux23 = random_tensor({2, 3}, rng, 0.4, 1.6);
  const Tensor x34 = random_tensor({3, 4}, rng, -1.0, 1.0);

  auto weighted_sum = [&](Tape& t, Value y) {
    Tensor w(y.shape());
    Rng wr(99);
    for (auto& v : w.data) v = wr.uniform(-1.0, 1.0);
    return t.sum_all(t.mul(y, t.constant(std::move(w))));
  };

  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.add(x, t.leaf(aux23))); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.sub(x, t.leaf(aux23))); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.mul(x, t.leaf(aux23))); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.div(x, t.leaf(aux23))); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.div(t.leaf(aux23), x)); }});
  cases.push_back({random_tensor({6}, rng), [&](Tape& t, Value x) {
    return weighted_sum(t, t.matmul(t.reshape(x, {2, 3}), t.leaf(x34)));
  }});
  cases.push_back({x34, [&](Tape& t, Value x) { return weighted_sum(t, t.transpose(x)); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.reshape(x, {3, 2})); }});
  cases.push_back({random_tensor({3}, rng), [&](Tape& t, Value x) {
    return weighted_sum(t, t.broadcast_to(t.reshape(x, {1, 3}), {4, 3}));
  }});
  cases.push_back({x34, [&](Tape& t, Value x) { return weighted_sum(t, t.sum(x, 1)); }});
  cases.push_back({x34, [&](Tape& t, Value x) { return weighted_sum(t, t.mean(x, 0)); }});
  cases.push_back({x23, [&](Tape& t, Value x) {
    return weighted_sum(t, t.concat({x, t.leaf(aux23)}, 1));
  }});
  cases.push_back({x34, [&](Tape& t, Value x) { return weighted_sum(t, t.slice(x, 1, 1, 2)); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.pad_slice(x, 0, 1, 4)); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.exp(x)); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.log(x)); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.sin(x)); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.cos(x)); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.sqrt(x)); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.square(x)); }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.erf(x)); }});
  cases.push_back({random_tensor({5}, rng, -0.9, 0.9), [&](Tape& t, Value x) {
    return weighted_sum(t, t.acos(x));
  }});
  static const Tensor atan2_aux = random_tensor({4}, rng, 0.2, 1.5);
  cases.push_back({random_tensor({4}, rng, 0.2, 1.5), [&](Tape& t, Value x) {
    return weighted_sum(t, t.atan2(x, t.leaf(atan2_aux)));
  }});
  cases.push_back({random_tensor({4}, rng, 0.2, 1.5), [&](Tape& t, Value x) {
    return weighted_sum(t, t.atan2(t.leaf(atan2_aux), x));
  }});
  // relu probed away from the kink
  cases.push_back({random_tensor({6}, rng, 0.2, 1.0), [&](Tape& t, Value x) {
    return weighted_sum(t, t.relu(t.sub(x, t.scalar_const(0.1))));
  }});
  cases.push_back({x23, [&](Tape& t, Value x) { return weighted_sum(t, t.gelu(x)); }});
  cases.push_back({x34, [&](Tape& t, Value x) { return weighted_sum(t, t.softmax(x, 1)); }});
  cases.push_back({x34, [&](Tape& t, Value x) {
    Rng gr(5);
    return weighted_sum(t, t.layer_norm(x, 1, t.leaf(random_tensor({4}, gr)),
                                        t.leaf(random_tensor({4}, gr))));
  }});

  for (size_t i = 0; i < cases.size(); ++i) {
    CAPTURE(i);
    CHECK(check_gradient(cases[i].second, cases[i].first, 1e-5) < 1e-5);
  }
}

TEST_CASE("apply dispatches the spec op vocabulary") {
  Tape t;
  Value a = t.leaf(Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  Value b = t.leaf(Tensor::from({2, 2}, {5.0, 6.0, 7.0, 8.0}));
  CHECK(t.apply("add", {a, b}).val().at({0, 0}) == 6.0);
  CHECK(t.apply("matmul", {a, b}).val().at({0, 0}) == 19.0);
  CHECK(t.apply("sum", {a}, 1).val().at({0}) == 3.0);
  CHECK(t.apply("mean", {a}, 0).val().at({1}) == 3.0);
  CHECK(t.apply("concat", {a, b}, 0).shape() == Shape{4, 2});
  CHECK_THROWS_AS(t.apply("conv", {a}), std::invalid_argument);
}

TEST_CASE("check_gradient on sum of squares and constants") {
  Rng rng(23);
  auto sumsq = [](Tape& t, Value x) { return t.sum_all(t.square(x)); };
  CHECK(check_gradient(sumsq, random_tensor({7}, rng), 1e-5) < 1e-7);
  auto constant = [](Tape& t, Value) { return t.scalar_const(4.2); };
  CHECK(check_gradient(constant, random_tensor({3}, rng), 1e-5) == 0.0);
}

TEST_CASE("sgd_step") {
  ParamStore ps;
  ps.add("p", Tensor::scalar(1.0));
  NamedGrads g;
  g["p"] = Tensor::scalar(2.0);

  SUBCASE("zero rate leaves params unchanged") {
    sgd_step(ps, g, 0.0);
    CHECK(ps.at("p").data[0] == 1.0);
  }
  SUBCASE("p=1 g=2 rate=0.5 gives 0") {
    sgd_step(ps, g, 0.5);
    CHECK(ps.at("p").data[0] == 0.0);
  }
  SUBCASE("missing key errors") {
    NamedGrads empty;
    CHECK_THROWS_AS(sgd_step(ps, empty, 0.1), std::invalid_argument);
  }
}

TEST_CASE("sgd on a quadratic bowl strictly decreases the loss") {
  Rng rng(31);
  ParamStore ps;
  ps.add("x", random_tensor({6}, rng, -2.0, 2.0));
  const Tensor curv = random_tensor({6}, rng, 0.5, 2.0);
  auto loss_and_grad = [&](NamedGrads* g) {
    Tape t;
    Value x = t.leaf(ps.at("x"), true);
    Value l = t.sum_all(t.mul(t.leaf(curv), t.square(x)));
    if (g) {
      BoundParams bp;  // unused; direct id lookup below
      auto grads = t.backward_values(l);
      (*g)["x"] = grads.at(x.id());
    }
    return l.scalar();
  };
  NamedGrads g;
  const double before = loss_and_grad(&g);
  sgd_step(ps, g, 0.1);  // below 1/(2*max curvature)
  const double after = loss_and_grad(nullptr);
  CHECK(after < before);
}

TEST_CASE("tape replay is bitwise deterministic") {
  Rng rng(41);
  Tape t;
  Value x = t.leaf(random_tensor({4, 4}, rng), true);
  Value w = t.leaf(random_tensor({4, 4}, rng), true);
  Value y = t.softmax(t.matmul(t.gelu(x), w), 1);
  Value loss = t.mse(y, t.leaf(random_tensor({4, 4}, rng)));
  t.backward(loss, true);
  std::vector<Tensor> before;
  for (size_t i = 0; i < t.size(); ++i) before.push_back(t.val(static_cast<int>(i)));
  t.replay();
  for (size_t i = 0; i < t.size(); ++i) {
    const Tensor& now = t.val(static_cast<int>(i));
    REQUIRE(now.data.size() == before[i].data.size());
    for (size_t k = 0; k < now.data.size(); ++k) CHECK(now.data[k] == before[i].data[k]);
  }
}

TEST_CASE("gradient accumulates over fan-out") {
  Tape t;
  Value x = t.leaf(Tensor::scalar(2.0), true);
  Value y = t.add(t.mul(x, x), t.mul_scalar(x, 3.0));  // x^2 + 3x
  auto g = t.backward(y);
  CHECK(g.at(x).val().data[0] == doctest::Approx(7.0).epsilon(1e-14));
}

TEST_CASE("create_graph: gradient of gradient of x^3 at 2 is 12") {
  Tape t;
  Value x = t.leaf(Tensor::scalar(2.0), true);
  Value y = t.mul(t.mul(x, x), x);
  auto g1 = t.backward(y, /*create_graph=*/true);
  Value dy = g1.at(x);
  CHECK(dy.val().data[0] == doctest::Approx(12.0).epsilon(1e-12));  // 3x^2
  auto g2 = t.backward(dy);
  CHECK(std::fabs(g2.at(x).val().data[0] - 12.0) < 1e-9);  // 6x
}

TEST_CASE("first-order backward detaches its results") {
  Tape t;
  Value x = t.leaf(Tensor::scalar(2.0), true);
  Value y = t.mul(t.mul(x, x), x);
  auto g1 = t.backward(y, /*create_graph=*/false);
  CHECK_FALSE(g1.at(x).requires_grad());
}

TEST_CASE("backward_values truncates adjoint scratch") {
  Tape t;
  Value x = t.leaf(Tensor::scalar(3.0), true);
  Value y = t.square(x);
  const size_t sz = t.size();
  auto g = t.backward_values(y);
  CHECK(g.at(x.id()).data[0] == doctest::Approx(6.0));
  CHECK(t.size() == sz);
}

TEST_CASE("non-scalar loss is rejected") {
  Tape t;
  Value x = t.leaf(Tensor(Shape{3}, 1.0), true);
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);
}

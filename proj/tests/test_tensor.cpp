#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "mgdin/tensor.hpp"
#include "support/testers.hpp"

using namespace mgdin;
using mgdin::testing::fd_gradient;
using mgdin::testing::max_rel_err;
using mgdin::testing::random_values;

namespace {

Tensor random_param(Shape shape, Rng& rng) {
  return Tensor::param(shape, random_values(static_cast<std::size_t>(shape_numel(shape)), rng));
}

// FD check of d(sum(op(...)))/d(leaf) for each leaf.
double check_grads(const std::vector<Tensor>& leaves,
                   const std::function<Tensor(Tape*)>& op, double step = 1e-5) {
  for (Tensor leaf : leaves) leaf.clear_grad();
  Tape tape;
  Tensor out = sum_all(&tape, op(&tape));
  tape.backward(out);
  double worst = 0.0;
  for (Tensor leaf : leaves) {
    auto fd = fd_gradient(leaf, [&]() { return sum_all(nullptr, op(nullptr)).scalar_value(); },
                          step);
    worst = std::max(worst, max_rel_err(leaf.grad_or_zeros(), fd));
  }
  return worst;
}

}  // namespace

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor eye = Tensor::from_values({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_values({2, 2}, {5, 6, 7, 8});
  Tensor out = matmul(nullptr, eye, b);
  CHECK(out.values()[0] == 5.0);
  CHECK(out.values()[1] == 6.0);
  CHECK(out.values()[2] == 7.0);
  CHECK(out.values()[3] == 8.0);

  Tensor row = Tensor::from_values({1, 2}, {1, 2});
  Tensor col = Tensor::from_values({2, 1}, {3, 4});
  CHECK(matmul(nullptr, row, col).scalar_value() == doctest::Approx(11.0).epsilon(1e-15));
}

TEST_CASE("matmul matches scalar loop and rejects bad shapes") {
  Rng rng(1);
  Tensor a = random_param({4, 3}, rng);
  Tensor b = random_param({3, 5}, rng);
  Tensor c = matmul(nullptr, a, b);
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t j = 0; j < 5; ++j) {
      double expect = 0.0;
      for (std::int64_t k = 0; k < 3; ++k) expect += a.at({i, k}) * b.at({k, j});
      CHECK(c.at({i, j}) == doctest::Approx(expect).epsilon(1e-14));
    }
  CHECK_THROWS_AS(matmul(nullptr, a, Tensor::zeros({4, 5})), ShapeError);
  CHECK_THROWS_AS(matmul(nullptr, Tensor::zeros({2, 3, 4}), Tensor::zeros({3, 4, 2})),
                  ShapeError);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(2);
  Tensor a = random_param({4, 3}, rng);
  Tensor b = random_param({3, 5}, rng);
  const double err = check_grads({a, b}, [&](Tape* t) { return matmul(t, a, b); });
  CHECK(err < 1e-6);
}

TEST_CASE("matmul batch and broadcast gradients") {
  Rng rng(3);
  for (int rep = 0; rep < 5; ++rep) {
    Tensor a = random_param({2, 3, 4}, rng);
    Tensor b = random_param({2, 4, 2}, rng);
    CHECK(check_grads({a, b}, [&](Tape* t) { return matmul(t, a, b); }) < 1e-6);

    Tensor shared = random_param({4, 3}, rng);
    CHECK(check_grads({a, shared}, [&](Tape* t) { return matmul(t, a, shared); }) < 1e-6);

    Tensor left = random_param({3, 2}, rng);
    Tensor batched = random_param({2, 2, 5}, rng);
    CHECK(check_grads({left, batched}, [&](Tape* t) { return matmul(t, left, batched); }) <
          1e-6);
  }
}

TEST_CASE("elementwise basics") {
  CHECK(sigmoid(nullptr, Tensor::scalar(0.0)).scalar_value() == 0.5);
  CHECK(relu(nullptr, Tensor::scalar(-3.0)).scalar_value() == 0.0);
  CHECK(relu(nullptr, Tensor::scalar(3.0)).scalar_value() == 3.0);
  CHECK(mgdin::log(nullptr, Tensor::scalar(1.0)).scalar_value() == 0.0);
  CHECK_THROWS_AS(mgdin::log(nullptr, Tensor::scalar(0.0)), NumericError);
  CHECK_THROWS_AS(mgdin::log(nullptr, Tensor::scalar(-1.0)), NumericError);
  CHECK_THROWS_AS(add(nullptr, Tensor::zeros({2, 3}), Tensor::zeros({3, 2})), ShapeError);

  // sigmoid stays finite far outside the comfortable range
  CHECK(sigmoid(nullptr, Tensor::scalar(-1000.0)).scalar_value() == 0.0);
  CHECK(sigmoid(nullptr, Tensor::scalar(1000.0)).scalar_value() == 1.0);
}

TEST_CASE("sigmoid gradient at zero is 1/4") {
  Tensor x = Tensor::param({1}, {0.0});
  Tape tape;
  Tensor y = sigmoid(&tape, x);
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
  auto fd = fd_gradient(x, [&]() { return sigmoid(nullptr, x).scalar_value(); });
  CHECK(std::abs(fd[0] - 0.25) < 1e-6);
}

TEST_CASE("elementwise gradients vs finite differences, 10 random instances") {
  Rng rng(4);
  for (int rep = 0; rep < 10; ++rep) {
    Tensor a = random_param({3, 4}, rng);
    Tensor b = random_param({3, 4}, rng);
    Tensor suffix = random_param({4}, rng);
    Tensor scalar = random_param({1}, rng);
    Tensor pos = Tensor::param({3, 4}, random_values(12, rng, 0.1, 2.0));

    CHECK(check_grads({a, b}, [&](Tape* t) { return add(t, a, b); }) < 1e-4);
    CHECK(check_grads({a, b}, [&](Tape* t) { return sub(t, a, b); }) < 1e-4);
    CHECK(check_grads({a, b}, [&](Tape* t) { return mul(t, a, b); }) < 1e-4);
    CHECK(check_grads({a, suffix}, [&](Tape* t) { return add(t, a, suffix); }) < 1e-4);
    CHECK(check_grads({a, suffix}, [&](Tape* t) { return mul(t, a, suffix); }) < 1e-4);
    CHECK(check_grads({suffix, a}, [&](Tape* t) { return sub(t, suffix, a); }) < 1e-4);
    CHECK(check_grads({a, scalar}, [&](Tape* t) { return mul(t, a, scalar); }) < 1e-4);
    CHECK(check_grads({a}, [&](Tape* t) { return sigmoid(t, a); }) < 1e-4);
    CHECK(check_grads({a}, [&](Tape* t) { return scale(t, a, -2.5); }) < 1e-4);
    CHECK(check_grads({pos}, [&](Tape* t) { return mgdin::log(t, pos); }) < 1e-4);
    CHECK(check_grads({a}, [&](Tape* t) { return clamp(t, a, -0.5, 0.5); }) < 1e-2);
  }
}

TEST_CASE("transpose_last_two") {
  Tensor a = Tensor::from_values({2, 2}, {1, 2, 3, 4});
  Tensor t = transpose_last_two(nullptr, a);
  CHECK(t.at({0, 0}) == 1.0);
  CHECK(t.at({0, 1}) == 3.0);
  CHECK(t.at({1, 0}) == 2.0);
  CHECK(t.at({1, 1}) == 4.0);
  CHECK_THROWS_AS(transpose_last_two(nullptr, Tensor::zeros({3})), ShapeError);

  Rng rng(5);
  Tensor r = random_param({2, 3, 4}, rng);
  Tensor twice = transpose_last_two(nullptr, transpose_last_two(nullptr, r));
  CHECK(std::equal(r.values().begin(), r.values().end(), twice.values().begin()));
  CHECK(check_grads({r}, [&](Tape* t2) { return transpose_last_two(t2, r); }) < 1e-6);
}

TEST_CASE("layer_norm values") {
  Tensor gain3 = Tensor::from_values({3}, {1, 1, 1});
  Tensor bias3 = Tensor::from_values({3}, {0, 0, 0});
  Tensor constant = Tensor::from_values({3}, {1, 1, 1});
  Tensor out = layer_norm(nullptr, constant, gain3, bias3, 1e-8);
  for (double v : out.values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));

  Tensor gain2 = Tensor::from_values({2}, {1, 1});
  Tensor bias2 = Tensor::from_values({2}, {0, 0});
  Tensor x = Tensor::from_values({2}, {1, 3});
  Tensor y = layer_norm(nullptr, x, gain2, bias2, 1e-12);
  CHECK(y.values()[0] == doctest::Approx(-1.0).epsilon(1e-6));
  CHECK(y.values()[1] == doctest::Approx(1.0).epsilon(1e-6));

  CHECK_THROWS_AS(layer_norm(nullptr, Tensor::scalar(1.0), Tensor::scalar(1.0),
                             Tensor::scalar(0.0), 0.0),
                  NumericError);
}

TEST_CASE("layer_norm gradient vs finite differences") {
  Rng rng(6);
  Tensor x = random_param({5, 8}, rng);
  Tensor gain = random_param({8}, rng);
  Tensor bias = random_param({8}, rng);
  const double err = check_grads(
      {x, gain, bias}, [&](Tape* t) { return layer_norm(t, x, gain, bias, 1e-5); });
  CHECK(err < 1e-4);
}

TEST_CASE("backward basics") {
  Rng rng(7);
  Tensor x = random_param({3, 3}, rng);
  {
    Tape tape;
    Tensor s = sum_all(&tape, x);
    tape.backward(s);
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  x.clear_grad();
  {
    // fan-out accumulation: y used twice
    Tensor y = Tensor::param({1}, {1.5});
    Tape tape;
    Tensor z = add(&tape, y, y);
    tape.backward(z);
    CHECK(y.grad()[0] == 2.0);
  }
  {
    Tape tape;
    Tensor out = add(&tape, x, x);
    CHECK_THROWS_AS(tape.backward(out), ShapeError);  // non-scalar root
  }
  {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0)), ShapeError);  // not on tape
  }
}

namespace {

// Brute-force path-sum oracle for small DAGs: derivative of the root with
// respect to a leaf is the sum over all leaf->root paths of the product of
// local partials along the path.
enum class GKind { Leaf, Add, Mul, Sigmoid };
struct GNode {
  GKind kind;
  double value = 0.0;
  int a = -1, b = -1;
};

struct GGraph {
  std::vector<GNode> nodes;

  int leaf(double v) {
    nodes.push_back({GKind::Leaf, v, -1, -1});
    return static_cast<int>(nodes.size()) - 1;
  }
  int add(int a, int b) {
    nodes.push_back({GKind::Add, nodes[a].value + nodes[b].value, a, b});
    return static_cast<int>(nodes.size()) - 1;
  }
  int mul(int a, int b) {
    nodes.push_back({GKind::Mul, nodes[a].value * nodes[b].value, a, b});
    return static_cast<int>(nodes.size()) - 1;
  }
  int sigm(int a) {
    const double s = 1.0 / (1.0 + std::exp(-nodes[a].value));
    nodes.push_back({GKind::Sigmoid, s, a, -1});
    return static_cast<int>(nodes.size()) - 1;
  }

  double local(int node, int slot) const {
    const GNode& n = nodes[node];
    switch (n.kind) {
      case GKind::Add: return 1.0;
      case GKind::Mul: return slot == 0 ? nodes[n.b].value : nodes[n.a].value;
      case GKind::Sigmoid: return n.value * (1.0 - n.value);
      case GKind::Leaf: return 0.0;
    }
    return 0.0;
  }

  // No memoization: the recursion enumerates every path separately.
  double path_sum(int node, int root) const {
    if (node == root) return 1.0;
    double total = 0.0;
    for (int c = 0; c < static_cast<int>(nodes.size()); ++c) {
      if (nodes[c].a == node) total += local(c, 0) * path_sum(c, root);
      if (nodes[c].b == node) total += local(c, 1) * path_sum(c, root);
    }
    return total;
  }
};

}  // namespace

TEST_CASE("backward equals brute-force path sum on shared-subexpression DAGs") {
  Rng rng(8);
  for (int rep = 0; rep < 20; ++rep) {
    const double xv = rng.uniform(-2, 2), yv = rng.uniform(-2, 2);

    {
      // z = (x*y + x) * x : x participates through three paths
      GGraph g;
      int x = g.leaf(xv), y = g.leaf(yv);
      int root = g.mul(g.add(g.mul(x, y), x), x);
      Tensor tx = Tensor::param({1}, {xv});
      Tensor ty = Tensor::param({1}, {yv});
      Tape tape;
      Tensor tz = mul(&tape, add(&tape, mul(&tape, tx, ty), tx), tx);
      tape.backward(tz);
      CHECK(tx.grad()[0] == doctest::Approx(g.path_sum(x, root)).epsilon(1e-12));
      CHECK(ty.grad()[0] == doctest::Approx(g.path_sum(y, root)).epsilon(1e-12));
    }
    {
      // diamond: u = x + y; z = u * u
      GGraph g;
      int x = g.leaf(xv), y = g.leaf(yv);
      int u = g.add(x, y);
      int root = g.mul(u, u);
      Tensor tx = Tensor::param({1}, {xv});
      Tensor ty = Tensor::param({1}, {yv});
      Tape tape;
      Tensor tu = add(&tape, tx, ty);
      Tensor tz = mul(&tape, tu, tu);
      tape.backward(tz);
      CHECK(tx.grad()[0] == doctest::Approx(g.path_sum(x, root)).epsilon(1e-12));
      CHECK(ty.grad()[0] == doctest::Approx(g.path_sum(y, root)).epsilon(1e-12));
    }
    {
      // z = sigmoid(x*x) + x*y
      GGraph g;
      int x = g.leaf(xv), y = g.leaf(yv);
      int root = g.add(g.sigm(g.mul(x, x)), g.mul(x, y));
      Tensor tx = Tensor::param({1}, {xv});
      Tensor ty = Tensor::param({1}, {yv});
      Tape tape;
      Tensor tz = add(&tape, sigmoid(&tape, mul(&tape, tx, tx)), mul(&tape, tx, ty));
      tape.backward(tz);
      CHECK(tx.grad()[0] == doctest::Approx(g.path_sum(x, root)).epsilon(1e-12));
      CHECK(ty.grad()[0] == doctest::Approx(g.path_sum(y, root)).epsilon(1e-12));
    }
  }
}

TEST_CASE("structural ops gradients") {
  Rng rng(9);
  Tensor x = random_param({2, 3, 4}, rng);
  Tensor row = random_param({4}, rng);
  CHECK(check_grads({x}, [&](Tape* t) { return reshape(t, x, {6, 4}); }) < 1e-6);
  CHECK(check_grads({x}, [&](Tape* t) { return mean_all(t, x); }) < 1e-4);
  CHECK(check_grads({x, row}, [&](Tape* t) { return append_rows(t, x, row, 2); }) < 1e-6);
  CHECK(check_grads({x}, [&](Tape* t) { return pool_tokens(t, x, Pooling::Mean); }) < 1e-4);
  CHECK(check_grads({x}, [&](Tape* t) { return pool_tokens(t, x, Pooling::Sum); }) < 1e-4);
  CHECK(check_grads({x}, [&](Tape* t) { return pool_tokens(t, x, Pooling::Max); }) < 1e-4);

  Tensor flat = random_param({2, 6, 4}, rng);
  CHECK(check_grads({flat}, [&](Tape* t) { return sum_groups(t, flat, 3); }) < 1e-6);

  const std::vector<std::int64_t> order = {2, 0, 1};
  CHECK(check_grads({x}, [&](Tape* t) {
          return permute_rows(t, x, std::span<const std::int64_t>(order));
        }) < 1e-6);

  Tensor p1 = random_param({3, 2}, rng);
  Tensor p2 = random_param({3, 4}, rng);
  CHECK(check_grads({p1, p2}, [&](Tape* t) { return concat_cols(t, {p1, p2}); }) < 1e-6);
}

TEST_CASE("masked softmax rows") {
  Rng rng(10);
  Tensor scores = random_param({2, 3, 3}, rng);
  Tensor mask = Tensor::from_values({2, 3, 3}, {1, 0, 1, 0, 1, 0, 1, 1, 1,
                                                0, 0, 0, 1, 0, 0, 1, 1, 0});
  Tensor out = masked_softmax_rows(nullptr, scores, mask);
  // active entries of each row sum to 1; masked entries are zero
  for (std::int64_t b = 0; b < 2; ++b)
    for (std::int64_t i = 0; i < 3; ++i) {
      double total = 0.0;
      bool any = false;
      for (std::int64_t j = 0; j < 3; ++j) {
        if (mask.at({b, i, j}) == 0.0) {
          CHECK(out.at({b, i, j}) == 0.0);
        } else {
          total += out.at({b, i, j});
          any = true;
        }
      }
      if (any) CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
  CHECK(check_grads({scores}, [&](Tape* t) {
          return masked_softmax_rows(t, scores, mask);
        }) < 1e-4);
}

TEST_CASE("ops are deterministic") {
  Rng rng(11);
  Tensor a = random_param({16, 16}, rng);
  Tensor b = random_param({16, 16}, rng);
  Tensor c1 = matmul(nullptr, a, b);
  Tensor c2 = matmul(nullptr, a, b);
  CHECK(std::memcmp(c1.values().data(), c2.values().data(),
                    sizeof(double) * c1.values().size()) == 0);
  Tensor s1 = sigmoid(nullptr, a);
  Tensor s2 = sigmoid(nullptr, a);
  CHECK(std::memcmp(s1.values().data(), s2.values().data(),
                    sizeof(double) * s1.values().size()) == 0);
}

TEST_CASE("pool max ties break toward the lowest token index") {
  Tensor x = Tensor::param({1, 3, 1}, {2.0, 2.0, 1.0});
  Tape tape;
  Tensor out = sum_all(&tape, pool_tokens(&tape, x, Pooling::Max));
  tape.backward(out);
  const auto g = x.grad();
  CHECK(g[0] == 1.0);
  CHECK(g[1] == 0.0);
  CHECK(g[2] == 0.0);
}

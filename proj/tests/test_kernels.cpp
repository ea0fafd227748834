#include <doctest.h>
#include <omp.h>

#include <cmath>
#include <vector>

#include "cdsgen/kernels.hpp"
#include "cdsgen/rng.hpp"

using namespace cdsgen;
namespace K = cdsgen::kernels;
namespace R = cdsgen::kernels::ref;

namespace {

std::vector<double> randn(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

MatView mv(std::vector<double>& v, std::size_t r, std::size_t c) { return {v.data(), r, c}; }
ConstMatView cv(const std::vector<double>& v, std::size_t r, std::size_t c) {
  return {v.data(), r, c};
}

struct Shapes {
  std::size_t n, k, m;
};

// Shapes on both sides of the parallel threshold.
const Shapes kShapes[] = {{3, 4, 5}, {17, 33, 9}, {130, 96, 140}};

}  // namespace

TEST_CASE("linear kernels agree with the reference") {
  Rng rng(1);
  for (auto [n, k, m] : kShapes) {
    auto x = randn(n * k, rng), w = randn(k * m, rng), b = randn(m, rng), dout = randn(n * m, rng);
    std::vector<double> o1(n * m), o2(n * m);
    K::linear_forward(cv(x, n, k), cv(w, k, m), b, mv(o1, n, m));
    R::linear_forward(cv(x, n, k), cv(w, k, m), b, mv(o2, n, m));
    CHECK(max_abs_diff(o1, o2) < 1e-12);

    std::vector<double> dx1(n * k, 1.0), dx2(n * k, 1.0), dw1(k * m, 0.5), dw2(k * m, 0.5),
        db1(m, 0.25), db2(m, 0.25);
    K::linear_backward(cv(x, n, k), cv(w, k, m), cv(dout, n, m), mv(dx1, n, k), mv(dw1, k, m), db1,
                       true);
    R::linear_backward(cv(x, n, k), cv(w, k, m), cv(dout, n, m), mv(dx2, n, k), mv(dw2, k, m), db2,
                       true);
    CHECK(max_abs_diff(dx1, dx2) < 1e-12);
    CHECK(max_abs_diff(dw1, dw2) < 1e-12);
    CHECK(max_abs_diff(db1, db2) < 1e-12);
  }
}

TEST_CASE("layernorm and gelu kernels agree with the reference") {
  Rng rng(2);
  for (auto [n, d, unused] : kShapes) {
    (void)unused;
    auto x = randn(n * d, rng, 3.0), g = randn(d, rng), b = randn(d, rng), dout = randn(n * d, rng);
    std::vector<double> o1(n * d), o2(n * d), m1(n), m2(n), r1(n), r2(n);
    K::layernorm_forward(cv(x, n, d), g, b, mv(o1, n, d), m1, r1);
    R::layernorm_forward(cv(x, n, d), g, b, mv(o2, n, d), m2, r2);
    CHECK(max_abs_diff(o1, o2) < 1e-12);
    CHECK(max_abs_diff(r1, r2) < 1e-12);
    std::vector<double> dx1(n * d), dx2(n * d), dg1(d), dg2(d), db1(d), db2(d);
    K::layernorm_backward(cv(x, n, d), g, m1, r1, cv(dout, n, d), mv(dx1, n, d), dg1, db1, false);
    R::layernorm_backward(cv(x, n, d), g, m2, r2, cv(dout, n, d), mv(dx2, n, d), dg2, db2, false);
    CHECK(max_abs_diff(dx1, dx2) < 1e-10);
    CHECK(max_abs_diff(dg1, dg2) < 1e-10);
    CHECK(max_abs_diff(db1, db2) < 1e-10);

    std::vector<double> ge1(n * d), ge2(n * d), gd1(n * d), gd2(n * d);
    K::gelu_forward(x, ge1);
    R::gelu_forward(x, ge2);
    CHECK(max_abs_diff(ge1, ge2) < 1e-14);
    K::gelu_backward(x, dout, gd1);
    R::gelu_backward(x, dout, gd2);
    CHECK(max_abs_diff(gd1, gd2) < 1e-14);
  }
}

TEST_CASE("attention kernels agree with the reference") {
  Rng rng(3);
  for (AttentionShape s : {AttentionShape{1, 5, 1, 4}, AttentionShape{3, 9, 2, 8},
                           AttentionShape{4, 40, 4, 32}}) {
    const std::size_t rows = s.sequences * s.length, d = s.model_dim;
    auto qkv = randn(rows * 3 * d, rng), dout = randn(rows * d, rng);
    const std::size_t np = s.sequences * s.heads * s.length * s.length;
    std::vector<double> p1(np), p2(np), o1(rows * d), o2(rows * d);
    K::attention_forward(cv(qkv, rows, 3 * d), s, p1, mv(o1, rows, d));
    R::attention_forward(cv(qkv, rows, 3 * d), s, p2, mv(o2, rows, d));
    CHECK(max_abs_diff(o1, o2) < 1e-12);
    CHECK(max_abs_diff(p1, p2) < 1e-12);
    std::vector<double> d1(rows * 3 * d), d2(rows * 3 * d);
    K::attention_backward(cv(qkv, rows, 3 * d), s, p1, cv(dout, rows, d), mv(d1, rows, 3 * d));
    R::attention_backward(cv(qkv, rows, 3 * d), s, p2, cv(dout, rows, d), mv(d2, rows, 3 * d));
    CHECK(max_abs_diff(d1, d2) < 1e-12);
  }
}

TEST_CASE("attention is causal and its rows are distributions") {
  Rng rng(4);
  AttentionShape s{2, 6, 2, 4};
  const std::size_t rows = 12, d = 4;
  auto qkv = randn(rows * 3 * d, rng);
  std::vector<double> p(2 * 2 * 6 * 6), o(rows * d);
  K::attention_forward(cv(qkv, rows, 3 * d), s, p, mv(o, rows, d));
  for (std::size_t blk = 0; blk < 4; ++blk) {
    for (std::size_t t = 0; t < 6; ++t) {
      double sum = 0.0;
      for (std::size_t u = 0; u < 6; ++u) {
        const double w = p[blk * 36 + t * 6 + u];
        if (u > t) CHECK(w == 0.0);
        sum += w;
      }
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("attention backward matches central differences") {
  Rng rng(5);
  AttentionShape s{2, 4, 2, 4};
  const std::size_t rows = 8, d = 4;
  auto qkv = randn(rows * 3 * d, rng), dout = randn(rows * d, rng);
  std::vector<double> p(2 * 2 * 16), o(rows * d), dq(rows * 3 * d);
  auto objective = [&](const std::vector<double>& q) {
    std::vector<double> pp(p.size()), oo(o.size());
    R::attention_forward(cv(q, rows, 3 * d), s, pp, mv(oo, rows, d));
    double v = 0.0;
    for (std::size_t i = 0; i < oo.size(); ++i) v += oo[i] * dout[i];
    return v;
  };
  K::attention_forward(cv(qkv, rows, 3 * d), s, p, mv(o, rows, d));
  K::attention_backward(cv(qkv, rows, 3 * d), s, p, cv(dout, rows, d), mv(dq, rows, 3 * d));
  for (std::size_t i = 0; i < qkv.size(); ++i) {
    auto plus = qkv, minus = qkv;
    plus[i] += 1e-5;
    minus[i] -= 1e-5;
    const double numeric = (objective(plus) - objective(minus)) / 2e-5;
    CHECK(dq[i] == doctest::Approx(numeric).epsilon(1e-6).scale(1.0));
  }
}

TEST_CASE("softmax cross entropy agrees with the reference and skips ignored rows") {
  Rng rng(6);
  const std::size_t n = 7, v = 11;
  auto logits = randn(n * v, rng, 2.0);
  std::vector<int> targets = {0, 3, -1, 10, 5, -1, 2};
  std::vector<double> l1(n), l2(n), g1(n * v), g2(n * v);
  K::softmax_cross_entropy(cv(logits, n, v), targets, 0.5, l1, mv(g1, n, v));
  R::softmax_cross_entropy(cv(logits, n, v), targets, 0.5, l2, mv(g2, n, v));
  CHECK(max_abs_diff(l1, l2) < 1e-13);
  CHECK(max_abs_diff(g1, g2) < 1e-13);
  CHECK(l1[2] == 0.0);
  for (std::size_t c = 0; c < v; ++c) CHECK(g1[2 * v + c] == 0.0);
  double z = 0.0;
  for (std::size_t c = 0; c < v; ++c) z += std::exp(logits[c]);
  CHECK(l1[0] == doctest::Approx(std::log(z) - logits[0]));
}

TEST_CASE("results do not depend on the thread count") {
  Rng rng(7);
  const std::size_t n = 200, k = 128, m = 160;
  auto x = randn(n * k, rng), w = randn(k * m, rng), b = randn(m, rng), dout = randn(n * m, rng);
  AttentionShape s{4, 50, 4, 32};
  auto qkv = randn(200 * 96, rng);
  auto run = [&](int threads) {
    omp_set_num_threads(threads);
    std::vector<double> out(n * m), dx(n * k), dw(k * m), db(m), probs(4 * 4 * 50 * 50),
        att(200 * 32);
    K::linear_forward(cv(x, n, k), cv(w, k, m), b, mv(out, n, m));
    K::linear_backward(cv(x, n, k), cv(w, k, m), cv(dout, n, m), mv(dx, n, k), mv(dw, k, m), db);
    K::attention_forward(cv(qkv, 200, 96), s, probs, mv(att, 200, 32));
    out.insert(out.end(), dx.begin(), dx.end());
    out.insert(out.end(), dw.begin(), dw.end());
    out.insert(out.end(), db.begin(), db.end());
    out.insert(out.end(), att.begin(), att.end());
    return out;
  };
  const int saved = omp_get_max_threads();
  auto one = run(1);
  auto four = run(4);
  auto three = run(3);
  omp_set_num_threads(saved);
  CHECK(one == four);
  CHECK(one == three);
}

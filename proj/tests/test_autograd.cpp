#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace remir;
using namespace remir::testing;
using Tape = ag::Tape<double>;
using Vars = std::vector<VarD>;

namespace {

constexpr double kTol = 1e-7;

Mat positive_mat(Rng& rng, std::size_t r, std::size_t c) {
  Mat m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = 0.2 + rng.uniform();
  return m;
}

}  // namespace

TEST(AutogradFd, Matmul) {
  Rng rng(1);
  EXPECT_LT(fd_error({random_mat(rng, 3, 4), random_mat(rng, 4, 2)},
                     [](Tape& t, Vars& v) { return probe(t, ag::matmul(v[0], v[1])); }),
            kTol);
  EXPECT_LT(fd_error({random_mat(rng, 3, 4), random_mat(rng, 5, 4)},
                     [](Tape& t, Vars& v) { return probe(t, ag::matmul_nt(v[0], v[1])); }),
            kTol);
}

TEST(AutogradFd, Elementwise) {
  Rng rng(2);
  EXPECT_LT(fd_error({random_mat(rng, 3, 4), random_mat(rng, 3, 4)},
                     [](Tape& t, Vars& v) { return probe(t, ag::add(v[0], ag::mul(v[0], v[1]))); }),
            kTol);
  EXPECT_LT(fd_error({random_mat(rng, 3, 4), random_mat(rng, 1, 4)},
                     [](Tape& t, Vars& v) { return probe(t, ag::scale(ag::add_row(v[0], v[1]), -1.5)); }),
            kTol);
}

TEST(AutogradFd, Activations) {
  Rng rng(3);
  for (auto kind : {ag::Activation::gelu, ag::Activation::tanh})
    EXPECT_LT(fd_error({random_mat(rng, 4, 5, 2.0)},
                       [kind](Tape& t, Vars& v) { return probe(t, ag::activate(v[0], kind)); }),
              kTol);
}

TEST(AutogradFd, SoftmaxAndLayerNorm) {
  Rng rng(4);
  EXPECT_LT(fd_error({random_mat(rng, 3, 6)}, [](Tape& t, Vars& v) { return probe(t, ag::softmax_rows(v[0])); }),
            kTol);
  EXPECT_LT(fd_error({random_mat(rng, 3, 6), random_mat(rng, 1, 6), random_mat(rng, 1, 6)},
                     [](Tape& t, Vars& v) { return probe(t, ag::layer_norm(v[0], v[1], v[2])); }),
            1e-6);
}

TEST(AutogradFd, RowPlumbing) {
  Rng rng(5);
  EXPECT_LT(fd_error({random_mat(rng, 4, 3)},
                     [](Tape& t, Vars& v) { return probe(t, ag::gather_rows(v[0], {2, 0, 2, 3})); }),
            kTol);
  EXPECT_LT(fd_error({random_mat(rng, 2, 3)},
                     [](Tape& t, Vars& v) { return probe(t, ag::scatter_rows(v[0], {4, 1}, 5)); }),
            kTol);
  EXPECT_LT(fd_error({random_mat(rng, 3, 2), random_mat(rng, 3, 4)},
                     [](Tape& t, Vars& v) {
                       return probe(t, ag::slice_cols(ag::concat_cols<double>({v[0], v[1]}), 1, 4));
                     }),
            kTol);
  EXPECT_LT(fd_error({random_mat(rng, 5, 3), random_mat(rng, 1, 3)},
                     [](Tape& t, Vars& v) { return probe(t, ag::replace_rows(v[0], v[1], {1, 3})); }),
            kTol);
}

TEST(AutogradFd, SegmentsAndNormalisation) {
  Rng rng(6);
  const ag::Groups groups{{0, 2}, {1}, {3, 4, 1}};
  EXPECT_LT(fd_error({random_mat(rng, 5, 3)},
                     [&](Tape& t, Vars& v) { return probe(t, ag::segment_logsumexp(v[0], groups)); }),
            kTol);
  EXPECT_LT(fd_error({random_mat(rng, 5, 3)},
                     [&](Tape& t, Vars& v) { return probe(t, ag::segment_mean(v[0], groups)); }),
            kTol);
  EXPECT_LT(fd_error({positive_mat(rng, 3, 4)}, [](Tape& t, Vars& v) { return probe(t, ag::normalize_rows(v[0])); }),
            kTol);
}

TEST(AutogradFd, Combine) {
  Rng rng(7);
  EXPECT_LT(fd_error({random_mat(rng, 2, 2), random_mat(rng, 3, 1)},
                     [](Tape&, Vars& v) {
                       return ag::combine<double>({{ag::sum_all(v[0]), 0.5}, {ag::sum_all(ag::mul(v[1], v[1])), 2.0}});
                     }),
            kTol);
}

TEST(Autograd, ReusedNodeAccumulates) {
  Tape t;
  auto x = t.variable(Mat(1, 1, 3.0));
  auto y = ag::sum_all(ag::mul(x, x));
  t.backward(y);
  EXPECT_DOUBLE_EQ(t.grad(x.id)[0], 6.0);
}

TEST(Autograd, ShapeErrorsThrow) {
  Tape t;
  auto a = t.constant(Mat(2, 3));
  auto b = t.constant(Mat(2, 3));
  EXPECT_THROW(ag::matmul(a, b), std::invalid_argument);
  EXPECT_THROW(ag::gather_rows(a, {2}), std::invalid_argument);
  EXPECT_THROW(t.backward(a), std::invalid_argument);
}

TEST(Softmax, RowsSumToOne) {
  Rng rng(8);
  Tape t;
  auto s = ag::softmax_rows(t.constant(random_mat(rng, 20, 9, 5.0)));
  for (std::size_t r = 0; r < 20; ++r) {
    double sum = 0;
    for (double v : s.value().row(r)) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(SegmentLogsumexp, TwoScalarOracle) {
  Tape t;
  auto x = t.constant(Mat(2, 1, std::vector<double>{0.0, std::log(3.0)}));
  EXPECT_NEAR(ag::segment_logsumexp(x, {{0, 1}}).scalar(), std::log(4.0), 1e-12);
}

TEST(SegmentLogsumexp, SandwichBoundOnFuzzedInputs) {
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + rng.below(6);
    Mat x(k, 1);
    double mx = -1e300;
    for (std::size_t i = 0; i < k; ++i) mx = std::max(mx, x[i] = rng.uniform(-50, 50));
    Tape t;
    std::vector<std::size_t> all(k);
    for (std::size_t i = 0; i < k; ++i) all[i] = i;
    const double v = ag::segment_logsumexp(t.constant(x), {all}).scalar();
    EXPECT_GE(v, mx - 1e-12);
    EXPECT_LE(v, mx + std::log(static_cast<double>(k)) + 1e-12);
  }
}

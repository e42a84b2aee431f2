#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

using namespace remir;
using namespace remir::testing;

namespace {

double atl_value(const Mat& logits, const std::vector<std::vector<std::size_t>>& pos, std::vector<std::size_t> rows) {
  ag::Tape<double> t;
  return loss_atl(t.constant(logits), pos, std::move(rows)).scalar();
}

/// Per-cell loop: sum over positives of -log softmax over {r, TH} members, plus -log softmax_TH over N + TH.
double atl_loop(const Mat& z, const std::vector<std::vector<std::size_t>>& pos, const std::vector<std::size_t>& rows) {
  const std::size_t th = z.cols() - 1;
  double total = 0;
  for (std::size_t r : rows) {
    std::vector<char> is_pos(z.cols(), 0);
    for (std::size_t p : pos[r]) is_pos[p] = 1;
    double z1 = 0, z2 = 0;
    for (std::size_t c = 0; c < z.cols(); ++c) {
      if (c == th || is_pos[c]) z1 += std::exp(z(r, c));
      if (c == th || !is_pos[c]) z2 += std::exp(z(r, c));
    }
    for (std::size_t p : pos[r]) total -= z(r, p) - std::log(z1);
    total -= z(r, th) - std::log(z2);
  }
  return total / rows.size();
}

}  // namespace

TEST(Atl, UniformLogitsOnePositive) {
  EXPECT_NEAR(atl_value(Mat(1, 3), {{0}}, {0}), 2 * std::log(2.0), 1e-9);
}

TEST(Atl, UniformLogitsNoPositive) {
  EXPECT_NEAR(atl_value(Mat(1, 3), {{}}, {0}), std::log(3.0), 1e-9);
}

TEST(Atl, MatchesLoopOracleAndFiniteDifferences) {
  Rng rng(1);
  const Mat z = random_mat(rng, 6, 5, 2.0);
  const std::vector<std::vector<std::size_t>> pos{{0}, {}, {1, 3}, {2}, {}, {0, 1, 2, 3}};
  const std::vector<std::size_t> rows{0, 1, 2, 3, 5};
  EXPECT_NEAR(atl_value(z, pos, rows), atl_loop(z, pos, rows), 1e-12);
  EXPECT_LT(fd_error({z}, [&](ag::Tape<double>&, std::vector<VarD>& v) { return loss_atl(v[0], pos, rows); }), 1e-8);
}

TEST(Softmax, ClosedFormTwoClass) {
  const Mat p = cell_distributions(Mat(1, 2, std::vector<double>{std::log(9.0), std::log(1.0)}));
  EXPECT_NEAR(p(0, 0), 0.9, 1e-15);
  EXPECT_NEAR(p(0, 1), 0.1, 1e-15);
}

TEST(Recon, DirectSummationExample) {
  const Mat p(1, 2, std::vector<double>{0.5, 0.5}), q(1, 2, std::vector<double>{0.9, 0.1});
  const double kl_pq = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  const double kl_qp = 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5);
  EXPECT_NEAR(kl_pq, 0.51083, 1e-5);
  EXPECT_NEAR(kl_qp, 0.36806, 1e-5);
  EXPECT_NEAR(loss_recon(p, q, {0}), 0.5 * (kl_pq + kl_qp), 1e-15);
  EXPECT_NEAR(loss_recon(p, q, {0}), 0.43948, 1e-4);
  EXPECT_EQ(loss_recon(p, p, {0}), 0.0);
  EXPECT_EQ(loss_recon(p, q, {}), 0.0);
}

TEST(Recon, LogitVersionAgreesAndHasClosedFormGradient) {
  Rng rng(2);
  const Mat a = random_mat(rng, 5, 4), b = random_mat(rng, 5, 4);
  const std::vector<std::size_t> rows{0, 2, 4};
  ag::Tape<double> t;
  EXPECT_NEAR(reconstruction_loss(t.constant(a), t.constant(b), rows).scalar(),
              loss_recon(cell_distributions(a), cell_distributions(b), rows), 1e-14);
  EXPECT_EQ(reconstruction_loss(t.constant(a), t.constant(a), rows).scalar(), 0.0);
  EXPECT_LT(fd_error({a, b}, [&](ag::Tape<double>&, std::vector<VarD>& v) { return reconstruction_loss(v[0], v[1], rows); }),
            1e-8);
}

TEST(TotalLoss, SumOfOracles) {
  const auto l = total_loss(0.43948, 1.3863, 1.0, 1.0);
  EXPECT_NEAR(l.total, 1.82578, 1e-9);
  EXPECT_NEAR(total_loss(0.5, 2.0, 0.2, 3.0).total, 6.1, 1e-12);
}

TEST(Decode, StrictThresholdAndShiftInvariance) {
  Mat z(4, 3);
  // n = 2: cells 1 and 2 are valid.
  z(1, 0) = 0.5;
  z(1, 1) = 0.0;
  z(2, 1) = 1.0;
  z(2, 2) = 1.0;
  const auto t = decode(z, 2);
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].head, 0u);
  EXPECT_EQ(t[0].tail, 1u);
  EXPECT_EQ(t[0].relation, 0u);

  Rng rng(3);
  for (int trial = 0; trial < 1000; ++trial) {
    Mat cell = random_mat(rng, 4, 5, 3.0);
    const double shift = rng.uniform(-100, 100);
    Mat shifted = cell;
    for (std::size_t c = 0; c < 5; ++c) shifted(1, c) += shift;
    const auto a = decode(cell, 2), b = decode(shifted, 2);
    std::vector<std::size_t> ra, rb;
    for (const auto& x : a)
      if (x.head == 0) ra.push_back(x.relation);
    for (const auto& x : b)
      if (x.head == 0) rb.push_back(x.relation);
    EXPECT_EQ(ra, rb);
  }
}

TEST(CellPositives, MapsEntitiesToRows) {
  const Document d = small_document();
  const auto pos = cell_positives(d.triples, 3, {0, 1, -1, 2});
  EXPECT_EQ(pos[0 * 3 + 1], (std::vector<std::size_t>{0}));
  EXPECT_EQ(pos[1 * 3 + 2], (std::vector<std::size_t>{1}));
  EXPECT_EQ(pos[0 * 3 + 2], (std::vector<std::size_t>{2}));
  EXPECT_TRUE(pos[2 * 3 + 0].empty());
}

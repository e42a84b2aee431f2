#include <gtest/gtest.h>

#include "remir/tensor.hpp"

using remir::Matrix;

TEST(Matrix, ShapeAndRowViews) {
  Matrix<double> m(2, 3, std::vector<double>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6);
  auto r = m.row(1);
  r[0] = 40;
  EXPECT_EQ(m(1, 0), 40);
  EXPECT_THROW(Matrix<double>(2, 2, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST(Matrix, EigenViewSharesStorage) {
  Matrix<double> a(2, 2, std::vector<double>{1, 2, 3, 4});
  Matrix<double> b(2, 2, std::vector<double>{1, 0, 0, 1});
  Matrix<double> c(2, 2);
  remir::as_eigen(c) = remir::as_eigen(a) * remir::as_eigen(b);
  EXPECT_EQ(c, a);
  remir::as_eigen(c)(0, 1) = 9;
  EXPECT_EQ(c(0, 1), 9);
}

TEST(Matrix, HelpersAndCast) {
  Matrix<double> a(1, 3, std::vector<double>{0.5, -1.25, 3});
  Matrix<double> b = a;
  b(0, 1) = 0.75;
  EXPECT_DOUBLE_EQ(remir::max_abs_diff(a, b), 2.0);
  auto f = remir::cast<float>(a);
  EXPECT_FLOAT_EQ(f(0, 2), 3.0f);
  EXPECT_TRUE(remir::all_finite(a));
  b(0, 0) = std::nan("");
  EXPECT_FALSE(remir::all_finite(b));
}

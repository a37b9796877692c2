// Copyright 2026 the clinembed project
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CLINEMBED_STATS_HPP_
#define CLINEMBED_STATS_HPP_

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace clinembed {
namespace stats {

namespace detail {

// Continued fraction for the regularized incomplete beta function.
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 200;
  constexpr double kEps = 3e-16;
  constexpr double kFpMin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) break;
  }
  return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) {
    throw std::invalid_argument("incomplete_beta: x outside [0, 1]");
  }
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log1p(-x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return front * detail::betacf(a, b, x) / a;
  }
  return 1.0 - front * detail::betacf(b, a, 1.0 - x) / b;
}

// Regularized lower incomplete gamma P(a, x).
inline double incomplete_gamma_p(double a, double x) {
  if (x < 0.0 || a <= 0.0) {
    throw std::invalid_argument("incomplete_gamma_p: bad arguments");
  }
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) {
    // series representation
    double ap = a;
    double sum = 1.0 / a;
    double del = sum;
    for (int n = 1; n <= 500; ++n) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 3e-16) break;
    }
    return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  // continued fraction for Q(a, x)
  constexpr double kFpMin = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / kFpMin;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 500; ++i) {
    double an = -static_cast<double>(i) * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = b + an / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 3e-16) break;
  }
  double q = std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
  return 1.0 - q;
}

// P(X > x) for a chi-squared variable with k degrees of freedom.
inline double chi_squared_sf(double x, double dof) {
  return 1.0 - incomplete_gamma_p(dof / 2.0, x / 2.0);
}

// One-sided tail P(T > t) for Student's t with nu degrees of freedom, t >= 0.
inline double student_t_sf(double t, double nu) {
  if (t < 0.0) return 1.0 - student_t_sf(-t, nu);
  double x = nu / (nu + t * t);
  return 0.5 * incomplete_beta(nu / 2.0, 0.5, x);
}

inline double student_t_two_sided_p(double t, double nu) {
  return 2.0 * student_t_sf(std::abs(t), nu);
}

struct OlsResult {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd std_errors;
  Eigen::VectorXd t_values;
  Eigen::VectorXd p_values;  // two-sided
  double residual_variance = 0.0;
  Eigen::Index n = 0;
};

// Ordinary least squares with classic t-tests. column_names are used in the
// singularity diagnostic.
inline OlsResult ols_fit(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const std::vector<std::string>& column_names) {
  if (x.rows() != y.size()) {
    throw std::invalid_argument("ols_fit: row count mismatch");
  }
  const Eigen::Index n = x.rows();
  const Eigen::Index p = x.cols();
  if (n <= p) throw std::invalid_argument("ols_fit: need more rows than columns");
  Eigen::MatrixXd xtx = x.transpose() * x;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(xtx);
  lu.setThreshold(1e-10);
  if (lu.rank() < p) {
    // Identify a column expressible by the others: dropping it keeps the rank.
    for (Eigen::Index j = 0; j < p; ++j) {
      Eigen::MatrixXd reduced(n, p - 1);
      Eigen::Index c = 0;
      for (Eigen::Index k = 0; k < p; ++k) {
        if (k != j) reduced.col(c++) = x.col(k);
      }
      Eigen::FullPivLU<Eigen::MatrixXd> lu_reduced(reduced.transpose() * reduced);
      lu_reduced.setThreshold(1e-10);
      if (lu_reduced.rank() == lu.rank()) {
        std::string name = j < static_cast<Eigen::Index>(column_names.size())
                               ? column_names[j]
                               : ("column " + std::to_string(j));
        throw std::runtime_error("ols_fit: singular design matrix, column '" +
                                 name + "' is collinear");
      }
    }
    throw std::runtime_error("ols_fit: singular design matrix");
  }
  Eigen::MatrixXd xtx_inv = lu.inverse();
  OlsResult res;
  res.n = n;
  res.coefficients = xtx_inv * (x.transpose() * y);
  Eigen::VectorXd residuals = y - x * res.coefficients;
  double dof = static_cast<double>(n - p);
  res.residual_variance = residuals.squaredNorm() / dof;
  res.std_errors.resize(p);
  res.t_values.resize(p);
  res.p_values.resize(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    res.std_errors(j) = std::sqrt(res.residual_variance * xtx_inv(j, j));
    if (res.std_errors(j) > 0.0) {
      res.t_values(j) = res.coefficients(j) / res.std_errors(j);
      res.p_values(j) = student_t_two_sided_p(res.t_values(j), dof);
    } else {
      // Perfect fit: a nonzero coefficient is unambiguously significant.
      bool zero = res.coefficients(j) == 0.0;
      res.t_values(j) =
          zero ? 0.0 : std::numeric_limits<double>::infinity() *
                           (res.coefficients(j) > 0 ? 1.0 : -1.0);
      res.p_values(j) = zero ? 1.0 : 0.0;
    }
  }
  return res;
}

}  // namespace stats
}  // namespace clinembed

#endif  // CLINEMBED_STATS_HPP_

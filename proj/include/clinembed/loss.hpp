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

#ifndef CLINEMBED_LOSS_HPP_
#define CLINEMBED_LOSS_HPP_

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace clinembed {

inline double softplus(double x) {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

inline double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Contrastive binary cross-entropy over one positive and k sampled negatives:
//   L = -log s(a.p) - sum_j log(1 - s(a.n_j))
// When include_negatives is false only the positive log-likelihood term
// remains. Gradients are returned as scalar coefficients on the dot products:
//   dL/da = pos_coeff * p + sum_j neg_coeffs[j] * n_j
//   dL/dp = pos_coeff * a,   dL/dn_j = neg_coeffs[j] * a
struct BceTerms {
  double value = 0.0;
  double pos_coeff = 0.0;
  std::vector<double> neg_coeffs;
};

inline BceTerms contrastive_bce(const Eigen::VectorXd& anchor,
                                const Eigen::VectorXd& positive,
                                std::span<const Eigen::VectorXd> negatives,
                                bool include_negatives = true) {
  if (anchor.size() != positive.size()) {
    throw std::invalid_argument("contrastive_bce: dimension mismatch");
  }
  BceTerms terms;
  double pos_dot = anchor.dot(positive);
  terms.value = softplus(-pos_dot);          // -log sigmoid(pos_dot)
  terms.pos_coeff = logistic(pos_dot) - 1.0;  // d(-log s(x))/dx = s(x) - 1
  if (include_negatives) {
    terms.neg_coeffs.reserve(negatives.size());
    for (const Eigen::VectorXd& neg : negatives) {
      if (neg.size() != anchor.size()) {
        throw std::invalid_argument("contrastive_bce: dimension mismatch");
      }
      double dot = anchor.dot(neg);
      terms.value += softplus(dot);  // -log(1 - s(dot))
      terms.neg_coeffs.push_back(logistic(dot));
    }
  }
  return terms;
}

}  // namespace clinembed

#endif  // CLINEMBED_LOSS_HPP_

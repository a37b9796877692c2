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

#ifndef CLINEMBED_GRADCHECK_HPP_
#define CLINEMBED_GRADCHECK_HPP_

#include <cmath>
#include <functional>
#include <span>

#include <Eigen/Dense>

#include "clinembed/nn.hpp"

namespace clinembed {

struct GradCheckReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  Eigen::Index worst_index = -1;
  Eigen::Index checked = 0;

  void merge(const GradCheckReport& other) {
    if (other.max_rel_err > max_rel_err) {
      max_rel_err = other.max_rel_err;
      worst_index = other.worst_index;
    }
    if (other.max_abs_err > max_abs_err) max_abs_err = other.max_abs_err;
    checked += other.checked;
  }
};

// Central finite differences against an analytic gradient: perturbs each
// coefficient by +/- eps and compares (f(t+e) - f(t-e)) / 2e to analytic.
// The loss function must be deterministic under re-evaluation.
inline GradCheckReport grad_check(const std::function<double()>& loss_fn,
                                  Eigen::MatrixXd& params,
                                  const Eigen::MatrixXd& analytic,
                                  double eps = 1e-5) {
  GradCheckReport report;
  for (Eigen::Index i = 0; i < params.size(); ++i) {
    double saved = params.data()[i];
    params.data()[i] = saved + eps;
    double plus = loss_fn();
    params.data()[i] = saved - eps;
    double minus = loss_fn();
    params.data()[i] = saved;
    double numeric = (plus - minus) / (2.0 * eps);
    double ana = analytic.data()[i];
    double abs_err = std::abs(numeric - ana);
    double denom = std::max({std::abs(numeric), std::abs(ana), 1e-6});
    double rel_err = abs_err / denom;
    if (rel_err > report.max_rel_err) {
      report.max_rel_err = rel_err;
      report.worst_index = i;
    }
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    ++report.checked;
  }
  return report;
}

// Convenience for checking a set of parameter slots whose grads were filled
// by one recorded backward pass.
inline GradCheckReport grad_check_slots(const std::function<double()>& loss_fn,
                                        std::span<ParamSlot> slots,
                                        double eps = 1e-5) {
  GradCheckReport report;
  for (ParamSlot& slot : slots) {
    report.merge(grad_check(loss_fn, *slot.value, *slot.grad, eps));
  }
  return report;
}

}  // namespace clinembed

#endif  // CLINEMBED_GRADCHECK_HPP_

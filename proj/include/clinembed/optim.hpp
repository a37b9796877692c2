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

#ifndef CLINEMBED_OPTIM_HPP_
#define CLINEMBED_OPTIM_HPP_

#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "clinembed/nn.hpp"

namespace clinembed {

// Per-parameter RMSprop: cache <- decay * cache + (1 - decay) * g^2,
// theta <- theta - lr * g / (sqrt(cache) + eps). Gradients are zeroed after
// each step.
class RmsProp {
 public:
  RmsProp(std::vector<ParamSlot> slots, double lr, double decay = 0.9,
          double eps = 1e-8)
      : slots_(std::move(slots)), lr_(lr), decay_(decay), eps_(eps) {
    caches_.reserve(slots_.size());
    for (const ParamSlot& slot : slots_) {
      caches_.push_back(
          Eigen::MatrixXd::Zero(slot.value->rows(), slot.value->cols()));
    }
  }

  void step() {
    for (size_t i = 0; i < slots_.size(); ++i) {
      Eigen::MatrixXd& g = *slots_[i].grad;
      Eigen::MatrixXd& cache = caches_[i];
      cache = decay_ * cache + (1.0 - decay_) * g.cwiseProduct(g);
      slots_[i].value->array() -=
          lr_ * g.array() / (cache.array().sqrt() + eps_);
      g.setZero();
    }
  }

  const std::vector<Eigen::MatrixXd>& caches() const { return caches_; }

 private:
  std::vector<ParamSlot> slots_;
  double lr_, decay_, eps_;
  std::vector<Eigen::MatrixXd> caches_;
};

// Adam with bias correction; used by the evaluation classifiers.
class Adam {
 public:
  Adam(std::vector<ParamSlot> slots, double lr, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8)
      : slots_(std::move(slots)),
        lr_(lr),
        beta1_(beta1),
        beta2_(beta2),
        eps_(eps) {
    for (const ParamSlot& slot : slots_) {
      m_.push_back(Eigen::MatrixXd::Zero(slot.value->rows(), slot.value->cols()));
      v_.push_back(Eigen::MatrixXd::Zero(slot.value->rows(), slot.value->cols()));
    }
  }

  void step() {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < slots_.size(); ++i) {
      Eigen::MatrixXd& g = *slots_[i].grad;
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
      Eigen::ArrayXXd m_hat = m_[i].array() / bc1;
      Eigen::ArrayXXd v_hat = v_[i].array() / bc2;
      slots_[i].value->array() -= lr_ * m_hat / (v_hat.sqrt() + eps_);
      g.setZero();
    }
  }

 private:
  std::vector<ParamSlot> slots_;
  double lr_, beta1_, beta2_, eps_;
  long long t_ = 0;
  std::vector<Eigen::MatrixXd> m_, v_;
};

}  // namespace clinembed

#endif  // CLINEMBED_OPTIM_HPP_

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

#ifndef CLINEMBED_EVAL_HPP_
#define CLINEMBED_EVAL_HPP_

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "clinembed/concepts.hpp"
#include "clinembed/corpus.hpp"
#include "clinembed/optim.hpp"
#include "clinembed/stats.hpp"

namespace clinembed {

// ---------------------------------------------------------------------------
// One-vs-rest logistic regression (full batch, Adam, L2 on weights)
// ---------------------------------------------------------------------------

struct LogRegModel {
  Eigen::MatrixXd weights;  // labels x dim
  Eigen::VectorXd bias;     // labels
  std::vector<int> skipped_labels;  // never present in the training rows

  Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& x) const {
    Eigen::MatrixXd z =
        (x * weights.transpose()).rowwise() + bias.transpose();
    return z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  }
};

struct LogRegObjective {
  double loss = 0.0;
  Eigen::MatrixXd grad_weights;
  Eigen::VectorXd grad_bias;
};

// Mean BCE over all (row, label) cells plus (l2 / 2) * ||W||^2, so the L2
// gradient contribution is exactly l2 * W. Bias is not penalized.
inline LogRegObjective logreg_objective(const Eigen::MatrixXd& weights,
                                        const Eigen::VectorXd& bias,
                                        const Eigen::MatrixXd& x,
                                        const Eigen::MatrixXd& y, double l2) {
  const double n = static_cast<double>(x.rows());
  Eigen::MatrixXd z = (x * weights.transpose()).rowwise() + bias.transpose();
  LogRegObjective out;
  // Per cell: -y log s(z) - (1 - y) log(1 - s(z)) = softplus(z) - y z.
  double bce = 0.0;
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    for (Eigen::Index l = 0; l < z.cols(); ++l) {
      double v = z(i, l);
      double sp = v > 0.0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
      bce += sp - y(i, l) * v;
    }
  }
  bce /= n;
  out.loss = bce + 0.5 * l2 * weights.squaredNorm();
  Eigen::MatrixXd probs =
      z.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
  Eigen::MatrixXd dz = (probs - y) / n;  // rows x labels
  out.grad_weights = dz.transpose() * x + l2 * weights;
  out.grad_bias = dz.colwise().sum().transpose();
  return out;
}

inline LogRegModel logreg_train(const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& y, double lr = 0.001,
                                double l2 = 0.01, int epochs = 200) {
  if (x.rows() < 2) {
    throw std::invalid_argument("logreg_train: need at least 2 training rows");
  }
  if (x.rows() != y.rows()) {
    throw std::invalid_argument("logreg_train: row count mismatch");
  }
  const Eigen::Index labels = y.cols();
  LogRegModel model;
  model.weights = Eigen::MatrixXd::Zero(labels, x.cols());
  model.bias = Eigen::VectorXd::Zero(labels);
  for (Eigen::Index l = 0; l < labels; ++l) {
    if ((y.col(l).array() > 0.5).count() == 0) {
      model.skipped_labels.push_back(static_cast<int>(l));
    }
  }
  Eigen::MatrixXd gw = Eigen::MatrixXd::Zero(labels, x.cols());
  Eigen::MatrixXd gb = Eigen::MatrixXd::Zero(labels, 1);
  Eigen::MatrixXd bias_mat = Eigen::MatrixXd::Zero(labels, 1);
  Adam adam({ParamSlot{&model.weights, &gw}, ParamSlot{&bias_mat, &gb}}, lr);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    LogRegObjective obj =
        logreg_objective(model.weights, bias_mat.col(0), x, y, l2);
    gw = obj.grad_weights;
    gb.col(0) = obj.grad_bias;
    adam.step();
  }
  model.bias = bias_mat.col(0);
  return model;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

// Mean over patients of average precision: per patient, labels are ranked by
// descending score (ties by label index) and AP is the mean of precision at
// each true label's rank. Patients with no (unskipped) true labels are
// skipped.
inline double map_score(const Eigen::MatrixXd& scores,
                        const std::vector<std::vector<int>>& true_labels,
                        const std::vector<int>& skip_labels = {}) {
  if (scores.rows() == 0) throw std::invalid_argument("map_score: empty input");
  std::set<int> skip(skip_labels.begin(), skip_labels.end());
  double ap_sum = 0.0;
  long long counted = 0;
  std::vector<int> order(static_cast<size_t>(scores.cols()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    std::vector<char> is_true(static_cast<size_t>(scores.cols()), 0);
    int n_true = 0;
    for (int l : true_labels[static_cast<size_t>(i)]) {
      if (skip.count(l)) continue;
      is_true[static_cast<size_t>(l)] = 1;
      ++n_true;
    }
    if (n_true == 0) continue;
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      if (scores(i, a) != scores(i, b)) return scores(i, a) > scores(i, b);
      return a < b;
    });
    double ap = 0.0;
    int hits = 0;
    for (size_t rank = 0; rank < order.size(); ++rank) {
      if (is_true[static_cast<size_t>(order[rank])]) {
        ++hits;
        ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
      }
    }
    ap_sum += ap / n_true;
    ++counted;
  }
  if (counted == 0) {
    throw std::invalid_argument("map_score: no patient has a true label");
  }
  return ap_sum / static_cast<double>(counted);
}

// Macro F1 over the two classes of a binary task; an F1 with a zero
// denominator counts as 0.
inline double macro_f1(const std::vector<bool>& predicted,
                       const std::vector<bool>& truth) {
  if (predicted.size() != truth.size() || predicted.empty()) {
    throw std::invalid_argument("macro_f1: bad inputs");
  }
  auto f1_for = [&](bool positive) {
    long long tp = 0, fp = 0, fn = 0;
    for (size_t i = 0; i < predicted.size(); ++i) {
      bool p = predicted[i] == positive;
      bool t = truth[i] == positive;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    double denom = static_cast<double>(2 * tp + fp + fn);
    return denom > 0.0 ? 2.0 * static_cast<double>(tp) / denom : 0.0;
  };
  return 0.5 * (f1_for(true) + f1_for(false));
}

inline double cosine(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0) return 0.0;
  return a.dot(b) / (na * nb);
}

// All unordered pairs for small cohorts, otherwise a seeded sample of
// 2 * n distinct pairs.
inline std::vector<std::pair<int, int>> patient_pairs(int n,
                                                      std::uint64_t seed,
                                                      int all_pairs_limit = 2000) {
  if (n < 2) throw std::invalid_argument("patient_pairs: need >= 2 patients");
  std::vector<std::pair<int, int>> pairs;
  if (n <= all_pairs_limit) {
    pairs.reserve(static_cast<size_t>(n) * (n - 1) / 2);
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    }
    return pairs;
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dist(0, n - 1);
  std::set<std::pair<int, int>> seen;
  while (static_cast<int>(seen.size()) < 2 * n) {
    int a = dist(rng), b = dist(rng);
    if (a == b) continue;
    seen.emplace(std::min(a, b), std::max(a, b));
  }
  pairs.assign(seen.begin(), seen.end());
  return pairs;
}

// Mean over pairs of (cos(label_i, label_j) - cos(user_i, user_j))^2.
inline double relatedness_mse(const Eigen::MatrixXd& user_vecs,
                              const Eigen::MatrixXd& label_vecs,
                              std::uint64_t seed = 0) {
  if (user_vecs.rows() != label_vecs.rows() || user_vecs.rows() < 2) {
    throw std::invalid_argument("relatedness_mse: bad inputs");
  }
  auto pairs = patient_pairs(static_cast<int>(user_vecs.rows()), seed);
  double sum = 0.0;
  for (const auto& [i, j] : pairs) {
    double lsim = cosine(label_vecs.row(i).transpose(),
                         label_vecs.row(j).transpose());
    double usim =
        cosine(user_vecs.row(i).transpose(), user_vecs.row(j).transpose());
    double d = lsim - usim;
    sum += d * d;
  }
  return sum / static_cast<double>(pairs.size());
}

inline double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  std::set<int> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::vector<int> inter, uni;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(),
                        std::back_inserter(inter));
  std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(),
                 std::back_inserter(uni));
  if (uni.empty()) return 1.0;  // two empty sets are identical
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

// Per query patient: rank the others by cosine similarity (ties by patient
// index), take the top k, and average the Jaccard overlap of label sets.
// Returned value is the mean over all queries.
inline double retrieval_jaccard(const Eigen::MatrixXd& user_vecs,
                                const std::vector<std::vector<int>>& label_sets,
                                int k = 10) {
  const int n = static_cast<int>(user_vecs.rows());
  if (n < k + 1) {
    throw std::invalid_argument(
        "retrieval_jaccard: need at least k + 1 patients");
  }
  double total = 0.0;
  for (int q = 0; q < n; ++q) {
    std::vector<std::pair<double, int>> ranked;
    ranked.reserve(static_cast<size_t>(n) - 1);
    for (int o = 0; o < n; ++o) {
      if (o == q) continue;
      ranked.emplace_back(
          cosine(user_vecs.row(q).transpose(), user_vecs.row(o).transpose()),
          o);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    double per_query = 0.0;
    for (int r = 0; r < k; ++r) {
      per_query += jaccard(label_sets[static_cast<size_t>(q)],
                           label_sets[static_cast<size_t>(ranked[r].second)]);
    }
    total += per_query / static_cast<double>(k);
  }
  return total / static_cast<double>(n);
}

// Ranked neighbors of one query patient (used by the retrieval command).
struct Neighbor {
  int patient_id;
  double cosine_sim;
  double label_jaccard;
};

inline std::vector<Neighbor> retrieve_neighbors(
    const Eigen::MatrixXd& user_vecs,
    const std::vector<std::vector<int>>& label_sets, int query, int k) {
  const int n = static_cast<int>(user_vecs.rows());
  if (query < 0 || query >= n) {
    throw std::invalid_argument("retrieve_neighbors: bad patient id");
  }
  if (k < 1 || k > n - 1) {
    throw std::invalid_argument(
        "retrieve_neighbors: k must be in [1, patients - 1]");
  }
  std::vector<std::pair<double, int>> ranked;
  for (int o = 0; o < n; ++o) {
    if (o == query) continue;
    ranked.emplace_back(
        cosine(user_vecs.row(query).transpose(), user_vecs.row(o).transpose()),
        o);
  }
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<Neighbor> out;
  for (int r = 0; r < k; ++r) {
    out.push_back(Neighbor{
        ranked[r].second, ranked[r].first,
        jaccard(label_sets[static_cast<size_t>(query)],
                label_sets[static_cast<size_t>(ranked[r].second)])});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Feature/label similarity regression
// ---------------------------------------------------------------------------

struct RegressionReport {
  // coefficient order: intercept, ngram, concept
  Eigen::VectorXd coefficients;
  Eigen::VectorXd p_values;
  Eigen::Index pairs = 0;
};

inline RegressionReport concept_regression(
    const std::vector<FeatureVector>& ngram_feats,
    const std::vector<FeatureVector>& concept_feats,
    const Eigen::MatrixXd& label_vecs, std::uint64_t seed = 0) {
  if (ngram_feats.size() != concept_feats.size() ||
      static_cast<Eigen::Index>(ngram_feats.size()) != label_vecs.rows()) {
    throw std::invalid_argument("concept_regression: size mismatch");
  }
  auto pairs = patient_pairs(static_cast<int>(ngram_feats.size()), seed);
  Eigen::MatrixXd x(static_cast<Eigen::Index>(pairs.size()), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(pairs.size()));
  for (size_t p = 0; p < pairs.size(); ++p) {
    auto [i, j] = pairs[p];
    x(static_cast<Eigen::Index>(p), 0) = 1.0;
    x(static_cast<Eigen::Index>(p), 1) =
        sparse_cosine(ngram_feats[static_cast<size_t>(i)],
                      ngram_feats[static_cast<size_t>(j)]);
    x(static_cast<Eigen::Index>(p), 2) =
        sparse_cosine(concept_feats[static_cast<size_t>(i)],
                      concept_feats[static_cast<size_t>(j)]);
    y(static_cast<Eigen::Index>(p)) = cosine(label_vecs.row(i).transpose(),
                                             label_vecs.row(j).transpose());
  }
  stats::OlsResult ols =
      stats::ols_fit(x, y, {"intercept", "ngram", "concept"});
  RegressionReport report;
  report.coefficients = ols.coefficients;
  report.p_values = ols.p_values;
  report.pairs = static_cast<Eigen::Index>(pairs.size());
  return report;
}

// ---------------------------------------------------------------------------
// Cross-validation and reports
// ---------------------------------------------------------------------------

enum class EvalTask { kPhenotypeMap, kMortalityF1 };

struct EvalReport {
  std::string task;
  double value = 0.0;
  std::vector<double> folds;
  std::string config_fingerprint;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["task"] = task;
    j["value"] = value;
    if (!folds.empty()) j["folds"] = folds;
    j["config_fingerprint"] = config_fingerprint;
    if (!extra.empty()) j["extra"] = extra;
    return j;
  }
};

inline Eigen::MatrixXd multi_hot_labels(const CorpusStore& corpus) {
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(corpus.patients.size()), corpus.label_count());
  for (const Patient& p : corpus.patients) {
    for (int l : p.labels) y(p.patient_id, l) = 1.0;
  }
  return y;
}

inline std::vector<std::vector<int>> label_sets(const CorpusStore& corpus) {
  std::vector<std::vector<int>> sets(corpus.patients.size());
  for (const Patient& p : corpus.patients) sets[p.patient_id] = p.labels;
  return sets;
}

// Shuffles patients by seed and splits them into `folds` contiguous groups;
// the first (n mod folds) folds receive one extra patient.
inline std::vector<std::vector<int>> make_folds(int n, int folds,
                                                std::uint64_t seed) {
  if (n < folds) throw std::invalid_argument("make_folds: too few patients");
  std::vector<int> order(static_cast<size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> out(static_cast<size_t>(folds));
  int base = n / folds, extra = n % folds;
  size_t pos = 0;
  for (int f = 0; f < folds; ++f) {
    int size = base + (f < extra ? 1 : 0);
    out[static_cast<size_t>(f)].assign(order.begin() + pos,
                                       order.begin() + pos + size);
    pos += static_cast<size_t>(size);
  }
  return out;
}

struct CvOptions {
  int folds = 5;
  std::uint64_t seed = 0;
  double lr = 0.001;
  double l2 = 0.01;
  int epochs = 200;
};

inline EvalReport cross_validate(const Eigen::MatrixXd& user_vecs,
                                 const CorpusStore& corpus, EvalTask task,
                                 const CvOptions& options,
                                 const std::string& fingerprint = "") {
  // Eligible patients: labeled ones for phenotype, annotated ones for
  // mortality.
  std::vector<int> eligible;
  for (const Patient& p : corpus.patients) {
    if (task == EvalTask::kPhenotypeMap && !p.labels.empty()) {
      eligible.push_back(p.patient_id);
    }
    if (task == EvalTask::kMortalityF1 && p.mortality.has_value()) {
      eligible.push_back(p.patient_id);
    }
  }
  if (static_cast<int>(eligible.size()) < options.folds) {
    throw std::runtime_error("cross_validate: not enough eligible patients");
  }
  auto fold_local = make_folds(static_cast<int>(eligible.size()),
                               options.folds, options.seed);
  EvalReport report;
  report.task =
      task == EvalTask::kPhenotypeMap ? "phenotype_map" : "mortality_f1";
  report.config_fingerprint = fingerprint;
  Eigen::MatrixXd all_y;
  if (task == EvalTask::kPhenotypeMap) {
    all_y = multi_hot_labels(corpus);
  }
  nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
  for (int f = 0; f < options.folds; ++f) {
    std::vector<int> test_ids;
    for (int local : fold_local[static_cast<size_t>(f)]) {
      test_ids.push_back(eligible[static_cast<size_t>(local)]);
    }
    std::vector<int> train_ids;
    for (int g = 0; g < options.folds; ++g) {
      if (g == f) continue;
      for (int local : fold_local[static_cast<size_t>(g)]) {
        train_ids.push_back(eligible[static_cast<size_t>(local)]);
      }
    }
    auto gather = [&](const std::vector<int>& ids, const Eigen::MatrixXd& src) {
      Eigen::MatrixXd out(static_cast<Eigen::Index>(ids.size()), src.cols());
      for (size_t i = 0; i < ids.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = src.row(ids[i]);
      }
      return out;
    };
    Eigen::MatrixXd x_train = gather(train_ids, user_vecs);
    Eigen::MatrixXd x_test = gather(test_ids, user_vecs);
    double fold_value = 0.0;
    if (task == EvalTask::kPhenotypeMap) {
      Eigen::MatrixXd y_train = gather(train_ids, all_y);
      LogRegModel model = logreg_train(x_train, y_train, options.lr,
                                       options.l2, options.epochs);
      Eigen::MatrixXd probs = model.predict_proba(x_test);
      std::vector<std::vector<int>> truth;
      for (int id : test_ids) truth.push_back(corpus.patients[id].labels);
      fold_value = map_score(probs, truth, model.skipped_labels);
      if (!model.skipped_labels.empty()) {
        skipped.push_back(
            {{"fold", f}, {"labels", model.skipped_labels}});
      }
    } else {
      Eigen::MatrixXd y_train(static_cast<Eigen::Index>(train_ids.size()), 1);
      for (size_t i = 0; i < train_ids.size(); ++i) {
        y_train(static_cast<Eigen::Index>(i), 0) =
            *corpus.patients[train_ids[i]].mortality ? 1.0 : 0.0;
      }
      LogRegModel model = logreg_train(x_train, y_train, options.lr,
                                       options.l2, options.epochs);
      Eigen::MatrixXd probs = model.predict_proba(x_test);
      std::vector<bool> pred, truth;
      for (size_t i = 0; i < test_ids.size(); ++i) {
        pred.push_back(probs(static_cast<Eigen::Index>(i), 0) >= 0.5);
        truth.push_back(*corpus.patients[test_ids[i]].mortality);
      }
      fold_value = macro_f1(pred, truth);
    }
    report.folds.push_back(fold_value);
  }
  report.value =
      std::accumulate(report.folds.begin(), report.folds.end(), 0.0) /
      static_cast<double>(report.folds.size());
  if (!skipped.empty()) report.extra["skipped_labels"] = skipped;
  return report;
}

}  // namespace clinembed

#endif  // CLINEMBED_EVAL_HPP_

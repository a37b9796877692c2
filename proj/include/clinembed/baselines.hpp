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

#ifndef CLINEMBED_BASELINES_HPP_
#define CLINEMBED_BASELINES_HPP_

#include <algorithm>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clinembed/concepts.hpp"
#include "clinembed/corpus.hpp"
#include "clinembed/loss.hpp"
#include "clinembed/optim.hpp"
#include "clinembed/training.hpp"

namespace clinembed {

// Training-free baseline: a patient is the mean of all token vectors across
// their notes (tokens pooled, not a mean of per-note means).
inline Eigen::MatrixXd word2user(const CorpusStore& corpus,
                                 const EmbeddingTable& words) {
  Eigen::MatrixXd users = Eigen::MatrixXd::Zero(
      static_cast<Eigen::Index>(corpus.patients.size()), words.dim());
  for (const Patient& p : corpus.patients) {
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(words.dim());
    long long count = 0;
    for (int note_id : p.note_ids) {
      for (int id : corpus.note_token_ids(note_id)) {
        sum += words.weights.row(id);
        ++count;
      }
    }
    if (count == 0) {
      throw std::runtime_error("word2user: patient without tokens");
    }
    users.row(p.patient_id) = sum / static_cast<double>(count);
  }
  return users;
}

// Concept-aware variant: mean of the token mean and concept mean (the concept
// mean is weighted by mention multiplicity). With emit_concat, the raw 2*dim
// concatenation is returned instead.
inline Eigen::MatrixXd word2user_concept(
    const CorpusStore& corpus, const EmbeddingTable& words,
    const EmbeddingTable& concept_table,
    const std::vector<std::string>& concept_ids,
    const std::unordered_map<int, std::vector<ConceptMention>>& mentions_by_note,
    bool emit_concat = false) {
  Eigen::MatrixXd token_means = word2user(corpus, words);
  std::unordered_map<std::string, int> row_of;
  for (size_t i = 0; i < concept_ids.size(); ++i) {
    row_of.emplace(concept_ids[i], static_cast<int>(i));
  }
  Eigen::Index dim = words.dim();
  Eigen::MatrixXd out(token_means.rows(), emit_concat ? 2 * dim : dim);
  for (const Patient& p : corpus.patients) {
    std::map<std::string, int> multiset =
        patient_concepts(p, mentions_by_note);
    Eigen::RowVectorXd concept_mean = Eigen::RowVectorXd::Zero(dim);
    long long count = 0;
    for (const auto& [id, mult] : multiset) {
      auto it = row_of.find(id);
      if (it == row_of.end()) continue;
      concept_mean += mult * concept_table.weights.row(it->second);
      count += mult;
    }
    if (count > 0) {
      concept_mean /= static_cast<double>(count);
    } else {
      // Patients without concepts fall back to their token mean.
      concept_mean = token_means.row(p.patient_id);
    }
    if (emit_concat) {
      out.row(p.patient_id).head(dim) = token_means.row(p.patient_id);
      out.row(p.patient_id).tail(dim) = concept_mean;
    } else {
      out.row(p.patient_id) =
          0.5 * (token_means.row(p.patient_id) + concept_mean);
    }
  }
  return out;
}

struct Usr2VecConfig {
  int epochs = 10;
  int negatives = 3;
  int batch_size = 1024;
  double lr = 1e-4;
  double rmsprop_decay = 0.9;
  double rmsprop_eps = 1e-8;
  int embedding_dim = 300;
  double unigram_power = 1.0;  // 0.75 for the smoothed word2vec variant
  std::uint64_t seed = 13;
};

struct Usr2VecResult {
  Eigen::MatrixXd user_vecs;
  std::vector<double> epoch_losses;  // mean per-pair loss
};

namespace detail {

// Cumulative-weight sampler (deterministic across standard libraries).
class WeightedSampler {
 public:
  explicit WeightedSampler(const std::vector<double>& weights) {
    cumulative_.reserve(weights.size());
    double acc = 0.0;
    for (double w : weights) {
      acc += w;
      cumulative_.push_back(acc);
    }
    total_ = acc;
  }
  int draw(std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unit(0.0, total_);
    double x = unit(rng);
    auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), x);
    if (it == cumulative_.end()) return static_cast<int>(cumulative_.size()) - 1;
    return static_cast<int>(it - cumulative_.begin());
  }

 private:
  std::vector<double> cumulative_;
  double total_ = 0.0;
};

}  // namespace detail

// Token-level contrastive baseline: for every (patient, token) occurrence,
// BCE over sigma(u . w) against `negatives` tokens drawn from the corpus
// unigram distribution. Word vectors stay frozen; only user vectors train.
// When a mention store is supplied (usr2vec+concept), a patient-concept task
// of the same form is added with equal weight, with concept vectors
// initialized from constituent word vectors and trained jointly.
inline Usr2VecResult usr2vec_train(const CorpusStore& corpus,
                                   const Usr2VecConfig& cfg,
                                   const MentionStore* mentions = nullptr,
                                   const std::string& pretrained_words = "") {
  if (corpus.patients.size() < 2) {
    throw std::runtime_error("usr2vec_train: need at least two patients");
  }
  std::mt19937_64 rng(cfg.seed);
  EmbeddingTable words =
      init_word_table(corpus.vocab, cfg.embedding_dim, rng, pretrained_words);
  EmbeddingTable users(static_cast<Eigen::Index>(corpus.patients.size()),
                       cfg.embedding_dim);
  users.init_uniform(-0.05, 0.05, rng);

  // Token pairs and the unigram negative distribution.
  struct Pair {
    int patient;
    int item;     // token id, or concept row for concept pairs
    bool is_concept;
  };
  std::vector<Pair> pairs;
  std::vector<double> unigram(static_cast<size_t>(corpus.vocab.size()), 0.0);
  for (const ClinicalNote& note : corpus.notes) {
    for (int id : corpus.note_token_ids(note.note_id)) {
      pairs.push_back(Pair{note.patient_id, id, false});
      unigram[static_cast<size_t>(id)] += 1.0;
    }
  }
  for (double& w : unigram) {
    if (w > 0.0) w = std::pow(w, cfg.unigram_power);
  }
  detail::WeightedSampler token_sampler(unigram);

  EmbeddingTable concepts;
  std::vector<std::vector<int>> complement;
  bool use_concepts = mentions && !mentions->concepts.empty();
  if (use_concepts) {
    concepts = init_concept_table(mentions->concepts, words, corpus.vocab);
    std::unordered_map<std::string, int> row_of;
    for (size_t i = 0; i < mentions->concepts.size(); ++i) {
      row_of.emplace(mentions->concepts[i].concept_id, static_cast<int>(i));
    }
    complement.resize(corpus.patients.size());
    for (const Patient& p : corpus.patients) {
      std::map<std::string, int> multiset =
          patient_concepts(p, mentions->mentions_by_note);
      std::vector<char> present(mentions->concepts.size(), 0);
      for (const auto& [id, count] : multiset) {
        auto it = row_of.find(id);
        if (it == row_of.end()) continue;
        present[static_cast<size_t>(it->second)] = 1;
        for (int c = 0; c < count; ++c) {
          pairs.push_back(Pair{p.patient_id, it->second, true});
        }
      }
      for (size_t r = 0; r < present.size(); ++r) {
        if (!present[r]) {
          complement[p.patient_id].push_back(static_cast<int>(r));
        }
      }
    }
  }

  std::vector<ParamSlot> slots = {users.slot()};
  if (use_concepts) slots.push_back(concepts.slot());
  RmsProp optimizer(slots, cfg.lr, cfg.rmsprop_decay, cfg.rmsprop_eps);

  Usr2VecResult result;
  std::vector<size_t> order(pairs.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    long long epoch_pairs = 0;
    for (size_t begin = 0; begin < order.size();
         begin += static_cast<size_t>(cfg.batch_size)) {
      size_t end =
          std::min(order.size(), begin + static_cast<size_t>(cfg.batch_size));
      long long n_token = 0, n_concept = 0;
      for (size_t i = begin; i < end; ++i) {
        n_token += pairs[order[i]].is_concept ? 0 : 1;
        n_concept += pairs[order[i]].is_concept ? 1 : 0;
      }
      for (size_t i = begin; i < end; ++i) {
        const Pair& pair = pairs[order[i]];
        Eigen::VectorXd u =
            users.weights.row(pair.patient).transpose();
        Eigen::VectorXd pos;
        std::vector<int> neg_rows;
        std::vector<Eigen::VectorXd> negs;
        if (!pair.is_concept) {
          pos = words.weights.row(pair.item).transpose();
          for (int jn = 0; jn < cfg.negatives; ++jn) {
            int neg = token_sampler.draw(rng);
            negs.push_back(words.weights.row(neg).transpose());
          }
        } else {
          pos = concepts.weights.row(pair.item).transpose();
          const auto& comp = complement[pair.patient];
          if (!comp.empty()) {
            std::uniform_int_distribution<size_t> dist(0, comp.size() - 1);
            for (int jn = 0; jn < cfg.negatives; ++jn) {
              int row = comp[dist(rng)];
              neg_rows.push_back(row);
              negs.push_back(concepts.weights.row(row).transpose());
            }
          }
        }
        BceTerms terms = contrastive_bce(u, pos, negs);
        // The two tasks enter the batch loss with equal weight; per-pair
        // gradients are scaled by the task's pair count in this batch.
        double scale = pair.is_concept ? 1.0 / static_cast<double>(n_concept)
                                    : 1.0 / static_cast<double>(n_token);
        epoch_loss += terms.value;
        ++epoch_pairs;
        Eigen::VectorXd du = terms.pos_coeff * pos;
        for (size_t jn = 0; jn < terms.neg_coeffs.size(); ++jn) {
          du += terms.neg_coeffs[jn] * negs[jn];
        }
        users.grads.row(pair.patient) += scale * du.transpose();
        if (pair.is_concept) {
          concepts.grads.row(pair.item) +=
              scale * terms.pos_coeff * u.transpose();
          for (size_t jn = 0; jn < terms.neg_coeffs.size(); ++jn) {
            concepts.grads.row(neg_rows[jn]) +=
                scale * terms.neg_coeffs[jn] * u.transpose();
          }
        }
      }
      optimizer.step();
    }
    result.epoch_losses.push_back(
        epoch_pairs > 0 ? epoch_loss / static_cast<double>(epoch_pairs) : 0.0);
  }
  result.user_vecs = users.weights;
  return result;
}

}  // namespace clinembed

#endif  // CLINEMBED_BASELINES_HPP_

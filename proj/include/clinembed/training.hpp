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

#ifndef CLINEMBED_TRAINING_HPP_
#define CLINEMBED_TRAINING_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinembed/concepts.hpp"
#include "clinembed/corpus.hpp"
#include "clinembed/loss.hpp"
#include "clinembed/nn.hpp"
#include "clinembed/optim.hpp"

namespace clinembed {

struct TrainConfig {
  double lambda = 0.3;  // weight of the patient-concept task
  double alpha = 0.0;   // weight of the masked-LM hook (term fixed at zero)
  int epochs = 15;
  int batch_size = 16;
  int negatives_per_positive = 3;  // document-level counterfactuals
  int snippet_min = 200;
  int snippet_max = 512;
  double lr = 1e-4;
  double rmsprop_decay = 0.9;
  double rmsprop_eps = 1e-8;
  std::string encoder = "bigru";  // bigru | meanpool
  std::uint64_t seed = 13;
  bool enable_contrastive = true;
  bool enable_concepts = true;
  int token_negatives_per_positive = 1;
  double token_replace_prob = 0.5;
  int concept_positives_per_example = 5;
  int concept_negatives_per_positive = 3;
  int embedding_dim = 300;
  int gru_hidden = 150;       // per direction; 2 * 150 matches the embedding
  bool gru_projection = false;  // learned 2H -> dim projection instead
  double dropout = 0.2;
  int threads = 1;
  int max_vocab = 15000;

  void validate() const {
    if (lambda < 0.0 || lambda > 1.0) {
      throw std::invalid_argument("TrainConfig: lambda must be in [0, 1]");
    }
    if (snippet_min > snippet_max || snippet_min < 1) {
      throw std::invalid_argument("TrainConfig: bad snippet range");
    }
    if (negatives_per_positive < 1) {
      throw std::invalid_argument(
          "TrainConfig: negatives_per_positive must be >= 1");
    }
    if (epochs < 0 || batch_size < 1) {
      throw std::invalid_argument("TrainConfig: bad epochs/batch_size");
    }
    if (token_replace_prob <= 0.0 || token_replace_prob > 1.0) {
      throw std::invalid_argument(
          "TrainConfig: token_replace_prob must be in (0, 1]");
    }
    if (dropout < 0.0 || dropout >= 1.0) {
      throw std::invalid_argument("TrainConfig: dropout must be in [0, 1)");
    }
    if (encoder != "bigru" && encoder != "meanpool") {
      throw std::invalid_argument("TrainConfig: unknown encoder " + encoder);
    }
    if (threads < 1) {
      throw std::invalid_argument("TrainConfig: threads must be >= 1");
    }
    if (embedding_dim < 1 || gru_hidden < 1 || max_vocab < 1) {
      throw std::invalid_argument("TrainConfig: bad dimensions");
    }
    if (!gru_projection && encoder == "bigru" &&
        2 * gru_hidden != embedding_dim) {
      throw std::invalid_argument(
          "TrainConfig: 2 * gru_hidden must equal embedding_dim unless "
          "gru_projection is set");
    }
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["lambda"] = lambda;
    j["alpha"] = alpha;
    j["epochs"] = epochs;
    j["batch_size"] = batch_size;
    j["negatives_per_positive"] = negatives_per_positive;
    j["snippet_min"] = snippet_min;
    j["snippet_max"] = snippet_max;
    j["lr"] = lr;
    j["rmsprop_decay"] = rmsprop_decay;
    j["rmsprop_eps"] = rmsprop_eps;
    j["encoder"] = encoder;
    j["seed"] = seed;
    j["enable_contrastive"] = enable_contrastive;
    j["enable_concepts"] = enable_concepts;
    j["token_negatives_per_positive"] = token_negatives_per_positive;
    j["token_replace_prob"] = token_replace_prob;
    j["concept_positives_per_example"] = concept_positives_per_example;
    j["concept_negatives_per_positive"] = concept_negatives_per_positive;
    j["embedding_dim"] = embedding_dim;
    j["gru_hidden"] = gru_hidden;
    j["gru_projection"] = gru_projection;
    j["dropout"] = dropout;
    j["threads"] = threads;
    j["max_vocab"] = max_vocab;
    return j;
  }
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::string fingerprint_json(const nlohmann::ordered_json& j) {
  std::string canonical = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(h));
  return std::string(buf);
}

inline std::string config_fingerprint(const TrainConfig& cfg) {
  return fingerprint_json(cfg.to_json());
}

// The masked-LM objective only applies to transformer extractors, which are
// not part of this build; the hook keeps the joint loss shape intact.
inline double masked_lm_loss() { return 0.0; }

// ---------------------------------------------------------------------------
// Snippets and sampling
// ---------------------------------------------------------------------------

struct Snippet {
  int patient_id = -1;
  int note_id = -1;
  int begin = 0;  // token offset within the note
  std::vector<int> token_ids;
};

// Notes at most max_len long become a single snippet; longer notes are cut
// left to right into pieces of uniform random length in [min_len, max_len].
// The concatenation of the pieces always equals the original sequence; only
// the final remainder may be shorter than min_len.
inline std::vector<Snippet> random_split(int patient_id, int note_id,
                                         const std::vector<int>& token_ids,
                                         int min_len, int max_len,
                                         std::mt19937_64& rng) {
  if (min_len > max_len || min_len < 1) {
    throw std::invalid_argument("random_split: bad length range");
  }
  std::vector<Snippet> snippets;
  const int n = static_cast<int>(token_ids.size());
  if (n <= max_len) {
    snippets.push_back(Snippet{patient_id, note_id, 0, token_ids});
    return snippets;
  }
  std::uniform_int_distribution<int> length_dist(min_len, max_len);
  int pos = 0;
  while (n - pos > max_len) {
    int len = length_dist(rng);
    snippets.push_back(Snippet{
        patient_id, note_id, pos,
        std::vector<int>(token_ids.begin() + pos, token_ids.begin() + pos + len)});
    pos += len;
  }
  snippets.push_back(Snippet{patient_id, note_id, pos,
                             std::vector<int>(token_ids.begin() + pos,
                                              token_ids.end())});
  return snippets;
}

// k snippets drawn uniformly from the pool entries owned by other patients.
inline std::vector<int> sample_doc_negatives(int target_patient,
                                             const std::vector<Snippet>& pool,
                                             int k, std::mt19937_64& rng) {
  bool other_exists = false;
  for (const Snippet& s : pool) {
    if (s.patient_id != target_patient) {
      other_exists = true;
      break;
    }
  }
  if (!other_exists) {
    throw std::runtime_error(
        "sample_doc_negatives: corpus must contain at least two patients");
  }
  std::uniform_int_distribution<size_t> dist(0, pool.size() - 1);
  std::vector<int> picks;
  picks.reserve(k);
  while (static_cast<int>(picks.size()) < k) {
    size_t idx = dist(rng);
    if (pool[idx].patient_id != target_patient) {
      picks.push_back(static_cast<int>(idx));
    }
  }
  return picks;
}

// Token-level counterfactual: each token independently replaced by a uniform
// draw over the real vocabulary with probability replace_prob.
inline Snippet make_token_negative(const Snippet& snippet, int vocab_size,
                                   double replace_prob, std::mt19937_64& rng) {
  if (replace_prob <= 0.0 || replace_prob > 1.0) {
    throw std::invalid_argument(
        "make_token_negative: replace_prob must be in (0, 1]");
  }
  if (vocab_size <= Vocabulary::kFirstTokenIndex) {
    throw std::invalid_argument("make_token_negative: vocabulary too small");
  }
  Snippet corrupted = snippet;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_int_distribution<int> token_dist(Vocabulary::kFirstTokenIndex,
                                                vocab_size - 1);
  for (int& id : corrupted.token_ids) {
    if (unit(rng) < replace_prob) id = token_dist(rng);
  }
  return corrupted;
}

// Spec-facing aliases: both tasks share the same contrastive BCE form.
inline BceTerms loss_patient_document(const Eigen::VectorXd& user_vec,
                                      const Eigen::VectorXd& pos_doc_vec,
                                      std::span<const Eigen::VectorXd> neg_docs,
                                      bool include_negatives = true) {
  return contrastive_bce(user_vec, pos_doc_vec, neg_docs, include_negatives);
}

inline BceTerms loss_patient_concept(
    const Eigen::VectorXd& user_vec, const Eigen::VectorXd& pos_concept_vec,
    std::span<const Eigen::VectorXd> neg_concepts,
    bool include_negatives = true) {
  return contrastive_bce(user_vec, pos_concept_vec, neg_concepts,
                         include_negatives);
}

// Concept vectors start as the mean of the first surface form's word vectors
// (UNK vector for out-of-vocabulary tokens).
inline EmbeddingTable init_concept_table(
    const std::vector<LexiconEntry>& lexicon, const EmbeddingTable& words,
    const Vocabulary& vocab) {
  EmbeddingTable table(static_cast<Eigen::Index>(lexicon.size()), words.dim());
  for (size_t c = 0; c < lexicon.size(); ++c) {
    const auto& form = lexicon[c].surface_forms.at(0);
    Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(words.dim());
    for (const std::string& tok : form) {
      mean += words.weights.row(vocab.lookup(tok));
    }
    table.weights.row(static_cast<Eigen::Index>(c)) =
        mean / static_cast<double>(form.size());
  }
  return table;
}

// ---------------------------------------------------------------------------
// Model parameters and checkpoints
// ---------------------------------------------------------------------------

struct ModelParams {
  std::string encoder = "bigru";
  EmbeddingTable words;
  EmbeddingTable users;
  EmbeddingTable concepts;
  std::vector<std::string> concept_ids;  // row order of the concept table
  GruParams gru;

  std::vector<ParamSlot> collect_slots() {
    std::vector<ParamSlot> slots;
    slots.push_back(words.slot());
    slots.push_back(users.slot());
    if (concepts.rows() > 0) slots.push_back(concepts.slot());
    if (encoder == "bigru") gru.collect_slots(slots);
    return slots;
  }

  void zero_grads() {
    words.zero_grads();
    users.zero_grads();
    if (concepts.rows() > 0) concepts.zero_grads();
    if (encoder == "bigru") gru.zero_grads();
  }
};

namespace detail {

inline void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  std::uint64_t n = read_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw std::runtime_error("checkpoint: truncated string");
  return s;
}

inline void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  write_u64(out, static_cast<std::uint64_t>(m.rows()));
  write_u64(out, static_cast<std::uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}

inline Eigen::MatrixXd read_matrix(std::istream& in) {
  std::uint64_t rows = read_u64(in);
  std::uint64_t cols = read_u64(in);
  Eigen::MatrixXd m(rows, cols);
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) throw std::runtime_error("checkpoint: truncated matrix");
  return m;
}

inline void write_dir_params(std::ostream& out, const GruDirParams& p) {
  write_matrix(out, p.w_update);
  write_matrix(out, p.w_reset);
  write_matrix(out, p.w_cand);
  write_matrix(out, p.u_update);
  write_matrix(out, p.u_reset);
  write_matrix(out, p.u_cand);
  write_matrix(out, p.b_update);
  write_matrix(out, p.b_reset);
  write_matrix(out, p.b_cand);
}

inline void read_dir_params(std::istream& in, GruDirParams& p) {
  p.w_update = read_matrix(in);
  p.w_reset = read_matrix(in);
  p.w_cand = read_matrix(in);
  p.u_update = read_matrix(in);
  p.u_reset = read_matrix(in);
  p.u_cand = read_matrix(in);
  p.b_update = read_matrix(in);
  p.b_reset = read_matrix(in);
  p.b_cand = read_matrix(in);
}

}  // namespace detail

struct Checkpoint {
  ModelParams params;
  std::string fingerprint;
  std::string rng_state;
};

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const std::string& fingerprint,
                            const std::string& rng_state) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("save_checkpoint: cannot open " + tmp);
    out.write("CEMB", 4);
    detail::write_u64(out, 1);  // format version
    detail::write_string(out, fingerprint);
    detail::write_string(out, params.encoder);
    detail::write_string(out, rng_state);
    detail::write_u64(out, params.concept_ids.size());
    for (const std::string& id : params.concept_ids) {
      detail::write_string(out, id);
    }
    detail::write_matrix(out, params.words.weights);
    detail::write_matrix(out, params.users.weights);
    detail::write_matrix(out, params.concepts.weights);
    bool has_gru = params.encoder == "bigru";
    detail::write_u64(out, has_gru ? 1 : 0);
    if (has_gru) {
      detail::write_u64(out, static_cast<std::uint64_t>(params.gru.input_dim));
      detail::write_u64(out, static_cast<std::uint64_t>(params.gru.hidden_dim));
      detail::write_u64(out, params.gru.use_projection ? 1 : 0);
      detail::write_dir_params(out, params.gru.fwd);
      detail::write_dir_params(out, params.gru.bwd);
      if (params.gru.use_projection) {
        detail::write_matrix(out, params.gru.w_proj);
        detail::write_matrix(out, params.gru.b_proj);
      }
    }
    if (!out) throw std::runtime_error("save_checkpoint: write failed");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw std::runtime_error("save_checkpoint: rename to " + path + " failed");
  }
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "CEMB") {
    throw std::runtime_error("load_checkpoint: bad magic in " + path);
  }
  if (detail::read_u64(in) != 1) {
    throw std::runtime_error("load_checkpoint: unsupported version");
  }
  Checkpoint ckpt;
  ckpt.fingerprint = detail::read_string(in);
  ckpt.params.encoder = detail::read_string(in);
  ckpt.rng_state = detail::read_string(in);
  std::uint64_t n_concepts = detail::read_u64(in);
  ckpt.params.concept_ids.reserve(n_concepts);
  for (std::uint64_t i = 0; i < n_concepts; ++i) {
    ckpt.params.concept_ids.push_back(detail::read_string(in));
  }
  ckpt.params.words.weights = detail::read_matrix(in);
  ckpt.params.words.grads =
      Eigen::MatrixXd::Zero(ckpt.params.words.rows(), ckpt.params.words.dim());
  ckpt.params.users.weights = detail::read_matrix(in);
  ckpt.params.users.grads =
      Eigen::MatrixXd::Zero(ckpt.params.users.rows(), ckpt.params.users.dim());
  ckpt.params.concepts.weights = detail::read_matrix(in);
  ckpt.params.concepts.grads = Eigen::MatrixXd::Zero(
      ckpt.params.concepts.rows(), ckpt.params.concepts.weights.cols());
  if (detail::read_u64(in) == 1) {
    std::uint64_t input = detail::read_u64(in);
    std::uint64_t hidden = detail::read_u64(in);
    bool proj = detail::read_u64(in) == 1;
    ckpt.params.gru = GruParams::make(static_cast<Eigen::Index>(input),
                                      static_cast<Eigen::Index>(hidden), proj,
                                      static_cast<Eigen::Index>(input));
    detail::read_dir_params(in, ckpt.params.gru.fwd);
    detail::read_dir_params(in, ckpt.params.gru.bwd);
    if (proj) {
      ckpt.params.gru.w_proj = detail::read_matrix(in);
      ckpt.params.gru.b_proj = detail::read_matrix(in);
    }
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Joint trainer
// ---------------------------------------------------------------------------

struct TrainLogEntry {
  int epoch = 0;
  double doc_loss = 0.0;
  double concept_loss = 0.0;
  double total = 0.0;
};

inline nlohmann::ordered_json loss_log_json(
    const std::vector<TrainLogEntry>& log, const std::string& fingerprint) {
  nlohmann::ordered_json j;
  j["fingerprint"] = fingerprint;
  nlohmann::ordered_json epochs = nlohmann::ordered_json::array();
  for (const TrainLogEntry& e : log) {
    epochs.push_back({{"epoch", e.epoch},
                      {"doc", e.doc_loss},
                      {"concept", e.concept_loss},
                      {"total", e.total}});
  }
  j["epochs"] = std::move(epochs);
  return j;
}

struct StepStats {
  double doc_loss_sum = 0.0;
  double concept_loss_sum = 0.0;
  int doc_count = 0;
  int concept_count = 0;
  double total = 0.0;
};

class JointTrainer {
 public:
  JointTrainer(const CorpusStore& corpus, const MentionStore* mentions,
               TrainConfig cfg, const std::string& pretrained_words = "")
      : corpus_(corpus), cfg_(std::move(cfg)), rng_(cfg_.seed) {
    cfg_.validate();
    if (corpus_.patients.size() < 2) {
      throw std::runtime_error("JointTrainer: need at least two patients");
    }
    params_.encoder = cfg_.encoder;
    params_.words = init_word_table(corpus_.vocab, cfg_.embedding_dim, rng_,
                                    pretrained_words);
    params_.users = EmbeddingTable(
        static_cast<Eigen::Index>(corpus_.patients.size()), cfg_.embedding_dim);
    params_.users.init_uniform(-0.05, 0.05, rng_);
    if (cfg_.encoder == "bigru") {
      params_.gru = GruParams::make(cfg_.embedding_dim, cfg_.gru_hidden,
                                    cfg_.gru_projection, cfg_.embedding_dim);
      params_.gru.init_uniform(-0.05, 0.05, rng_);
    }
    if (mentions && !mentions->concepts.empty()) {
      params_.concepts =
          init_concept_table(mentions->concepts, params_.words, corpus_.vocab);
      for (const LexiconEntry& e : mentions->concepts) {
        params_.concept_ids.push_back(e.concept_id);
      }
      build_concept_index(*mentions);
    } else {
      patient_concept_weights_.assign(corpus_.patients.size(), {});
      patient_concept_complement_.assign(corpus_.patients.size(), {});
    }
    build_snippets();
    optimizer_ = std::make_unique<RmsProp>(params_.collect_slots(), cfg_.lr,
                                           cfg_.rmsprop_decay, cfg_.rmsprop_eps);
  }

  const TrainConfig& config() const { return cfg_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }
  const std::vector<Snippet>& snippets() const { return snippets_; }
  std::string fingerprint() const { return config_fingerprint(cfg_); }

  std::string rng_state() const {
    std::ostringstream out;
    out << rng_;
    return out.str();
  }

  std::vector<TrainLogEntry> train(const std::string& checkpoint_path = "") {
    std::vector<TrainLogEntry> log;
    std::vector<int> order(snippets_.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng_);
      double doc_sum = 0.0, concept_sum = 0.0;
      long long doc_n = 0, concept_n = 0;
      for (size_t begin = 0; begin < order.size();
           begin += static_cast<size_t>(cfg_.batch_size)) {
        size_t end = std::min(order.size(),
                              begin + static_cast<size_t>(cfg_.batch_size));
        StepStats stats = joint_step(
            std::span<const int>(order.data() + begin, end - begin));
        doc_sum += stats.doc_loss_sum;
        doc_n += stats.doc_count;
        concept_sum += stats.concept_loss_sum;
        concept_n += stats.concept_count;
      }
      TrainLogEntry entry;
      entry.epoch = epoch;
      entry.doc_loss = doc_n > 0 ? doc_sum / static_cast<double>(doc_n) : 0.0;
      entry.concept_loss =
          concept_n > 0 ? concept_sum / static_cast<double>(concept_n) : 0.0;
      entry.total = (1.0 - cfg_.lambda) * entry.doc_loss +
                    cfg_.lambda * entry.concept_loss +
                    cfg_.alpha * masked_lm_loss();
      log.push_back(entry);
      if (!checkpoint_path.empty()) {
        save_checkpoint(checkpoint_path, params_, fingerprint(), rng_state());
      }
    }
    return log;
  }

  // One optimizer step over a batch of snippet indices. Exposed for tests.
  StepStats joint_step(std::span<const int> batch) {
    StepStats stats;
    if (batch.empty()) return stats;
    const int b = static_cast<int>(batch.size());
    int concept_contributors = 0;
    if (cfg_.enable_concepts && params_.concepts.rows() > 0) {
      for (int idx : batch) {
        if (!patient_concept_weights_[snippets_[idx].patient_id].empty()) {
          ++concept_contributors;
        }
      }
    }
    const double doc_weight = (1.0 - cfg_.lambda) / static_cast<double>(b);

    const int workers =
        std::max(1, std::min<int>(cfg_.threads, static_cast<int>(batch.size())));
    std::vector<double> doc_losses(batch.size(), 0.0);
    std::vector<double> concept_losses(batch.size(), 0.0);
    std::vector<char> has_concepts(batch.size(), 0);

    if (workers == 1) {
      GradSink sink{&params_.words.grads, &params_.users.grads,
                    &params_.concepts.grads, &params_.gru};
      for (size_t slot = 0; slot < batch.size(); ++slot) {
        process_example(batch[slot], slot, doc_weight, concept_contributors,
                        sink, doc_losses[slot], concept_losses[slot],
                        has_concepts[slot]);
      }
    } else {
      std::vector<WorkerBuffers> buffers;
      buffers.reserve(workers);
      for (int w = 0; w < workers; ++w) buffers.emplace_back(make_buffers());
      std::vector<std::thread> pool;
      pool.reserve(workers);
      for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&, w]() {
          GradSink sink{&buffers[w].word_grads, &buffers[w].user_grads,
                        &buffers[w].concept_grads, &buffers[w].gru_grads};
          for (size_t slot = static_cast<size_t>(w); slot < batch.size();
               slot += static_cast<size_t>(workers)) {
            process_example(batch[slot], slot, doc_weight,
                            concept_contributors, sink, doc_losses[slot],
                            concept_losses[slot], has_concepts[slot]);
          }
        });
      }
      for (std::thread& t : pool) t.join();
      // Deterministic reduction: worker index order.
      for (int w = 0; w < workers; ++w) {
        params_.words.grads += buffers[w].word_grads;
        params_.users.grads += buffers[w].user_grads;
        if (params_.concepts.rows() > 0) {
          params_.concepts.grads += buffers[w].concept_grads;
        }
        if (cfg_.encoder == "bigru") {
          reduce_gru(buffers[w].gru_grads, params_.gru);
        }
      }
    }

    for (size_t slot = 0; slot < batch.size(); ++slot) {
      stats.doc_loss_sum += doc_losses[slot];
      ++stats.doc_count;
      if (has_concepts[slot]) {
        stats.concept_loss_sum += concept_losses[slot];
        ++stats.concept_count;
      }
    }
    double doc_mean = stats.doc_loss_sum / static_cast<double>(b);
    double concept_mean =
        stats.concept_count > 0
            ? stats.concept_loss_sum / static_cast<double>(stats.concept_count)
            : 0.0;
    stats.total = (1.0 - cfg_.lambda) * doc_mean + cfg_.lambda * concept_mean +
                  cfg_.alpha * masked_lm_loss();
    if (!std::isfinite(stats.total)) {
      throw std::runtime_error(
          "joint_step: non-finite loss at step " + std::to_string(step_) +
          " (doc=" + std::to_string(doc_mean) +
          ", concept=" + std::to_string(concept_mean) + ")");
    }
    optimizer_->step();
    ++step_;
    return stats;
  }

 private:
  struct GradSink {
    Eigen::MatrixXd* word_grads;
    Eigen::MatrixXd* user_grads;
    Eigen::MatrixXd* concept_grads;
    GruParams* gru_grads;
  };

  struct WorkerBuffers {
    Eigen::MatrixXd word_grads;
    Eigen::MatrixXd user_grads;
    Eigen::MatrixXd concept_grads;
    GruParams gru_grads;
  };

  WorkerBuffers make_buffers() const {
    WorkerBuffers buf;
    buf.word_grads = Eigen::MatrixXd::Zero(params_.words.rows(),
                                           params_.words.dim());
    buf.user_grads = Eigen::MatrixXd::Zero(params_.users.rows(),
                                           params_.users.dim());
    buf.concept_grads = Eigen::MatrixXd::Zero(
        std::max<Eigen::Index>(params_.concepts.rows(), 0),
        params_.concepts.rows() > 0 ? params_.concepts.dim() : 0);
    if (cfg_.encoder == "bigru") {
      buf.gru_grads = GruParams::make(cfg_.embedding_dim, cfg_.gru_hidden,
                                      cfg_.gru_projection, cfg_.embedding_dim);
    }
    return buf;
  }

  static void reduce_dir(const GruDirParams& src, GruDirParams& dst) {
    dst.gw_update += src.gw_update;
    dst.gw_reset += src.gw_reset;
    dst.gw_cand += src.gw_cand;
    dst.gu_update += src.gu_update;
    dst.gu_reset += src.gu_reset;
    dst.gu_cand += src.gu_cand;
    dst.gb_update += src.gb_update;
    dst.gb_reset += src.gb_reset;
    dst.gb_cand += src.gb_cand;
  }

  static void reduce_gru(const GruParams& src, GruParams& dst) {
    reduce_dir(src.fwd, dst.fwd);
    reduce_dir(src.bwd, dst.bwd);
    if (dst.use_projection) {
      dst.gw_proj += src.gw_proj;
      dst.gb_proj += src.gb_proj;
    }
  }

  // Sampling and dropout use per-example generators derived from (seed, step,
  // slot) so results do not depend on the thread schedule.
  std::mt19937_64 example_rng(size_t slot) const {
    std::uint64_t s = splitmix64(
        cfg_.seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(step_ + 1));
    s = splitmix64(s + static_cast<std::uint64_t>(slot));
    return std::mt19937_64(s);
  }

  struct Encoded {
    EncodedDoc doc;
    MeanPoolTape mean_tape;
    BiGruTape gru_tape;
  };

  void encode(const Snippet& snippet, bool training, std::mt19937_64& rng,
              Encoded& out) const {
    if (cfg_.encoder == "meanpool") {
      out.doc = encode_meanpool(snippet.token_ids, params_.words,
                                &out.mean_tape);
    } else {
      out.doc = encode_bigru(snippet.token_ids, params_.words, params_.gru,
                             cfg_.dropout, training, rng, &out.gru_tape);
    }
    out.doc.note_id = snippet.note_id;
    out.doc.span_begin = snippet.begin;
    out.doc.span_end = snippet.begin + static_cast<int>(snippet.token_ids.size());
  }

  void encoder_backward(const Encoded& enc, const Eigen::VectorXd& upstream,
                        GradSink& sink) const {
    if (cfg_.encoder == "meanpool") {
      meanpool_backward(enc.mean_tape, upstream, *sink.word_grads);
    } else {
      bigru_backward(enc.gru_tape, upstream, params_.gru, *sink.gru_grads,
                     *sink.word_grads);
    }
  }

  void process_example(int snippet_idx, size_t slot, double doc_weight,
                       int concept_contributors, GradSink& sink,
                       double& doc_loss_out, double& concept_loss_out,
                       char& has_concepts_out) {
    std::mt19937_64 rng = example_rng(slot);
    const Snippet& positive = snippets_[snippet_idx];
    const int patient = positive.patient_id;
    Eigen::VectorXd user_vec =
        params_.users.weights.row(patient).transpose();

    Encoded pos_enc;
    encode(positive, /*training=*/true, rng, pos_enc);

    std::vector<Encoded> neg_encs;
    std::vector<Eigen::VectorXd> neg_vecs;
    if (cfg_.enable_contrastive) {
      std::vector<int> neg_ids = sample_doc_negatives(
          patient, snippets_, cfg_.negatives_per_positive, rng);
      std::vector<Snippet> token_negs;
      for (int j = 0; j < cfg_.token_negatives_per_positive; ++j) {
        token_negs.push_back(make_token_negative(
            positive, corpus_.vocab.size(), cfg_.token_replace_prob, rng));
      }
      neg_encs.resize(neg_ids.size() + token_negs.size());
      size_t e = 0;
      for (int id : neg_ids) {
        encode(snippets_[id], /*training=*/true, rng, neg_encs[e++]);
      }
      for (const Snippet& tn : token_negs) {
        encode(tn, /*training=*/true, rng, neg_encs[e++]);
      }
      neg_vecs.reserve(neg_encs.size());
      for (const Encoded& enc : neg_encs) neg_vecs.push_back(enc.doc.vec);
    }

    BceTerms doc_terms = contrastive_bce(user_vec, pos_enc.doc.vec, neg_vecs,
                                         cfg_.enable_contrastive);
    doc_loss_out = doc_terms.value;
    if (doc_weight > 0.0) {
      Eigen::VectorXd du = doc_terms.pos_coeff * pos_enc.doc.vec;
      for (size_t j = 0; j < doc_terms.neg_coeffs.size(); ++j) {
        du += doc_terms.neg_coeffs[j] * neg_vecs[j];
      }
      sink.user_grads->row(patient) += doc_weight * du.transpose();
      encoder_backward(pos_enc, doc_weight * doc_terms.pos_coeff * user_vec,
                       sink);
      for (size_t j = 0; j < doc_terms.neg_coeffs.size(); ++j) {
        encoder_backward(neg_encs[j],
                         doc_weight * doc_terms.neg_coeffs[j] * user_vec, sink);
      }
    }

    const auto& concept_weights = patient_concept_weights_[patient];
    if (cfg_.enable_concepts && !concept_weights.empty() &&
        concept_contributors > 0) {
      has_concepts_out = 1;
      std::vector<int> positives = sample_weighted_concepts(
          concept_weights, cfg_.concept_positives_per_example, rng);
      const double pair_weight =
          cfg_.lambda / (static_cast<double>(concept_contributors) *
                         static_cast<double>(positives.size()));
      double loss_sum = 0.0;
      const auto& complement = patient_concept_complement_[patient];
      for (int row : positives) {
        Eigen::VectorXd pos_vec = params_.concepts.weights.row(row).transpose();
        std::vector<int> neg_rows;
        std::vector<Eigen::VectorXd> neg_concept_vecs;
        if (cfg_.enable_contrastive && !complement.empty()) {
          std::uniform_int_distribution<size_t> dist(0, complement.size() - 1);
          for (int j = 0; j < cfg_.concept_negatives_per_positive; ++j) {
            int r = complement[dist(rng)];
            neg_rows.push_back(r);
            neg_concept_vecs.push_back(
                params_.concepts.weights.row(r).transpose());
          }
        }
        BceTerms terms = contrastive_bce(user_vec, pos_vec, neg_concept_vecs,
                                         cfg_.enable_contrastive);
        loss_sum += terms.value;
        if (pair_weight > 0.0) {
          Eigen::VectorXd du = terms.pos_coeff * pos_vec;
          for (size_t j = 0; j < terms.neg_coeffs.size(); ++j) {
            du += terms.neg_coeffs[j] * neg_concept_vecs[j];
          }
          sink.user_grads->row(patient) += pair_weight * du.transpose();
          sink.concept_grads->row(row) +=
              pair_weight * terms.pos_coeff * user_vec.transpose();
          for (size_t j = 0; j < terms.neg_coeffs.size(); ++j) {
            sink.concept_grads->row(neg_rows[j]) +=
                pair_weight * terms.neg_coeffs[j] * user_vec.transpose();
          }
        }
      }
      concept_loss_out = loss_sum / static_cast<double>(positives.size());
    }
  }

  static std::vector<int> sample_weighted_concepts(
      const std::vector<std::pair<int, double>>& weights, int k,
      std::mt19937_64& rng) {
    std::vector<std::pair<int, double>> pool = weights;
    std::vector<int> picks;
    int take = std::min<int>(k, static_cast<int>(pool.size()));
    picks.reserve(take);
    for (int i = 0; i < take; ++i) {
      double total = 0.0;
      for (const auto& [row, w] : pool) total += w;
      std::uniform_real_distribution<double> dist(0.0, total);
      double x = dist(rng);
      size_t chosen = pool.size() - 1;
      double acc = 0.0;
      for (size_t j = 0; j < pool.size(); ++j) {
        acc += pool[j].second;
        if (x < acc) {
          chosen = j;
          break;
        }
      }
      picks.push_back(pool[chosen].first);
      pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(chosen));
    }
    return picks;
  }

  void build_concept_index(const MentionStore& mentions) {
    std::unordered_map<std::string, int> row_of;
    for (size_t i = 0; i < params_.concept_ids.size(); ++i) {
      row_of.emplace(params_.concept_ids[i], static_cast<int>(i));
    }
    patient_concept_weights_.assign(corpus_.patients.size(), {});
    patient_concept_complement_.assign(corpus_.patients.size(), {});
    for (const Patient& p : corpus_.patients) {
      std::map<std::string, int> multiset =
          patient_concepts(p, mentions.mentions_by_note);
      std::vector<char> present(params_.concept_ids.size(), 0);
      for (const auto& [id, count] : multiset) {
        auto it = row_of.find(id);
        if (it == row_of.end()) continue;
        patient_concept_weights_[p.patient_id].push_back(
            {it->second, static_cast<double>(count)});
        present[it->second] = 1;
      }
      if (!patient_concept_weights_[p.patient_id].empty()) {
        auto& complement = patient_concept_complement_[p.patient_id];
        for (size_t r = 0; r < present.size(); ++r) {
          if (!present[r]) complement.push_back(static_cast<int>(r));
        }
      }
    }
  }

  void build_snippets() {
    note_ids_cache_.resize(corpus_.notes.size());
    for (const ClinicalNote& note : corpus_.notes) {
      note_ids_cache_[note.note_id] = corpus_.note_token_ids(note.note_id);
      std::vector<Snippet> pieces =
          random_split(note.patient_id, note.note_id,
                       note_ids_cache_[note.note_id], cfg_.snippet_min,
                       cfg_.snippet_max, rng_);
      for (Snippet& s : pieces) snippets_.push_back(std::move(s));
    }
  }

  const CorpusStore& corpus_;
  TrainConfig cfg_;
  ModelParams params_;
  std::vector<Snippet> snippets_;
  std::vector<std::vector<int>> note_ids_cache_;
  std::vector<std::vector<std::pair<int, double>>> patient_concept_weights_;
  std::vector<std::vector<int>> patient_concept_complement_;
  std::mt19937_64 rng_;
  std::unique_ptr<RmsProp> optimizer_;
  long long step_ = 0;
};

}  // namespace clinembed

#endif  // CLINEMBED_TRAINING_HPP_

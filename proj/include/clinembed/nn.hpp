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

#ifndef CLINEMBED_NN_HPP_
#define CLINEMBED_NN_HPP_

#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "clinembed/corpus.hpp"

namespace clinembed {

// A trainable parameter matrix paired with its gradient accumulator.
struct ParamSlot {
  Eigen::MatrixXd* value = nullptr;
  Eigen::MatrixXd* grad = nullptr;
};

namespace detail {

inline void fill_uniform(Eigen::MatrixXd& m, double lo, double hi,
                         std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(lo, hi);
  // Explicit row-major iteration keeps draw order independent of storage.
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) = dist(rng);
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

struct EmbeddingTable {
  Eigen::MatrixXd weights;  // rows x dim
  Eigen::MatrixXd grads;

  EmbeddingTable() = default;
  EmbeddingTable(Eigen::Index rows, Eigen::Index dim)
      : weights(Eigen::MatrixXd::Zero(rows, dim)),
        grads(Eigen::MatrixXd::Zero(rows, dim)) {}

  Eigen::Index rows() const { return weights.rows(); }
  Eigen::Index dim() const { return weights.cols(); }

  void init_uniform(double lo, double hi, std::mt19937_64& rng) {
    detail::fill_uniform(weights, lo, hi, rng);
  }

  void zero_grads() { grads.setZero(); }

  ParamSlot slot() { return ParamSlot{&weights, &grads}; }
};

struct EncodedDoc {
  Eigen::VectorXd vec;
  int note_id = -1;
  int span_begin = 0;
  int span_end = 0;
};

// ---------------------------------------------------------------------------
// Mean-pool encoder
// ---------------------------------------------------------------------------

struct MeanPoolTape {
  std::vector<int> ids;
  bool recorded = false;
};

inline EncodedDoc encode_meanpool(std::span<const int> token_ids,
                                  const EmbeddingTable& words,
                                  MeanPoolTape* tape = nullptr) {
  if (token_ids.empty()) {
    throw std::invalid_argument("encode_meanpool: empty token sequence");
  }
  EncodedDoc doc;
  doc.vec = Eigen::VectorXd::Zero(words.dim());
  for (int id : token_ids) doc.vec += words.weights.row(id).transpose();
  doc.vec /= static_cast<double>(token_ids.size());
  if (tape) {
    tape->ids.assign(token_ids.begin(), token_ids.end());
    tape->recorded = true;
  }
  return doc;
}

inline void meanpool_backward(const MeanPoolTape& tape,
                              const Eigen::VectorXd& upstream,
                              Eigen::MatrixXd& word_grads) {
  if (!tape.recorded) {
    throw std::logic_error("meanpool_backward: no forward pass recorded");
  }
  Eigen::RowVectorXd per_token =
      upstream.transpose() / static_cast<double>(tape.ids.size());
  for (int id : tape.ids) word_grads.row(id) += per_token;
}

inline void meanpool_backward(const MeanPoolTape& tape,
                              const Eigen::VectorXd& upstream,
                              EmbeddingTable& words) {
  meanpool_backward(tape, upstream, words.grads);
}

// ---------------------------------------------------------------------------
// Bidirectional GRU encoder
// ---------------------------------------------------------------------------

struct GruDirParams {
  Eigen::MatrixXd w_update, w_reset, w_cand;  // H x D
  Eigen::MatrixXd u_update, u_reset, u_cand;  // H x H
  Eigen::MatrixXd b_update, b_reset, b_cand;  // H x 1
  Eigen::MatrixXd gw_update, gw_reset, gw_cand;
  Eigen::MatrixXd gu_update, gu_reset, gu_cand;
  Eigen::MatrixXd gb_update, gb_reset, gb_cand;

  void resize(Eigen::Index hidden, Eigen::Index input) {
    auto zero = [](Eigen::MatrixXd& m, Eigen::Index r, Eigen::Index c) {
      m = Eigen::MatrixXd::Zero(r, c);
    };
    zero(w_update, hidden, input);
    zero(w_reset, hidden, input);
    zero(w_cand, hidden, input);
    zero(u_update, hidden, hidden);
    zero(u_reset, hidden, hidden);
    zero(u_cand, hidden, hidden);
    zero(b_update, hidden, 1);
    zero(b_reset, hidden, 1);
    zero(b_cand, hidden, 1);
    zero(gw_update, hidden, input);
    zero(gw_reset, hidden, input);
    zero(gw_cand, hidden, input);
    zero(gu_update, hidden, hidden);
    zero(gu_reset, hidden, hidden);
    zero(gu_cand, hidden, hidden);
    zero(gb_update, hidden, 1);
    zero(gb_reset, hidden, 1);
    zero(gb_cand, hidden, 1);
  }

  void init_uniform(double lo, double hi, std::mt19937_64& rng) {
    detail::fill_uniform(w_update, lo, hi, rng);
    detail::fill_uniform(w_reset, lo, hi, rng);
    detail::fill_uniform(w_cand, lo, hi, rng);
    detail::fill_uniform(u_update, lo, hi, rng);
    detail::fill_uniform(u_reset, lo, hi, rng);
    detail::fill_uniform(u_cand, lo, hi, rng);
    // Biases start at zero.
  }

  void zero_grads() {
    gw_update.setZero();
    gw_reset.setZero();
    gw_cand.setZero();
    gu_update.setZero();
    gu_reset.setZero();
    gu_cand.setZero();
    gb_update.setZero();
    gb_reset.setZero();
    gb_cand.setZero();
  }

  void collect_slots(std::vector<ParamSlot>& out) {
    out.push_back({&w_update, &gw_update});
    out.push_back({&w_reset, &gw_reset});
    out.push_back({&w_cand, &gw_cand});
    out.push_back({&u_update, &gu_update});
    out.push_back({&u_reset, &gu_reset});
    out.push_back({&u_cand, &gu_cand});
    out.push_back({&b_update, &gb_update});
    out.push_back({&b_reset, &gb_reset});
    out.push_back({&b_cand, &gb_cand});
  }
};

// Per-direction hidden size H; the document vector is the concatenation of
// the two directions' final hidden states (2H), optionally mapped through a
// learned linear projection when the concatenation size must differ from the
// embedding dimension.
struct GruParams {
  Eigen::Index input_dim = 0;
  Eigen::Index hidden_dim = 0;
  bool use_projection = false;
  GruDirParams fwd, bwd;
  Eigen::MatrixXd w_proj, b_proj;  // out x 2H, out x 1
  Eigen::MatrixXd gw_proj, gb_proj;

  static GruParams make(Eigen::Index input_dim, Eigen::Index hidden_dim,
                        bool use_projection = false,
                        Eigen::Index projection_out = 0) {
    GruParams p;
    p.input_dim = input_dim;
    p.hidden_dim = hidden_dim;
    p.use_projection = use_projection;
    p.fwd.resize(hidden_dim, input_dim);
    p.bwd.resize(hidden_dim, input_dim);
    if (use_projection) {
      Eigen::Index out = projection_out > 0 ? projection_out : input_dim;
      p.w_proj = Eigen::MatrixXd::Zero(out, 2 * hidden_dim);
      p.b_proj = Eigen::MatrixXd::Zero(out, 1);
      p.gw_proj = Eigen::MatrixXd::Zero(out, 2 * hidden_dim);
      p.gb_proj = Eigen::MatrixXd::Zero(out, 1);
    }
    return p;
  }

  Eigen::Index output_dim() const {
    return use_projection ? w_proj.rows() : 2 * hidden_dim;
  }

  void init_uniform(double lo, double hi, std::mt19937_64& rng) {
    fwd.init_uniform(lo, hi, rng);
    bwd.init_uniform(lo, hi, rng);
    if (use_projection) detail::fill_uniform(w_proj, lo, hi, rng);
  }

  void zero_grads() {
    fwd.zero_grads();
    bwd.zero_grads();
    if (use_projection) {
      gw_proj.setZero();
      gb_proj.setZero();
    }
  }

  void collect_slots(std::vector<ParamSlot>& out) {
    fwd.collect_slots(out);
    bwd.collect_slots(out);
    if (use_projection) {
      out.push_back({&w_proj, &gw_proj});
      out.push_back({&b_proj, &gb_proj});
    }
  }
};

struct GruDirectionTape {
  std::vector<int> ids;     // token ids in this direction's processing order
  Eigen::MatrixXd x;        // D x T
  Eigen::MatrixXd h_prev;   // H x T, hidden state entering each step
  Eigen::MatrixXd update, reset, cand;  // H x T gate activations
  Eigen::VectorXd h_final;  // H
};

struct BiGruTape {
  GruDirectionTape fwd, bwd;
  Eigen::VectorXd concat;        // 2H
  Eigen::VectorXd dropout_mask;  // empty in eval mode
  bool recorded = false;
};

namespace detail {

inline void gru_direction_forward(std::span<const int> ids, bool reverse,
                                  const EmbeddingTable& words,
                                  const GruDirParams& p, Eigen::Index hidden,
                                  GruDirectionTape& tape) {
  const Eigen::Index steps = static_cast<Eigen::Index>(ids.size());
  const Eigen::Index dim = words.dim();
  tape.ids.resize(ids.size());
  for (Eigen::Index t = 0; t < steps; ++t) {
    tape.ids[t] = reverse ? ids[ids.size() - 1 - static_cast<size_t>(t)]
                          : ids[static_cast<size_t>(t)];
  }
  tape.x.resize(dim, steps);
  for (Eigen::Index t = 0; t < steps; ++t) {
    tape.x.col(t) = words.weights.row(tape.ids[t]).transpose();
  }
  // Input projections for all steps at once; the recurrence below only does
  // H x H products.
  Eigen::MatrixXd pz = (p.w_update * tape.x).colwise() + p.b_update.col(0);
  Eigen::MatrixXd pr = (p.w_reset * tape.x).colwise() + p.b_reset.col(0);
  Eigen::MatrixXd pn = (p.w_cand * tape.x).colwise() + p.b_cand.col(0);
  tape.h_prev.resize(hidden, steps);
  tape.update.resize(hidden, steps);
  tape.reset.resize(hidden, steps);
  tape.cand.resize(hidden, steps);
  Eigen::VectorXd h = Eigen::VectorXd::Zero(hidden);
  Eigen::VectorXd a(hidden);
  for (Eigen::Index t = 0; t < steps; ++t) {
    tape.h_prev.col(t) = h;
    a.noalias() = p.u_update * h;
    a += pz.col(t);
    Eigen::VectorXd z = a.unaryExpr([](double v) { return sigmoid(v); });
    a.noalias() = p.u_reset * h;
    a += pr.col(t);
    Eigen::VectorXd r = a.unaryExpr([](double v) { return sigmoid(v); });
    Eigen::VectorXd rh = r.cwiseProduct(h);
    a.noalias() = p.u_cand * rh;
    a += pn.col(t);
    Eigen::VectorXd n = a.array().tanh().matrix();
    tape.update.col(t) = z;
    tape.reset.col(t) = r;
    tape.cand.col(t) = n;
    h = (Eigen::VectorXd::Ones(hidden) - z).cwiseProduct(n) +
        z.cwiseProduct(h);
  }
  tape.h_final = h;
}

// Reads gate/recurrent values from `p`, accumulates into the g* members of
// `grads` and into `word_grads`; `p` and `grads` may be the same object.
inline void gru_direction_backward(const GruDirectionTape& tape,
                                   const Eigen::VectorXd& dh_final,
                                   const GruDirParams& p, GruDirParams& grads,
                                   Eigen::MatrixXd& word_grads) {
  const Eigen::Index steps = tape.x.cols();
  const Eigen::Index hidden = tape.h_prev.rows();
  Eigen::MatrixXd da_update(hidden, steps);
  Eigen::MatrixXd da_reset(hidden, steps);
  Eigen::MatrixXd da_cand(hidden, steps);
  Eigen::VectorXd dh = dh_final;
  for (Eigen::Index t = steps - 1; t >= 0; --t) {
    auto hprev = tape.h_prev.col(t);
    auto z = tape.update.col(t);
    auto r = tape.reset.col(t);
    auto n = tape.cand.col(t);
    // h = (1 - z) .* n + z .* hprev
    Eigen::VectorXd dz = dh.cwiseProduct(hprev - n);
    Eigen::VectorXd dn = dh.cwiseProduct(Eigen::VectorXd::Ones(hidden) - z);
    Eigen::VectorXd dhprev = dh.cwiseProduct(z);
    // n = tanh(a_n), a_n = pn + U_n (r .* hprev)
    Eigen::VectorXd dan =
        dn.cwiseProduct((Eigen::VectorXd::Ones(hidden) - n.cwiseProduct(n)));
    Eigen::VectorXd un_back = p.u_cand.transpose() * dan;
    Eigen::VectorXd dr = un_back.cwiseProduct(hprev);
    dhprev += un_back.cwiseProduct(r);
    Eigen::VectorXd dar = dr.cwiseProduct(r).cwiseProduct(
        Eigen::VectorXd::Ones(hidden) - r);
    dhprev.noalias() += p.u_reset.transpose() * dar;
    Eigen::VectorXd daz = dz.cwiseProduct(z).cwiseProduct(
        Eigen::VectorXd::Ones(hidden) - z);
    dhprev.noalias() += p.u_update.transpose() * daz;
    da_update.col(t) = daz;
    da_reset.col(t) = dar;
    da_cand.col(t) = dan;
    dh = dhprev;
  }
  grads.gw_update.noalias() += da_update * tape.x.transpose();
  grads.gw_reset.noalias() += da_reset * tape.x.transpose();
  grads.gw_cand.noalias() += da_cand * tape.x.transpose();
  grads.gu_update.noalias() += da_update * tape.h_prev.transpose();
  grads.gu_reset.noalias() += da_reset * tape.h_prev.transpose();
  grads.gu_cand.noalias() +=
      da_cand * tape.reset.cwiseProduct(tape.h_prev).transpose();
  grads.gb_update.col(0) += da_update.rowwise().sum();
  grads.gb_reset.col(0) += da_reset.rowwise().sum();
  grads.gb_cand.col(0) += da_cand.rowwise().sum();
  Eigen::MatrixXd dx = p.w_update.transpose() * da_update;
  dx.noalias() += p.w_reset.transpose() * da_reset;
  dx.noalias() += p.w_cand.transpose() * da_cand;
  for (Eigen::Index t = 0; t < steps; ++t) {
    word_grads.row(tape.ids[t]) += dx.col(t).transpose();
  }
}

}  // namespace detail

// Concatenates the final forward and backward hidden states (optionally
// projected); inverted dropout is applied to the resulting document vector
// only in training mode.
inline EncodedDoc encode_bigru(std::span<const int> token_ids,
                               const EmbeddingTable& words,
                               const GruParams& gru, double dropout_p,
                               bool training, std::mt19937_64& rng,
                               BiGruTape* tape = nullptr) {
  if (token_ids.empty()) {
    throw std::invalid_argument("encode_bigru: empty token sequence");
  }
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw std::invalid_argument("encode_bigru: dropout_p must be in [0, 1)");
  }
  BiGruTape local;
  BiGruTape& rec = tape ? *tape : local;
  detail::gru_direction_forward(token_ids, /*reverse=*/false, words, gru.fwd,
                                gru.hidden_dim, rec.fwd);
  detail::gru_direction_forward(token_ids, /*reverse=*/true, words, gru.bwd,
                                gru.hidden_dim, rec.bwd);
  rec.concat.resize(2 * gru.hidden_dim);
  rec.concat.head(gru.hidden_dim) = rec.fwd.h_final;
  rec.concat.tail(gru.hidden_dim) = rec.bwd.h_final;
  EncodedDoc doc;
  if (gru.use_projection) {
    doc.vec = gru.w_proj * rec.concat + gru.b_proj.col(0);
  } else {
    doc.vec = rec.concat;
  }
  if (training && dropout_p > 0.0) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    rec.dropout_mask.resize(doc.vec.size());
    double keep = 1.0 - dropout_p;
    for (Eigen::Index i = 0; i < doc.vec.size(); ++i) {
      rec.dropout_mask(i) = unit(rng) < dropout_p ? 0.0 : 1.0 / keep;
    }
    doc.vec = doc.vec.cwiseProduct(rec.dropout_mask);
  } else {
    rec.dropout_mask.resize(0);
  }
  rec.recorded = true;
  return doc;
}

// Reads parameter values from `gru`, accumulates gradients into `gru_grads`
// and `word_grads`; the two GruParams arguments may alias.
inline void bigru_backward(const BiGruTape& tape,
                           const Eigen::VectorXd& upstream,
                           const GruParams& gru, GruParams& gru_grads,
                           Eigen::MatrixXd& word_grads) {
  if (!tape.recorded) {
    throw std::logic_error("bigru_backward: no forward pass recorded");
  }
  Eigen::VectorXd dout = upstream;
  if (tape.dropout_mask.size() > 0) {
    dout = dout.cwiseProduct(tape.dropout_mask);
  }
  Eigen::VectorXd dconcat;
  if (gru.use_projection) {
    gru_grads.gw_proj.noalias() += dout * tape.concat.transpose();
    gru_grads.gb_proj.col(0) += dout;
    dconcat = gru.w_proj.transpose() * dout;
  } else {
    dconcat = dout;
  }
  detail::gru_direction_backward(tape.fwd, dconcat.head(gru.hidden_dim),
                                 gru.fwd, gru_grads.fwd, word_grads);
  detail::gru_direction_backward(tape.bwd, dconcat.tail(gru.hidden_dim),
                                 gru.bwd, gru_grads.bwd, word_grads);
}

inline void bigru_backward(const BiGruTape& tape,
                           const Eigen::VectorXd& upstream, GruParams& gru,
                           EmbeddingTable& words) {
  bigru_backward(tape, upstream, gru, gru, words.grads);
}

// ---------------------------------------------------------------------------
// word2vec text format
// ---------------------------------------------------------------------------

// Header line "count dim", then one line per token: token followed by dim
// floats.
inline std::vector<std::pair<std::string, Eigen::VectorXd>> load_word2vec_text(
    std::istream& in) {
  long long count = 0, dim = 0;
  if (!(in >> count >> dim) || count < 0 || dim <= 0) {
    throw std::runtime_error("load_word2vec_text: malformed header");
  }
  std::vector<std::pair<std::string, Eigen::VectorXd>> vectors;
  vectors.reserve(static_cast<size_t>(count));
  for (long long i = 0; i < count; ++i) {
    std::string token;
    if (!(in >> token)) {
      throw std::runtime_error("load_word2vec_text: truncated at entry " +
                               std::to_string(i));
    }
    Eigen::VectorXd v(dim);
    for (long long d = 0; d < dim; ++d) {
      if (!(in >> v(d))) {
        throw std::runtime_error("load_word2vec_text: truncated vector for " +
                                 token);
      }
    }
    vectors.emplace_back(std::move(token), std::move(v));
  }
  return vectors;
}

inline void write_word2vec_text(
    std::ostream& out, const std::vector<std::string>& names,
    const Eigen::MatrixXd& rows) {
  if (static_cast<Eigen::Index>(names.size()) != rows.rows()) {
    throw std::invalid_argument("write_word2vec_text: name/row count mismatch");
  }
  out << names.size() << ' ' << rows.cols() << '\n';
  std::ostringstream line;
  line.precision(17);
  for (size_t i = 0; i < names.size(); ++i) {
    line.str("");
    line << names[i];
    for (Eigen::Index j = 0; j < rows.cols(); ++j) {
      line << ' ' << rows(static_cast<Eigen::Index>(i), j);
    }
    out << line.str() << '\n';
  }
}

// Builds the word table: PAD row stays zero; tokens found in the pretrained
// file (when given) take its vectors, everything else is uniform(lo, hi).
inline EmbeddingTable init_word_table(const Vocabulary& vocab, Eigen::Index dim,
                                      std::mt19937_64& rng,
                                      const std::string& pretrained_path = "",
                                      double lo = -0.05, double hi = 0.05) {
  EmbeddingTable table(vocab.size(), dim);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (Eigen::Index i = Vocabulary::kUnkIndex; i < table.rows(); ++i) {
    for (Eigen::Index j = 0; j < dim; ++j) table.weights(i, j) = dist(rng);
  }
  if (!pretrained_path.empty()) {
    std::ifstream in(pretrained_path);
    if (!in) {
      throw std::runtime_error("init_word_table: cannot open " +
                               pretrained_path);
    }
    auto vectors = load_word2vec_text(in);
    for (auto& [token, vec] : vectors) {
      if (vec.size() != dim) {
        throw std::runtime_error(
            "init_word_table: pretrained dimension mismatch for " + token);
      }
      int idx = vocab.lookup(token);
      if (idx != Vocabulary::kUnkIndex) {
        table.weights.row(idx) = vec.transpose();
      }
    }
  }
  return table;
}

}  // namespace clinembed

#endif  // CLINEMBED_NN_HPP_

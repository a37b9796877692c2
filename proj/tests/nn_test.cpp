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

#include "clinembed/nn.hpp"

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include <gtest/gtest.h>

#include "clinembed/gradcheck.hpp"

namespace clinembed {
namespace {

EmbeddingTable random_words(int rows, int dim, std::uint64_t seed) {
  EmbeddingTable t(rows, dim);
  std::mt19937_64 rng(seed);
  t.init_uniform(-0.5, 0.5, rng);
  return t;
}

TEST(MeanPool, SingleTokenIsIdentity) {
  EmbeddingTable words = random_words(4, 3, 1);
  std::vector<int> ids = {2};
  EncodedDoc doc = encode_meanpool(ids, words);
  EXPECT_TRUE(doc.vec.isApprox(words.weights.row(2).transpose()));
}

TEST(MeanPool, OppositeVectorsCancel) {
  EmbeddingTable words(2, 3);
  words.weights.row(0) << 1.0, -2.0, 0.5;
  words.weights.row(1) = -words.weights.row(0);
  std::vector<int> ids = {0, 1};
  EXPECT_NEAR(encode_meanpool(ids, words).vec.norm(), 0.0, 1e-15);
}

TEST(MeanPool, FiveTokenExplicitSummation) {
  EmbeddingTable words = random_words(8, 4, 2);
  std::vector<int> ids = {1, 3, 3, 7, 0};
  Eigen::VectorXd expected = Eigen::VectorXd::Zero(4);
  for (int id : ids) expected += words.weights.row(id).transpose();
  expected /= 5.0;
  EXPECT_TRUE(encode_meanpool(ids, words).vec.isApprox(expected, 1e-15));
}

TEST(MeanPool, EmptySequenceFails) {
  EmbeddingTable words = random_words(2, 3, 3);
  std::vector<int> ids;
  EXPECT_THROW(encode_meanpool(ids, words), std::invalid_argument);
}

TEST(MeanPool, BackwardDividesUpstreamByLength) {
  EmbeddingTable words = random_words(5, 3, 4);
  std::vector<int> ids = {1, 2, 2};
  MeanPoolTape tape;
  encode_meanpool(ids, words, &tape);
  Eigen::VectorXd up(3);
  up << 3.0, -6.0, 9.0;
  meanpool_backward(tape, up, words);
  EXPECT_TRUE(words.grads.row(1).transpose().isApprox(up / 3.0, 1e-15));
  EXPECT_TRUE(words.grads.row(2).transpose().isApprox(2.0 * up / 3.0, 1e-15));
  EXPECT_NEAR(words.grads.row(0).norm(), 0.0, 0.0);
}

TEST(MeanPool, BackwardWithoutForwardFails) {
  EmbeddingTable words = random_words(2, 3, 5);
  MeanPoolTape tape;
  Eigen::VectorXd up = Eigen::VectorXd::Zero(3);
  EXPECT_THROW(meanpool_backward(tape, up, words), std::logic_error);
}

GruParams random_gru(int dim, int hidden, std::uint64_t seed,
                     bool projection = false) {
  GruParams gru = GruParams::make(dim, hidden, projection, dim);
  std::mt19937_64 rng(seed);
  gru.init_uniform(-0.4, 0.4, rng);
  return gru;
}

// Independent single-direction GRU recurrence written as a plain loop.
Eigen::VectorXd naive_gru_direction(const std::vector<int>& ids,
                                    const EmbeddingTable& words,
                                    const GruDirParams& p, int hidden) {
  Eigen::VectorXd h = Eigen::VectorXd::Zero(hidden);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (int id : ids) {
    Eigen::VectorXd x = words.weights.row(id).transpose();
    Eigen::VectorXd z =
        (p.w_update * x + p.u_update * h + p.b_update.col(0)).unaryExpr(sig);
    Eigen::VectorXd r =
        (p.w_reset * x + p.u_reset * h + p.b_reset.col(0)).unaryExpr(sig);
    Eigen::VectorXd n = (p.w_cand * x + p.u_cand * r.cwiseProduct(h) +
                         p.b_cand.col(0))
                            .array()
                            .tanh()
                            .matrix();
    h = (Eigen::VectorXd::Ones(hidden) - z).cwiseProduct(n) +
        z.cwiseProduct(h);
  }
  return h;
}

TEST(BiGru, MatchesHandRolledRecurrence) {
  const int dim = 4, hidden = 3;
  EmbeddingTable words = random_words(6, dim, 10);
  GruParams gru = random_gru(dim, hidden, 11);
  std::vector<int> ids = {0, 3, 5, 2, 2};
  std::mt19937_64 rng(0);
  EncodedDoc doc =
      encode_bigru(ids, words, gru, 0.0, /*training=*/false, rng);
  Eigen::VectorXd fwd = naive_gru_direction(ids, words, gru.fwd, hidden);
  std::vector<int> rev(ids.rbegin(), ids.rend());
  Eigen::VectorXd bwd = naive_gru_direction(rev, words, gru.bwd, hidden);
  EXPECT_TRUE(doc.vec.head(hidden).isApprox(fwd, 1e-12));
  EXPECT_TRUE(doc.vec.tail(hidden).isApprox(bwd, 1e-12));
}

TEST(BiGru, AllZeroParamsGiveHandComputableBlend) {
  const int dim = 2, hidden = 2;
  EmbeddingTable words = random_words(3, dim, 12);
  GruParams gru = GruParams::make(dim, hidden);  // all weights and biases zero
  std::vector<int> ids = {0, 1};
  std::mt19937_64 rng(0);
  EncodedDoc doc = encode_bigru(ids, words, gru, 0.0, false, rng);
  // With zero parameters: z = r = 0.5, n = tanh(0) = 0, and h starts at 0,
  // so every step yields h = 0.5 * 0 + 0.5 * h_prev = 0.
  EXPECT_NEAR(doc.vec.norm(), 0.0, 0.0);
}

TEST(BiGru, EvalModeIgnoresRng) {
  EmbeddingTable words = random_words(5, 4, 13);
  GruParams gru = random_gru(4, 2, 14);
  std::vector<int> ids = {1, 4, 0};
  std::mt19937_64 rng_a(1), rng_b(999);
  EncodedDoc a = encode_bigru(ids, words, gru, 0.2, false, rng_a);
  EncodedDoc b = encode_bigru(ids, words, gru, 0.2, false, rng_b);
  EXPECT_TRUE(a.vec == b.vec);
}

TEST(BiGru, ReversedInputSwapsHalvesUnderTiedParams) {
  const int dim = 4, hidden = 2;
  EmbeddingTable words = random_words(5, dim, 15);
  GruParams gru = random_gru(dim, hidden, 16);
  gru.bwd = gru.fwd;  // tie directions
  std::vector<int> ids = {0, 2, 4, 1};
  std::vector<int> rev(ids.rbegin(), ids.rend());
  std::mt19937_64 rng(0);
  EncodedDoc straight = encode_bigru(ids, words, gru, 0.0, false, rng);
  EncodedDoc reversed = encode_bigru(rev, words, gru, 0.0, false, rng);
  EXPECT_TRUE(straight.vec.head(hidden).isApprox(reversed.vec.tail(hidden), 1e-12));
  EXPECT_TRUE(straight.vec.tail(hidden).isApprox(reversed.vec.head(hidden), 1e-12));
}

TEST(BiGru, OutputDimIndependentOfLength) {
  EmbeddingTable words = random_words(5, 6, 17);
  GruParams gru = random_gru(6, 3, 18);
  std::mt19937_64 rng(0);
  for (int len : {1, 2, 9, 40}) {
    std::vector<int> ids(len, 1);
    EXPECT_EQ(encode_bigru(ids, words, gru, 0.0, false, rng).vec.size(), 6);
  }
}

TEST(BiGru, BackwardWithoutForwardFails) {
  EmbeddingTable words = random_words(2, 4, 19);
  GruParams gru = random_gru(4, 2, 20);
  BiGruTape tape;
  EXPECT_THROW(
      bigru_backward(tape, Eigen::VectorXd::Zero(4), gru, words),
      std::logic_error);
}

TEST(BiGru, GradientsMatchFiniteDifferences) {
  const int dim = 5, hidden = 3;
  EmbeddingTable words = random_words(6, dim, 21);
  GruParams gru = random_gru(dim, hidden, 22);
  std::vector<int> ids = {0, 3, 5, 2};  // length 4
  Eigen::VectorXd probe(2 * hidden);
  probe << 0.7, -1.1, 0.4, 0.9, -0.3, 1.3;
  std::mt19937_64 rng(0);
  auto loss = [&]() {
    std::mt19937_64 r(0);
    return probe.dot(encode_bigru(ids, words, gru, 0.0, false, r).vec);
  };
  BiGruTape tape;
  encode_bigru(ids, words, gru, 0.0, false, rng, &tape);
  bigru_backward(tape, probe, gru, words);
  std::vector<ParamSlot> slots;
  gru.collect_slots(slots);
  slots.push_back(words.slot());
  GradCheckReport report = grad_check_slots(loss, slots);
  EXPECT_LT(report.max_rel_err, 1e-4);
}

TEST(BiGru, ProjectionGradientsMatchFiniteDifferences) {
  const int dim = 4, hidden = 3;
  EmbeddingTable words = random_words(5, dim, 23);
  GruParams gru = random_gru(dim, hidden, 24, /*projection=*/true);
  std::vector<int> ids = {1, 0, 4};
  Eigen::VectorXd probe(dim);
  probe << 0.5, -0.8, 1.2, 0.1;
  std::mt19937_64 rng(0);
  auto loss = [&]() {
    std::mt19937_64 r(0);
    return probe.dot(encode_bigru(ids, words, gru, 0.0, false, r).vec);
  };
  BiGruTape tape;
  encode_bigru(ids, words, gru, 0.0, false, rng, &tape);
  bigru_backward(tape, probe, gru, words);
  std::vector<ParamSlot> slots;
  gru.collect_slots(slots);
  slots.push_back(words.slot());
  EXPECT_LT(grad_check_slots(loss, slots).max_rel_err, 1e-4);
}

TEST(BiGru, DropoutGradientsMatchWithFixedMask) {
  const int dim = 4, hidden = 2;
  EmbeddingTable words = random_words(5, dim, 25);
  GruParams gru = random_gru(dim, hidden, 26);
  std::vector<int> ids = {2, 3};
  Eigen::VectorXd probe(2 * hidden);
  probe << 1.0, -0.5, 0.25, 2.0;
  auto loss = [&]() {
    std::mt19937_64 r(77);  // same mask every evaluation
    return probe.dot(encode_bigru(ids, words, gru, 0.4, true, r).vec);
  };
  std::mt19937_64 rng(77);
  BiGruTape tape;
  encode_bigru(ids, words, gru, 0.4, true, rng, &tape);
  bigru_backward(tape, probe, gru, words);
  std::vector<ParamSlot> slots;
  gru.collect_slots(slots);
  slots.push_back(words.slot());
  EXPECT_LT(grad_check_slots(loss, slots).max_rel_err, 1e-4);
}

TEST(BiGru, TwoAccumulationsSumExactly) {
  const int dim = 4, hidden = 2;
  EmbeddingTable words = random_words(5, dim, 27);
  GruParams gru = random_gru(dim, hidden, 28);
  std::vector<int> ids = {0, 1, 2};
  Eigen::VectorXd up = Eigen::VectorXd::LinSpaced(2 * hidden, -1.0, 1.0);
  std::mt19937_64 rng(0);
  BiGruTape tape;
  encode_bigru(ids, words, gru, 0.0, false, rng, &tape);
  bigru_backward(tape, up, gru, words);
  Eigen::MatrixXd once = gru.fwd.gw_cand;
  Eigen::MatrixXd once_words = words.grads;
  BiGruTape tape2;
  encode_bigru(ids, words, gru, 0.0, false, rng, &tape2);
  bigru_backward(tape2, up, gru, words);
  EXPECT_TRUE(gru.fwd.gw_cand == 2.0 * once);
  // Word rows receive one contribution per direction, so the second pass
  // groups the additions differently; equality holds to the ULP.
  EXPECT_TRUE(words.grads.isApprox(2.0 * once_words, 1e-14));
}

TEST(BiGru, DropoutPreservesExpectation) {
  const int dim = 6, hidden = 3;
  EmbeddingTable words = random_words(7, dim, 29);
  GruParams gru = random_gru(dim, hidden, 30);
  std::vector<int> ids = {0, 5, 3, 1};
  std::mt19937_64 rng(31);
  const double p = 0.2;
  EncodedDoc eval = encode_bigru(ids, words, gru, p, false, rng);
  const int trials = 10000;
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(eval.vec.size());
  for (int t = 0; t < trials; ++t) {
    mean += encode_bigru(ids, words, gru, p, true, rng).vec;
  }
  mean /= static_cast<double>(trials);
  // Var of one masked component is y_i^2 * p / (1 - p).
  double var_sum = eval.vec.squaredNorm() * p / (1.0 - p) / trials;
  double sigma = std::sqrt(var_sum) / eval.vec.size();
  double deviation =
      (mean - eval.vec).sum() / static_cast<double>(eval.vec.size());
  EXPECT_LT(std::abs(deviation), 3.0 * sigma);
}

TEST(BiGru, FixedSeedIsBitIdentical) {
  const int dim = 4, hidden = 2;
  auto run = [&](Eigen::MatrixXd& grads_out, Eigen::VectorXd& vec_out) {
    EmbeddingTable words = random_words(5, dim, 40);
    GruParams gru = random_gru(dim, hidden, 41);
    std::vector<int> ids = {1, 3, 0};
    std::mt19937_64 rng(42);
    BiGruTape tape;
    EncodedDoc doc = encode_bigru(ids, words, gru, 0.3, true, rng, &tape);
    bigru_backward(tape, Eigen::VectorXd::Ones(2 * hidden), gru, words);
    grads_out = words.grads;
    vec_out = doc.vec;
  };
  Eigen::MatrixXd g1, g2;
  Eigen::VectorXd v1, v2;
  run(g1, v1);
  run(g2, v2);
  EXPECT_TRUE(v1 == v2);
  EXPECT_TRUE(g1 == g2);
}

TEST(GradCheck, MeanPoolIsExact) {
  EmbeddingTable words = random_words(6, 4, 50);
  std::vector<int> ids = {0, 2, 5, 2};
  Eigen::VectorXd probe(4);
  probe << 0.3, -0.9, 0.5, 1.1;
  auto loss = [&]() { return probe.dot(encode_meanpool(ids, words).vec); };
  MeanPoolTape tape;
  encode_meanpool(ids, words, &tape);
  meanpool_backward(tape, probe, words);
  GradCheckReport report = grad_check(loss, words.weights, words.grads);
  EXPECT_LT(report.max_rel_err, 1e-9);
}

TEST(GradCheck, CorruptedGradientIsFlagged) {
  EmbeddingTable words = random_words(4, 3, 51);
  std::vector<int> ids = {0, 1, 3};
  Eigen::VectorXd probe(3);
  probe << 1.0, 0.5, -0.25;
  auto loss = [&]() { return probe.dot(encode_meanpool(ids, words).vec); };
  MeanPoolTape tape;
  encode_meanpool(ids, words, &tape);
  meanpool_backward(tape, probe, words);
  words.grads(0, 0) += 0.05;  // deliberate corruption
  GradCheckReport report = grad_check(loss, words.weights, words.grads);
  EXPECT_GT(report.max_rel_err, 1e-4);
}

TEST(Word2VecText, RoundTrip) {
  std::vector<std::string> names = {"alpha", "beta"};
  Eigen::MatrixXd rows(2, 3);
  rows << 0.125, -1.5, 2.25, 0.0, 3.5, -0.75;
  std::ostringstream out;
  write_word2vec_text(out, names, rows);
  std::istringstream in(out.str());
  auto loaded = load_word2vec_text(in);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].first, "alpha");
  EXPECT_TRUE(loaded[0].second.transpose().isApprox(rows.row(0), 1e-15));
  EXPECT_TRUE(loaded[1].second.transpose().isApprox(rows.row(1), 1e-15));
}

TEST(Word2VecText, MalformedHeaderFails) {
  std::istringstream in("not a header\n");
  EXPECT_THROW(load_word2vec_text(in), std::runtime_error);
}

TEST(InitWordTable, LoadsPretrainedAndPadStaysZero) {
  ClinicalNote note;
  note.tokens = {"alpha", "beta", "gamma"};
  Vocabulary vocab = Vocabulary::build({note}, 100);
  std::ostringstream w2v;
  w2v << "2 3\nalpha 1 2 3\nzeta 9 9 9\n";
  std::string path = std::filesystem::temp_directory_path() /
                     "clinembed_w2v_test.txt";
  {
    std::ofstream f(path);
    f << w2v.str();
  }
  std::mt19937_64 rng(1);
  EmbeddingTable table = init_word_table(vocab, 3, rng, path);
  std::filesystem::remove(path);
  EXPECT_NEAR(table.weights.row(Vocabulary::kPadIndex).norm(), 0.0, 0.0);
  Eigen::RowVectorXd alpha(3);
  alpha << 1, 2, 3;
  EXPECT_TRUE(table.weights.row(vocab.lookup("alpha")).isApprox(alpha, 1e-15));
  EXPECT_GT(table.weights.row(vocab.lookup("beta")).norm(), 0.0);
}

}  // namespace
}  // namespace clinembed

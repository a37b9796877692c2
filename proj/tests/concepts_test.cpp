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

#include "clinembed/concepts.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "test_util.hpp"

namespace clinembed {
namespace {

ClinicalNote make_note(int id, int patient, std::vector<std::string> tokens) {
  ClinicalNote note;
  note.note_id = id;
  note.patient_id = patient;
  note.tokens = std::move(tokens);
  return note;
}

std::vector<LexiconEntry> demo_lexicon() {
  return {
      {"C001", "finding", {{"heavy", "drinker"}}},
      {"C002", "finding", {{"drinker"}}},
      {"C003", "sign_or_symptom", {{"chest", "pain"}}},
      {"C004", "temporal_concept", {{"daily"}}},
  };
}

TEST(Extract, GreedyLongestMatch) {
  ClinicalNote note =
      make_note(0, 0, {"heavy", "drinker", "with", "chest", "pain"});
  auto mentions = extract_concepts(note, demo_lexicon());
  ASSERT_EQ(mentions.size(), 2u);
  EXPECT_EQ(mentions[0].concept_id, "C001");
  EXPECT_EQ(mentions[0].start, 0);
  EXPECT_EQ(mentions[0].length, 2);
  EXPECT_EQ(mentions[1].concept_id, "C003");
  EXPECT_EQ(mentions[1].start, 3);
  EXPECT_EQ(mentions[1].length, 2);
}

TEST(Extract, NoHitsGivesEmptyList) {
  ClinicalNote note = make_note(0, 0, {"nothing", "to", "see"});
  EXPECT_TRUE(extract_concepts(note, demo_lexicon()).empty());
}

TEST(Extract, ExcludedSemanticTypesDropped) {
  ClinicalNote note = make_note(0, 0, {"daily", "chest", "pain"});
  auto mentions = extract_concepts(note, demo_lexicon());
  ASSERT_EQ(mentions.size(), 1u);
  EXPECT_EQ(mentions[0].concept_id, "C003");
}

TEST(Extract, DeterministicAndNonOverlapping) {
  std::mt19937_64 rng(11);
  std::vector<std::string> words = {"heavy", "drinker", "chest",
                                    "pain",  "daily",   "x"};
  std::uniform_int_distribution<size_t> pick(0, words.size() - 1);
  auto lexicon = demo_lexicon();
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> tokens;
    for (int i = 0; i < 30; ++i) tokens.push_back(words[pick(rng)]);
    ClinicalNote note = make_note(trial, 0, tokens);
    auto a = extract_concepts(note, lexicon);
    auto b = extract_concepts(note, lexicon);
    ASSERT_EQ(a.size(), b.size());
    for (size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].concept_id, b[i].concept_id);
      EXPECT_EQ(a[i].start, b[i].start);
      if (i > 0) {
        EXPECT_GE(a[i].start, a[i - 1].start + a[i - 1].length);
      }
      EXPECT_LE(a[i].start + a[i].length, static_cast<int>(tokens.size()));
    }
  }
}

TEST(PatientConcepts, CountsWithMultiplicity) {
  Patient p;
  p.patient_id = 0;
  p.note_ids = {0, 1};
  std::unordered_map<int, std::vector<ConceptMention>> mentions;
  mentions[0] = {{"C001", 0, 0, 2}};
  mentions[1] = {{"C001", 1, 3, 2}};
  auto multiset = patient_concepts(p, mentions);
  ASSERT_EQ(multiset.size(), 1u);
  EXPECT_EQ(multiset.at("C001"), 2);
}

TEST(PatientConcepts, EmptyWhenNoMentions) {
  Patient p;
  p.patient_id = 0;
  p.note_ids = {0};
  std::unordered_map<int, std::vector<ConceptMention>> mentions;
  EXPECT_TRUE(patient_concepts(p, mentions).empty());
}

TEST(PatientConcepts, MultiplicityMatchesRecount) {
  std::mt19937_64 rng(3);
  auto lexicon = demo_lexicon();
  std::vector<std::string> words = {"heavy", "drinker", "chest", "pain", "x"};
  std::uniform_int_distribution<size_t> pick(0, words.size() - 1);
  std::vector<ClinicalNote> notes;
  std::unordered_map<int, std::vector<ConceptMention>> mentions;
  Patient p;
  p.patient_id = 0;
  long long total_mentions = 0;
  for (int n = 0; n < 6; ++n) {
    std::vector<std::string> tokens;
    for (int i = 0; i < 25; ++i) tokens.push_back(words[pick(rng)]);
    notes.push_back(make_note(n, 0, tokens));
    mentions[n] = extract_concepts(notes.back(), lexicon);
    total_mentions += static_cast<long long>(mentions[n].size());
    p.note_ids.push_back(n);
  }
  auto multiset = patient_concepts(p, mentions);
  // Brute-force recount over all mention lists.
  std::map<std::string, int> recount;
  long long sum = 0;
  for (const auto& [note_id, ms] : mentions) {
    for (const auto& m : ms) ++recount[m.concept_id];
  }
  EXPECT_EQ(multiset, recount);
  for (const auto& [id, c] : multiset) sum += c;
  EXPECT_EQ(sum, total_mentions);
}

CorpusStore three_patient_corpus() {
  // Patient 0: "a b a"; patient 1: "b c"; patient 2: "a"
  CorpusStore store;
  store.notes.push_back(make_note(0, 0, {"a", "b", "a"}));
  store.notes.push_back(make_note(1, 1, {"b", "c"}));
  store.notes.push_back(make_note(2, 2, {"a"}));
  for (int i = 0; i < 3; ++i) {
    Patient p;
    p.patient_id = i;
    p.note_ids = {i};
    store.patients.push_back(p);
  }
  store.vocab = Vocabulary::build(store.notes, 100);
  return store;
}

TEST(Tfidf, IdfFormula) {
  // Patient notes: {a b a}, {b c}, {a}; "b" has df=2, "a" df=2, "c" df=1.
  CorpusStore store = three_patient_corpus();
  store.notes[2].tokens = {"a", "b"};  // now "b" appears in all 3 patients
  auto [vecs, space] = tfidf_features(store, FeatureKind::kNgram, nullptr, 1);
  int b_idx = -1, a_idx = -1;
  for (size_t i = 0; i < space.names.size(); ++i) {
    if (space.names[i] == "b") b_idx = static_cast<int>(i);
    if (space.names[i] == "a") a_idx = static_cast<int>(i);
  }
  ASSERT_GE(b_idx, 0);
  ASSERT_GE(a_idx, 0);
  // Term present in all N patients: idf = ln(N/(1+N)) + 1.
  double idf_b = std::log(3.0 / 4.0) + 1.0;
  EXPECT_NEAR(vecs[1].weights.at(b_idx), 1.0 * idf_b, 1e-12);
  EXPECT_NEAR(vecs[2].weights.at(b_idx), 1.0 * idf_b, 1e-12);
  double idf_a = std::log(3.0 / 3.0) + 1.0;  // df = 2
  EXPECT_NEAR(vecs[0].weights.at(a_idx), 2.0 * idf_a, 1e-12);
}

TEST(Tfidf, SinglePatientProportionalToRawCounts) {
  CorpusStore store;
  store.notes.push_back(make_note(0, 0, {"a", "a", "b"}));
  Patient p;
  p.patient_id = 0;
  p.note_ids = {0};
  store.patients.push_back(p);
  store.vocab = Vocabulary::build(store.notes, 100);
  auto [vecs, space] = tfidf_features(store, FeatureKind::kNgram, nullptr, 1);
  // N=1, df=1 for both: idf = ln(1/2)+1 for every feature, so weights are
  // proportional to raw counts.
  double idf = std::log(1.0 / 2.0) + 1.0;
  double ratio = vecs[0].weights.at(0) / vecs[0].weights.at(1);
  EXPECT_NEAR(std::abs(ratio), 2.0, 1e-12);
  for (const auto& [i, w] : vecs[0].weights) {
    EXPECT_NEAR(w / idf, std::round(w / idf), 1e-9);
  }
}

TEST(Tfidf, ThreePatientToyMatchesHandComputedTable) {
  CorpusStore store = three_patient_corpus();
  auto [vecs, space] = tfidf_features(store, FeatureKind::kNgram, nullptr, 2);
  // Hand-computed oracle: features sorted lexicographically:
  // unigrams a (df 2? a in p0,p2 -> df=2), b (p0,p1), c (p1);
  // bigrams "a b" (p0), "b a" (p0), "b c" (p1).
  auto idf = [](int df) { return std::log(3.0 / (1.0 + df)) + 1.0; };
  std::map<std::string, std::map<int, double>> expected;
  expected["a"] = {{0, 2 * idf(2)}, {2, 1 * idf(2)}};
  expected["a b"] = {{0, 1 * idf(1)}};
  expected["b"] = {{0, 1 * idf(2)}, {1, 1 * idf(2)}};
  expected["b a"] = {{0, 1 * idf(1)}};
  expected["b c"] = {{1, 1 * idf(1)}};
  expected["c"] = {{1, 1 * idf(1)}};
  ASSERT_EQ(space.names.size(), expected.size());
  for (size_t f = 0; f < space.names.size(); ++f) {
    const auto& per_patient = expected.at(space.names[f]);
    for (int p = 0; p < 3; ++p) {
      auto it = vecs[p].weights.find(static_cast<int>(f));
      auto want = per_patient.find(p);
      if (want == per_patient.end()) {
        EXPECT_TRUE(it == vecs[p].weights.end() || it->second == 0.0);
      } else {
        ASSERT_TRUE(it != vecs[p].weights.end());
        EXPECT_NEAR(it->second, want->second, 1e-12) << space.names[f];
      }
    }
  }
}

TEST(Tfidf, ConceptKindWithoutMentionsFails) {
  CorpusStore store = three_patient_corpus();
  std::unordered_map<int, std::vector<ConceptMention>> empty;
  EXPECT_THROW(tfidf_features(store, FeatureKind::kConcept, &empty),
               std::runtime_error);
}

TEST(Lexicon, TsvRoundTrip) {
  std::istringstream in(
      "C001\tfinding\tHeavy Drinker\n"
      "C001\tfinding\tdrinks heavily\n"
      "C002\ttemporal_concept\tdaily\n");
  auto lexicon = load_lexicon_tsv(in);
  ASSERT_EQ(lexicon.size(), 2u);
  EXPECT_EQ(lexicon[0].concept_id, "C001");
  ASSERT_EQ(lexicon[0].surface_forms.size(), 2u);
  EXPECT_EQ(lexicon[0].surface_forms[0],
            (std::vector<std::string>{"heavy", "drinker"}));
  EXPECT_EQ(lexicon[1].semantic_type, "temporal_concept");
}

TEST(Lexicon, BadRowFails) {
  std::istringstream in("C001 finding no tabs\n");
  EXPECT_THROW(load_lexicon_tsv(in), std::runtime_error);
}

TEST(MentionStoreIo, RoundTrip) {
  MentionStore store;
  store.concepts = demo_lexicon();
  store.mentions_by_note[0] = {{"C001", 0, 0, 2}};
  store.mentions_by_note[2] = {{"C003", 2, 1, 2}, {"C002", 2, 4, 1}};
  testutil::TempDir dir;
  store.save(dir.file("mentions.json"));
  MentionStore loaded = MentionStore::load(dir.file("mentions.json"));
  EXPECT_EQ(loaded.concepts.size(), store.concepts.size());
  ASSERT_EQ(loaded.mentions_by_note.size(), 2u);
  EXPECT_EQ(loaded.mentions_by_note.at(2).size(), 2u);
  EXPECT_EQ(loaded.mentions_by_note.at(0)[0].concept_id, "C001");
}

}  // namespace
}  // namespace clinembed

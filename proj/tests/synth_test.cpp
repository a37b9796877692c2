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

#include "clinembed/synth.hpp"

#include <map>
#include <sstream>

#include <gtest/gtest.h>

#include "clinembed/concepts.hpp"
#include "clinembed/corpus.hpp"

namespace clinembed {
namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.n_patients = 30;
  cfg.n_labels = 4;
  cfg.n_concepts = 16;
  cfg.vocab_size = 300;
  cfg.notes_per_patient_min = 1;
  cfg.notes_per_patient_max = 2;
  cfg.note_length_min = 45;
  cfg.note_length_max = 70;
  cfg.labels_per_patient_min = 1;
  cfg.labels_per_patient_max = 2;
  cfg.signal_strength = 0.8;
  cfg.seed = 5;
  return cfg;
}

TEST(Synth, ByteIdenticalForSameConfig) {
  SynthConfig cfg = small_config();
  SynthOutput a = generate_synth(cfg);
  SynthOutput b = generate_synth(cfg);
  EXPECT_EQ(a.corpus_jsonl, b.corpus_jsonl);
  EXPECT_EQ(a.lexicon_tsv, b.lexicon_tsv);
  EXPECT_EQ(a.manifest.dump(), b.manifest.dump());
  cfg.seed = 6;
  SynthOutput c = generate_synth(cfg);
  EXPECT_NE(a.corpus_jsonl, c.corpus_jsonl);
}

TEST(Synth, ZeroSignalHasNoConcepts) {
  SynthConfig cfg = small_config();
  cfg.signal_strength = 0.0;
  SynthOutput out = generate_synth(cfg);
  EXPECT_EQ(out.manifest["total_injected"].get<long long>(), 0);
  // Extraction over the generated corpus finds nothing either.
  std::istringstream corpus_in(out.corpus_jsonl);
  CorpusStore store = build_corpus(ingest_jsonl(corpus_in), 15000);
  std::istringstream lex_in(out.lexicon_tsv);
  auto lexicon = load_lexicon_tsv(lex_in);
  ConceptMatcher matcher(lexicon);
  for (const ClinicalNote& note : store.notes) {
    EXPECT_TRUE(matcher.extract(note).empty());
  }
}

TEST(Synth, FullSignalKeepsConceptsWithinOwnLabels) {
  SynthConfig cfg = small_config();
  cfg.signal_strength = 1.0;
  cfg.n_labels = 2;
  cfg.n_concepts = 8;
  cfg.labels_per_patient_max = 1;
  SynthOutput out = generate_synth(cfg);
  std::map<std::string, std::string> concept_label;
  for (const auto& cj : out.manifest["concepts"]) {
    concept_label[cj["id"].get<std::string>()] =
        cj["label"].get<std::string>();
  }
  std::istringstream corpus_in(out.corpus_jsonl);
  CorpusStore store = build_corpus(ingest_jsonl(corpus_in), 15000);
  std::istringstream lex_in(out.lexicon_tsv);
  auto lexicon = load_lexicon_tsv(lex_in);
  ConceptMatcher matcher(lexicon);
  for (const ClinicalNote& note : store.notes) {
    const Patient& p = store.patients[note.patient_id];
    for (const ConceptMention& m : matcher.extract(note)) {
      std::string label = concept_label.at(m.concept_id);
      bool owns = false;
      for (int l : p.labels) {
        if (store.label_names[static_cast<size_t>(l)] == label) owns = true;
      }
      EXPECT_TRUE(owns) << "concept " << m.concept_id << " leaked";
    }
  }
}

TEST(Synth, ManifestCountsMatchExtractionRecount) {
  SynthConfig cfg = small_config();
  cfg.noise_concept_rate = 0.02;
  SynthOutput out = generate_synth(cfg);
  std::istringstream corpus_in(out.corpus_jsonl);
  CorpusStore store = build_corpus(ingest_jsonl(corpus_in), 15000);
  ASSERT_EQ(store.dropped_notes, 0);
  std::istringstream lex_in(out.lexicon_tsv);
  auto lexicon = load_lexicon_tsv(lex_in);
  ConceptMatcher matcher(lexicon);
  std::map<std::string, long long> recount;
  for (const ClinicalNote& note : store.notes) {
    for (const ConceptMention& m : matcher.extract(note)) {
      ++recount[m.concept_id];
    }
  }
  long long manifest_total = 0;
  for (const auto& cj : out.manifest["concepts"]) {
    std::string id = cj["id"].get<std::string>();
    long long expected = cj["injected"].get<long long>() +
                         cj["noise_injected"].get<long long>();
    manifest_total += expected;
    long long got = recount.count(id) ? recount.at(id) : 0;
    EXPECT_EQ(got, expected) << "concept " << id;
  }
  long long recount_total = 0;
  for (const auto& [id, c] : recount) recount_total += c;
  EXPECT_EQ(recount_total, manifest_total);
}

TEST(Synth, RoundTripDropsNothingWhenNotesAreLongEnough) {
  SynthConfig cfg = small_config();
  SynthOutput out = generate_synth(cfg);
  std::istringstream corpus_in(out.corpus_jsonl);
  CorpusStore store = build_corpus(ingest_jsonl(corpus_in), 15000);
  EXPECT_EQ(store.dropped_notes, 0);
  EXPECT_EQ(static_cast<int>(store.patients.size()), cfg.n_patients);
  for (const ClinicalNote& note : store.notes) {
    EXPECT_GE(note.tokens.size(), 40u);
  }
}

TEST(Synth, VocabTooSmallFails) {
  SynthConfig cfg = small_config();
  cfg.vocab_size = 40;
  EXPECT_THROW(generate_synth(cfg), std::invalid_argument);
}

TEST(Synth, MortalityCorrelatesWithFirstLabel) {
  SynthConfig cfg = small_config();
  cfg.n_patients = 400;
  SynthOutput out = generate_synth(cfg);
  std::istringstream corpus_in(out.corpus_jsonl);
  CorpusStore store = build_corpus(ingest_jsonl(corpus_in), 15000);
  int label0 = -1;
  for (size_t i = 0; i < store.label_names.size(); ++i) {
    if (store.label_names[i] == "L00") label0 = static_cast<int>(i);
  }
  ASSERT_GE(label0, 0);
  long long with = 0, with_dead = 0, without = 0, without_dead = 0;
  for (const Patient& p : store.patients) {
    bool has = std::find(p.labels.begin(), p.labels.end(), label0) !=
               p.labels.end();
    ASSERT_TRUE(p.mortality.has_value());
    if (has) {
      ++with;
      with_dead += *p.mortality;
    } else {
      ++without;
      without_dead += *p.mortality;
    }
  }
  ASSERT_GT(with, 20);
  ASSERT_GT(without, 20);
  double rate_with = static_cast<double>(with_dead) / with;
  double rate_without = static_cast<double>(without_dead) / without;
  EXPECT_GT(rate_with, rate_without + 0.2);
}

TEST(Synth, WriterEmitsThreeFiles) {
  SynthConfig cfg = small_config();
  cfg.n_patients = 5;
  SynthOutput out = generate_synth(cfg);
  std::string dir = std::filesystem::temp_directory_path() /
                    "clinembed_synth_writer_test";
  write_synth(out, dir);
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir) /
                                      "corpus.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir) /
                                      "lexicon.tsv"));
  EXPECT_TRUE(std::filesystem::exists(std::filesystem::path(dir) /
                                      "manifest.json"));
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace clinembed

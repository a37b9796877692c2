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

#ifndef CLINEMBED_SYNTH_HPP_
#define CLINEMBED_SYNTH_HPP_

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace clinembed {

struct SynthConfig {
  int n_patients = 200;
  int n_labels = 6;
  int n_concepts = 200;
  int vocab_size = 2000;
  int notes_per_patient_min = 2;
  int notes_per_patient_max = 2;
  int note_length_min = 60;
  int note_length_max = 100;
  int labels_per_patient_min = 1;
  int labels_per_patient_max = 3;
  double signal_strength = 0.8;
  // Label-independent concept injection; keeps concepts present in corpora
  // whose label signal is switched off entirely.
  double noise_concept_rate = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (n_patients < 1 || n_labels < 1 || n_concepts < n_labels) {
      throw std::invalid_argument(
          "SynthConfig: need n_patients >= 1 and n_concepts >= n_labels >= 1");
    }
    if (notes_per_patient_min < 1 ||
        notes_per_patient_min > notes_per_patient_max ||
        note_length_min < 1 || note_length_min > note_length_max ||
        labels_per_patient_min < 1 ||
        labels_per_patient_min > labels_per_patient_max ||
        labels_per_patient_max > n_labels) {
      throw std::invalid_argument("SynthConfig: empty or inverted range");
    }
    if (signal_strength < 0.0 || signal_strength > 1.0) {
      throw std::invalid_argument("SynthConfig: signal_strength outside [0,1]");
    }
    if (noise_concept_rate < 0.0 || noise_concept_rate >= 1.0) {
      throw std::invalid_argument(
          "SynthConfig: noise_concept_rate outside [0,1)");
    }
    int block = vocab_size / (n_labels + 1);
    int per_label_concepts = (n_concepts + n_labels - 1) / n_labels;
    if (block < 3 * per_label_concepts + 8 ||
        vocab_size - n_labels * block < 8) {
      throw std::invalid_argument(
          "SynthConfig: vocab_size too small to host the per-label token "
          "distributions (need >= (n_labels+1) * (3*ceil(n_concepts/n_labels) "
          "+ 8))");
    }
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["n_patients"] = n_patients;
    j["n_labels"] = n_labels;
    j["n_concepts"] = n_concepts;
    j["vocab_size"] = vocab_size;
    j["notes_per_patient_min"] = notes_per_patient_min;
    j["notes_per_patient_max"] = notes_per_patient_max;
    j["note_length_min"] = note_length_min;
    j["note_length_max"] = note_length_max;
    j["labels_per_patient_min"] = labels_per_patient_min;
    j["labels_per_patient_max"] = labels_per_patient_max;
    j["signal_strength"] = signal_strength;
    j["noise_concept_rate"] = noise_concept_rate;
    j["seed"] = seed;
    return j;
  }
};

struct SynthOutput {
  std::string corpus_jsonl;
  std::string lexicon_tsv;
  nlohmann::ordered_json manifest;
};

namespace synth_detail {

// Fraction of a fully-signalled note drawn from label distributions; the
// rest is shared background noise. Concepts are injected within label
// content, so both rates scale with signal_strength.
inline constexpr double kLabelRateScale = 0.5;
inline constexpr double kConceptRateWithinLabel = 0.35;

inline std::string token_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "w%05d", i);
  return std::string(buf);
}

inline std::string label_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "L%02d", i);
  return std::string(buf);
}

inline std::string concept_name(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "C%04d", i);
  return std::string(buf);
}

}  // namespace synth_detail

// Generates a corpus with planted phenotype -> concept -> token structure:
// each label owns a disjoint token block; a slice of that block is reserved
// for the label's concept surface forms (so a concept mention can only come
// from injection and the manifest counts are exact); notes mix the patient's
// label distributions with Zipf-skewed background noise.
inline SynthOutput generate_synth(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int block = cfg.vocab_size / (cfg.n_labels + 1);
  const int background_begin = cfg.n_labels * block;
  const int background_size = cfg.vocab_size - background_begin;

  // Concepts round-robin across labels; concept c reserves tokens
  // [block_start + 3c, block_start + 3c + 3) of its label's block.
  struct ConceptInfo {
    int label;
    std::vector<int> form;  // token indices
    std::string semantic_type;
  };
  std::vector<ConceptInfo> concepts(static_cast<size_t>(cfg.n_concepts));
  std::vector<std::vector<int>> concepts_of_label(
      static_cast<size_t>(cfg.n_labels));
  std::vector<int> reserved_per_label(static_cast<size_t>(cfg.n_labels), 0);
  const std::vector<std::string> kTypes = {
      "sign_or_symptom", "disease_or_syndrome", "finding",
      "pharmacologic_substance"};
  std::uniform_int_distribution<int> form_len_dist(1, 3);
  for (int c = 0; c < cfg.n_concepts; ++c) {
    int label = c % cfg.n_labels;
    int slot = reserved_per_label[static_cast<size_t>(label)]++;
    int base = label * block + 3 * slot;
    int len = form_len_dist(rng);
    ConceptInfo info;
    info.label = label;
    for (int t = 0; t < len; ++t) info.form.push_back(base + t);
    info.semantic_type = kTypes[static_cast<size_t>(c) % kTypes.size()];
    concepts[static_cast<size_t>(c)] = info;
    concepts_of_label[static_cast<size_t>(label)].push_back(c);
  }
  // Plain (non-concept) token range of each label block.
  std::vector<std::pair<int, int>> plain_range(
      static_cast<size_t>(cfg.n_labels));
  for (int l = 0; l < cfg.n_labels; ++l) {
    int reserved = 3 * reserved_per_label[static_cast<size_t>(l)];
    plain_range[static_cast<size_t>(l)] = {l * block + reserved,
                                           (l + 1) * block};
  }

  // Zipf-like background sampler via inverse CDF over cumulative weights.
  std::vector<double> background_cdf(static_cast<size_t>(background_size));
  double acc = 0.0;
  for (int i = 0; i < background_size; ++i) {
    acc += 1.0 / std::pow(static_cast<double>(i + 1), 1.1);
    background_cdf[static_cast<size_t>(i)] = acc;
  }
  auto draw_background = [&](std::mt19937_64& r) {
    std::uniform_real_distribution<double> d(0.0, acc);
    double x = d(r);
    auto it =
        std::upper_bound(background_cdf.begin(), background_cdf.end(), x);
    int off = it == background_cdf.end()
                  ? background_size - 1
                  : static_cast<int>(it - background_cdf.begin());
    return background_begin + off;
  };

  const double p_noise_concept = cfg.noise_concept_rate;
  const double p_label =
      (1.0 - p_noise_concept) * cfg.signal_strength *
      synth_detail::kLabelRateScale;

  std::map<std::string, long long> injected_per_concept;
  std::map<std::string, long long> noise_injected_per_concept;
  std::vector<long long> injected_per_label(
      static_cast<size_t>(cfg.n_labels), 0);

  std::string corpus_jsonl;
  std::uniform_int_distribution<int> n_labels_dist(cfg.labels_per_patient_min,
                                                   cfg.labels_per_patient_max);
  std::uniform_int_distribution<int> n_notes_dist(cfg.notes_per_patient_min,
                                                  cfg.notes_per_patient_max);
  std::uniform_int_distribution<int> note_len_dist(cfg.note_length_min,
                                                   cfg.note_length_max);
  std::uniform_int_distribution<int> label_dist(0, cfg.n_labels - 1);
  std::uniform_int_distribution<int> any_concept_dist(0, cfg.n_concepts - 1);

  for (int p = 0; p < cfg.n_patients; ++p) {
    int want_labels = n_labels_dist(rng);
    std::vector<int> labels;
    while (static_cast<int>(labels.size()) < want_labels) {
      int l = label_dist(rng);
      if (std::find(labels.begin(), labels.end(), l) == labels.end()) {
        labels.push_back(l);
      }
    }
    std::sort(labels.begin(), labels.end());
    bool label0 = std::find(labels.begin(), labels.end(), 0) != labels.end();
    bool mortality = unit(rng) < (label0 ? 0.75 : 0.2);

    int n_notes = n_notes_dist(rng);
    std::uniform_int_distribution<size_t> own_label_dist(0, labels.size() - 1);
    for (int note = 0; note < n_notes; ++note) {
      int target_len = note_len_dist(rng);
      std::vector<int> tokens;
      tokens.reserve(static_cast<size_t>(target_len) + 3);
      while (static_cast<int>(tokens.size()) < target_len) {
        double r = unit(rng);
        if (r < p_noise_concept) {
          int c = any_concept_dist(rng);
          const ConceptInfo& info = concepts[static_cast<size_t>(c)];
          tokens.insert(tokens.end(), info.form.begin(), info.form.end());
          ++noise_injected_per_concept[synth_detail::concept_name(c)];
        } else if (r < p_noise_concept + p_label) {
          int label = labels[own_label_dist(rng)];
          const auto& own_concepts =
              concepts_of_label[static_cast<size_t>(label)];
          if (!own_concepts.empty() &&
              unit(rng) < synth_detail::kConceptRateWithinLabel) {
            std::uniform_int_distribution<size_t> pick(0,
                                                       own_concepts.size() - 1);
            int c = own_concepts[pick(rng)];
            const ConceptInfo& info = concepts[static_cast<size_t>(c)];
            tokens.insert(tokens.end(), info.form.begin(), info.form.end());
            ++injected_per_concept[synth_detail::concept_name(c)];
            ++injected_per_label[static_cast<size_t>(label)];
          } else {
            auto [lo, hi] = plain_range[static_cast<size_t>(label)];
            std::uniform_int_distribution<int> plain(lo, hi - 1);
            tokens.push_back(plain(rng));
          }
        } else {
          tokens.push_back(draw_background(rng));
        }
      }
      std::string text;
      for (size_t i = 0; i < tokens.size(); ++i) {
        if (i) text.push_back(' ');
        text += synth_detail::token_name(tokens[i]);
      }
      nlohmann::ordered_json row;
      char pk[16];
      std::snprintf(pk, sizeof(pk), "p%04d", p);
      row["patient"] = pk;
      row["visit"] = "v0";
      row["text"] = text;
      nlohmann::ordered_json label_arr = nlohmann::ordered_json::array();
      for (int l : labels) label_arr.push_back(synth_detail::label_name(l));
      row["labels"] = std::move(label_arr);
      row["mortality"] = mortality;
      corpus_jsonl += row.dump();
      corpus_jsonl.push_back('\n');
    }
  }

  // Lexicon: one row per concept (single surface form) plus decoy entries of
  // excluded semantic types built from background tokens; the extraction
  // filter must drop them.
  std::string lexicon_tsv;
  for (int c = 0; c < cfg.n_concepts; ++c) {
    const ConceptInfo& info = concepts[static_cast<size_t>(c)];
    std::string form;
    for (size_t i = 0; i < info.form.size(); ++i) {
      if (i) form.push_back(' ');
      form += synth_detail::token_name(info.form[i]);
    }
    lexicon_tsv += synth_detail::concept_name(c) + "\t" + info.semantic_type +
                   "\t" + form + "\n";
  }
  const std::vector<std::string> kDecoyTypes = {
      "temporal_concept", "language", "quantitative_concept"};
  nlohmann::ordered_json decoys = nlohmann::ordered_json::array();
  for (size_t d = 0; d < kDecoyTypes.size(); ++d) {
    std::string id = "X00" + std::to_string(d);
    std::string form =
        synth_detail::token_name(background_begin + static_cast<int>(d));
    lexicon_tsv += id + "\t" + kDecoyTypes[d] + "\t" + form + "\n";
    decoys.push_back({{"id", id}, {"type", kDecoyTypes[d]}, {"form", form}});
  }

  nlohmann::ordered_json manifest;
  manifest["config"] = cfg.to_json();
  nlohmann::ordered_json concept_arr = nlohmann::ordered_json::array();
  long long total_injected = 0;
  for (int c = 0; c < cfg.n_concepts; ++c) {
    const ConceptInfo& info = concepts[static_cast<size_t>(c)];
    std::string id = synth_detail::concept_name(c);
    long long planted = injected_per_concept.count(id)
                            ? injected_per_concept.at(id)
                            : 0;
    long long noise = noise_injected_per_concept.count(id)
                          ? noise_injected_per_concept.at(id)
                          : 0;
    total_injected += planted + noise;
    nlohmann::ordered_json cj;
    cj["id"] = id;
    cj["label"] = synth_detail::label_name(info.label);
    std::string form;
    for (size_t i = 0; i < info.form.size(); ++i) {
      if (i) form.push_back(' ');
      form += synth_detail::token_name(info.form[i]);
    }
    cj["form"] = form;
    cj["semantic_type"] = info.semantic_type;
    cj["injected"] = planted;
    cj["noise_injected"] = noise;
    concept_arr.push_back(std::move(cj));
  }
  manifest["concepts"] = std::move(concept_arr);
  nlohmann::ordered_json per_label = nlohmann::ordered_json::array();
  for (int l = 0; l < cfg.n_labels; ++l) {
    per_label.push_back({{"label", synth_detail::label_name(l)},
                         {"injected", injected_per_label[static_cast<size_t>(l)]}});
  }
  manifest["injected_per_label"] = std::move(per_label);
  manifest["total_injected"] = total_injected;
  manifest["decoys"] = std::move(decoys);

  SynthOutput out;
  out.corpus_jsonl = std::move(corpus_jsonl);
  out.lexicon_tsv = std::move(lexicon_tsv);
  out.manifest = std::move(manifest);
  return out;
}

inline void write_synth(const SynthOutput& out, const std::string& dir) {
  std::filesystem::create_directories(dir);
  auto write = [&](const std::string& name, const std::string& content) {
    std::ofstream f(std::filesystem::path(dir) / name,
                    std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("write_synth: cannot open " + name);
    f << content;
  };
  write("corpus.jsonl", out.corpus_jsonl);
  write("lexicon.tsv", out.lexicon_tsv);
  write("manifest.json", out.manifest.dump(1, '\t') + "\n");
}

}  // namespace clinembed

#endif  // CLINEMBED_SYNTH_HPP_

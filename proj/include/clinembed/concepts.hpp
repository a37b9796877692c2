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

#ifndef CLINEMBED_CONCEPTS_HPP_
#define CLINEMBED_CONCEPTS_HPP_

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "clinembed/corpus.hpp"
#include "clinembed/text.hpp"

namespace clinembed {

struct LexiconEntry {
  std::string concept_id;
  std::string semantic_type;
  std::vector<std::vector<std::string>> surface_forms;  // tokenized, lowercase
};

struct ConceptMention {
  std::string concept_id;
  int note_id = -1;
  int start = 0;   // token offset
  int length = 0;  // token count
};

// Semantic types filtered out of extraction output. Matching is a
// case-insensitive substring test against the entry's semantic type.
inline const std::vector<std::string>& default_type_exclusions() {
  static const std::vector<std::string> kExclusions = {"temporal", "language",
                                                       "quantitative"};
  return kExclusions;
}

namespace detail {

inline std::string lower_ascii(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

inline bool type_excluded(const std::string& semantic_type,
                          const std::vector<std::string>& exclusions) {
  std::string type = lower_ascii(semantic_type);
  for (const std::string& ex : exclusions) {
    if (type.find(lower_ascii(ex)) != std::string::npos) return true;
  }
  return false;
}

}  // namespace detail

// Lexicon TSV: concept_id <TAB> semantic_type <TAB> surface form, one row per
// form. Surface forms are run through the corpus tokenizer so matching is
// performed on identically preprocessed tokens.
inline std::vector<LexiconEntry> load_lexicon_tsv(std::istream& in) {
  std::vector<LexiconEntry> entries;
  std::unordered_map<std::string, size_t> by_id;
  std::string line;
  long long row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::string::size_type t1 = line.find('\t');
    std::string::size_type t2 =
        t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos) {
      throw std::runtime_error("load_lexicon_tsv: row " + std::to_string(row) +
                               ": expected 3 tab-separated fields");
    }
    std::string id = line.substr(0, t1);
    std::string type = line.substr(t1 + 1, t2 - t1 - 1);
    std::string surface = line.substr(t2 + 1);
    std::vector<std::string> form = tokenize_text(surface);
    if (id.empty() || form.empty()) {
      throw std::runtime_error("load_lexicon_tsv: row " + std::to_string(row) +
                               ": empty concept id or surface form");
    }
    auto it = by_id.find(id);
    if (it == by_id.end()) {
      by_id.emplace(id, entries.size());
      entries.push_back(LexiconEntry{id, type, {std::move(form)}});
    } else {
      LexiconEntry& entry = entries[it->second];
      if (entry.semantic_type != type) {
        throw std::runtime_error("load_lexicon_tsv: row " + std::to_string(row) +
                                 ": conflicting semantic type for " + id);
      }
      entry.surface_forms.push_back(std::move(form));
    }
  }
  return entries;
}

inline std::vector<LexiconEntry> load_lexicon_tsv_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_lexicon_tsv: cannot open " + path);
  return load_lexicon_tsv(in);
}

// Greedy longest-match left-to-right scan over note tokens. Matches never
// overlap. Entries whose semantic type hits the exclusion list take no part
// in matching at all, so they cannot shadow shorter admissible matches.
class ConceptMatcher {
 public:
  explicit ConceptMatcher(
      const std::vector<LexiconEntry>& lexicon,
      const std::vector<std::string>& exclusions = default_type_exclusions()) {
    for (size_t e = 0; e < lexicon.size(); ++e) {
      if (detail::type_excluded(lexicon[e].semantic_type, exclusions)) continue;
      for (const auto& form : lexicon[e].surface_forms) {
        if (form.empty()) continue;
        index_[form.front()].push_back(Candidate{&form, e});
      }
    }
    for (auto& [first, cands] : index_) {
      std::stable_sort(cands.begin(), cands.end(),
                       [](const Candidate& a, const Candidate& b) {
                         return a.form->size() > b.form->size();
                       });
    }
    lexicon_ = &lexicon;
  }

  std::vector<ConceptMention> extract(const ClinicalNote& note) const {
    std::vector<ConceptMention> mentions;
    const std::vector<std::string>& tokens = note.tokens;
    size_t pos = 0;
    while (pos < tokens.size()) {
      auto it = index_.find(tokens[pos]);
      size_t advance = 1;
      if (it != index_.end()) {
        for (const Candidate& cand : it->second) {
          const auto& form = *cand.form;
          if (pos + form.size() > tokens.size()) continue;
          if (std::equal(form.begin(), form.end(), tokens.begin() + pos)) {
            mentions.push_back(ConceptMention{
                (*lexicon_)[cand.entry].concept_id, note.note_id,
                static_cast<int>(pos), static_cast<int>(form.size())});
            advance = form.size();
            break;
          }
        }
      }
      pos += advance;
    }
    return mentions;
  }

 private:
  struct Candidate {
    const std::vector<std::string>* form;
    size_t entry;
  };
  std::unordered_map<std::string, std::vector<Candidate>> index_;
  const std::vector<LexiconEntry>* lexicon_ = nullptr;
};

inline std::vector<ConceptMention> extract_concepts(
    const ClinicalNote& note, const std::vector<LexiconEntry>& lexicon,
    const std::vector<std::string>& exclusions = default_type_exclusions()) {
  return ConceptMatcher(lexicon, exclusions).extract(note);
}

// Concept multiset of one patient: union with multiplicity over the
// patient's notes.
inline std::map<std::string, int> patient_concepts(
    const Patient& patient,
    const std::unordered_map<int, std::vector<ConceptMention>>& mentions_by_note) {
  std::map<std::string, int> multiset;
  for (int note_id : patient.note_ids) {
    auto it = mentions_by_note.find(note_id);
    if (it == mentions_by_note.end()) continue;
    for (const ConceptMention& m : it->second) ++multiset[m.concept_id];
  }
  return multiset;
}

// ---------------------------------------------------------------------------
// TF-IDF features
// ---------------------------------------------------------------------------

enum class FeatureKind { kNgram, kConcept };

struct FeatureVector {
  FeatureKind kind = FeatureKind::kNgram;
  std::map<int, double> weights;  // feature index -> tf-idf
};

struct FeatureSpace {
  FeatureKind kind;
  std::vector<std::string> names;  // feature index -> name, sorted
};

namespace detail {

inline std::vector<std::map<std::string, long long>> raw_counts(
    const CorpusStore& corpus, FeatureKind kind, int ngram_max,
    const std::unordered_map<int, std::vector<ConceptMention>>* mentions) {
  std::vector<std::map<std::string, long long>> counts(corpus.patients.size());
  for (const Patient& p : corpus.patients) {
    auto& c = counts[p.patient_id];
    if (kind == FeatureKind::kNgram) {
      // n-grams over the patient's notes concatenated in note order.
      std::vector<const std::string*> stream;
      for (int note_id : p.note_ids) {
        for (const std::string& tok : corpus.notes[note_id].tokens) {
          stream.push_back(&tok);
        }
      }
      for (int n = 1; n <= ngram_max; ++n) {
        if (stream.size() < static_cast<size_t>(n)) break;
        for (size_t i = 0; i + n <= stream.size(); ++i) {
          std::string key = *stream[i];
          for (int j = 1; j < n; ++j) {
            key.push_back(' ');
            key += *stream[i + j];
          }
          ++c[key];
        }
      }
    } else {
      for (int note_id : p.note_ids) {
        auto it = mentions->find(note_id);
        if (it == mentions->end()) continue;
        for (const ConceptMention& m : it->second) ++c[m.concept_id];
      }
    }
  }
  return counts;
}

}  // namespace detail

// TF = raw count per patient; IDF = ln(N / (1 + df)) + 1.
inline std::pair<std::vector<FeatureVector>, FeatureSpace> tfidf_features(
    const CorpusStore& corpus, FeatureKind kind,
    const std::unordered_map<int, std::vector<ConceptMention>>* mentions_by_note =
        nullptr,
    int ngram_max = 3) {
  if (corpus.patients.empty()) {
    throw std::invalid_argument("tfidf_features: empty corpus");
  }
  if (kind == FeatureKind::kConcept) {
    bool any = false;
    if (mentions_by_note) {
      for (const auto& [note, ms] : *mentions_by_note) {
        if (!ms.empty()) {
          any = true;
          break;
        }
      }
    }
    if (!any) {
      throw std::runtime_error(
          "tfidf_features: concept features requested but no mentions exist");
    }
  }
  auto counts = detail::raw_counts(corpus, kind, ngram_max, mentions_by_note);
  std::map<std::string, int> df;
  for (const auto& c : counts) {
    for (const auto& [feat, cnt] : c) {
      if (cnt > 0) ++df[feat];
    }
  }
  FeatureSpace space;
  space.kind = kind;
  std::unordered_map<std::string, int> feature_index;
  space.names.reserve(df.size());
  for (const auto& [feat, d] : df) {  // std::map: lexicographic order
    feature_index.emplace(feat, static_cast<int>(space.names.size()));
    space.names.push_back(feat);
  }
  double n_patients = static_cast<double>(corpus.patients.size());
  std::vector<FeatureVector> vecs(counts.size());
  for (size_t p = 0; p < counts.size(); ++p) {
    vecs[p].kind = kind;
    for (const auto& [feat, cnt] : counts[p]) {
      double idf = std::log(n_patients / (1.0 + df.at(feat))) + 1.0;
      vecs[p].weights[feature_index.at(feat)] = static_cast<double>(cnt) * idf;
    }
  }
  return {std::move(vecs), std::move(space)};
}

inline double sparse_cosine(const FeatureVector& a, const FeatureVector& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [i, w] : a.weights) na += w * w;
  for (const auto& [i, w] : b.weights) nb += w * w;
  if (na == 0.0 || nb == 0.0) return 0.0;
  auto ia = a.weights.begin();
  auto ib = b.weights.begin();
  while (ia != a.weights.end() && ib != b.weights.end()) {
    if (ia->first < ib->first) {
      ++ia;
    } else if (ib->first < ia->first) {
      ++ib;
    } else {
      dot += ia->second * ib->second;
      ++ia;
      ++ib;
    }
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

// Mention store round-trip (concept catalog + per-note mentions).
struct MentionStore {
  static constexpr int kFormatVersion = 1;
  std::vector<LexiconEntry> concepts;  // catalog actually mentioned or not
  std::unordered_map<int, std::vector<ConceptMention>> mentions_by_note;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["format_version"] = kFormatVersion;
    nlohmann::ordered_json cj = nlohmann::ordered_json::array();
    for (const LexiconEntry& e : concepts) {
      cj.push_back({{"id", e.concept_id},
                    {"type", e.semantic_type},
                    {"forms", e.surface_forms}});
    }
    j["concepts"] = std::move(cj);
    nlohmann::ordered_json mj = nlohmann::ordered_json::array();
    std::vector<int> note_ids;
    note_ids.reserve(mentions_by_note.size());
    for (const auto& [note_id, ms] : mentions_by_note) note_ids.push_back(note_id);
    std::sort(note_ids.begin(), note_ids.end());
    for (int note_id : note_ids) {
      for (const ConceptMention& m : mentions_by_note.at(note_id)) {
        mj.push_back({{"concept", m.concept_id},
                      {"note", m.note_id},
                      {"start", m.start},
                      {"len", m.length}});
      }
    }
    j["mentions"] = std::move(mj);
    return j;
  }

  static MentionStore from_json(const nlohmann::json& j) {
    if (!j.contains("format_version") ||
        j["format_version"].get<int>() != kFormatVersion) {
      throw std::runtime_error("MentionStore: unsupported format_version");
    }
    MentionStore store;
    for (const auto& cj : j["concepts"]) {
      LexiconEntry e;
      e.concept_id = cj["id"].get<std::string>();
      e.semantic_type = cj["type"].get<std::string>();
      e.surface_forms =
          cj["forms"].get<std::vector<std::vector<std::string>>>();
      store.concepts.push_back(std::move(e));
    }
    for (const auto& mj : j["mentions"]) {
      ConceptMention m;
      m.concept_id = mj["concept"].get<std::string>();
      m.note_id = mj["note"].get<int>();
      m.start = mj["start"].get<int>();
      m.length = mj["len"].get<int>();
      store.mentions_by_note[m.note_id].push_back(std::move(m));
    }
    return store;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("MentionStore::save: cannot open " + path);
    out << to_json().dump(1, '\t') << '\n';
  }

  static MentionStore load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("MentionStore::load: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

}  // namespace clinembed

#endif  // CLINEMBED_CONCEPTS_HPP_

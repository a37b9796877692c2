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

#ifndef CLINEMBED_CORPUS_HPP_
#define CLINEMBED_CORPUS_HPP_

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "clinembed/text.hpp"

namespace clinembed {

// One document of one hospital visit. A patient identity downstream is the
// (patient_key, visit_key) pair: records of the same person in different
// visits become distinct patients.
struct RawRecord {
  std::string patient_key;
  std::string visit_key;
  std::string text;
  std::vector<std::string> labels;
  std::optional<bool> mortality;
};

struct ClinicalNote {
  int note_id = -1;
  int patient_id = -1;
  std::vector<std::string> tokens;
};

struct Patient {
  int patient_id = -1;
  std::string patient_key;
  std::string visit_key;
  std::vector<int> note_ids;
  std::vector<int> labels;  // sorted dense label indices
  std::optional<bool> mortality;
};

class Vocabulary {
 public:
  static constexpr int kPadIndex = 0;
  static constexpr int kUnkIndex = 1;
  static constexpr int kFirstTokenIndex = 2;

  Vocabulary() = default;

  // Keeps the max_size most frequent tokens, ties broken lexicographically,
  // plus the reserved PAD and UNK entries. Frozen once built.
  static Vocabulary build(const std::vector<ClinicalNote>& notes,
                          int max_size) {
    if (max_size < 1) {
      throw std::invalid_argument("Vocabulary::build: max_size must be >= 1");
    }
    std::unordered_map<std::string, long long> counts;
    for (const ClinicalNote& note : notes) {
      for (const std::string& tok : note.tokens) ++counts[tok];
    }
    std::vector<std::pair<std::string, long long>> ranked(counts.begin(),
                                                          counts.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    if (ranked.size() > static_cast<size_t>(max_size)) {
      ranked.resize(static_cast<size_t>(max_size));
    }
    Vocabulary vocab;
    vocab.max_size_ = max_size;
    vocab.index_to_token_.reserve(ranked.size() + kFirstTokenIndex);
    vocab.index_to_token_.emplace_back("[PAD]");
    vocab.index_to_token_.emplace_back("[UNK]");
    for (auto& [tok, cnt] : ranked) {
      vocab.token_to_index_.emplace(tok,
                                    static_cast<int>(vocab.index_to_token_.size()));
      vocab.index_to_token_.push_back(tok);
    }
    return vocab;
  }

  static Vocabulary from_tokens(std::vector<std::string> tokens, int max_size) {
    Vocabulary vocab;
    vocab.max_size_ = max_size;
    vocab.index_to_token_.emplace_back("[PAD]");
    vocab.index_to_token_.emplace_back("[UNK]");
    for (std::string& tok : tokens) {
      vocab.token_to_index_.emplace(tok,
                                    static_cast<int>(vocab.index_to_token_.size()));
      vocab.index_to_token_.push_back(std::move(tok));
    }
    return vocab;
  }

  int lookup(const std::string& token) const {
    auto it = token_to_index_.find(token);
    return it == token_to_index_.end() ? kUnkIndex : it->second;
  }

  const std::string& token(int index) const { return index_to_token_.at(index); }

  int size() const { return static_cast<int>(index_to_token_.size()); }
  int max_size() const { return max_size_; }

  // Real (non-reserved) token entries in rank order.
  std::vector<std::string> ranked_tokens() const {
    return {index_to_token_.begin() + kFirstTokenIndex, index_to_token_.end()};
  }

 private:
  int max_size_ = 0;
  std::vector<std::string> index_to_token_;
  std::unordered_map<std::string, int> token_to_index_;
};

// ---------------------------------------------------------------------------
// Ingestion
// ---------------------------------------------------------------------------

// JSONL schema: {"patient": str, "visit": str, "text": str,
//                "labels": [str...]?, "mortality": bool?, "doc": int?}
inline std::vector<RawRecord> ingest_jsonl(std::istream& in) {
  std::vector<RawRecord> records;
  std::map<std::pair<std::string, std::string>, std::set<long long>> seen_docs;
  std::string line;
  long long row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw std::runtime_error("ingest_jsonl: row " + std::to_string(row) +
                               ": invalid JSON: " + e.what());
    }
    if (!obj.is_object() || !obj.contains("patient") || !obj.contains("visit") ||
        !obj.contains("text") || !obj["patient"].is_string() ||
        !obj["visit"].is_string() || !obj["text"].is_string()) {
      throw std::runtime_error("ingest_jsonl: row " + std::to_string(row) +
                               ": expected string fields patient/visit/text");
    }
    RawRecord rec;
    rec.patient_key = obj["patient"].get<std::string>();
    rec.visit_key = obj["visit"].get<std::string>();
    rec.text = obj["text"].get<std::string>();
    if (rec.text.empty()) {
      throw std::runtime_error("ingest_jsonl: row " + std::to_string(row) +
                               ": empty text field");
    }
    if (obj.contains("labels")) {
      if (!obj["labels"].is_array()) {
        throw std::runtime_error("ingest_jsonl: row " + std::to_string(row) +
                                 ": labels must be an array of strings");
      }
      for (const auto& l : obj["labels"]) {
        if (!l.is_string()) {
          throw std::runtime_error("ingest_jsonl: row " + std::to_string(row) +
                                   ": labels must be an array of strings");
        }
        rec.labels.push_back(l.get<std::string>());
      }
    }
    if (obj.contains("mortality")) {
      if (!obj["mortality"].is_boolean()) {
        throw std::runtime_error("ingest_jsonl: row " + std::to_string(row) +
                                 ": mortality must be a boolean");
      }
      rec.mortality = obj["mortality"].get<bool>();
    }
    auto key = std::make_pair(rec.patient_key, rec.visit_key);
    auto& docs = seen_docs[key];
    long long doc_index = obj.contains("doc")
                              ? obj["doc"].get<long long>()
                              : static_cast<long long>(docs.size());
    if (!docs.insert(doc_index).second) {
      throw std::runtime_error(
          "ingest_jsonl: row " + std::to_string(row) +
          ": duplicate (patient, visit, doc) = (" + rec.patient_key + ", " +
          rec.visit_key + ", " + std::to_string(doc_index) + ")");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

namespace detail {

// RFC4180-style CSV row reader: quoted fields may contain commas, escaped
// quotes ("") and raw newlines (MIMIC note text does).
inline bool read_csv_row(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  int c;
  while ((c = in.get()) != EOF) {
    any = true;
    char ch = static_cast<char>(c);
    if (in_quotes) {
      if (ch == '"') {
        if (in.peek() == '"') {
          field.push_back('"');
          in.get();
        } else {
          in_quotes = false;
        }
      } else {
        field.push_back(ch);
      }
    } else if (ch == '"') {
      in_quotes = true;
    } else if (ch == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (ch == '\n') {
      break;
    } else if (ch == '\r') {
      // swallow; \r\n handled by the \n branch
    } else {
      field.push_back(ch);
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

inline std::string upper_ascii(std::string s) {
  for (char& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace detail

// MIMIC NOTEEVENTS.csv adapter. Keeps only rows whose CATEGORY is
// "Discharge summary". Labels and mortality are not carried by NOTEEVENTS;
// they are supplied separately when needed.
inline std::vector<RawRecord> ingest_mimic_noteevents_csv(std::istream& in) {
  std::vector<std::string> header;
  if (!detail::read_csv_row(in, header)) {
    throw std::runtime_error("ingest_mimic: empty input");
  }
  int col_subject = -1, col_hadm = -1, col_category = -1, col_text = -1;
  for (size_t i = 0; i < header.size(); ++i) {
    std::string name = detail::upper_ascii(header[i]);
    if (name == "SUBJECT_ID") col_subject = static_cast<int>(i);
    if (name == "HADM_ID") col_hadm = static_cast<int>(i);
    if (name == "CATEGORY") col_category = static_cast<int>(i);
    if (name == "TEXT") col_text = static_cast<int>(i);
  }
  if (col_subject < 0 || col_hadm < 0 || col_category < 0 || col_text < 0) {
    throw std::runtime_error(
        "ingest_mimic: header must contain SUBJECT_ID, HADM_ID, CATEGORY, TEXT");
  }
  std::vector<RawRecord> records;
  std::vector<std::string> fields;
  long long row = 1;
  while (detail::read_csv_row(in, fields)) {
    ++row;
    if (fields.size() == 1 && fields[0].empty()) continue;  // trailing newline
    if (fields.size() < header.size()) {
      throw std::runtime_error("ingest_mimic: row " + std::to_string(row) +
                               ": expected " + std::to_string(header.size()) +
                               " columns, got " + std::to_string(fields.size()));
    }
    std::string category = detail::upper_ascii(fields[col_category]);
    if (category != "DISCHARGE SUMMARY") continue;
    RawRecord rec;
    rec.patient_key = fields[col_subject];
    rec.visit_key = fields[col_hadm];
    rec.text = fields[col_text];
    if (rec.text.empty()) {
      throw std::runtime_error("ingest_mimic: row " + std::to_string(row) +
                               ": empty TEXT field");
    }
    records.push_back(std::move(rec));
  }
  return records;
}

enum class IngestFormat { kJsonl, kMimicNoteeventsCsv };

inline std::vector<RawRecord> ingest(std::istream& in, IngestFormat format) {
  switch (format) {
    case IngestFormat::kJsonl:
      return ingest_jsonl(in);
    case IngestFormat::kMimicNoteeventsCsv:
      return ingest_mimic_noteevents_csv(in);
  }
  throw std::logic_error("ingest: unknown format");
}

// ---------------------------------------------------------------------------
// Corpus store
// ---------------------------------------------------------------------------

struct CorpusStore {
  static constexpr int kFormatVersion = 1;

  std::vector<Patient> patients;  // patient_id == index
  std::vector<ClinicalNote> notes;  // note_id == index
  std::vector<std::string> label_names;  // label index -> name
  Vocabulary vocab;
  long long dropped_notes = 0;

  int label_count() const { return static_cast<int>(label_names.size()); }

  std::vector<int> note_token_ids(int note_id) const {
    const ClinicalNote& note = notes.at(note_id);
    std::vector<int> ids;
    ids.reserve(note.tokens.size());
    for (const std::string& tok : note.tokens) ids.push_back(vocab.lookup(tok));
    return ids;
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["format_version"] = kFormatVersion;
    j["dropped_notes"] = dropped_notes;
    j["labels"] = label_names;
    j["vocab"] = {{"max_size", vocab.max_size()},
                  {"tokens", vocab.ranked_tokens()}};
    nlohmann::ordered_json patients_j = nlohmann::ordered_json::array();
    for (const Patient& p : patients) {
      nlohmann::ordered_json pj;
      pj["id"] = p.patient_id;
      pj["patient_key"] = p.patient_key;
      pj["visit_key"] = p.visit_key;
      pj["note_ids"] = p.note_ids;
      pj["labels"] = p.labels;
      if (p.mortality.has_value()) pj["mortality"] = *p.mortality;
      patients_j.push_back(std::move(pj));
    }
    j["patients"] = std::move(patients_j);
    nlohmann::ordered_json notes_j = nlohmann::ordered_json::array();
    for (const ClinicalNote& n : notes) {
      notes_j.push_back({{"id", n.note_id},
                         {"patient", n.patient_id},
                         {"tokens", n.tokens}});
    }
    j["notes"] = std::move(notes_j);
    return j;
  }

  static CorpusStore from_json(const nlohmann::json& j) {
    if (!j.contains("format_version") ||
        j["format_version"].get<int>() != kFormatVersion) {
      throw std::runtime_error("CorpusStore: unsupported format_version");
    }
    CorpusStore store;
    store.dropped_notes = j.value("dropped_notes", 0LL);
    store.label_names = j["labels"].get<std::vector<std::string>>();
    store.vocab = Vocabulary::from_tokens(
        j["vocab"]["tokens"].get<std::vector<std::string>>(),
        j["vocab"]["max_size"].get<int>());
    for (const auto& pj : j["patients"]) {
      Patient p;
      p.patient_id = pj["id"].get<int>();
      p.patient_key = pj["patient_key"].get<std::string>();
      p.visit_key = pj["visit_key"].get<std::string>();
      p.note_ids = pj["note_ids"].get<std::vector<int>>();
      p.labels = pj["labels"].get<std::vector<int>>();
      if (pj.contains("mortality")) p.mortality = pj["mortality"].get<bool>();
      store.patients.push_back(std::move(p));
    }
    for (const auto& nj : j["notes"]) {
      ClinicalNote n;
      n.note_id = nj["id"].get<int>();
      n.patient_id = nj["patient"].get<int>();
      n.tokens = nj["tokens"].get<std::vector<std::string>>();
      store.notes.push_back(std::move(n));
    }
    return store;
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("CorpusStore::save: cannot open " + path);
    out << to_json().dump(1, '\t') << '\n';
  }

  static CorpusStore load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("CorpusStore::load: cannot open " + path);
    nlohmann::json j;
    in >> j;
    return from_json(j);
  }
};

// Preprocesses records into a corpus store: tokenizes, drops short notes,
// keys patients per (patient_key, visit_key), indexes labels, and freezes
// the vocabulary over the surviving notes.
inline CorpusStore build_corpus(const std::vector<RawRecord>& records,
                                int max_vocab = 15000,
                                const TextScrubber& scrubber = nullptr) {
  CorpusStore store;
  std::map<std::pair<std::string, std::string>, int> patient_index;
  std::map<std::string, int> label_index;
  // Stable label indexing independent of record order inside a patient.
  std::set<std::string> label_set;
  for (const RawRecord& rec : records) {
    for (const std::string& l : rec.labels) label_set.insert(l);
  }
  for (const std::string& l : label_set) {
    label_index.emplace(l, static_cast<int>(store.label_names.size()));
    store.label_names.push_back(l);
  }
  for (const RawRecord& rec : records) {
    std::optional<std::vector<std::string>> tokens =
        preprocess_text(rec.text, scrubber);
    auto key = std::make_pair(rec.patient_key, rec.visit_key);
    auto [it, inserted] =
        patient_index.emplace(key, static_cast<int>(store.patients.size()));
    if (inserted) {
      Patient p;
      p.patient_id = it->second;
      p.patient_key = rec.patient_key;
      p.visit_key = rec.visit_key;
      store.patients.push_back(std::move(p));
    }
    Patient& patient = store.patients[it->second];
    for (const std::string& l : rec.labels) {
      int li = label_index.at(l);
      if (std::find(patient.labels.begin(), patient.labels.end(), li) ==
          patient.labels.end()) {
        patient.labels.push_back(li);
      }
    }
    if (rec.mortality.has_value() && !patient.mortality.has_value()) {
      patient.mortality = rec.mortality;
    }
    if (!tokens.has_value()) {
      ++store.dropped_notes;
      continue;
    }
    ClinicalNote note;
    note.note_id = static_cast<int>(store.notes.size());
    note.patient_id = patient.patient_id;
    note.tokens = std::move(*tokens);
    patient.note_ids.push_back(note.note_id);
    store.notes.push_back(std::move(note));
  }
  for (Patient& p : store.patients) std::sort(p.labels.begin(), p.labels.end());
  // Patients whose notes were all dropped are removed; ids are recompacted.
  std::vector<Patient> kept;
  std::vector<int> remap(store.patients.size(), -1);
  for (Patient& p : store.patients) {
    if (p.note_ids.empty()) continue;
    remap[p.patient_id] = static_cast<int>(kept.size());
    p.patient_id = static_cast<int>(kept.size());
    kept.push_back(std::move(p));
  }
  for (ClinicalNote& n : store.notes) n.patient_id = remap[n.patient_id];
  store.patients = std::move(kept);
  store.vocab = Vocabulary::build(store.notes, max_vocab);
  return store;
}

}  // namespace clinembed

#endif  // CLINEMBED_CORPUS_HPP_

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

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "clinembed/baselines.hpp"
#include "clinembed/concepts.hpp"
#include "clinembed/corpus.hpp"
#include "clinembed/eval.hpp"
#include "clinembed/synth.hpp"
#include "clinembed/training.hpp"

namespace {

namespace fs = std::filesystem;
using clinembed::CorpusStore;
using clinembed::MentionStore;
using nlohmann::json;
using nlohmann::ordered_json;

struct RunConfig {
  clinembed::TrainConfig train;
  clinembed::SynthConfig synth;
  int eval_folds = 5;
  int retrieval_k = 10;
  double classifier_lr = 0.001;
  double classifier_l2 = 0.01;
  int classifier_epochs = 200;
  int usr2vec_epochs = 10;
  int usr2vec_negatives = 3;
  int usr2vec_batch = 1024;
  double unigram_power = 1.0;
  bool word2user_concat = false;
  std::string input;
  std::string format = "jsonl";
  std::string corpus;
  std::string lexicon;
  std::string mentions;
  std::string checkpoint;
  std::string word_vectors;
  std::string output_dir = "out";
};

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      // training
      "lambda", "alpha", "epochs", "batch_size", "negatives_per_positive",
      "snippet_min", "snippet_max", "lr", "rmsprop_decay", "rmsprop_eps",
      "encoder", "seed", "enable_contrastive", "enable_concepts",
      "token_negatives_per_positive", "token_replace_prob",
      "concept_positives_per_example", "concept_negatives_per_positive",
      "embedding_dim", "gru_hidden", "gru_projection", "dropout", "threads",
      "max_vocab",
      // synthetic corpus
      "n_patients", "n_labels", "n_concepts", "vocab_size",
      "notes_per_patient_min", "notes_per_patient_max", "note_length_min",
      "note_length_max", "labels_per_patient_min", "labels_per_patient_max",
      "signal_strength", "noise_concept_rate",
      // evaluation
      "eval_folds", "retrieval_k", "classifier_lr", "classifier_l2",
      "classifier_epochs",
      // baselines
      "usr2vec_epochs", "usr2vec_negatives", "usr2vec_batch", "unigram_power",
      "word2user_concat",
      // paths
      "input", "format", "corpus", "lexicon", "mentions", "checkpoint",
      "word_vectors", "output_dir"};
  return keys;
}

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j[key].get<T>();
}

RunConfig load_run_config(const std::string& path) {
  RunConfig cfg;
  if (path.empty()) return cfg;
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("config: invalid JSON in " + path + ": " +
                             e.what());
  }
  if (!j.is_object()) throw std::runtime_error("config: expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!known_keys().count(it.key())) {
      throw std::runtime_error("config: unknown key '" + it.key() + "'");
    }
  }
  auto& t = cfg.train;
  read_key(j, "lambda", t.lambda);
  read_key(j, "alpha", t.alpha);
  read_key(j, "epochs", t.epochs);
  read_key(j, "batch_size", t.batch_size);
  read_key(j, "negatives_per_positive", t.negatives_per_positive);
  read_key(j, "snippet_min", t.snippet_min);
  read_key(j, "snippet_max", t.snippet_max);
  read_key(j, "lr", t.lr);
  read_key(j, "rmsprop_decay", t.rmsprop_decay);
  read_key(j, "rmsprop_eps", t.rmsprop_eps);
  read_key(j, "encoder", t.encoder);
  read_key(j, "seed", t.seed);
  read_key(j, "enable_contrastive", t.enable_contrastive);
  read_key(j, "enable_concepts", t.enable_concepts);
  read_key(j, "token_negatives_per_positive", t.token_negatives_per_positive);
  read_key(j, "token_replace_prob", t.token_replace_prob);
  read_key(j, "concept_positives_per_example",
           t.concept_positives_per_example);
  read_key(j, "concept_negatives_per_positive",
           t.concept_negatives_per_positive);
  read_key(j, "embedding_dim", t.embedding_dim);
  read_key(j, "gru_hidden", t.gru_hidden);
  read_key(j, "gru_projection", t.gru_projection);
  read_key(j, "dropout", t.dropout);
  read_key(j, "threads", t.threads);
  read_key(j, "max_vocab", t.max_vocab);
  auto& s = cfg.synth;
  read_key(j, "n_patients", s.n_patients);
  read_key(j, "n_labels", s.n_labels);
  read_key(j, "n_concepts", s.n_concepts);
  read_key(j, "vocab_size", s.vocab_size);
  read_key(j, "notes_per_patient_min", s.notes_per_patient_min);
  read_key(j, "notes_per_patient_max", s.notes_per_patient_max);
  read_key(j, "note_length_min", s.note_length_min);
  read_key(j, "note_length_max", s.note_length_max);
  read_key(j, "labels_per_patient_min", s.labels_per_patient_min);
  read_key(j, "labels_per_patient_max", s.labels_per_patient_max);
  read_key(j, "signal_strength", s.signal_strength);
  read_key(j, "noise_concept_rate", s.noise_concept_rate);
  read_key(j, "seed", s.seed);
  read_key(j, "eval_folds", cfg.eval_folds);
  read_key(j, "retrieval_k", cfg.retrieval_k);
  read_key(j, "classifier_lr", cfg.classifier_lr);
  read_key(j, "classifier_l2", cfg.classifier_l2);
  read_key(j, "classifier_epochs", cfg.classifier_epochs);
  read_key(j, "usr2vec_epochs", cfg.usr2vec_epochs);
  read_key(j, "usr2vec_negatives", cfg.usr2vec_negatives);
  read_key(j, "usr2vec_batch", cfg.usr2vec_batch);
  read_key(j, "unigram_power", cfg.unigram_power);
  read_key(j, "word2user_concat", cfg.word2user_concat);
  read_key(j, "input", cfg.input);
  read_key(j, "format", cfg.format);
  read_key(j, "corpus", cfg.corpus);
  read_key(j, "lexicon", cfg.lexicon);
  read_key(j, "mentions", cfg.mentions);
  read_key(j, "checkpoint", cfg.checkpoint);
  read_key(j, "word_vectors", cfg.word_vectors);
  read_key(j, "output_dir", cfg.output_dir);
  return cfg;
}

ordered_json resolved_config_json(const RunConfig& cfg) {
  ordered_json j = cfg.train.to_json();
  ordered_json s = cfg.synth.to_json();
  for (auto it = s.begin(); it != s.end(); ++it) j[it.key()] = it.value();
  j["eval_folds"] = cfg.eval_folds;
  j["retrieval_k"] = cfg.retrieval_k;
  j["classifier_lr"] = cfg.classifier_lr;
  j["classifier_l2"] = cfg.classifier_l2;
  j["classifier_epochs"] = cfg.classifier_epochs;
  j["usr2vec_epochs"] = cfg.usr2vec_epochs;
  j["usr2vec_negatives"] = cfg.usr2vec_negatives;
  j["usr2vec_batch"] = cfg.usr2vec_batch;
  j["unigram_power"] = cfg.unigram_power;
  j["word2user_concat"] = cfg.word2user_concat;
  j["input"] = cfg.input;
  j["format"] = cfg.format;
  j["corpus"] = cfg.corpus;
  j["lexicon"] = cfg.lexicon;
  j["mentions"] = cfg.mentions;
  j["checkpoint"] = cfg.checkpoint;
  j["word_vectors"] = cfg.word_vectors;
  j["output_dir"] = cfg.output_dir;
  return j;
}

fs::path prepare_output_dir(RunConfig& cfg) {
  if (const char* env = std::getenv("CLINEMBED_OUT")) {
    cfg.output_dir = env;
  }
  fs::path out(cfg.output_dir);
  fs::create_directories(out);
  return out;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string());
  f << content;
}

void write_resolved_config(const RunConfig& cfg, const fs::path& out,
                           const std::string& command) {
  write_text(out / ("config." + command + ".json"),
             resolved_config_json(cfg).dump(1, '\t') + "\n");
}

CorpusStore require_corpus(const RunConfig& cfg) {
  if (cfg.corpus.empty()) {
    throw std::runtime_error("missing --corpus (or 'corpus' config key)");
  }
  return CorpusStore::load(cfg.corpus);
}

// --- commands ----------------------------------------------------------------

int cmd_synth(RunConfig cfg) {
  fs::path out = prepare_output_dir(cfg);
  clinembed::SynthOutput synth = clinembed::generate_synth(cfg.synth);
  clinembed::write_synth(synth, out.string());
  write_resolved_config(cfg, out, "synth");
  std::cout << "wrote " << (out / "corpus.jsonl").string()
            << ", lexicon.tsv, manifest.json\n";
  return 0;
}

int cmd_ingest(RunConfig cfg) {
  fs::path out = prepare_output_dir(cfg);
  if (cfg.input.empty()) {
    throw std::runtime_error("missing --input (or 'input' config key)");
  }
  std::ifstream in(cfg.input, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + cfg.input);
  clinembed::IngestFormat format;
  if (cfg.format == "jsonl") {
    format = clinembed::IngestFormat::kJsonl;
  } else if (cfg.format == "mimic_noteevents_csv") {
    format = clinembed::IngestFormat::kMimicNoteeventsCsv;
  } else {
    throw std::runtime_error("unknown format '" + cfg.format +
                             "' (expected jsonl or mimic_noteevents_csv)");
  }
  auto records = clinembed::ingest(in, format);
  CorpusStore store = clinembed::build_corpus(records, cfg.train.max_vocab);
  store.save((out / "corpus_store.json").string());
  write_resolved_config(cfg, out, "ingest");
  std::cout << "patients: " << store.patients.size()
            << ", notes: " << store.notes.size()
            << ", dropped: " << store.dropped_notes
            << ", vocab: " << store.vocab.size() << "\n";
  return 0;
}

int cmd_extract(RunConfig cfg) {
  fs::path out = prepare_output_dir(cfg);
  CorpusStore store = require_corpus(cfg);
  if (cfg.lexicon.empty()) {
    throw std::runtime_error("missing --lexicon (or 'lexicon' config key)");
  }
  MentionStore mentions;
  mentions.concepts = clinembed::load_lexicon_tsv_file(cfg.lexicon);
  clinembed::ConceptMatcher matcher(mentions.concepts);
  long long total = 0;
  for (const clinembed::ClinicalNote& note : store.notes) {
    auto found = matcher.extract(note);
    if (!found.empty()) {
      total += static_cast<long long>(found.size());
      mentions.mentions_by_note.emplace(note.note_id, std::move(found));
    }
  }
  mentions.save((out / "mentions.json").string());
  write_resolved_config(cfg, out, "extract-concepts");
  std::cout << "concepts: " << mentions.concepts.size()
            << ", mentions: " << total << "\n";
  return 0;
}

int cmd_train(RunConfig cfg) {
  fs::path out = prepare_output_dir(cfg);
  CorpusStore store = require_corpus(cfg);
  std::optional<MentionStore> mentions;
  if (!cfg.mentions.empty()) mentions = MentionStore::load(cfg.mentions);
  if (cfg.train.enable_concepts && !mentions.has_value()) {
    std::cerr << "note: no mention store given, training without the "
                 "patient-concept task\n";
  }
  clinembed::JointTrainer trainer(store,
                                  mentions.has_value() ? &*mentions : nullptr,
                                  cfg.train, cfg.word_vectors);
  auto log = trainer.train((out / "checkpoint.bin").string());
  if (cfg.train.epochs == 0) {
    clinembed::save_checkpoint((out / "checkpoint.bin").string(),
                               trainer.params(), trainer.fingerprint(),
                               trainer.rng_state());
  }
  write_text(out / "loss_log.json",
             clinembed::loss_log_json(log, trainer.fingerprint())
                     .dump(1, '\t') +
                 "\n");
  std::vector<std::string> names;
  for (const clinembed::Patient& p : store.patients) {
    names.push_back("p" + std::to_string(p.patient_id));
  }
  std::ofstream emb(out / "user_embeddings.w2v", std::ios::binary);
  clinembed::write_word2vec_text(emb, names, trainer.params().users.weights);
  write_resolved_config(cfg, out, "train");
  if (!log.empty()) {
    std::cout << "epoch 1 loss " << log.front().total << " -> epoch "
              << log.size() << " loss " << log.back().total << "\n";
  }
  std::cout << "wrote " << (out / "checkpoint.bin").string()
            << ", loss_log.json, user_embeddings.w2v\n";
  return 0;
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string quoted = "\"";
  for (char c : s) {
    if (c == '"') {
      quoted += "\"\"";
    } else {
      quoted.push_back(c);
    }
  }
  quoted.push_back('"');
  return quoted;
}

std::vector<clinembed::EvalReport> evaluate_embedding(
    const Eigen::MatrixXd& users, const CorpusStore& store,
    const RunConfig& cfg, const std::string& fingerprint) {
  std::vector<clinembed::EvalReport> reports;
  clinembed::CvOptions cv;
  cv.folds = cfg.eval_folds;
  cv.seed = cfg.train.seed;
  cv.lr = cfg.classifier_lr;
  cv.l2 = cfg.classifier_l2;
  cv.epochs = cfg.classifier_epochs;
  bool any_labels = false, any_mortality = false;
  for (const clinembed::Patient& p : store.patients) {
    any_labels |= !p.labels.empty();
    any_mortality |= p.mortality.has_value();
  }
  if (any_labels) {
    reports.push_back(clinembed::cross_validate(
        users, store, clinembed::EvalTask::kPhenotypeMap, cv, fingerprint));
  }
  if (any_mortality) {
    reports.push_back(clinembed::cross_validate(
        users, store, clinembed::EvalTask::kMortalityF1, cv, fingerprint));
  }
  if (any_labels) {
    Eigen::MatrixXd labels = clinembed::multi_hot_labels(store);
    clinembed::EvalReport rel;
    rel.task = "relatedness_mse";
    rel.value = clinembed::relatedness_mse(users, labels, cfg.train.seed);
    rel.config_fingerprint = fingerprint;
    reports.push_back(rel);
    clinembed::EvalReport ret;
    ret.task = "retrieval_jaccard";
    ret.value = clinembed::retrieval_jaccard(
        users, clinembed::label_sets(store), cfg.retrieval_k);
    ret.config_fingerprint = fingerprint;
    ret.extra["k"] = cfg.retrieval_k;
    reports.push_back(ret);
  }
  return reports;
}

void write_reports(const std::vector<clinembed::EvalReport>& reports,
                   const fs::path& json_path, const fs::path& csv_path) {
  ordered_json arr = ordered_json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  write_text(json_path, arr.dump(1, '\t') + "\n");
  std::string csv = "task,value,folds\n";
  for (const auto& r : reports) {
    csv += r.task + "," + std::to_string(r.value) + ",";
    std::string folds;
    for (size_t i = 0; i < r.folds.size(); ++i) {
      if (i) folds += ";";
      folds += std::to_string(r.folds[i]);
    }
    csv += csv_escape(folds) + "\n";
  }
  write_text(csv_path, csv);
}

int cmd_evaluate(RunConfig cfg) {
  fs::path out = prepare_output_dir(cfg);
  CorpusStore store = require_corpus(cfg);
  if (cfg.checkpoint.empty()) {
    throw std::runtime_error(
        "missing --checkpoint (or 'checkpoint' config key)");
  }
  clinembed::Checkpoint ckpt = clinembed::load_checkpoint(cfg.checkpoint);
  const Eigen::MatrixXd& users = ckpt.params.users.weights;
  if (users.rows() != static_cast<Eigen::Index>(store.patients.size())) {
    throw std::runtime_error(
        "checkpoint patient count does not match the corpus store");
  }
  auto reports = evaluate_embedding(users, store, cfg, ckpt.fingerprint);
  if (!cfg.mentions.empty()) {
    MentionStore mentions = MentionStore::load(cfg.mentions);
    auto [ngram_feats, ngram_space] =
        clinembed::tfidf_features(store, clinembed::FeatureKind::kNgram);
    auto [concept_feats, concept_space] = clinembed::tfidf_features(
        store, clinembed::FeatureKind::kConcept, &mentions.mentions_by_note);
    clinembed::RegressionReport reg = clinembed::concept_regression(
        ngram_feats, concept_feats, clinembed::multi_hot_labels(store),
        cfg.train.seed);
    clinembed::EvalReport r;
    r.task = "concept_regression";
    r.value = reg.coefficients(2);
    r.config_fingerprint = ckpt.fingerprint;
    r.extra["coefficients"] = {reg.coefficients(0), reg.coefficients(1),
                               reg.coefficients(2)};
    r.extra["p_values"] = {reg.p_values(0), reg.p_values(1), reg.p_values(2)};
    r.extra["pairs"] = reg.pairs;
    reports.push_back(r);
  }
  write_reports(reports, out / "evaluation.json", out / "evaluation.csv");
  write_resolved_config(cfg, out, "evaluate");
  for (const auto& r : reports) {
    std::cout << r.task << ": " << r.value << "\n";
  }
  return 0;
}

int cmd_retrieve(RunConfig cfg, const std::string& patient, int k) {
  fs::path out = prepare_output_dir(cfg);
  CorpusStore store = require_corpus(cfg);
  if (cfg.checkpoint.empty()) {
    throw std::runtime_error(
        "missing --checkpoint (or 'checkpoint' config key)");
  }
  Eigen::MatrixXd users =
      clinembed::load_checkpoint(cfg.checkpoint).params.users.weights;
  if (users.rows() != static_cast<Eigen::Index>(store.patients.size())) {
    throw std::runtime_error(
        "checkpoint patient count does not match the corpus store");
  }
  int query = -1;
  // Accept a numeric patient id, a patient_key, or patient_key:visit_key.
  try {
    size_t pos = 0;
    query = std::stoi(patient, &pos);
    if (pos != patient.size()) query = -1;
  } catch (...) {
    query = -1;
  }
  if (query < 0) {
    std::string key = patient, visit;
    if (auto colon = patient.find(':'); colon != std::string::npos) {
      key = patient.substr(0, colon);
      visit = patient.substr(colon + 1);
    }
    std::vector<int> matches;
    for (const clinembed::Patient& p : store.patients) {
      if (p.patient_key == key && (visit.empty() || p.visit_key == visit)) {
        matches.push_back(p.patient_id);
      }
    }
    if (matches.empty()) {
      throw std::runtime_error("no patient matches '" + patient + "'");
    }
    if (matches.size() > 1) {
      throw std::runtime_error(
          "patient key '" + patient +
          "' is ambiguous across visits; use patient_key:visit_key");
    }
    query = matches[0];
  }
  if (query < 0 || query >= static_cast<int>(store.patients.size())) {
    throw std::runtime_error("patient id out of range");
  }
  auto neighbors = clinembed::retrieve_neighbors(
      users, clinembed::label_sets(store), query, k);
  ordered_json j;
  j["query"] = query;
  j["patient_key"] = store.patients[query].patient_key;
  j["visit_key"] = store.patients[query].visit_key;
  ordered_json arr = ordered_json::array();
  for (const auto& n : neighbors) {
    arr.push_back({{"patient", n.patient_id},
                   {"patient_key", store.patients[n.patient_id].patient_key},
                   {"cosine", n.cosine_sim},
                   {"label_jaccard", n.label_jaccard}});
  }
  j["neighbors"] = std::move(arr);
  std::string text = j.dump(1, '\t') + "\n";
  write_text(out / "retrieval.json", text);
  write_resolved_config(cfg, out, "retrieve");
  std::cout << text;
  return 0;
}

int cmd_report(RunConfig cfg) {
  fs::path out = prepare_output_dir(cfg);
  CorpusStore store = require_corpus(cfg);
  std::optional<MentionStore> mentions;
  if (!cfg.mentions.empty()) mentions = MentionStore::load(cfg.mentions);

  struct Row {
    std::string method;
    std::vector<clinembed::EvalReport> reports;
  };
  std::vector<Row> rows;
  std::string fp = clinembed::config_fingerprint(cfg.train);

  std::mt19937_64 rng(cfg.train.seed);
  clinembed::EmbeddingTable shared_words = clinembed::init_word_table(
      store.vocab, cfg.train.embedding_dim, rng, cfg.word_vectors);

  rows.push_back({"word2user",
                  evaluate_embedding(clinembed::word2user(store, shared_words),
                                     store, cfg, fp)});
  clinembed::Usr2VecConfig u2v;
  u2v.epochs = cfg.usr2vec_epochs;
  u2v.negatives = cfg.usr2vec_negatives;
  u2v.batch_size = cfg.usr2vec_batch;
  u2v.lr = cfg.train.lr;
  u2v.embedding_dim = cfg.train.embedding_dim;
  u2v.unigram_power = cfg.unigram_power;
  u2v.seed = cfg.train.seed;
  rows.push_back(
      {"usr2vec",
       evaluate_embedding(
           clinembed::usr2vec_train(store, u2v, nullptr, cfg.word_vectors)
               .user_vecs,
           store, cfg, fp)});
  if (mentions.has_value()) {
    clinembed::EmbeddingTable concept_table = clinembed::init_concept_table(
        mentions->concepts, shared_words, store.vocab);
    std::vector<std::string> ids;
    for (const auto& e : mentions->concepts) ids.push_back(e.concept_id);
    rows.push_back(
        {"word2user+concept",
         evaluate_embedding(
             clinembed::word2user_concept(store, shared_words, concept_table,
                                          ids, mentions->mentions_by_note,
                                          cfg.word2user_concat),
             store, cfg, fp)});
    rows.push_back(
        {"usr2vec+concept",
         evaluate_embedding(
             clinembed::usr2vec_train(store, u2v, &*mentions, cfg.word_vectors)
                 .user_vecs,
             store, cfg, fp)});
  }
  {
    clinembed::JointTrainer trainer(
        store, mentions.has_value() ? &*mentions : nullptr, cfg.train,
        cfg.word_vectors);
    trainer.train();
    rows.push_back({"joint_" + cfg.train.encoder,
                    evaluate_embedding(trainer.params().users.weights, store,
                                       cfg, trainer.fingerprint())});
  }

  // Consolidated table: methods x tasks.
  std::vector<std::string> tasks;
  for (const auto& row : rows) {
    for (const auto& r : row.reports) {
      if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) {
        tasks.push_back(r.task);
      }
    }
  }
  std::string csv = "method";
  for (const auto& t : tasks) csv += "," + t;
  csv += "\n";
  ordered_json jrows = ordered_json::array();
  for (const auto& row : rows) {
    csv += row.method;
    ordered_json jrow;
    jrow["method"] = row.method;
    for (const auto& t : tasks) {
      auto it = std::find_if(row.reports.begin(), row.reports.end(),
                             [&](const auto& r) { return r.task == t; });
      if (it == row.reports.end()) {
        csv += ",";
      } else {
        csv += "," + std::to_string(it->value);
        jrow[t] = it->value;
      }
    }
    csv += "\n";
    jrows.push_back(std::move(jrow));
  }
  write_text(out / "report.csv", csv);
  ordered_json j;
  j["fingerprint"] = fp;
  j["rows"] = std::move(jrows);
  write_text(out / "report.json", j.dump(1, '\t') + "\n");
  write_resolved_config(cfg, out, "report");
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "clinembed: unsupervised patient embeddings from clinical notes, "
      "trained jointly on patient-document and patient-concept contrastive "
      "tasks"};
  app.require_subcommand(1);

  std::string config_path, out_flag, input, format, corpus, lexicon, mentions,
      checkpoint, word_vectors, patient;
  int k = 0, threads = 0;
  app.add_option("--config", config_path, "JSON config file (hyperparameters)")
      ->check(CLI::ExistingFile);
  app.add_option("--out", out_flag,
                 "output directory (CLINEMBED_OUT overrides)");
  app.add_option("--threads", threads, "cap training worker threads");

  CLI::App* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  CLI::App* ingest =
      app.add_subcommand("ingest", "read raw records into a corpus store");
  ingest->add_option("--input", input, "raw input file");
  ingest->add_option("--format", format,
                     "input format: jsonl | mimic_noteevents_csv");
  CLI::App* extract = app.add_subcommand(
      "extract-concepts", "match a concept lexicon over the corpus");
  extract->add_option("--corpus", corpus, "corpus store JSON");
  extract->add_option("--lexicon", lexicon, "lexicon TSV");
  CLI::App* train =
      app.add_subcommand("train", "train the joint user embedding");
  train->add_option("--corpus", corpus, "corpus store JSON");
  train->add_option("--mentions", mentions, "mention store JSON");
  train->add_option("--word-vectors", word_vectors,
                    "pretrained word2vec text file");
  CLI::App* evaluate = app.add_subcommand(
      "evaluate", "run the four evaluations on a trained checkpoint");
  evaluate->add_option("--corpus", corpus, "corpus store JSON");
  evaluate->add_option("--checkpoint", checkpoint, "trained checkpoint");
  evaluate->add_option("--mentions", mentions,
                       "mention store (enables the regression analysis)");
  CLI::App* retrieve =
      app.add_subcommand("retrieve", "rank nearest patients for a query");
  retrieve->add_option("--corpus", corpus, "corpus store JSON");
  retrieve->add_option("--checkpoint", checkpoint, "trained checkpoint");
  retrieve->add_option("--patient", patient, "patient id or key[:visit]")
      ->required();
  retrieve->add_option("--k", k, "neighbors to return");
  CLI::App* report = app.add_subcommand(
      "report", "train baselines and the joint model, tabulate all tasks");
  report->add_option("--corpus", corpus, "corpus store JSON");
  report->add_option("--mentions", mentions, "mention store JSON");
  report->add_option("--word-vectors", word_vectors,
                     "pretrained word2vec text file");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = load_run_config(config_path);
    if (!out_flag.empty()) cfg.output_dir = out_flag;
    if (!input.empty()) cfg.input = input;
    if (!format.empty()) cfg.format = format;
    if (!corpus.empty()) cfg.corpus = corpus;
    if (!lexicon.empty()) cfg.lexicon = lexicon;
    if (!mentions.empty()) cfg.mentions = mentions;
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    if (!word_vectors.empty()) cfg.word_vectors = word_vectors;
    if (threads > 0) cfg.train.threads = threads;
    if (synth->parsed()) return cmd_synth(std::move(cfg));
    if (ingest->parsed()) return cmd_ingest(std::move(cfg));
    if (extract->parsed()) return cmd_extract(std::move(cfg));
    if (train->parsed()) return cmd_train(std::move(cfg));
    if (evaluate->parsed()) return cmd_evaluate(std::move(cfg));
    if (retrieve->parsed()) {
      return cmd_retrieve(std::move(cfg), patient,
                          k > 0 ? k : cfg.retrieval_k);
    }
    if (report->parsed()) return cmd_report(std::move(cfg));
    throw std::runtime_error("no subcommand given");
  } catch (const std::exception& e) {
    nlohmann::json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
}

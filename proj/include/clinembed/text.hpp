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

#ifndef CLINEMBED_TEXT_HPP_
#define CLINEMBED_TEXT_HPP_

#include <cctype>
#include <functional>
#include <optional>
#include <regex>
#include <string>
#include <string_view>
#include <vector>

namespace clinembed {

inline constexpr const char* kNumToken = "[NUM]";
inline constexpr const char* kDateToken = "[DATE]";
inline constexpr int kMinNoteTokens = 40;

// Optional de-identification hook applied to raw text before tokenization.
// The default pipeline assumes inputs are already de-identified.
using TextScrubber = std::function<std::string(const std::string&)>;

namespace detail {

inline bool is_punct_char(char c) {
  unsigned char u = static_cast<unsigned char>(c);
  return u < 128 && std::ispunct(u) != 0;
}

inline bool all_digits(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s) {
    if (c < '0' || c > '9') return false;
  }
  return true;
}

inline bool is_date_core(const std::string& core) {
  // dd/dd/yyyy, dd-dd-yyyy, yyyy-mm-dd plus month-name forms joined by
  // separators within one whitespace chunk (e.g. 05-jan-2010, jan-05).
  static const std::regex kNumericDate(
      R"(^\d{1,2}([/-])\d{1,2}\1\d{2,4}$|^\d{4}[/-]\d{1,2}[/-]\d{1,2}$)");
  static const std::regex kMonthFirst(
      R"(^(jan|feb|mar|apr|may|jun|jul|aug|sep|oct|nov|dec)[a-z]*[-/.]\d{1,2}([-/.]\d{2,4})?$)");
  static const std::regex kDayFirst(
      R"(^\d{1,2}[-/.](jan|feb|mar|apr|may|jun|jul|aug|sep|oct|nov|dec)[a-z]*([-/.]\d{2,4})?$)");
  return std::regex_match(core, kNumericDate) ||
         std::regex_match(core, kMonthFirst) ||
         std::regex_match(core, kDayFirst);
}

// Emits one token for a punctuation run starting at i; returns index past the run.
inline size_t emit_punct_run(std::string_view s, size_t i,
                             std::vector<std::string>& out) {
  char c = s[i];
  out.emplace_back(1, c);
  while (i < s.size() && s[i] == c) ++i;
  return i;
}

inline void process_core(std::string_view core, std::vector<std::string>& out) {
  if (core.empty()) return;
  std::string owned(core);
  if (is_date_core(owned)) {
    out.emplace_back(kDateToken);
    return;
  }
  if (all_digits(core)) {
    out.emplace_back(kNumToken);
    return;
  }
  for (size_t i = 0; i < core.size(); ++i) {
    if (is_punct_char(core[i])) {
      process_core(core.substr(0, i), out);
      size_t next = emit_punct_run(core, i, out);
      process_core(core.substr(next), out);
      return;
    }
  }
  out.emplace_back(core);
}

inline void process_chunk(std::string_view raw, std::vector<std::string>& out) {
  // Placeholder tokens pass through untouched so preprocessing is idempotent.
  if (raw == kNumToken || raw == kDateToken) {
    out.emplace_back(raw);
    return;
  }
  std::string chunk(raw);
  for (char& c : chunk) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  size_t begin = 0;
  while (begin < chunk.size() && is_punct_char(chunk[begin])) {
    begin = emit_punct_run(chunk, begin, out);
  }
  size_t end = chunk.size();
  std::vector<std::string> trailing;
  while (end > begin && is_punct_char(chunk[end - 1])) {
    char c = chunk[end - 1];
    while (end > begin && chunk[end - 1] == c) --end;
    trailing.emplace_back(1, c);
  }
  // Date forms are recognized on the whole core before internal punctuation
  // is split off, so 01/02/2010 stays one token while 140/90 does not.
  process_core(std::string_view(chunk).substr(begin, end - begin), out);
  for (auto it = trailing.rbegin(); it != trailing.rend(); ++it) {
    out.push_back(*it);
  }
}

}  // namespace detail

// Lowercases, splits on whitespace, peels punctuation (collapsing repeated
// runs to a single token), and replaces digit-only and date tokens with
// placeholders. No length filter is applied.
inline std::vector<std::string> tokenize_text(const std::string& text) {
  std::vector<std::string> tokens;
  size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() &&
           std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    size_t start = i;
    while (i < text.size() &&
           !std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    if (i > start) {
      detail::process_chunk(std::string_view(text).substr(start, i - start),
                            tokens);
    }
  }
  return tokens;
}

// Full note preprocessing: scrub (optional), tokenize, and drop notes shorter
// than kMinNoteTokens. Returns std::nullopt for dropped notes.
inline std::optional<std::vector<std::string>> preprocess_text(
    const std::string& text, const TextScrubber& scrubber = nullptr) {
  std::vector<std::string> tokens =
      tokenize_text(scrubber ? scrubber(text) : text);
  if (tokens.size() < static_cast<size_t>(kMinNoteTokens)) return std::nullopt;
  return tokens;
}

inline std::string detokenize(const std::vector<std::string>& tokens) {
  std::string out;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

}  // namespace clinembed

#endif  // CLINEMBED_TEXT_HPP_

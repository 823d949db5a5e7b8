#pragma once

// ARPA back-off n-gram language model. Scores are log10 throughout; callers
// working in natural log convert at their boundary.

#include <zlib.h>

#include <charconv>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "lasr/core.hpp"

namespace lasr {

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& msg)
      : DataError("line " + std::to_string(line) + ": " + msg), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

/// (n-1)-gram history as token ids, oldest first.
using LMState = std::vector<int>;

struct NGramEntry {
  double logprob = 0.0;  // log10
  double backoff = 0.0;  // log10
};

struct VectorHash {
  std::size_t operator()(const std::vector<int>& v) const {
    std::size_t h = 0xcbf29ce484222325ULL;
    for (int x : v) {
      h ^= static_cast<std::size_t>(x) + 0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return h;
  }
};

struct WordScore {
  LMState next;
  double logprob = 0.0;  // log10
};

class NGramLM {
 public:
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kUnk = "<unk>";

  int max_order() const { return static_cast<int>(tables_.size()); }
  std::size_t vocab_size() const { return vocab_.size(); }
  const std::vector<std::string>& vocab() const { return vocab_; }

  std::size_t count(int order) const { return tables_.at(static_cast<std::size_t>(order - 1)).size(); }

  std::optional<int> id(const std::string& word) const {
    auto it = ids_.find(to_lower_ascii(word));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
  }

  bool has_unk() const { return unk_id_ >= 0; }

  /// Log10 score used for words missing from the vocabulary when no <unk> is
  /// present. Without it such words are an error.
  void set_unk_floor(std::optional<double> floor) { unk_floor_ = floor; }

  const NGramEntry* find(const std::vector<int>& ngram) const {
    if (ngram.empty() || ngram.size() > tables_.size()) return nullptr;
    const auto& table = tables_[ngram.size() - 1];
    auto it = table.find(ngram);
    return it == table.end() ? nullptr : &it->second;
  }

  /// State after the sentence-start token.
  LMState begin_state() const {
    if (bos_id_ >= 0 && find({bos_id_}) != nullptr) return {bos_id_};
    return {};
  }

  WordScore score_word(const LMState& state, const std::string& word) const {
    auto wid = id(word);
    if (!wid) {
      if (unk_id_ >= 0) {
        wid = unk_id_;
      } else if (unk_floor_) {
        return {{}, *unk_floor_};
      } else {
        throw DataError("word '" + word + "' is not in the language model and it has no <unk>");
      }
    }
    return score_id(state, *wid);
  }

  /// Katz back-off: the longest matching n-gram's probability plus the
  /// back-off weights of every longer history that was skipped.
  WordScore score_id(const LMState& state, int word) const {
    std::vector<int> hist = state;
    if (static_cast<int>(hist.size()) > max_order() - 1) {
      hist.erase(hist.begin(), hist.end() - (max_order() - 1));
    }
    double total = 0.0;
    bool found = false;
    for (std::size_t skip = 0; skip <= hist.size(); ++skip) {
      std::vector<int> ngram(hist.begin() + static_cast<std::ptrdiff_t>(skip), hist.end());
      ngram.push_back(word);
      if (const NGramEntry* e = find(ngram)) {
        total += e->logprob;
        found = true;
        break;
      }
      if (skip < hist.size()) {
        std::vector<int> ctx(hist.begin() + static_cast<std::ptrdiff_t>(skip), hist.end());
        if (const NGramEntry* b = find(ctx)) total += b->backoff;
      }
    }
    if (!found) throw DataError("token id " + std::to_string(word) + " has no unigram entry");

    WordScore out;
    out.logprob = total;
    out.next = hist;
    out.next.push_back(word);
    if (static_cast<int>(out.next.size()) > max_order() - 1) {
      out.next.erase(out.next.begin(), out.next.end() - std::max(0, max_order() - 1));
    }
    while (!out.next.empty() && find(out.next) == nullptr) out.next.erase(out.next.begin());
    return out;
  }

  double score_sentence(const std::vector<std::string>& words) const {
    LMState st = begin_state();
    double total = 0.0;
    for (const auto& w : words) {
      WordScore s = score_word(st, w);
      total += s.logprob;
      st = std::move(s.next);
    }
    return total + score_word(st, kEos).logprob;
  }

  /// Writes the model back out as ARPA, entries sorted by token string.
  void write_arpa(std::ostream& os) const {
    os << "\\data\\\n";
    for (int k = 1; k <= max_order(); ++k) os << "ngram " << k << "=" << count(k) << "\n";
    for (int k = 1; k <= max_order(); ++k) {
      os << "\n\\" << k << "-grams:\n";
      std::map<std::vector<std::string>, const NGramEntry*> sorted;
      for (const auto& [key, entry] : tables_[static_cast<std::size_t>(k - 1)]) {
        std::vector<std::string> words;
        for (int id : key) words.push_back(vocab_[static_cast<std::size_t>(id)]);
        sorted.emplace(std::move(words), &entry);
      }
      for (const auto& [words, entry] : sorted) {
        os << format_double(entry->logprob);
        for (const auto& w : words) os << '\t' << w;
        if (entry->backoff != 0.0) os << '\t' << format_double(entry->backoff);
        os << '\n';
      }
    }
    os << "\n\\end\\\n";
  }

  const std::unordered_map<std::vector<int>, NGramEntry, VectorHash>& table(int order) const {
    return tables_.at(static_cast<std::size_t>(order - 1));
  }

 private:
  friend NGramLM parse_arpa(std::istream& in);

  static std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
  }

  int intern(const std::string& w) {
    auto [it, inserted] = ids_.emplace(w, static_cast<int>(vocab_.size()));
    if (inserted) vocab_.push_back(w);
    return it->second;
  }

  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> ids_;
  std::vector<std::unordered_map<std::vector<int>, NGramEntry, VectorHash>> tables_;
  int bos_id_ = -1;
  int unk_id_ = -1;
  std::optional<double> unk_floor_;
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_double(const std::string& s) {
  double v = 0.0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  if (first != last && *first == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (res.ec != std::errc() || res.ptr != last) return std::nullopt;
  return v;
}

}  // namespace detail

/// Parses an ARPA model. Counts are checked against the \data\ header when
/// each section closes; every error carries the offending line number.
inline NGramLM parse_arpa(std::istream& in) {
  NGramLM lm;
  std::string raw;
  std::size_t line_no = 0;
  std::vector<std::size_t> declared;

  enum class Stage { preamble, header, body, done } stage = Stage::preamble;
  int section = 0;  // order of the section being read
  std::vector<std::pair<std::vector<int>, std::size_t>> entry_lines;

  auto close_section = [&](std::size_t at) {
    if (section == 0) return;
    const std::size_t have = lm.tables_[static_cast<std::size_t>(section - 1)].size();
    const std::size_t want = declared[static_cast<std::size_t>(section - 1)];
    if (have != want) {
      throw ParseError(at, "\\" + std::to_string(section) + "-grams: header declares " + std::to_string(want) +
                               " entries but " + std::to_string(have) + " were read");
    }
  };

  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = detail::trim(raw);
    if (stage == Stage::done) break;
    if (line.empty()) continue;

    if (stage == Stage::preamble) {
      if (line == "\\data\\") {
        stage = Stage::header;
        continue;
      }
      throw ParseError(line_no, "expected \\data\\ header, got '" + line + "'");
    }

    if (line == "\\end\\") {
      if (stage != Stage::body) throw ParseError(line_no, "\\end\\ before any n-gram section");
      close_section(line_no);
      if (section != static_cast<int>(declared.size())) {
        throw ParseError(line_no, "\\end\\ reached after \\" + std::to_string(section) + "-grams but header declares order " +
                                      std::to_string(declared.size()));
      }
      stage = Stage::done;
      continue;
    }

    if (line.front() == '\\') {
      // Section header "\k-grams:".
      int k = 0;
      const auto dash = line.find("-grams:");
      if (dash == std::string::npos || line.substr(dash) != "-grams:") {
        throw ParseError(line_no, "malformed section header '" + line + "'");
      }
      auto res = std::from_chars(line.data() + 1, line.data() + dash, k);
      if (res.ec != std::errc() || res.ptr != line.data() + dash) {
        throw ParseError(line_no, "malformed section header '" + line + "'");
      }
      if (declared.empty()) throw ParseError(line_no, "\\data\\ header declares no n-gram counts");
      if (k != section + 1 || k > static_cast<int>(declared.size())) {
        throw ParseError(line_no, "unexpected section \\" + std::to_string(k) + "-grams: (expected \\" +
                                      std::to_string(section + 1) + "-grams:)");
      }
      if (stage == Stage::body) close_section(line_no);
      stage = Stage::body;
      section = k;
      continue;
    }

    if (stage == Stage::header) {
      // "ngram k=count"
      if (line.rfind("ngram ", 0) != 0) throw ParseError(line_no, "expected 'ngram k=count', got '" + line + "'");
      const std::string spec = detail::trim(line.substr(6));
      const auto eq = spec.find('=');
      int k = 0;
      long long n = -1;
      if (eq == std::string::npos ||
          std::from_chars(spec.data(), spec.data() + eq, k).ptr != spec.data() + eq ||
          std::from_chars(spec.data() + eq + 1, spec.data() + spec.size(), n).ptr != spec.data() + spec.size() ||
          n < 0) {
        throw ParseError(line_no, "malformed count line '" + line + "'");
      }
      if (k != static_cast<int>(declared.size()) + 1) {
        throw ParseError(line_no, "count for order " + std::to_string(k) + " out of sequence");
      }
      declared.push_back(static_cast<std::size_t>(n));
      lm.tables_.emplace_back();
      continue;
    }

    // N-gram entry: logprob w1 .. wk [backoff]
    const auto fields = split_ws(line);
    const auto k = static_cast<std::size_t>(section);
    if (fields.size() != k + 1 && fields.size() != k + 2) {
      throw ParseError(line_no, "expected " + std::to_string(k + 1) + " or " + std::to_string(k + 2) +
                                    " fields in a " + std::to_string(k) + "-gram entry, got " +
                                    std::to_string(fields.size()));
    }
    NGramEntry entry;
    auto prob = detail::parse_double(fields[0]);
    if (!prob) throw ParseError(line_no, "bad probability '" + fields[0] + "'");
    if (*prob > 0.0) throw ParseError(line_no, "log10 probability must be <= 0, got " + fields[0]);
    entry.logprob = *prob;
    if (fields.size() == k + 2) {
      auto bo = detail::parse_double(fields[k + 1]);
      if (!bo) throw ParseError(line_no, "bad back-off weight '" + fields[k + 1] + "'");
      entry.backoff = *bo;
    }
    std::vector<int> key;
    key.reserve(k);
    for (std::size_t i = 1; i <= k; ++i) key.push_back(lm.intern(to_lower_ascii(fields[i])));
    auto [it, inserted] = lm.tables_[k - 1].emplace(key, entry);
    if (!inserted) throw ParseError(line_no, "duplicate " + std::to_string(k) + "-gram '" + line + "'");
    if (k > 1) entry_lines.emplace_back(std::move(key), line_no);
  }

  if (stage != Stage::done) throw ParseError(line_no + 1, "missing \\end\\ marker");

  for (const auto& [key, at] : entry_lines) {
    const std::vector<int> hist(key.begin(), key.end() - 1);
    if (lm.find(hist) == nullptr) throw ParseError(at, "history of this n-gram is not in the model");
  }
  // Words first seen in higher orders need a unigram for back-off to terminate.
  for (std::size_t id = 0; id < lm.vocab_.size(); ++id) {
    if (lm.find({static_cast<int>(id)}) == nullptr) {
      for (const auto& [key, at] : entry_lines) {
        if (std::find(key.begin(), key.end(), static_cast<int>(id)) != key.end()) {
          throw ParseError(at, "word '" + lm.vocab_[id] + "' has no unigram entry");
        }
      }
    }
  }
  if (auto b = lm.id(NGramLM::kBos)) lm.bos_id_ = *b;
  if (auto u = lm.id(NGramLM::kUnk)) lm.unk_id_ = *u;
  return lm;
}

inline NGramLM parse_arpa_string(const std::string& text) {
  std::istringstream in(text);
  return parse_arpa(in);
}

/// Loads a plain-text or gzip-compressed ARPA file.
inline NGramLM load_arpa(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (f == nullptr) throw DataError(path.string() + ": file not found");
  std::string text;
  char buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof(buf))) > 0) text.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw DataError(path.string() + ": read error");
  try {
    return parse_arpa_string(text);
  } catch (const ParseError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

}  // namespace lasr

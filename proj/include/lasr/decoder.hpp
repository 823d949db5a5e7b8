#pragma once

// One-pass lexicon-constrained beam search over letter emissions with an
// n-gram LM. Hypotheses sharing (LM state, trie node, previous label) are
// merged with logadd (or max). Scores are natural log; the LM's log10 scores
// are converted on entry.

#include <filesystem>
#include <fstream>
#include <numbers>
#include <string>
#include <unordered_map>
#include <vector>

#include "lasr/core.hpp"
#include "lasr/criterion.hpp"
#include "lasr/lm.hpp"

namespace lasr {

inline constexpr double kLn10 = std::numbers::ln10;

// --- Lexicon ----------------------------------------------------------------

struct Lexicon {
  std::vector<std::string> words;
  std::vector<std::vector<int>> spellings;  // grapheme ids, no silence

  std::size_t size() const { return words.size(); }

  void add(std::string word, std::vector<int> spelling, const LetterDict& dict) {
    if (spelling.empty()) throw DataError("lexicon: word '" + word + "' has an empty spelling");
    for (int g : spelling) {
      if (g < 0 || g >= dict.size() || g == dict.silence()) {
        throw DataError("lexicon: word '" + word + "' uses an invalid grapheme");
      }
    }
    words.push_back(std::move(word));
    spellings.push_back(std::move(spelling));
  }
};

/// Lexicon whose spellings are the repetition-encoded words.
inline Lexicon lexicon_from_words(const std::vector<std::string>& words, const LetterDict& dict) {
  Lexicon lex;
  for (const auto& w : words) lex.add(w, dict.encode(encode_repetitions(w)), dict);
  return lex;
}

/// Reads `word TAB grapheme grapheme ...` lines.
inline Lexicon load_lexicon(const std::filesystem::path& path, const LetterDict& dict) {
  std::ifstream in(path);
  if (!in) throw DataError("lexicon: " + path.string() + ": file not found");
  Lexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw DataError("lexicon: " + path.string() + ":" + std::to_string(line_no) + ": expected word<TAB>graphemes");
    }
    std::vector<int> spelling;
    for (const auto& tok : split_ws(line.substr(tab + 1))) {
      if (tok.size() != 1 || !dict.contains(tok[0])) {
        throw DataError("lexicon: " + path.string() + ":" + std::to_string(line_no) + ": unknown grapheme '" + tok + "'");
      }
      spelling.push_back(dict.index(tok[0]));
    }
    try {
      lex.add(to_lower_ascii(line.substr(0, tab)), std::move(spelling), dict);
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (lex.size() == 0) throw DataError("lexicon: " + path.string() + " is empty");
  return lex;
}

// --- Trie -------------------------------------------------------------------

enum class SmearMode { max, logadd };

struct TrieNode {
  std::vector<std::pair<int, int>> children;  // (grapheme, node), sorted by grapheme
  std::vector<int> words;                     // lexicon ids ending here
  double smear = kNegInf;                     // natural log

  int child(int label) const {
    for (const auto& [g, n] : children) {
      if (g == label) return n;
    }
    return -1;
  }
};

class LexiconTrie {
 public:
  static constexpr int kRoot = 0;

  const TrieNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return nodes_.size(); }

  /// Unigram LM score (natural log) of each lexicon word.
  const std::vector<double>& unigram() const { return unigram_; }

  friend LexiconTrie build_trie(const Lexicon& lex, const NGramLM& lm, SmearMode mode);

 private:
  std::vector<TrieNode> nodes_;
  std::vector<double> unigram_;
};

/// Builds the trie; each node's smear aggregates the unigram scores of the
/// words at or below it (max by default).
inline LexiconTrie build_trie(const Lexicon& lex, const NGramLM& lm, SmearMode mode = SmearMode::max) {
  if (lex.size() == 0) throw DataError("build_trie: empty lexicon");
  LexiconTrie trie;
  trie.nodes_.emplace_back();
  for (std::size_t w = 0; w < lex.size(); ++w) {
    int cur = LexiconTrie::kRoot;
    for (int g : lex.spellings[w]) {
      int next = trie.nodes_[static_cast<std::size_t>(cur)].child(g);
      if (next < 0) {
        next = static_cast<int>(trie.nodes_.size());
        auto& kids = trie.nodes_[static_cast<std::size_t>(cur)].children;
        kids.insert(std::upper_bound(kids.begin(), kids.end(), std::make_pair(g, -1)), {g, next});
        trie.nodes_.emplace_back();
      }
      cur = next;
    }
    trie.nodes_[static_cast<std::size_t>(cur)].words.push_back(static_cast<int>(w));
    trie.unigram_.push_back(lm.score_word({}, lex.words[w]).logprob * kLn10);
  }
  // Children always have larger indices than their parent.
  for (std::size_t i = trie.nodes_.size(); i-- > 0;) {
    TrieNode& n = trie.nodes_[i];
    auto combine = [&](double v) { n.smear = mode == SmearMode::max ? std::max(n.smear, v) : logadd(n.smear, v); };
    for (int w : n.words) combine(trie.unigram_[static_cast<std::size_t>(w)]);
    for (const auto& [g, c] : n.children) combine(trie.nodes_[static_cast<std::size_t>(c)].smear);
  }
  return trie;
}

// --- Search -----------------------------------------------------------------

enum class MergeMode { logadd, max };

inline MergeMode parse_merge_mode(const std::string& s) {
  if (s == "logadd") return MergeMode::logadd;
  if (s == "max") return MergeMode::max;
  throw UsageError("unknown merge mode '" + s + "' (expected logadd or max)");
}

inline std::string to_string(MergeMode m) { return m == MergeMode::logadd ? "logadd" : "max"; }

struct DecoderParams {
  double alpha = 0.0;  // LM weight
  double gamma = 0.0;  // per silence unit
  double beta = 0.0;   // per word
  int beam_size = 250;
  double beam_threshold = 25.0;
  MergeMode merge = MergeMode::logadd;
  CriterionKind mode = CriterionKind::asg;  // ctc: last emission column is blank
  int silence = 27;

  void validate() const {
    if (beam_size < 1) throw UsageError("decoder: beam_size must be >= 1");
    if (!(beam_threshold > 0.0)) throw UsageError("decoder: beam_threshold must be > 0");
  }
};

struct Hypothesis {
  int lm_state = 0;  // interned LMState
  int trie_node = LexiconTrie::kRoot;
  int last_label = -1;
  double score = kNegInf;
  double best_contribution = kNegInf;  // decides the backpointer under logadd
  int parent = -1;                     // index into the previous frame's beam
  int word = -1;                       // lexicon word emitted on entering this hypothesis
  int n_silences = 0;
};

struct WordSpan {
  int word = -1;
  int begin = 0;  // first frame, 0-based
  int end = 0;    // one past the last frame
};

struct DecodeResult {
  double score = kNegInf;
  std::vector<int> words;
  std::vector<WordSpan> spans;
  int n_silences = 0;

  std::string transcription(const Lexicon& lex) const {
    std::string s;
    for (std::size_t i = 0; i < words.size(); ++i) {
      if (i > 0) s.push_back(' ');
      s += lex.words[static_cast<std::size_t>(words[i])];
    }
    return s;
  }
};

/// Drops hypotheses more than beam_threshold below the best, then keeps the
/// beam_size best (stable on ties).
inline std::vector<Hypothesis> prune(std::vector<Hypothesis> beam, const DecoderParams& p) {
  if (beam.empty()) return beam;
  double best = kNegInf;
  for (const auto& h : beam) best = std::max(best, h.score);
  std::vector<Hypothesis> kept;
  kept.reserve(beam.size());
  for (auto& h : beam) {
    if (h.score >= best - p.beam_threshold) kept.push_back(std::move(h));
  }
  if (static_cast<int>(kept.size()) > p.beam_size) {
    std::stable_sort(kept.begin(), kept.end(),
                     [](const Hypothesis& a, const Hypothesis& b) { return a.score > b.score; });
    kept.resize(static_cast<std::size_t>(p.beam_size));
  }
  return kept;
}

class BeamSearch {
 public:
  BeamSearch(const NGramLM& lm, const LexiconTrie& trie, const Lexicon& lex, DecoderParams params)
      : lm_(lm), trie_(trie), lex_(lex), p_(params) {
    p_.validate();
  }

  /// Best-first list of finished hypotheses (at most `nbest`).
  std::vector<DecodeResult> decode(const MatrixD& e, const TransitionTable* tr, std::size_t nbest = 1) {
    if (e.rows() == 0 || e.cols() == 0) throw DataError("beam_search: empty emissions");
    if (e.cols() > 63) throw DataError("beam_search: at most 63 emission labels are supported");
    const int T = static_cast<int>(e.rows());
    const int L = static_cast<int>(e.cols());
    const int blank = p_.mode == CriterionKind::ctc ? L - 1 : -1;
    if (p_.silence < 0 || p_.silence >= L || p_.silence == blank) {
      throw DataError("beam_search: silence label outside the emission table");
    }
    if (tr != nullptr && (tr->trans.rows() < L || tr->start.size() < L)) {
      throw DataError("beam_search: transition table smaller than emission table");
    }

    states_.clear();
    state_ids_.clear();
    lm_cache_.clear();
    frames_.assign(static_cast<std::size_t>(T), {});

    Hypothesis init;
    init.lm_state = intern(lm_.begin_state());
    init.score = 0.0;

    std::vector<Hypothesis> candidates;
    std::unordered_map<std::uint64_t, int> index;
    for (int t = 0; t < T; ++t) {
      candidates.clear();
      index.clear();
      const std::vector<Hypothesis> prev_init{init};
      const std::vector<Hypothesis>& prev = t == 0 ? prev_init : frames_[static_cast<std::size_t>(t - 1)];
      for (int pi = 0; pi < static_cast<int>(prev.size()); ++pi) {
        const Hypothesis& h = prev[static_cast<std::size_t>(pi)];
        for (int l = 0; l < L; ++l) {
          double acoustic = e(t, l);
          if (tr != nullptr) acoustic += (t == 0) ? tr->start(l) : tr->trans(h.last_label, l);
          expand(h, t == 0 ? -1 : pi, l, blank, h.score + acoustic, candidates, index);
        }
      }
      if (candidates.empty()) {
        throw DataError("beam collapsed at frame " + std::to_string(t) +
                        ": no hypothesis survives; try a larger beam threshold or beam size");
      }
      frames_[static_cast<std::size_t>(t)] = prune(std::move(candidates), p_);
      candidates = {};
    }
    return finish(T, nbest);
  }

  const std::vector<Hypothesis>& frame(int t) const { return frames_.at(static_cast<std::size_t>(t)); }

 private:
  struct LmStep {
    int next = 0;
    double score = 0.0;  // natural log
  };

  int intern(const LMState& s) {
    auto [it, inserted] = state_ids_.emplace(s, static_cast<int>(states_.size()));
    if (inserted) states_.push_back(s);
    return it->second;
  }

  LmStep lm_step(int state, int word) {
    const std::uint64_t key = (static_cast<std::uint64_t>(state) << 32) | static_cast<std::uint32_t>(word);
    auto it = lm_cache_.find(key);
    if (it != lm_cache_.end()) return it->second;
    const std::string& token = word < 0 ? std::string(NGramLM::kEos) : lex_.words[static_cast<std::size_t>(word)];
    WordScore ws = lm_.score_word(states_[static_cast<std::size_t>(state)], token);
    LmStep step{intern(ws.next), ws.logprob * kLn10};
    lm_cache_.emplace(key, step);
    return step;
  }

  double offset(int node) const { return node == LexiconTrie::kRoot ? 0.0 : trie_.node(node).smear; }

  std::uint64_t key_of(int lm_state, int node, int label) const {
    const auto n_nodes = static_cast<std::uint64_t>(trie_.size());
    return (static_cast<std::uint64_t>(lm_state) * n_nodes + static_cast<std::uint64_t>(node)) * 64u +
           static_cast<std::uint64_t>(label + 1);
  }

  void merge_into(Hypothesis&& cand, std::vector<Hypothesis>& out, std::unordered_map<std::uint64_t, int>& index) {
    const std::uint64_t key = key_of(cand.lm_state, cand.trie_node, cand.last_label);
    auto it = index.find(key);
    if (it == index.end()) {
      cand.best_contribution = cand.score;
      index.emplace(key, static_cast<int>(out.size()));
      out.push_back(std::move(cand));
      return;
    }
    Hypothesis& h = out[static_cast<std::size_t>(it->second)];
    if (cand.score > h.best_contribution) {
      h.best_contribution = cand.score;
      h.parent = cand.parent;
      h.word = cand.word;
      h.n_silences = cand.n_silences;
    }
    h.score = p_.merge == MergeMode::logadd ? logadd(h.score, cand.score) : std::max(h.score, cand.score);
  }

  void expand(const Hypothesis& h, int parent, int label, int blank, double score, std::vector<Hypothesis>& out,
              std::unordered_map<std::uint64_t, int>& index) {
    Hypothesis c;
    c.lm_state = h.lm_state;
    c.trie_node = h.trie_node;
    c.last_label = label;
    c.parent = parent;
    c.n_silences = h.n_silences;
    c.score = score;

    if (label == h.last_label || label == blank) {
      merge_into(std::move(c), out, index);
      return;
    }
    if (label == p_.silence) {
      c.score += p_.gamma;
      c.n_silences += 1;
      if (h.trie_node == LexiconTrie::kRoot) {
        merge_into(std::move(c), out, index);
        return;
      }
      for (int w : trie_.node(h.trie_node).words) {
        const LmStep step = lm_step(h.lm_state, w);
        Hypothesis wc = c;
        wc.score += p_.alpha * (step.score - offset(h.trie_node)) + p_.beta;
        wc.lm_state = step.next;
        wc.trie_node = LexiconTrie::kRoot;
        wc.word = w;
        merge_into(std::move(wc), out, index);
      }
      return;
    }
    const int child = trie_.node(h.trie_node).child(label);
    if (child < 0) return;
    c.trie_node = child;
    c.score += p_.alpha * (offset(child) - offset(h.trie_node));
    merge_into(std::move(c), out, index);
  }

  struct Final {
    double score = kNegInf;
    double best_contribution = kNegInf;
    int parent = -1;
    int word = -1;  // word completed at end of utterance
  };

  std::vector<DecodeResult> finish(int T, std::size_t nbest) {
    const auto& last = frames_[static_cast<std::size_t>(T - 1)];
    std::vector<Final> finals;
    std::unordered_map<int, int> by_state;
    auto add = [&](int history, double score, int parent, int word) {
      auto it = by_state.find(history);
      if (it == by_state.end()) {
        by_state.emplace(history, static_cast<int>(finals.size()));
        finals.push_back({score, score, parent, word});
        return;
      }
      Final& f = finals[static_cast<std::size_t>(it->second)];
      if (score > f.best_contribution) {
        f.best_contribution = score;
        f.parent = parent;
        f.word = word;
      }
      f.score = p_.merge == MergeMode::logadd ? logadd(f.score, score) : std::max(f.score, score);
    };
    for (int i = 0; i < static_cast<int>(last.size()); ++i) {
      const Hypothesis& h = last[static_cast<std::size_t>(i)];
      if (h.trie_node == LexiconTrie::kRoot) {
        add(h.lm_state, h.score + p_.alpha * lm_step(h.lm_state, -1).score, i, -1);
        continue;
      }
      for (int w : trie_.node(h.trie_node).words) {
        const LmStep step = lm_step(h.lm_state, w);
        const double s = h.score + p_.alpha * (step.score - offset(h.trie_node)) + p_.beta +
                         p_.alpha * lm_step(step.next, -1).score;
        add(step.next, s, i, w);
      }
    }
    if (finals.empty()) {
      throw DataError("beam collapsed: no hypothesis ends on a word boundary; try a larger beam threshold or beam size");
    }
    std::vector<int> order(finals.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return finals[static_cast<std::size_t>(a)].score > finals[static_cast<std::size_t>(b)].score;
    });
    std::vector<DecodeResult> results;
    for (std::size_t k = 0; k < order.size() && k < nbest; ++k) {
      results.push_back(traceback(finals[static_cast<std::size_t>(order[k])], T));
    }
    return results;
  }

  DecodeResult traceback(const Final& f, int T) const {
    DecodeResult r;
    r.score = f.score;
    // (word, frame at which it was emitted) in reverse order.
    std::vector<std::pair<int, int>> emitted;
    if (f.word >= 0) emitted.emplace_back(f.word, T);
    int idx = f.parent;
    r.n_silences = frames_[static_cast<std::size_t>(T - 1)][static_cast<std::size_t>(idx)].n_silences;
    for (int t = T - 1; t >= 0 && idx >= 0; --t) {
      const Hypothesis& h = frames_[static_cast<std::size_t>(t)][static_cast<std::size_t>(idx)];
      if (h.word >= 0) emitted.emplace_back(h.word, t);
      idx = h.parent;
    }
    std::reverse(emitted.begin(), emitted.end());
    int begin = 0;
    for (std::size_t i = 0; i < emitted.size(); ++i) {
      const int end = i + 1 == emitted.size() ? T : emitted[i].second;
      r.words.push_back(emitted[i].first);
      r.spans.push_back({emitted[i].first, begin, end});
      begin = end;
    }
    return r;
  }

  const NGramLM& lm_;
  const LexiconTrie& trie_;
  const Lexicon& lex_;
  DecoderParams p_;

  std::vector<LMState> states_;
  std::unordered_map<LMState, int, VectorHash> state_ids_;
  std::unordered_map<std::uint64_t, LmStep> lm_cache_;
  std::vector<std::vector<Hypothesis>> frames_;
};

inline std::vector<DecodeResult> beam_search(const MatrixD& e, const TransitionTable* tr, const NGramLM& lm,
                                             const LexiconTrie& trie, const Lexicon& lex, const DecoderParams& params,
                                             std::size_t nbest = 1) {
  BeamSearch search(lm, trie, lex, params);
  return search.decode(e, tr, nbest);
}

}  // namespace lasr

#pragma once

// Graph-based sequence criterions. All dynamic programming runs in double
// precision regardless of the precision the emissions were produced in.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lasr/core.hpp"

namespace lasr {

// --- Grapheme inventory -----------------------------------------------------

/// The 30 output graphemes: a-z, apostrophe, silence '#', repetitions '1', '2'.
/// CTC appends an internal blank at index size().
class LetterDict {
 public:
  LetterDict() {
    for (char c = 'a'; c <= 'z'; ++c) symbols_.push_back(c);
    symbols_.push_back('\'');
    symbols_.push_back('#');
    symbols_.push_back('1');
    symbols_.push_back('2');
  }

  int size() const { return static_cast<int>(symbols_.size()); }
  int blank() const { return size(); }
  int silence() const { return 27; }
  int rep1() const { return 28; }
  int rep2() const { return 29; }

  bool contains(char c) const { return index_or_none(c).has_value(); }

  int index(char c) const {
    if (auto i = index_or_none(c)) return *i;
    throw DataError(std::string("unsupported grapheme '") + c + "'");
  }

  /// Symbol for an id; the CTC blank prints as U+2205.
  std::string symbol(int id) const {
    if (id == blank()) return "\xE2\x88\x85";
    if (id < 0 || id > blank()) throw DataError("grapheme id out of range: " + std::to_string(id));
    return std::string(1, symbols_[static_cast<std::size_t>(id)]);
  }

  std::vector<int> encode(std::string_view graphemes) const {
    std::vector<int> ids;
    ids.reserve(graphemes.size());
    for (char c : graphemes) ids.push_back(index(c));
    return ids;
  }

  std::string decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) out += symbol(id);
    return out;
  }

 private:
  std::optional<int> index_or_none(char c) const {
    for (std::size_t i = 0; i < symbols_.size(); ++i) {
      if (symbols_[i] == c) return static_cast<int>(i);
    }
    return std::nullopt;
  }

  std::vector<char> symbols_;
};

inline bool is_word_char(char c) { return (c >= 'a' && c <= 'z') || c == '\''; }

/// Rewrites runs of a repeated letter with the repetition graphemes,
/// greedily longest first: "ll" -> "l1", "lll" -> "l2", "llll" -> "l2l".
inline std::string encode_repetitions(std::string_view word) {
  std::string out;
  std::size_t i = 0;
  while (i < word.size()) {
    const char c = word[i];
    if (!is_word_char(c)) throw DataError(std::string("unsupported character '") + c + "' in word");
    std::size_t run = 1;
    while (i + run < word.size() && word[i + run] == c) ++run;
    std::size_t left = run;
    while (left > 0) {
      out.push_back(c);
      --left;
      if (left >= 2) {
        out.push_back('2');
        left -= 2;
      } else if (left == 1) {
        out.push_back('1');
        left -= 1;
      }
    }
    i += run;
  }
  return out;
}

inline std::string decode_repetitions(std::string_view graphemes) {
  std::string out;
  char prev = 0;
  for (char c : graphemes) {
    if (c == '1' || c == '2') {
      if (prev == 0) throw DataError("repetition grapheme without a preceding letter");
      out.append(c == '1' ? 1 : 2, prev);
    } else if (c == '#') {
      out.push_back(' ');
      prev = 0;
    } else {
      if (!is_word_char(c)) throw DataError(std::string("unsupported grapheme '") + c + "'");
      out.push_back(c);
      prev = c;
    }
  }
  return out;
}

/// Lowercases and keeps only [a-z'] and single spaces between words.
inline std::string normalize_transcription(std::string_view text) {
  std::string out;
  bool pending_space = false;
  for (char raw : text) {
    const char c = (raw >= 'A' && raw <= 'Z') ? static_cast<char>(raw - 'A' + 'a') : raw;
    if (is_word_char(c)) {
      if (pending_space && !out.empty()) out.push_back(' ');
      pending_space = false;
      out.push_back(c);
    } else if (c == ' ' || c == '\t') {
      pending_space = true;
    }
  }
  return out;
}

/// Training target for a transcription: words repetition-encoded, joined by
/// '#', framed by a leading and trailing '#'.
inline std::vector<int> transcription_to_target(const LetterDict& dict, std::string_view text,
                                                bool surround_silence = true) {
  const auto words = split_ws(normalize_transcription(text));
  std::string g;
  if (surround_silence) g.push_back('#');
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) g.push_back('#');
    g += encode_repetitions(words[i]);
  }
  if (surround_silence && !words.empty()) g.push_back('#');
  return dict.encode(g);
}

// --- Emissions and transitions -------------------------------------------

struct EmissionTable {
  MatrixD scores;  // T x |L|
  bool normalized = false;

  Eigen::Index frames() const { return scores.rows(); }
  Eigen::Index labels() const { return scores.cols(); }
};

struct TransitionTable {
  MatrixD trans;  // trans(i, j): score of moving from label i to label j
  VectorD start;  // score of beginning in label j

  static TransitionTable zeros(int n_labels) {
    return {MatrixD::Zero(n_labels, n_labels), VectorD::Zero(n_labels)};
  }
  int size() const { return static_cast<int>(trans.rows()); }
};

// --- Graphs ------------------------------------------------------------------

/// Time-homogeneous acceptance graph unrolled over `frames` frames: a path
/// occupies one state per frame, moving along `preds` edges between frames.
struct CriterionGraph {
  int frames = 0;
  std::vector<int> state_label;
  std::vector<std::vector<int>> preds;  // predecessors, self-loops included
  std::vector<char> initial;
  std::vector<char> accepting;
  bool uses_transitions = false;

  int num_states() const { return static_cast<int>(state_label.size()); }
};

/// Minimal number of frames a CTC path for `target` needs.
inline int ctc_min_frames(std::span<const int> target) {
  int n = static_cast<int>(target.size());
  for (std::size_t i = 1; i < target.size(); ++i) {
    if (target[i] == target[i - 1]) ++n;
  }
  return n;
}

inline CriterionGraph build_ctc_graph(std::span<const int> target, int frames, int blank) {
  if (ctc_min_frames(target) > frames) throw DataError("target longer than input");
  const int n = static_cast<int>(target.size());
  const int n_states = 2 * n + 1;
  CriterionGraph g;
  g.frames = frames;
  g.state_label.resize(n_states);
  g.preds.resize(n_states);
  g.initial.assign(n_states, 0);
  g.accepting.assign(n_states, 0);
  for (int s = 0; s < n_states; ++s) {
    const bool is_blank = (s % 2 == 0);
    g.state_label[s] = is_blank ? blank : target[(s - 1) / 2];
    g.preds[s].push_back(s);
    if (s > 0) g.preds[s].push_back(s - 1);
    if (!is_blank && s >= 3 && target[(s - 1) / 2] != target[(s - 3) / 2]) g.preds[s].push_back(s - 2);
  }
  g.initial[0] = 1;
  if (n_states > 1) g.initial[1] = 1;
  g.accepting[n_states - 1] = 1;
  if (n_states > 1) g.accepting[n_states - 2] = 1;
  return g;
}

inline CriterionGraph build_asg_graph(std::span<const int> target, int frames) {
  const int n = static_cast<int>(target.size());
  if (n < 1) throw DataError("empty target");
  if (frames < n) throw DataError("target longer than input");
  CriterionGraph g;
  g.frames = frames;
  g.uses_transitions = true;
  g.state_label.assign(target.begin(), target.end());
  g.preds.resize(n);
  g.initial.assign(n, 0);
  g.accepting.assign(n, 0);
  for (int s = 0; s < n; ++s) {
    g.preds[s].push_back(s);
    if (s > 0) g.preds[s].push_back(s - 1);
  }
  g.initial[0] = 1;
  g.accepting[n - 1] = 1;
  return g;
}

inline CriterionGraph build_full_graph(int n_labels, int frames) {
  if (n_labels < 1 || frames < 1) throw DataError("full graph needs at least one label and one frame");
  CriterionGraph g;
  g.frames = frames;
  g.uses_transitions = true;
  g.state_label.resize(n_labels);
  g.preds.resize(n_labels);
  g.initial.assign(n_labels, 1);
  g.accepting.assign(n_labels, 1);
  for (int s = 0; s < n_labels; ++s) {
    g.state_label[s] = s;
    for (int p = 0; p < n_labels; ++p) g.preds[s].push_back(p);
  }
  return g;
}

// --- Forward / backward ---------------------------------------------------

struct ForwardBackward {
  double score = kNegInf;
  MatrixD grad_emissions;  // d score / d emissions (state posteriors per label)
  MatrixD grad_trans;      // empty unless the graph uses transitions
  VectorD grad_start;
};

namespace detail {

inline void check_inputs(const CriterionGraph& g, const MatrixD& e, const TransitionTable* tr) {
  if (e.rows() != g.frames) {
    throw DataError("emission frames (" + std::to_string(e.rows()) + ") do not match graph frames (" +
                    std::to_string(g.frames) + ")");
  }
  for (int lab : g.state_label) {
    if (lab < 0 || lab >= e.cols()) throw DataError("graph label outside emission table");
  }
  if (g.uses_transitions && tr != nullptr) {
    if (tr->trans.rows() < e.cols() || tr->trans.cols() < e.cols() || tr->start.size() < e.cols()) {
      throw DataError("transition table smaller than emission table");
    }
  }
}

inline double edge_score(const CriterionGraph& g, const TransitionTable* tr, int from, int to) {
  if (!g.uses_transitions || tr == nullptr) return 0.0;
  return tr->trans(g.state_label[from], g.state_label[to]);
}

inline double start_score(const CriterionGraph& g, const TransitionTable* tr, int s) {
  if (!g.uses_transitions || tr == nullptr) return 0.0;
  return tr->start(g.state_label[s]);
}

inline MatrixD forward_table(const CriterionGraph& g, const MatrixD& e, const TransitionTable* tr) {
  const int S = g.num_states();
  MatrixD alpha = MatrixD::Constant(g.frames, S, kNegInf);
  for (int s = 0; s < S; ++s) {
    if (g.initial[s]) alpha(0, s) = e(0, g.state_label[s]) + start_score(g, tr, s);
  }
  std::vector<double> terms;
  for (int t = 1; t < g.frames; ++t) {
    for (int s = 0; s < S; ++s) {
      terms.clear();
      for (int p : g.preds[s]) {
        if (alpha(t - 1, p) != kNegInf) terms.push_back(alpha(t - 1, p) + edge_score(g, tr, p, s));
      }
      if (!terms.empty()) alpha(t, s) = e(t, g.state_label[s]) + logadd(terms);
    }
  }
  return alpha;
}

}  // namespace detail

/// logadd over all accepted paths of the summed emission (and transition) scores.
inline double forward_score(const CriterionGraph& g, const MatrixD& e, const TransitionTable* tr = nullptr) {
  detail::check_inputs(g, e, tr);
  const MatrixD alpha = detail::forward_table(g, e, tr);
  double z = kNegInf;
  for (int s = 0; s < g.num_states(); ++s) {
    if (g.accepting[s]) z = logadd(z, alpha(g.frames - 1, s));
  }
  return z;
}

/// Forward score together with its exact gradient (posterior occupancies).
inline ForwardBackward forward_backward(const CriterionGraph& g, const MatrixD& e,
                                        const TransitionTable* tr = nullptr) {
  detail::check_inputs(g, e, tr);
  const int S = g.num_states();
  const int T = g.frames;
  const MatrixD alpha = detail::forward_table(g, e, tr);

  ForwardBackward out;
  for (int s = 0; s < S; ++s) {
    if (g.accepting[s]) out.score = logadd(out.score, alpha(T - 1, s));
  }
  if (out.score == kNegInf) throw DataError("no accepted path through the graph");

  // beta(t, s): logadd of path continuations after frame t, emission at t excluded.
  MatrixD beta = MatrixD::Constant(T, S, kNegInf);
  for (int s = 0; s < S; ++s) {
    if (g.accepting[s]) beta(T - 1, s) = 0.0;
  }
  for (int t = T - 1; t >= 1; --t) {
    for (int s = 0; s < S; ++s) {
      const double ahead = beta(t, s);
      if (ahead == kNegInf) continue;
      const double into = e(t, g.state_label[s]) + ahead;
      for (int p : g.preds[s]) beta(t - 1, p) = logadd(beta(t - 1, p), into + detail::edge_score(g, tr, p, s));
    }
  }

  out.grad_emissions = MatrixD::Zero(e.rows(), e.cols());
  const bool want_trans = g.uses_transitions && tr != nullptr;
  if (want_trans) {
    out.grad_trans = MatrixD::Zero(tr->trans.rows(), tr->trans.cols());
    out.grad_start = VectorD::Zero(tr->start.size());
  }
  for (int t = 0; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      if (alpha(t, s) == kNegInf || beta(t, s) == kNegInf) continue;
      const double post = std::exp(alpha(t, s) + beta(t, s) - out.score);
      out.grad_emissions(t, g.state_label[s]) += post;
      if (want_trans && t == 0) out.grad_start(g.state_label[s]) += post;
      if (want_trans && t > 0) {
        const double tail = e(t, g.state_label[s]) + beta(t, s) - out.score;
        for (int p : g.preds[s]) {
          if (alpha(t - 1, p) == kNegInf) continue;
          const double edge = detail::edge_score(g, tr, p, s);
          out.grad_trans(g.state_label[p], g.state_label[s]) += std::exp(alpha(t - 1, p) + edge + tail);
        }
      }
    }
  }
  return out;
}

// --- Losses ---------------------------------------------------------------

struct CtcResult {
  double loss = 0.0;
  MatrixD grad;  // d loss / d raw scores
};

/// CTC on raw scores: log-softmax is applied internally and chained into the
/// gradient. `blank` defaults to the last column.
inline CtcResult ctc_loss(const MatrixD& raw, std::span<const int> target, int blank = -1) {
  if (raw.rows() == 0) throw DataError("ctc_loss: empty emissions");
  if (blank < 0) blank = static_cast<int>(raw.cols()) - 1;
  const MatrixD logp = log_softmax(raw);
  const CriterionGraph g = build_ctc_graph(target, static_cast<int>(raw.rows()), blank);
  const ForwardBackward fb = forward_backward(g, logp);
  CtcResult r;
  r.loss = -fb.score;
  // d(-score)/d raw = softmax - posterior, since each posterior row sums to 1.
  r.grad = logp.array().exp().matrix() - fb.grad_emissions;
  return r;
}

struct AsgResult {
  double loss = 0.0;
  MatrixD grad_emissions;
  MatrixD grad_trans;
  VectorD grad_start;
};

inline AsgResult asg_loss(const MatrixD& raw, const TransitionTable& tr, std::span<const int> target) {
  if (raw.rows() == 0) throw DataError("asg_loss: empty emissions");
  const int T = static_cast<int>(raw.rows());
  const CriterionGraph num_graph = build_asg_graph(target, T);
  const CriterionGraph den_graph = build_full_graph(static_cast<int>(raw.cols()), T);
  const ForwardBackward num = forward_backward(num_graph, raw, &tr);
  const ForwardBackward den = forward_backward(den_graph, raw, &tr);
  AsgResult r;
  r.loss = den.score - num.score;
  r.grad_emissions = den.grad_emissions - num.grad_emissions;
  r.grad_trans = den.grad_trans - num.grad_trans;
  r.grad_start = den.grad_start - num.grad_start;
  return r;
}

// --- Viterbi --------------------------------------------------------------

enum class CriterionKind { ctc, asg };

inline std::string to_string(CriterionKind k) { return k == CriterionKind::ctc ? "ctc" : "asg"; }

inline CriterionKind parse_criterion(const std::string& s) {
  if (s == "ctc") return CriterionKind::ctc;
  if (s == "asg") return CriterionKind::asg;
  throw UsageError("unknown criterion '" + s + "' (expected ctc or asg)");
}

struct Alignment {
  std::vector<int> labels;      // one label per frame
  std::vector<double> cumulative;  // running path score after each frame
  double score = kNegInf;
};

/// Best accepted path. On exact ties the path that leaves each state as late
/// as possible wins.
inline Alignment viterbi(const CriterionGraph& g, const MatrixD& e, const TransitionTable* tr = nullptr) {
  detail::check_inputs(g, e, tr);
  const int S = g.num_states();
  const int T = g.frames;
  MatrixD delta = MatrixD::Constant(T, S, kNegInf);
  Eigen::MatrixXi back = Eigen::MatrixXi::Constant(T, S, -1);
  for (int s = 0; s < S; ++s) {
    if (g.initial[s]) delta(0, s) = e(0, g.state_label[s]) + detail::start_score(g, tr, s);
  }
  for (int t = 1; t < T; ++t) {
    for (int s = 0; s < S; ++s) {
      double best = kNegInf;
      int arg = -1;
      // Advancing predecessors first (highest index first), self-loop last,
      // with strict improvement required to replace.
      auto consider = [&](int p) {
        if (delta(t - 1, p) == kNegInf) return;
        const double v = delta(t - 1, p) + detail::edge_score(g, tr, p, s);
        if (arg < 0 || v > best) {
          best = v;
          arg = p;
        }
      };
      std::vector<int> order;
      for (int p : g.preds[s]) {
        if (p != s) order.push_back(p);
      }
      std::sort(order.begin(), order.end(), std::greater<>());
      for (int p : order) consider(p);
      for (int p : g.preds[s]) {
        if (p == s) consider(p);
      }
      if (arg >= 0) {
        delta(t, s) = best + e(t, g.state_label[s]);
        back(t, s) = arg;
      }
    }
  }
  int end = -1;
  double best = kNegInf;
  for (int s = S - 1; s >= 0; --s) {
    if (g.accepting[s] && delta(T - 1, s) != kNegInf && (end < 0 || delta(T - 1, s) > best)) {
      best = delta(T - 1, s);
      end = s;
    }
  }
  if (end < 0) throw DataError("no accepted path through the graph");

  std::vector<int> states(T);
  states[T - 1] = end;
  for (int t = T - 1; t > 0; --t) states[t - 1] = back(t, states[t]);

  Alignment a;
  a.score = best;
  a.labels.resize(T);
  a.cumulative.resize(T);
  double acc = 0.0;
  for (int t = 0; t < T; ++t) {
    const int s = states[t];
    a.labels[t] = g.state_label[s];
    acc += e(t, g.state_label[s]);
    acc += (t == 0) ? detail::start_score(g, tr, s) : detail::edge_score(g, tr, states[t - 1], s);
    a.cumulative[t] = acc;
  }
  return a;
}

/// Forced alignment of `target`. CTC mode normalizes the raw scores with
/// log-softmax and uses the last column as blank; ASG mode scores raw
/// emissions plus transitions.
inline Alignment viterbi_align(const MatrixD& raw, const TransitionTable* tr, std::span<const int> target,
                               CriterionKind mode) {
  if (raw.rows() == 0) throw DataError("viterbi_align: empty emissions");
  const int T = static_cast<int>(raw.rows());
  if (mode == CriterionKind::ctc) {
    const MatrixD logp = log_softmax(raw);
    return viterbi(build_ctc_graph(target, T, static_cast<int>(raw.cols()) - 1), logp);
  }
  return viterbi(build_asg_graph(target, T), raw, tr);
}

/// Collapses a frame labelling: merges repeats, drops `blank` (pass -1 for none).
inline std::vector<int> collapse_path(std::span<const int> labels, int blank) {
  std::vector<int> out;
  int prev = -2;
  for (int l : labels) {
    if (l != prev && l != blank) out.push_back(l);
    prev = l;
  }
  return out;
}

}  // namespace lasr

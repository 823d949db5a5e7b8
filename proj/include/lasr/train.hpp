#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "lasr/core.hpp"
#include "lasr/criterion.hpp"
#include "lasr/features.hpp"
#include "lasr/model.hpp"

namespace lasr {

// --- Optimization -------------------------------------------------------------

template <typename Real>
double global_norm(const ParamSet<Real>& g) {
  double sq = 0.0;
  for (const auto& t : g.tensors) sq += t.template cast<double>().squaredNorm();
  return std::sqrt(sq);
}

enum class ClipMode {
  max_norm,  // rescale only when the norm exceeds epsilon
  literal,   // always rescale to max(norm, epsilon); scales small gradients up
};

/// Global-norm clipping in place. Returns the norm before clipping.
template <typename Real>
double clip_gradient(ParamSet<Real>& g, double epsilon, ClipMode mode = ClipMode::max_norm) {
  if (!(epsilon > 0.0)) throw UsageError("clip_gradient: epsilon must be > 0");
  const double norm = global_norm(g);
  if (norm == 0.0) return norm;
  double scale = 1.0;
  if (mode == ClipMode::max_norm) {
    if (norm <= epsilon) return norm;
    scale = epsilon / norm;
  } else {
    scale = std::max(norm, epsilon) / norm;
  }
  for (auto& t : g.tensors) t *= static_cast<Real>(scale);
  return norm;
}

template <typename Real>
struct OptimState {
  double learning_rate = 0.0;
  double momentum = 0.9;
  ParamSet<Real> velocity;
};

/// Classical momentum: v <- mu v - lr g; theta <- theta + v.
template <typename Real>
void sgd_momentum_step(ParamSet<Real>& params, const ParamSet<Real>& grads, OptimState<Real>& opt) {
  if (grads.size() != params.size()) throw DataError("sgd: gradient count does not match parameters");
  if (opt.velocity.size() == 0) opt.velocity = params.zeros_like();
  if (opt.velocity.size() != params.size()) throw DataError("sgd: velocity count does not match parameters");
  const auto mu = static_cast<Real>(opt.momentum);
  const auto lr = static_cast<Real>(opt.learning_rate);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& theta = params.tensors[i];
    const auto& g = grads.tensors[i];
    auto& v = opt.velocity.tensors[i];
    if (g.rows() != theta.rows() || g.cols() != theta.cols() || v.rows() != theta.rows() || v.cols() != theta.cols()) {
      throw DataError("sgd: shape mismatch for " + (i < params.names.size() ? params.names[i] : std::to_string(i)));
    }
    v = mu * v - lr * g;
    theta += v;
  }
}

// --- Metrics ----------------------------------------------------------------

/// Levenshtein distance with unit costs.
template <typename Seq>
std::size_t edit_distance(const Seq& ref, const Seq& hyp) {
  const std::size_t n = hyp.size();
  std::vector<std::size_t> row(n + 1);
  std::iota(row.begin(), row.end(), std::size_t{0});
  for (std::size_t i = 1; i <= ref.size(); ++i) {
    std::size_t diag = row[0];
    row[0] = i;
    for (std::size_t j = 1; j <= n; ++j) {
      const std::size_t up = row[j];
      const std::size_t sub = diag + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      row[j] = std::min({up + 1, row[j - 1] + 1, sub});
      diag = up;
    }
  }
  return row[n];
}

inline double error_rate(std::size_t distance, std::size_t ref_len) {
  return static_cast<double>(distance) / static_cast<double>(std::max<std::size_t>(1, ref_len));
}

/// Letter error rate over characters (spaces included).
inline double ler(const std::string& ref, const std::string& hyp) {
  return error_rate(edit_distance(ref, hyp), ref.size());
}

inline double wer(const std::string& ref, const std::string& hyp) {
  const auto r = split_ws(ref);
  return error_rate(edit_distance(r, split_ws(hyp)), r.size());
}

/// Error counts accumulated over a corpus.
struct ErrorTally {
  std::size_t letter_errors = 0, letters = 0, word_errors = 0, words = 0;

  void add(const std::string& ref, const std::string& hyp) {
    letter_errors += edit_distance(ref, hyp);
    letters += ref.size();
    const auto r = split_ws(ref);
    word_errors += edit_distance(r, split_ws(hyp));
    words += r.size();
  }
  double ler() const { return error_rate(letter_errors, letters); }
  double wer() const { return error_rate(word_errors, words); }
};

/// Frame-wise argmax then collapse: CTC drops blanks (last column) and merges
/// repeats; ASG merges repeats. Repetition graphemes are expanded and '#'
/// separates words.
inline std::string greedy_decode(const MatrixD& e, CriterionKind mode, const LetterDict& dict = {}) {
  std::vector<int> best(static_cast<std::size_t>(e.rows()));
  for (Eigen::Index t = 0; t < e.rows(); ++t) {
    Eigen::Index arg = 0;
    e.row(t).maxCoeff(&arg);
    best[static_cast<std::size_t>(t)] = static_cast<int>(arg);
  }
  const int blank = mode == CriterionKind::ctc ? static_cast<int>(e.cols()) - 1 : -1;
  std::string graphemes;
  for (int g : collapse_path(best, blank)) {
    if (g < dict.size()) graphemes += dict.symbol(g);
  }
  // A repetition grapheme right after '#' or at the start has nothing to repeat.
  std::string cleaned;
  for (char c : graphemes) {
    if ((c == '1' || c == '2') && (cleaned.empty() || cleaned.back() == '#' || cleaned.back() == '1' || cleaned.back() == '2')) {
      continue;
    }
    cleaned.push_back(c);
  }
  return normalize_transcription(decode_repetitions(cleaned));
}

// --- Data ---------------------------------------------------------------------

struct ManifestEntry {
  std::string id;
  std::filesystem::path path;
  std::string transcription;
};

using Manifest = std::vector<ManifestEntry>;

/// TSV `id<TAB>path<TAB>transcription`; relative paths resolve against the
/// manifest's directory; transcriptions are normalized on ingest.
inline Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("manifest: file not found (" + path.string() + ")");
  Manifest m;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split_char(line, '\t');
    if (fields.size() != 3) {
      throw DataError("manifest: " + path.string() + ":" + std::to_string(line_no) +
                      ": expected id<TAB>path<TAB>transcription");
    }
    ManifestEntry e;
    e.id = fields[0];
    e.path = fields[1];
    if (e.path.is_relative()) e.path = path.parent_path() / e.path;
    e.transcription = normalize_transcription(fields[2]);
    m.push_back(std::move(e));
  }
  if (m.empty()) throw DataError("manifest: " + path.string() + " has no entries");
  return m;
}

/// Normalized (unpadded) features for an audio (.wav) or feature file.
inline FeatureSequence load_features(const std::filesystem::path& path) {
  if (path.extension() == ".wav") return normalize(compute_mfsc(read_wav(path)));
  return read_feature_file(path);
}

struct Utterance {
  std::string id;
  std::string transcription;
  std::vector<int> target;
  MatrixF padded;  // normalized features with the model's padding applied
  Eigen::Index frames = 0;
};

inline Utterance make_utterance(std::string id, const FeatureSequence& features, std::string transcription,
                                std::int64_t padding, const LetterDict& dict = {}) {
  Utterance u;
  u.id = std::move(id);
  u.transcription = normalize_transcription(transcription);
  u.target = transcription_to_target(dict, u.transcription);
  u.frames = features.num_frames();
  u.padded = pad(features, padding).frames;
  return u;
}

// --- Training -------------------------------------------------------------------

/// Acoustic model plus (for ASG) its transition scores.
struct AcousticModel {
  Model<float> net;
  CriterionKind criterion = CriterionKind::asg;
  ParamSet<float> transitions;  // "transitions.trans" (L x L), "transitions.start" (1 x L); empty for CTC

  static AcousticModel create(const ArchSpec& arch, CriterionKind kind, std::uint64_t seed) {
    AcousticModel m;
    m.criterion = kind;
    const int outputs = arch.n_labels + (kind == CriterionKind::ctc ? 1 : 0);
    m.net = Model<float>(arch, outputs, seed);
    if (kind == CriterionKind::asg) {
      m.transitions.names = {"transitions.trans", "transitions.start"};
      m.transitions.tensors = {MatrixF::Zero(arch.n_labels, arch.n_labels), MatrixF::Zero(1, arch.n_labels)};
    }
    return m;
  }

  TransitionTable transition_table() const {
    if (transitions.size() != 2) return TransitionTable::zeros(net.n_outputs());
    TransitionTable tr;
    tr.trans = transitions.tensors[0].cast<double>();
    tr.start = transitions.tensors[1].row(0).transpose().cast<double>();
    return tr;
  }

  MatrixD emissions(const MatrixF& padded, Mode mode = Mode::eval, std::uint64_t seed = 0) const {
    return net.forward(padded, mode, seed).cast<double>();
  }
};

struct TrainOptions {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double clip = 0.2;
  ClipMode clip_mode = ClipMode::max_norm;
  int batch_size = 4;
  std::uint64_t seed = 0;
};

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;      // mean per utterance
  double train_ler = 0.0;  // greedy, on train-mode emissions
  int skipped = 0;
  int utterances = 0;
  double seconds = 0.0;
};

struct UtteranceGrad {
  double loss = 0.0;
  MatrixD grad_emissions;
  MatrixD grad_trans;
  VectorD grad_start;
};

inline bool feasible(const Utterance& u, CriterionKind kind) {
  const auto T = static_cast<int>(u.frames);
  if (kind == CriterionKind::ctc) return ctc_min_frames(u.target) <= T;
  return static_cast<int>(u.target.size()) <= T && !u.target.empty();
}

inline UtteranceGrad criterion_loss(const MatrixD& emissions, const AcousticModel& m, std::span<const int> target) {
  UtteranceGrad g;
  if (m.criterion == CriterionKind::ctc) {
    CtcResult r = ctc_loss(emissions, target);
    g.loss = r.loss;
    g.grad_emissions = std::move(r.grad);
  } else {
    const TransitionTable tr = m.transition_table();
    AsgResult r = asg_loss(emissions, tr, target);
    g.loss = r.loss;
    g.grad_emissions = std::move(r.grad_emissions);
    g.grad_trans = std::move(r.grad_trans);
    g.grad_start = std::move(r.grad_start);
  }
  return g;
}

class Trainer {
 public:
  Trainer(AcousticModel& model, TrainOptions opts) : model_(model), opts_(opts) {
    if (opts_.batch_size < 1) throw UsageError("train: batch size must be >= 1");
    opt_.learning_rate = opts_.learning_rate;
    opt_.momentum = opts_.momentum;
  }

  /// One pass over `data` in a seeded shuffled order; the batch gradient is
  /// the mean over the batch's utterances, clipped on its global norm.
  EpochStats train_epoch(const std::vector<Utterance>& data, int epoch) {
    if (data.empty()) throw DataError("train: empty manifest");
    const auto start = std::chrono::steady_clock::now();
    const std::uint64_t epoch_seed = mix_seed(opts_.seed, static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::mt19937_64 rng(epoch_seed);
    std::shuffle(order.begin(), order.end(), rng);

    EpochStats stats;
    stats.epoch = epoch;
    ErrorTally tally;
    double loss_sum = 0.0;
    const LetterDict dict;

    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(opts_.batch_size)) {
      ParamSet<float> grads = model_.net.params().zeros_like();
      ParamSet<float> tgrads = model_.transitions.zeros_like();
      int used = 0;
      const std::size_t end = std::min(order.size(), b + static_cast<std::size_t>(opts_.batch_size));
      for (std::size_t k = b; k < end; ++k) {
        const Utterance& u = data[order[k]];
        if (!feasible(u, model_.criterion)) {
          ++stats.skipped;
          continue;
        }
        ForwardCache<float> cache;
        const MatrixD em = model_.net.forward(u.padded, Mode::train, mix_seed(epoch_seed, order[k]), &cache).cast<double>();
        UtteranceGrad ug = criterion_loss(em, model_, u.target);
        if (!std::isfinite(ug.loss)) throw NumericError("train: non-finite loss on utterance " + u.id);
        loss_sum += ug.loss;
        tally.add(u.transcription, greedy_decode(em, model_.criterion, dict));
        const ParamSet<float> g = model_.net.backward(cache, ug.grad_emissions.cast<float>());
        for (std::size_t i = 0; i < grads.size(); ++i) grads.tensors[i] += g.tensors[i];
        if (tgrads.size() == 2) {
          tgrads.tensors[0] += ug.grad_trans.cast<float>();
          tgrads.tensors[1].row(0) += ug.grad_start.transpose().cast<float>();
        }
        ++used;
      }
      if (used == 0) continue;
      stats.utterances += used;

      ParamSet<float> all_grads = std::move(grads);
      for (std::size_t i = 0; i < tgrads.size(); ++i) {
        all_grads.names.push_back(tgrads.names[i]);
        all_grads.tensors.push_back(std::move(tgrads.tensors[i]));
      }
      for (auto& t : all_grads.tensors) t /= static_cast<float>(used);
      clip_gradient(all_grads, opts_.clip, opts_.clip_mode);
      step(all_grads);
    }
    stats.loss = stats.utterances > 0 ? loss_sum / stats.utterances : 0.0;
    stats.train_ler = tally.ler();
    stats.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return stats;
  }

 private:
  void step(const ParamSet<float>& grads) {
    ParamSet<float> all = std::move(model_.net.params());
    const std::size_t n_model = all.size();
    for (std::size_t i = 0; i < model_.transitions.size(); ++i) {
      all.names.push_back(model_.transitions.names[i]);
      all.tensors.push_back(std::move(model_.transitions.tensors[i]));
    }
    sgd_momentum_step(all, grads, opt_);
    for (std::size_t i = 0; i < model_.transitions.size(); ++i) {
      model_.transitions.tensors[i] = std::move(all.tensors[n_model + i]);
    }
    all.names.resize(n_model);
    all.tensors.resize(n_model);
    model_.net.params() = std::move(all);
  }

  AcousticModel& model_;
  TrainOptions opts_;
  OptimState<float> opt_;
};

}  // namespace lasr

// Acceptance checks: one PASS/FAIL line per criterion, nonzero exit on any failure.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "decoder_fixture.hpp"
#include "lasr/lasr.hpp"
#include "oracles.hpp"

using namespace lasr;

namespace {

struct Verdict {
  bool pass = true;
  std::string detail;
};

class Timer {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof(buf), f, a);
  return buf;
}

MatrixD random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  MatrixD m(rows, cols);
  for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = d(rng);
  return m;
}

std::vector<int> random_target(std::mt19937_64& rng, int len, int n, bool distinct_neighbours) {
  std::uniform_int_distribution<int> pick(0, n - 1);
  std::vector<int> t;
  while (static_cast<int>(t.size()) < len) {
    const int l = pick(rng);
    if (distinct_neighbours && !t.empty() && t.back() == l) continue;
    t.push_back(l);
  }
  return t;
}

Verdict ac1_forward_oracle() {
  Timer timer;
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> Ld(2, 4), Td(1, 6), Nd(1, 3);
  double worst = 0.0;
  int checked = 0;
  for (int inst = 0; inst < 200; ++inst) {
    const int L = Ld(rng), T = Td(rng);
    const MatrixD e = random_matrix(rng, T, L);
    const TransitionTable tr{random_matrix(rng, L, L), random_matrix(rng, L, 1).col(0)};
    // CTC uses the last label as blank.
    std::vector<int> ctc_target;
    do {
      ctc_target = random_target(rng, std::min(Nd(rng), T), L - 1, false);
    } while (ctc_min_frames(ctc_target) > T);
    const auto ctc_ref = oracle::enumerate(
        L, T, [&](const std::vector<int>& p) { return oracle::ctc_collapse(p, L - 1) == ctc_target; },
        [&](const std::vector<int>& p) { return oracle::path_score(p, e); });
    worst = std::max(worst, std::abs(forward_score(build_ctc_graph(ctc_target, T, L - 1), e) - ctc_ref.logadd));

    const auto asg_target = random_target(rng, std::min(Nd(rng), T), L, true);
    const auto asg_ref = oracle::enumerate(
        L, T, [&](const std::vector<int>& p) { return oracle::merge_repeats(p) == asg_target; },
        [&](const std::vector<int>& p) { return oracle::path_score(p, e, &tr.trans, &tr.start); });
    worst = std::max(worst, std::abs(forward_score(build_asg_graph(asg_target, T), e, &tr) - asg_ref.logadd));
    checked += 2;
  }
  const double s = timer.seconds();
  return {worst <= 1e-10 && s < 5.0, std::to_string(checked) + " scores, max |diff| " + fmt("%.2e", worst) +
                                         ", " + fmt("%.2f s", s)};
}

Verdict ac2_closed_forms() {
  const std::vector<int> a = {0};
  const double ctc = ctc_loss(MatrixD::Constant(2, 2, std::log(0.5)), a).loss;
  const double asg = asg_loss(MatrixD::Zero(2, 2), TransitionTable::zeros(2), a).loss;
  const double dc = std::abs(ctc - std::log(4.0 / 3.0)), da = std::abs(asg - std::log(4.0));
  return {dc <= 1e-12 && da <= 1e-12, "ctc " + fmt("%.17g", ctc) + " asg " + fmt("%.17g", asg)};
}

Verdict ac3_gradients() {
  Timer timer;
  std::mt19937_64 rng(303);
  std::uniform_int_distribution<int> Ld(2, 5), Td(2, 7), Nd(1, 3);
  double worst = 0.0;
  for (int inst = 0; inst < 50; ++inst) {
    const int L = Ld(rng), T = Td(rng);
    MatrixD raw = random_matrix(rng, T, L);
    std::vector<int> ct;
    do {
      ct = random_target(rng, std::min(Nd(rng), T), L - 1, false);
    } while (ctc_min_frames(ct) > T);
    const CtcResult c = ctc_loss(raw, ct);
    worst = std::max(worst, oracle::relative_error(
                                c.grad, oracle::numeric_gradient(raw, [&] { return ctc_loss(raw, ct).loss; })));

    MatrixD e = random_matrix(rng, T, L);
    MatrixD trans = random_matrix(rng, L, L, 0.5);
    MatrixD start = random_matrix(rng, L, 1, 0.5);
    const auto at = random_target(rng, std::min(Nd(rng), T), L, true);
    auto loss = [&] { return asg_loss(e, TransitionTable{trans, start.col(0)}, at).loss; };
    const AsgResult r = asg_loss(e, TransitionTable{trans, start.col(0)}, at);
    worst = std::max(worst, oracle::relative_error(r.grad_emissions, oracle::numeric_gradient(e, loss)));
    worst = std::max(worst, oracle::relative_error(r.grad_trans, oracle::numeric_gradient(trans, loss)));
    worst = std::max(worst, oracle::relative_error(MatrixD(r.grad_start), oracle::numeric_gradient(start, loss)));
  }

  // Whole model through asg_loss, train mode with a fixed dropout stream.
  ArchSpec a;
  a.n_conv_layers = 3;
  a.hu_first = 12;
  a.hu_last = 20;
  a.kw_first = 3;
  a.kw_last = 5;
  a.fc_size = 24;
  a.input_dim = 8;
  a.dropout_first = 0.8;
  a.dropout_last = 0.7;
  Model<double> m(a, a.n_labels, 7);
  const auto n_params = m.params().num_elements();
  const MatrixD x = random_matrix(rng, 6 + m.padding(), a.input_dim);
  MatrixD trans = random_matrix(rng, a.n_labels, a.n_labels, 0.3);
  MatrixD start = random_matrix(rng, a.n_labels, 1, 0.3);
  const std::vector<int> target = transcription_to_target(LetterDict{}, "ab");
  auto loss = [&] { return asg_loss(m.forward(x, Mode::train, 5), TransitionTable{trans, start.col(0)}, target).loss; };
  ForwardCache<double> cache;
  const MatrixD em = m.forward(x, Mode::train, 5, &cache);
  const AsgResult r = asg_loss(em, TransitionTable{trans, start.col(0)}, target);
  const ParamSet<double> g = m.backward(cache, r.grad_emissions);
  double model_worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    model_worst = std::max(model_worst, oracle::relative_error(g.tensors[i], oracle::numeric_gradient(m.params().tensors[i], loss)));
  }
  model_worst = std::max(model_worst, oracle::relative_error(r.grad_trans, oracle::numeric_gradient(trans, loss)));
  const double s = timer.seconds();
  return {worst < 1e-6 && model_worst < 1e-5 && n_params <= 10000 && s < 60.0,
          "criterion max rel err " + fmt("%.2e", worst) + ", model (" + std::to_string(n_params) + " params) " +
              fmt("%.2e", model_worst) + ", " + fmt("%.2f s", s)};
}

Verdict ac4_asg_is_blank_free_ctc() {
  std::mt19937_64 rng(404);
  std::uniform_int_distribution<int> Ld(2, 4), Td(1, 6), Nd(1, 3);
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const int L = Ld(rng), T = Td(rng);
    const MatrixD raw = random_matrix(rng, T, L, 2.0);
    const auto target = random_target(rng, std::min(Nd(rng), T), L, true);
    const oracle::Mat lp = oracle::log_softmax_rows(raw);
    const double ref = -oracle::enumerate(
                            L, T, [&](const std::vector<int>& p) { return oracle::merge_repeats(p) == target; },
                            [&](const std::vector<int>& p) { return oracle::path_score(p, lp); })
                            .logadd;
    worst = std::max(worst, std::abs(asg_loss(raw, TransitionTable::zeros(L), target).loss - ref));
  }
  return {worst <= 1e-10, "100 instances, max |diff| " + fmt("%.2e", worst)};
}

Verdict ac5_decoder_oracle() {
  Timer timer;
  std::mt19937_64 rng(505);
  double worst_logadd = 0.0, worst_max = 0.0;
  int order_violations = 0;
  for (int inst = 0; inst < 50; ++inst) {
    const auto mode = inst % 2 == 0 ? CriterionKind::asg : CriterionKind::ctc;
    const fixture::TinyDecode d = fixture::make_tiny_decode(rng, mode, 8);
    const oracle::DecodeOracle ref = d.exhaustive();
    const double la = fixture::run_decoder(d, MergeMode::logadd).results[0].score;
    const double mx = fixture::run_decoder(d, MergeMode::max).results[0].score;
    worst_logadd = std::max(worst_logadd, std::abs(la - ref.logadd_best));
    worst_max = std::max(worst_max, std::abs(mx - ref.viterbi_best));
    if (la < mx) ++order_violations;
  }
  return {worst_logadd <= 1e-8 && worst_max <= 1e-8 && order_violations == 0,
          "logadd max |diff| " + fmt("%.2e", worst_logadd) + ", max-merge " + fmt("%.2e", worst_max) +
              ", logadd<max on " + std::to_string(order_violations) + " instances, " + fmt("%.2f s", timer.seconds())};
}

Verdict ac6_toy_overfit() {
  Timer timer;
  const Config& cfg = preset("toy");
  AcousticModel model = AcousticModel::create(cfg.arch, CriterionKind::asg, cfg.seed);
  const auto n_params = model.net.params().num_elements() + model.transitions.num_elements();
  std::vector<Utterance> data;
  for (const auto& u : make_toy_corpus(50, 1)) {
    data.push_back(make_utterance(u.id, normalize(compute_mfsc(u.audio)), u.transcription, model.net.padding()));
  }
  TrainOptions o;
  o.learning_rate = cfg.optimizer.learning_rate;
  o.momentum = cfg.optimizer.momentum;
  o.clip = cfg.optimizer.clip;
  o.batch_size = cfg.optimizer.batch_size;
  o.seed = cfg.seed;
  Trainer trainer(model, o);
  int reached = -1;
  double ler = 1.0;
  for (int epoch = 1; epoch <= 200; ++epoch) {
    ler = trainer.train_epoch(data, epoch).train_ler;
    if (ler < 0.05 && reached < 0) reached = epoch;
  }

  const NGramLM lm = parse_arpa_string(toy_arpa());
  const Lexicon lex = lexicon_from_words(toy_vocabulary(), LetterDict{});
  const LexiconTrie trie = build_trie(lex, lm);
  const TransitionTable tr = model.transition_table();
  DecoderParams p;
  p.alpha = cfg.decoder.alpha;
  p.beam_size = cfg.decoder.beam_size;
  p.beam_threshold = cfg.decoder.beam_threshold;
  int greedy_ok = 0, beam_ok = 0;
  for (const auto& u : data) {
    const MatrixD em = model.emissions(u.padded);
    greedy_ok += greedy_decode(em, CriterionKind::asg) == u.transcription;
    beam_ok += beam_search(em, &tr, lm, trie, lex, p)[0].transcription(lex) == u.transcription;
  }
  const double s = timer.seconds();
  const bool pass = reached > 0 && greedy_ok >= 48 && beam_ok >= 48 && s < 600.0 && n_params >= 40000 && n_params <= 60000;
  return {pass, std::to_string(n_params) + " params, LER < 5% at epoch " + std::to_string(reached) + ", final LER " +
                    fmt("%.2f%%", 100.0 * ler) + ", greedy " + std::to_string(greedy_ok) + "/50, beam " +
                    std::to_string(beam_ok) + "/50, " + fmt("%.1f s", s)};
}

const char* kBigramArpa = R"(\data\
ngram 1=6
ngram 2=4

\1-grams:
-1.0	</s>
-99	<s>	-0.5
-1.2	a	-0.3
-1.5	b	-0.2
-2.0	c
-3.0	<unk>

\2-grams:
-0.4	<s>	a
-0.6	a	b
-0.7	b	</s>
-0.9	a	c

\end\
)";

Verdict ac7_arpa() {
  const NGramLM lm = parse_arpa_string(kBigramArpa);
  struct Case {
    std::vector<std::string> words;
    double expected;
  };
  const std::vector<Case> cases = {
      {{"a", "b"}, -0.4 + -0.6 + -0.7},
      {{"a", "b", "c"}, -0.4 + -0.6 + (-0.2 + -2.0) + -1.0},
      {{"a", "c"}, -0.4 + -0.9 + -1.0},
      {{"b"}, (-0.5 + -1.5) + -0.7},
      {{"c", "a"}, (-0.5 + -2.0) + -1.2 + (-0.3 + -1.0)},
      {{"zebra"}, (-0.5 + -3.0) + -1.0},
      {{}, -0.5 + -1.0},
  };
  int exact = 0;
  for (const auto& c : cases) exact += lm.score_sentence(c.words) == c.expected;

  struct Bad {
    std::string from, to;
    std::size_t line;
  };
  const std::vector<Bad> bad = {
      {"ngram 2=4", "ngram 2=5", 19}, {"-1.2\ta", "0.2\ta", 8},          {"-0.7\tb\t</s>", "-0.7\tb\tzzz", 16},
      {"-0.6\ta\tb", "-0.6\ta\tb\t-1\t-2", 15}, {"\\1-grams:", "\\2-grams:", 5}, {"-2.0\tc", "-2.0\ta", 10},
  };
  int located = 0;
  for (const auto& b : bad) {
    std::string text = kBigramArpa;
    text.replace(text.find(b.from), b.from.size(), b.to);
    try {
      parse_arpa_string(text);
    } catch (const ParseError& e) {
      located += e.line() == b.line;
    }
  }
  return {exact == static_cast<int>(cases.size()) && located == static_cast<int>(bad.size()),
          std::to_string(exact) + "/" + std::to_string(cases.size()) + " sentence scores exact, " + std::to_string(located) +
              "/" + std::to_string(bad.size()) + " malformed files rejected at the right line"};
}

Verdict ac8_repetition_codec() {
  std::mt19937_64 rng(808);
  std::uniform_int_distribution<int> len(1, 12), letter(0, 5);
  std::set<std::string> words;
  while (words.size() < 10000) {
    std::string w;
    for (int n = len(rng); n > 0; --n) w.push_back(static_cast<char>('a' + letter(rng)));
    words.insert(w);
  }
  int ok = 0;
  for (const auto& w : words) ok += decode_repetitions(encode_repetitions(w)) == w;
  const std::string cat = encode_repetitions("caterpillar");
  return {ok == 10000 && cat == "caterpil1ar", std::to_string(ok) + "/10000 round trips, caterpillar -> " + cat};
}

Verdict ac9_clip_and_metrics() {
  std::mt19937_64 rng(909);
  std::uniform_int_distribution<int> count(1, 5), dim(1, 8);
  std::uniform_real_distribution<double> eps(0.01, 5.0), scale(0.01, 10.0);
  int ok = 0;
  for (int i = 0; i < 1000; ++i) {
    ParamSet<double> g;
    const double sc = scale(rng);
    for (int k = count(rng); k > 0; --k) {
      g.names.push_back("t");
      g.tensors.push_back(random_matrix(rng, dim(rng), dim(rng), sc));
    }
    const double e = eps(rng);
    clip_gradient(g, e);
    double sq = 0.0;
    for (const auto& t : g.tensors) sq += t.squaredNorm();
    ok += std::sqrt(sq) <= e * (1.0 + 1e-12);
  }
  const bool metrics = wer("the cat sat", "the sat") == 1.0 / 3.0 &&
                       edit_distance(std::string("kitten"), std::string("sitting")) == 3;
  return {ok == 1000 && metrics, std::to_string(ok) + "/1000 clipped norms within epsilon, metric examples " +
                                     (metrics ? "exact" : "wrong")};
}

Verdict ac10_determinism() {
  auto criterion_run = [] {
    std::mt19937_64 rng(1010);
    const MatrixD e = random_matrix(rng, 12, 6);
    const TransitionTable tr{random_matrix(rng, 6, 6), random_matrix(rng, 6, 1).col(0)};
    const AsgResult a = asg_loss(e, tr, std::vector<int>{1, 2, 3});
    const CtcResult c = ctc_loss(e, std::vector<int>{1, 1, 2});
    return std::make_tuple(a.loss, a.grad_emissions, a.grad_trans, c.loss, c.grad);
  };
  const bool criterion_same = criterion_run() == criterion_run();

  auto train_run = [] {
    ArchSpec a;
    a.n_conv_layers = 2;
    a.hu_first = a.hu_last = 16;
    a.kw_first = a.kw_last = 5;
    a.fc_size = 24;
    a.dropout_first = 0.8;
    a.dropout_last = 0.7;
    AcousticModel m = AcousticModel::create(a, CriterionKind::asg, 3);
    std::vector<Utterance> data;
    for (const auto& u : make_toy_corpus(8, 4)) {
      data.push_back(make_utterance(u.id, normalize(compute_mfsc(u.audio)), u.transcription, m.net.padding()));
    }
    TrainOptions o;
    o.seed = 99;
    Trainer t(m, o);
    std::vector<double> losses;
    for (int e = 0; e < 3; ++e) losses.push_back(t.train_epoch(data, e).loss);
    std::ostringstream bytes;
    for (const auto& p : m.net.params().tensors) bytes.write(reinterpret_cast<const char*>(p.data()), p.size() * 4);
    for (const auto& p : m.transitions.tensors) bytes.write(reinterpret_cast<const char*>(p.data()), p.size() * 4);
    return std::make_pair(losses, bytes.str());
  };
  const bool train_same = train_run() == train_run();

  auto decode_run = [] {
    std::mt19937_64 rng(1011);
    const fixture::TinyDecode d = fixture::make_tiny_decode(rng, CriterionKind::asg, 8);
    std::vector<std::pair<double, std::vector<int>>> out;
    for (const auto& r : fixture::run_decoder(d, MergeMode::logadd, 5).results) out.emplace_back(r.score, r.words);
    return out;
  };
  const bool decode_same = decode_run() == decode_run();
  return {criterion_same && train_same && decode_same, std::string("criterion ") + (criterion_same ? "same" : "differs") +
                                                           ", training " + (train_same ? "same" : "differs") +
                                                           ", decoding " + (decode_same ? "same" : "differs")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> checks = {
      {"AC1 forward-score oracle", ac1_forward_oracle},
      {"AC2 closed-form losses", ac2_closed_forms},
      {"AC3 gradient checks", ac3_gradients},
      {"AC4 ASG equals blank-free CTC", ac4_asg_is_blank_free_ctc},
      {"AC5 decoder oracle", ac5_decoder_oracle},
      {"AC6 toy end-to-end overfit", ac6_toy_overfit},
      {"AC7 ARPA correctness", ac7_arpa},
      {"AC8 repetition codec", ac8_repetition_codec},
      {"AC9 clipping and metrics", ac9_clip_and_metrics},
      {"AC10 determinism", ac10_determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : checks) {
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << std::endl;
  }
  return failures == 0 ? 0 : 1;
}

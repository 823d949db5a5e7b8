#pragma once

// Command-line front end. Results go to `out`, diagnostics to `err`.
// Exit codes: 0 ok, 1 usage error, 2 data/parse error, 3 numeric failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "lasr/checkpoint.hpp"
#include "lasr/config.hpp"
#include "lasr/criterion.hpp"
#include "lasr/decoder.hpp"
#include "lasr/features.hpp"
#include "lasr/lm.hpp"
#include "lasr/model.hpp"
#include "lasr/plot.hpp"
#include "lasr/train.hpp"

namespace lasr {

namespace cli_detail {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads.
template <typename Fn>
void parallel_for(std::size_t n, int jobs, Fn fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(jobs));
  for (int j = 0; j < jobs; ++j) {
    pool.emplace_back([&, j] {
      try {
        for (std::size_t i = static_cast<std::size_t>(j); i < n; i += static_cast<std::size_t>(jobs)) fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(j)] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

inline std::string fixed(double v, int digits) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

/// Architecture from a preset name, a bare ArchSpec JSON file, or a config file.
inline ArchSpec resolve_arch(const std::string& arg) {
  if (presets().count(arg) != 0) return preset(arg).arch;
  std::ifstream in(arg);
  if (!in) throw DataError("arch: " + arg + ": file not found");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("arch: " + arg + ": " + e.what());
  }
  if (j.contains("arch")) return config_from_json(j, std::filesystem::path(arg).parent_path()).arch;
  return arch_from_json(j);
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path, const std::string& what) {
  std::ifstream in(path);
  if (!in) throw DataError(what + ": " + path.string() + ": file not found");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  return lines;
}

/// Transcription column of a reference/hypothesis line: the last TSV field.
inline std::string transcription_field(const std::string& line) {
  const auto fields = split_char(line, '\t');
  return normalize_transcription(fields.back());
}

/// Transition file: (L+1) x L matrix file, rows 0..L-1 transitions, row L start scores.
inline TransitionTable read_transitions(const std::filesystem::path& path) {
  const MatrixF m = read_matrix_file(path);
  if (m.rows() != m.cols() + 1) throw DataError(path.string() + ": expected an (L+1) x L transition matrix");
  TransitionTable tr;
  tr.trans = m.topRows(m.cols()).cast<double>();
  tr.start = m.row(m.cols()).transpose().cast<double>();
  return tr;
}

inline void write_transitions(const std::filesystem::path& path, const TransitionTable& tr) {
  MatrixF m(tr.trans.rows() + 1, tr.trans.cols());
  m.topRows(tr.trans.rows()) = tr.trans.cast<float>();
  m.row(tr.trans.rows()) = tr.start.transpose().cast<float>();
  write_matrix_file(path, m);
}

struct Sources {
  std::vector<std::string> ids;
  std::vector<std::filesystem::path> paths;
};

}  // namespace cli_detail

inline int run(std::vector<std::string> args, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace cli_detail;
  CLI::App app{"lasr: letter-based speech recognition toolkit", "lasr"};
  app.require_subcommand(1);

  // features
  std::string feat_manifest, feat_out;
  int jobs = 1;
  auto* features_cmd = app.add_subcommand("features", "Compute normalized log-mel features for a manifest");
  features_cmd->add_option("--manifest", feat_manifest, "TSV: id, audio path, transcription")->required();
  features_cmd->add_option("--out", feat_out, "Output directory")->required();
  features_cmd->add_option("--jobs", jobs, "Parallel workers")->check(CLI::PositiveNumber);

  // train
  std::string tr_manifest, tr_arch, tr_criterion = "asg", tr_ckpt;
  double tr_lr = 0.05, tr_clip = 0.2, tr_momentum = 0.9;
  int tr_epochs = 10, tr_batch = 4;
  std::uint64_t tr_seed = 0;
  bool tr_literal_clip = false;
  auto* train_cmd = app.add_subcommand("train", "Train an acoustic model");
  train_cmd->add_option("--manifest", tr_manifest, "TSV: id, audio/feature path, transcription")->required();
  train_cmd->add_option("--arch", tr_arch, "Architecture JSON file or preset name")->required();
  train_cmd->add_option("--criterion", tr_criterion, "ctc or asg")->check(CLI::IsMember({"ctc", "asg"}));
  train_cmd->add_option("--lr", tr_lr, "Learning rate")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--epochs", tr_epochs, "Epochs")->check(CLI::NonNegativeNumber);
  train_cmd->add_option("--batch-size", tr_batch, "Utterances per batch")->check(CLI::PositiveNumber);
  train_cmd->add_option("--seed", tr_seed, "Random seed");
  train_cmd->add_option("--clip", tr_clip, "Maximum global gradient norm")->check(CLI::PositiveNumber);
  train_cmd->add_option("--momentum", tr_momentum, "Momentum");
  train_cmd->add_flag("--literal-clip", tr_literal_clip, "Rescale every gradient to max(norm, clip)");
  train_cmd->add_option("--ckpt-out", tr_ckpt, "Checkpoint path")->required();

  // align
  std::string al_ckpt, al_input, al_text;
  auto* align_cmd = app.add_subcommand("align", "Forced alignment of a transcription");
  align_cmd->add_option("--ckpt", al_ckpt, "Model checkpoint")->required();
  align_cmd->add_option("--input", al_input, "Audio (.wav) or feature file")->required();
  align_cmd->add_option("--text", al_text, "Transcription")->required();

  // decode
  std::string de_emissions, de_ckpt, de_manifest, de_arpa, de_lexicon, de_transitions, de_merge = "logadd",
                                                                                     de_criterion = "asg";
  DecoderConfig dc;
  std::size_t de_nbest = 1;
  auto* decode_cmd = app.add_subcommand("decode", "Lexicon + LM beam-search decoding");
  auto* em_opt = decode_cmd->add_option("--emissions", de_emissions, "Directory of <id>.emis matrix files");
  auto* ck_opt = decode_cmd->add_option("--ckpt", de_ckpt, "Model checkpoint (requires --manifest)");
  em_opt->excludes(ck_opt);
  decode_cmd->add_option("--manifest", de_manifest, "TSV manifest for --ckpt");
  decode_cmd->add_option("--arpa", de_arpa, "ARPA language model (plain or gzip)")->required();
  decode_cmd->add_option("--lexicon", de_lexicon, "word<TAB>graphemes lexicon")->required();
  decode_cmd->add_option("--transitions", de_transitions, "Transition matrix file for --emissions");
  decode_cmd->add_option("--criterion", de_criterion, "Emission type for --emissions")->check(CLI::IsMember({"ctc", "asg"}));
  decode_cmd->add_option("--alpha", dc.alpha, "LM weight");
  decode_cmd->add_option("--gamma", dc.gamma, "Silence insertion score");
  decode_cmd->add_option("--beta", dc.beta, "Word insertion score");
  decode_cmd->add_option("--beam-size", dc.beam_size, "Histogram pruning size")->check(CLI::PositiveNumber);
  decode_cmd->add_option("--beam-threshold", dc.beam_threshold, "Score window")->check(CLI::PositiveNumber);
  decode_cmd->add_option("--merge", de_merge, "logadd or max")->check(CLI::IsMember({"logadd", "max"}));
  decode_cmd->add_option("--nbest", de_nbest, "Hypotheses per utterance")->check(CLI::PositiveNumber);
  decode_cmd->add_option("--jobs", jobs, "Parallel workers")->check(CLI::PositiveNumber);

  // eval
  std::string ev_ref, ev_hyp;
  auto* eval_cmd = app.add_subcommand("eval", "Word and letter error rates");
  eval_cmd->add_option("--ref", ev_ref, "Reference transcriptions, one per line")->required();
  eval_cmd->add_option("--hyp", ev_hyp, "Hypotheses, one per line (last TSV column)")->required();

  // lm score
  std::string lm_arpa, lm_text;
  auto* lm_cmd = app.add_subcommand("lm", "Language model tools");
  lm_cmd->require_subcommand(1);
  auto* lm_score_cmd = lm_cmd->add_subcommand("score", "Per-sentence log10 scores and perplexity");
  lm_score_cmd->add_option("--arpa", lm_arpa, "ARPA file")->required();
  lm_score_cmd->add_option("--text", lm_text, "One sentence per line")->required();

  // model describe
  std::string md_target;
  auto* model_cmd = app.add_subcommand("model", "Model tools");
  model_cmd->require_subcommand(1);
  auto* describe_cmd = model_cmd->add_subcommand("describe", "Per-layer architecture table");
  describe_cmd->add_option("target", md_target, "Checkpoint, preset name or arch JSON")->required();

  // plot
  std::string pl_log, pl_out;
  auto* plot_cmd = app.add_subcommand("plot", "Render training curves to SVG");
  plot_cmd->add_option("--log", pl_log, "JSON-lines training log")->required();
  plot_cmd->add_option("--out", pl_out, "Output SVG")->required();

  // config dump
  std::string cfg_preset;
  auto* config_cmd = app.add_subcommand("config", "Configuration tools");
  config_cmd->require_subcommand(1);
  auto* dump_cmd = config_cmd->add_subcommand("dump", "Print a preset configuration as JSON");
  dump_cmd->add_option("preset", cfg_preset, "Preset name")->required();

  try {
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return 1;
  }

  try {
    if (features_cmd->parsed()) {
      const Manifest m = load_manifest(feat_manifest);
      std::filesystem::create_directories(feat_out);
      std::vector<std::string> lines(m.size());
      parallel_for(m.size(), jobs, [&](std::size_t i) {
        const auto path = std::filesystem::path(feat_out) / (m[i].id + ".feat");
        const FeatureSequence f = load_features(m[i].path);
        write_feature_file(path, f);
        lines[i] = m[i].id + "\t" + path.string() + "\t" + m[i].transcription;
      });
      for (const auto& l : lines) out << l << "\n";
      err << "wrote " << m.size() << " feature files to " << feat_out << "\n";
      return 0;
    }

    if (train_cmd->parsed()) {
      const ArchSpec arch = resolve_arch(tr_arch);
      const CriterionKind kind = parse_criterion(tr_criterion);
      const Manifest m = load_manifest(tr_manifest);
      AcousticModel model = AcousticModel::create(arch, kind, tr_seed);
      std::vector<Utterance> data;
      for (const auto& e : m) data.push_back(make_utterance(e.id, load_features(e.path), e.transcription, model.net.padding()));
      TrainOptions opts;
      opts.learning_rate = tr_lr;
      opts.momentum = tr_momentum;
      opts.clip = tr_clip;
      opts.clip_mode = tr_literal_clip ? ClipMode::literal : ClipMode::max_norm;
      opts.batch_size = tr_batch;
      opts.seed = tr_seed;
      Trainer trainer(model, opts);
      err << "training " << model.net.params().num_elements() << " parameters on " << data.size()
          << " utterances\n";
      for (int ep = 0; ep < tr_epochs; ++ep) {
        const EpochStats s = trainer.train_epoch(data, ep);
        nlohmann::json row{{"epoch", s.epoch + 1}, {"loss", s.loss},        {"train_ler", s.train_ler},
                           {"skipped", s.skipped}, {"seconds", s.seconds}};
        out << row.dump() << "\n" << std::flush;
        if (s.skipped > 0) err << "epoch " << s.epoch + 1 << ": skipped " << s.skipped << " infeasible utterances\n";
      }
      save_checkpoint(tr_ckpt, model);
      err << "saved " << tr_ckpt << "\n";
      return 0;
    }

    if (align_cmd->parsed()) {
      const AcousticModel model = load_checkpoint(al_ckpt);
      const FeatureSequence f = load_features(al_input);
      const MatrixD em = model.emissions(pad(f, model.net.padding()).frames);
      const LetterDict dict;
      const auto target = transcription_to_target(dict, al_text);
      const TransitionTable tr = model.transition_table();
      const Alignment a = viterbi_align(em, &tr, target, model.criterion);
      out << "frame_index\tgrapheme\tcumulative_score\n";
      for (std::size_t t = 0; t < a.labels.size(); ++t) {
        out << t << "\t" << dict.symbol(a.labels[t]) << "\t" << fixed(a.cumulative[t], 6) << "\n";
      }
      return 0;
    }

    if (decode_cmd->parsed()) {
      if (de_emissions.empty() && de_ckpt.empty()) throw UsageError("decode: one of --emissions or --ckpt is required");
      if (!de_ckpt.empty() && de_manifest.empty()) throw UsageError("decode: --ckpt requires --manifest");
      const LetterDict dict;
      const NGramLM lm = load_arpa(de_arpa);
      const Lexicon lex = load_lexicon(de_lexicon, dict);
      const LexiconTrie trie = build_trie(lex, lm);
      dc.merge = de_merge;

      std::optional<AcousticModel> model;
      Manifest manifest;
      std::vector<std::string> ids;
      std::vector<std::filesystem::path> inputs;
      TransitionTable tr;
      CriterionKind kind = parse_criterion(de_criterion);
      if (!de_ckpt.empty()) {
        model = load_checkpoint(de_ckpt);
        kind = model->criterion;
        tr = model->transition_table();
        manifest = load_manifest(de_manifest);
        for (const auto& e : manifest) {
          ids.push_back(e.id);
          inputs.push_back(e.path);
        }
      } else {
        if (!std::filesystem::is_directory(de_emissions)) throw DataError("emissions: " + de_emissions + ": not a directory");
        for (const auto& entry : std::filesystem::directory_iterator(de_emissions)) {
          if (entry.path().extension() == ".emis") inputs.push_back(entry.path());
        }
        std::sort(inputs.begin(), inputs.end());
        for (const auto& p : inputs) ids.push_back(p.stem().string());
        if (!de_transitions.empty()) tr = read_transitions(de_transitions);
      }
      const DecoderParams params = dc.params(kind);
      std::vector<std::string> lines(inputs.size());
      parallel_for(inputs.size(), jobs, [&](std::size_t i) {
        MatrixD em;
        if (model) {
          em = model->emissions(pad(load_features(inputs[i]), model->net.padding()).frames);
        } else {
          em = read_matrix_file(inputs[i]).cast<double>();
        }
        if (kind == CriterionKind::ctc) em = log_softmax(em);
        const bool use_tr = kind == CriterionKind::asg && tr.trans.size() > 0;
        const auto results = beam_search(em, use_tr ? &tr : nullptr, lm, trie, lex, params, de_nbest);
        std::string block;
        for (const auto& r : results) block += ids[i] + "\t" + fixed(r.score, 6) + "\t" + r.transcription(lex) + "\n";
        lines[i] = std::move(block);
      });
      for (const auto& l : lines) out << l;
      return 0;
    }

    if (eval_cmd->parsed()) {
      const auto refs = read_lines(ev_ref, "ref");
      const auto hyps = read_lines(ev_hyp, "hyp");
      if (refs.size() != hyps.size()) {
        throw DataError("eval: " + std::to_string(refs.size()) + " references but " + std::to_string(hyps.size()) +
                        " hypotheses");
      }
      ErrorTally tally;
      for (std::size_t i = 0; i < refs.size(); ++i) tally.add(transcription_field(refs[i]), transcription_field(hyps[i]));
      out << "WER " << fixed(100.0 * tally.wer(), 2) << "%\n";
      out << "LER " << fixed(100.0 * tally.ler(), 2) << "%\n";
      return 0;
    }

    if (lm_score_cmd->parsed()) {
      const NGramLM lm = load_arpa(lm_arpa);
      double total = 0.0;
      std::size_t tokens = 0;
      for (const auto& line : read_lines(lm_text, "text")) {
        const auto words = split_ws(to_lower_ascii(line));
        const double s = lm.score_sentence(words);
        total += s;
        tokens += words.size() + 1;
        out << fixed(s, 6) << "\t" << line << "\n";
      }
      const double ppl = tokens > 0 ? std::pow(10.0, -total / static_cast<double>(tokens)) : 0.0;
      out << "perplexity\t" << fixed(ppl, 4) << "\n";
      return 0;
    }

    if (describe_cmd->parsed()) {
      ArchSpec arch;
      std::string criterion = "-";
      if (presets().count(md_target) == 0 && std::filesystem::is_regular_file(md_target) &&
          std::filesystem::path(md_target).extension() != ".json") {
        const AcousticModel m = load_checkpoint(md_target);
        arch = m.net.arch();
        criterion = to_string(m.criterion);
      } else {
        arch = resolve_arch(md_target);
      }
      const auto model = Model<float>::with_layout(arch, arch.n_labels + (criterion == "ctc" ? 1 : 0));
      out << "layer\tin\tout\tkw\tkeep\tparams\n";
      std::int64_t total = 0;
      auto row = [&](const std::string& name, int in, int o, int kw, double keep, std::int64_t n) {
        total += n;
        out << name << "\t" << in << "\t" << o << "\t" << kw << "\t" << fixed(keep, 3) << "\t" << n << "\n";
      };
      for (std::size_t i = 0; i < model.conv_layers().size(); ++i) {
        const auto& l = model.conv_layers()[i];
        row("conv" + std::to_string(i), l.in, l.out, l.kw, model.shapes()[i].keep,
            2ll * l.in * l.out * l.kw + 4ll * l.out);
      }
      const auto& f = model.fc1();
      row("fc1", f.in, f.out, 1, arch.dropout_last, 2ll * f.in * f.out + 4ll * f.out);
      const auto& o = model.fc_out();
      row("fc_out", o.in, o.out, 1, 1.0, 1ll * o.in * o.out + 2ll * o.out);
      out << "total_params\t" << total << "\n";
      out << "padding\t" << model.padding() << "\n";
      out << "criterion\t" << criterion << "\n";
      return 0;
    }

    if (plot_cmd->parsed()) {
      std::ifstream in(pl_log);
      if (!in) throw DataError("log: " + pl_log + ": file not found");
      const auto rows = read_json_lines(in);
      std::vector<Series> series = {series_from_rows(rows, "epoch", "loss"),
                                    series_from_rows(rows, "epoch", "train_ler", 100.0)};
      std::vector<std::string> titles = {"loss", "train LER (%)"};
      const Series w = series_from_rows(rows, "epoch", "wer", 100.0);
      if (!w.x.empty()) {
        series.push_back(w);
        titles.push_back("WER (%)");
      }
      std::ofstream os(pl_out);
      if (!os) throw DataError(pl_out + ": cannot open for writing");
      os << render_svg(series, titles);
      err << "wrote " << pl_out << "\n";
      return 0;
    }

    if (dump_cmd->parsed()) {
      out << config_to_json(preset(cfg_preset)).dump(2) << "\n";
      return 0;
    }
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return 3;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::ios_base::failure& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

inline int run(int argc, char** argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(std::move(args), out, err);
}

}  // namespace lasr

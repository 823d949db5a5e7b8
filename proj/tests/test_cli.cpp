#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "lasr/cli.hpp"
#include "lasr/config.hpp"
#include "lasr/toy_corpus.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = 0;
  std::string out, err;
};

Outcome run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Outcome o;
  o.code = lasr::run(std::move(args), out, err);
  o.out = out.str();
  o.err = err.str();
  return o;
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("lasr_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> v;
  std::istringstream in(s);
  for (std::string l; std::getline(in, l);) v.push_back(l);
  return v;
}

}  // namespace

TEST(Cli, EvalOnIdenticalFiles) {
  const fs::path d = temp_dir("eval");
  write(d / "ref.txt", "the cat sat\nhello world\n");
  write(d / "hyp.txt", "the cat sat\nhello world\n");
  const Outcome o = run({"eval", "--ref", (d / "ref.txt").string(), "--hyp", (d / "hyp.txt").string()});
  EXPECT_EQ(o.code, 0) << o.err;
  EXPECT_NE(o.out.find("WER 0.00%"), std::string::npos) << o.out;
  EXPECT_NE(o.out.find("LER 0.00%"), std::string::npos) << o.out;

  write(d / "hyp2.txt", "the sat\nhello world\n");
  const Outcome o2 = run({"eval", "--ref", (d / "ref.txt").string(), "--hyp", (d / "hyp2.txt").string()});
  EXPECT_NE(o2.out.find("WER 20.00%"), std::string::npos) << o2.out;
}

TEST(Cli, UsageErrorsExitWithOne) {
  const Outcome o = run({"eval", "--ref", "a", "--hyp", "b", "--bogus"});
  EXPECT_EQ(o.code, 1);
  EXPECT_NE(o.err.find("Usage"), std::string::npos);
  EXPECT_TRUE(o.out.empty());
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"config", "dump", "no-such-preset"}).code, 1);
}

TEST(Cli, DataErrorsExitWithTwo) {
  const fs::path d = temp_dir("data");
  const Outcome o = run({"train", "--manifest", (d / "absent.tsv").string(), "--arch", "toy", "--ckpt-out",
                         (d / "m.ckpt").string()});
  EXPECT_EQ(o.code, 2);
  EXPECT_NE(o.err.find("manifest: file not found"), std::string::npos) << o.err;
  write(d / "bad.arpa", "\\data\\\nngram 1=1\n");
  write(d / "s.txt", "a\n");
  EXPECT_EQ(run({"lm", "score", "--arpa", (d / "bad.arpa").string(), "--text", (d / "s.txt").string()}).code, 2);
}

TEST(Cli, ConfigDumpPresets) {
  const Outcome o = run({"config", "dump", "wsj-low-dropout"});
  ASSERT_EQ(o.code, 0);
  const auto j = nlohmann::json::parse(o.out);
  EXPECT_EQ(j["arch"]["n_conv_layers"], 17);
  EXPECT_EQ(j["arch"]["kw_first"], 3);
  EXPECT_EQ(j["arch"]["kw_last"], 21);
  EXPECT_EQ(j["arch"]["hu_first"], 100);
  EXPECT_EQ(j["arch"]["hu_last"], 375);
  EXPECT_EQ(j["arch"]["fc_size"], 1000);
  EXPECT_EQ(j["arch"]["dropout_first"], 0.25);

  const auto h = nlohmann::json::parse(run({"config", "dump", "libri-high-dropout"}).out);
  EXPECT_EQ(h["arch"]["n_conv_layers"], 19);
  EXPECT_EQ(h["arch"]["dropout_first"], 0.20);
  EXPECT_EQ(h["arch"]["dropout_last"], 0.60);
  EXPECT_EQ(h["arch"]["kw_first"], 13);
  EXPECT_EQ(h["arch"]["kw_last"], 29);
  EXPECT_EQ(h["arch"]["fc_size"], 2000);
}

TEST(Cli, ConfigRoundTrip) {
  const fs::path d = temp_dir("config");
  for (const auto& [name, cfg] : lasr::presets()) {
    const Outcome o = run({"config", "dump", name});
    ASSERT_EQ(o.code, 0);
    write(d / (name + ".json"), o.out);
    const lasr::Config loaded = lasr::load_config(d / (name + ".json"));
    EXPECT_EQ(loaded, cfg) << name;
    EXPECT_EQ(lasr::config_from_json(lasr::config_to_json(loaded)), loaded) << name;
  }
  auto j = lasr::config_to_json(lasr::preset("toy"));
  j["arch"]["hu_frist"] = 3;
  try {
    lasr::config_from_json(j);
    FAIL();
  } catch (const lasr::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("hu_frist"), std::string::npos);
  }
  auto k = lasr::config_to_json(lasr::preset("toy"));
  k["paths"]["manifest"] = (d / "none.tsv").string();
  try {
    lasr::config_from_json(k);
    FAIL();
  } catch (const lasr::DataError& e) {
    EXPECT_NE(std::string(e.what()).find("manifest: file not found"), std::string::npos);
  }
}

TEST(Cli, LmScore) {
  const fs::path d = temp_dir("lm");
  write(d / "m.arpa", lasr::toy_arpa());
  write(d / "s.txt", "cat dog\n");
  const Outcome o = run({"lm", "score", "--arpa", (d / "m.arpa").string(), "--text", (d / "s.txt").string()});
  ASSERT_EQ(o.code, 0) << o.err;
  const auto l = lines(o.out);
  ASSERT_EQ(l.size(), 2u);
  const double expected = 3.0 * std::log10(1.0 / 6.0);
  EXPECT_NEAR(std::stod(l[0].substr(0, l[0].find('\t'))), expected, 1e-5);
  EXPECT_EQ(l[0].substr(l[0].find('\t') + 1), "cat dog");
  EXPECT_EQ(l[1].rfind("perplexity\t", 0), 0u);
}

TEST(Cli, TrainAlignDecodeOnToyWord) {
  const fs::path d = temp_dir("pipeline");
  lasr::write_toy_corpus(d, 5, 3);
  // Keep only the "cat" utterance.
  std::ifstream in(d / "manifest.tsv");
  std::string first;
  std::getline(in, first);
  ASSERT_NE(first.find("\tcat"), std::string::npos);
  write(d / "one.tsv", first + "\n");
  write(d / "arch.json",
        R"({"n_conv_layers": 2, "hu_first": 16, "hu_last": 16, "kw_first": 5, "kw_last": 5, "fc_size": 24,
            "dropout_first": 1.0, "dropout_last": 1.0, "n_labels": 30, "input_dim": 40})");
  write(d / "lexicon1.txt", "cat\tc a t\n");

  const Outcome tr = run({"train", "--manifest", (d / "one.tsv").string(), "--arch", (d / "arch.json").string(),
                          "--epochs", "120", "--batch-size", "1", "--ckpt-out", (d / "m.ckpt").string()});
  ASSERT_EQ(tr.code, 0) << tr.err;
  const auto log = lines(tr.out);
  ASSERT_EQ(log.size(), 120u);
  const auto last = nlohmann::json::parse(log.back());
  EXPECT_EQ(last["epoch"], 120);
  EXPECT_LT(last["loss"].get<double>(), nlohmann::json::parse(log.front())["loss"].get<double>());

  const Outcome de = run({"decode", "--ckpt", (d / "m.ckpt").string(), "--manifest", (d / "one.tsv").string(),
                          "--arpa", (d / "lm.arpa").string(), "--lexicon", (d / "lexicon1.txt").string()});
  ASSERT_EQ(de.code, 0) << de.err;
  const auto out = lines(de.out);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].substr(out[0].rfind('\t') + 1), "cat");
  EXPECT_EQ(out[0].substr(0, out[0].find('\t')), "toy000");

  const std::string wav = (d / first.substr(first.find('\t') + 1, first.rfind('\t') - first.find('\t') - 1)).string();
  const Outcome al = run({"align", "--ckpt", (d / "m.ckpt").string(), "--input", wav, "--text", "cat"});
  ASSERT_EQ(al.code, 0) << al.err;
  const auto rows = lines(al.out);
  ASSERT_GT(rows.size(), 4u);
  EXPECT_EQ(rows[0], "frame_index\tgrapheme\tcumulative_score");
  std::string collapsed;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    std::istringstream f(rows[i]);
    std::size_t idx;
    std::string g;
    f >> idx >> g;
    EXPECT_EQ(idx, i - 1);
    if (collapsed.empty() || collapsed.back() != g[0]) collapsed += g;
  }
  EXPECT_EQ(collapsed, "#cat#");

  const Outcome md = run({"model", "describe", (d / "m.ckpt").string()});
  ASSERT_EQ(md.code, 0) << md.err;
  EXPECT_NE(md.out.find("total_params"), std::string::npos);

  write(d / "log.jsonl", tr.out);
  EXPECT_EQ(run({"plot", "--log", (d / "log.jsonl").string(), "--out", (d / "curve.svg").string()}).code, 0);
  std::ifstream svg(d / "curve.svg");
  std::string head;
  std::getline(svg, head);
  EXPECT_NE(head.find("<svg"), std::string::npos);
}

TEST(Cli, BinaryKeepsDiagnosticsOnStderr) {
  const fs::path d = temp_dir("binary");
  const std::string cmd = std::string(LASR_CLI_PATH) + " eval --ref " + (d / "x").string() + " --hyp y --nope 2>" +
                          (d / "err.txt").string();
  FILE* p = popen(cmd.c_str(), "r");
  ASSERT_NE(p, nullptr);
  std::string out;
  char buf[256];
  while (std::fgets(buf, sizeof(buf), p)) out += buf;
  const int status = pclose(p);
  EXPECT_EQ(WEXITSTATUS(status), 1);
  EXPECT_TRUE(out.empty());
  std::ifstream err(d / "err.txt");
  EXPECT_NE(std::string(std::istreambuf_iterator<char>(err), {}).find("--nope"), std::string::npos);
}

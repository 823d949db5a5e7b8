#pragma once

// Synthetic corpus for desk-scale end-to-end runs. Every letter is rendered
// as a short tone burst at a letter-specific frequency, separated from the
// next burst by a brief dip; words are separated by low-level noise.

#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "lasr/criterion.hpp"
#include "lasr/features.hpp"

namespace lasr {

struct ToyUtterance {
  std::string id;
  std::string transcription;
  Waveform audio;
};

inline const std::vector<std::string>& toy_vocabulary() {
  static const std::vector<std::string> words = {"cat", "dog", "sun", "bee", "hello"};
  return words;
}

inline double toy_letter_frequency(char c) {
  const int idx = c == '\'' ? 26 : c - 'a';
  return 300.0 + 260.0 * idx;
}

inline Waveform render_toy_transcription(const std::string& text, std::mt19937_64& rng) {
  constexpr int kFrame = kSampleRate / 100;  // 10 ms
  std::uniform_int_distribution<int> letter_frames(5, 7);
  std::uniform_int_distribution<int> gap_frames(2, 3);
  std::uniform_int_distribution<int> pause_frames(5, 8);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 0.003);

  Waveform w;
  auto silence = [&](int frames) {
    for (int i = 0; i < frames * kFrame; ++i) w.samples.push_back(noise(rng));
  };
  auto tone = [&](double hz, int frames) {
    const double ph = phase(rng);
    const int n = frames * kFrame;
    for (int i = 0; i < n; ++i) {
      // Short raised-cosine ramps avoid broadband clicks at the burst edges.
      const double ramp = std::min({1.0, i / 80.0, (n - 1 - i) / 80.0});
      w.samples.push_back(0.3 * ramp * std::sin(2.0 * std::numbers::pi * hz * i / kSampleRate + ph) + noise(rng));
    }
  };

  silence(pause_frames(rng));
  const auto words = split_ws(text);
  for (std::size_t k = 0; k < words.size(); ++k) {
    if (k > 0) silence(pause_frames(rng));
    for (std::size_t i = 0; i < words[k].size(); ++i) {
      if (i > 0) silence(gap_frames(rng));
      tone(toy_letter_frequency(words[k][i]), letter_frames(rng));
    }
  }
  silence(pause_frames(rng));
  return w;
}

/// `n` utterances of one or two vocabulary words, every word used at least once.
inline std::vector<ToyUtterance> make_toy_corpus(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto& vocab = toy_vocabulary();
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
  std::uniform_int_distribution<int> length(1, 2);
  std::vector<ToyUtterance> out;
  for (int i = 0; i < n; ++i) {
    std::string text;
    if (static_cast<std::size_t>(i) < vocab.size()) {
      text = vocab[static_cast<std::size_t>(i)];
    } else {
      const int len = length(rng);
      for (int k = 0; k < len; ++k) text += (k > 0 ? " " : "") + vocab[pick(rng)];
    }
    ToyUtterance u;
    char id[32];
    std::snprintf(id, sizeof(id), "toy%03d", i);
    u.id = id;
    u.transcription = text;
    u.audio = render_toy_transcription(text, rng);
    out.push_back(std::move(u));
  }
  return out;
}

/// Uniform unigram ARPA model over the toy vocabulary.
inline std::string toy_arpa() {
  const auto& vocab = toy_vocabulary();
  const double p = std::log10(1.0 / static_cast<double>(vocab.size() + 1));
  std::string s = "\\data\\\nngram 1=" + std::to_string(vocab.size() + 3) + "\n\n\\1-grams:\n";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", p);
  s += std::string(buf) + "\t</s>\n";
  s += "-99\t<s>\n";
  s += "-99\t<unk>\n";
  for (const auto& w : vocab) s += std::string(buf) + "\t" + w + "\n";
  s += "\n\\end\\\n";
  return s;
}

/// Writes wavs, manifest.tsv, lexicon.txt and lm.arpa into `dir`.
inline void write_toy_corpus(const std::filesystem::path& dir, int n, std::uint64_t seed) {
  std::filesystem::create_directories(dir / "wav");
  std::ofstream manifest(dir / "manifest.tsv");
  for (const auto& u : make_toy_corpus(n, seed)) {
    write_wav(dir / "wav" / (u.id + ".wav"), u.audio);
    manifest << u.id << '\t' << "wav/" << u.id << ".wav" << '\t' << u.transcription << '\n';
  }
  std::ofstream lex(dir / "lexicon.txt");
  for (const auto& w : toy_vocabulary()) {
    lex << w << '\t';
    const std::string g = encode_repetitions(w);
    for (std::size_t i = 0; i < g.size(); ++i) lex << (i > 0 ? " " : "") << g[i];
    lex << '\n';
  }
  std::ofstream arpa(dir / "lm.arpa");
  arpa << toy_arpa();
}

}  // namespace lasr

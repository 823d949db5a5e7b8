// Writes the synthetic tone corpus used for desk-scale runs.

#include <CLI11.hpp>

#include <iostream>

#include "lasr/toy_corpus.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate the synthetic toy corpus", "make_toy_corpus"};
  std::string out;
  int n = 40;
  std::uint64_t seed = 1;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("-n,--count", n, "Number of utterances")->check(CLI::PositiveNumber);
  app.add_option("--seed", seed, "Random seed");
  CLI11_PARSE(app, argc, argv);
  try {
    lasr::write_toy_corpus(out, n, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  std::cout << out << "/manifest.tsv\n";
  return 0;
}

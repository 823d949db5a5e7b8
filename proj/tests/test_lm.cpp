#include <gtest/gtest.h>
#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "lasr/lm.hpp"

using namespace lasr;

namespace {

// Back-off weights: <s> -0.5, a -0.3, b -0.2, c none.
const char* kBigram = R"(\data\
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

std::size_t error_line(const std::string& text) {
  try {
    parse_arpa_string(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

}  // namespace

TEST(Arpa, MinimalUnigramModel) {
  const NGramLM lm = parse_arpa_string("\\data\\\nngram 1=4\n\n\\1-grams:\n-0.5\tx\n-0.6\ty\n-0.7\tz\n-2\t<unk>\n\n\\end\\\n");
  EXPECT_EQ(lm.max_order(), 1);
  EXPECT_EQ(lm.count(1), 4u);
  const WordScore s = lm.score_word(lm.begin_state(), "y");
  EXPECT_EQ(s.logprob, -0.6);
  EXPECT_TRUE(s.next.empty());
}

TEST(Arpa, HandComputedBigramScores) {
  const NGramLM lm = parse_arpa_string(kBigram);
  const LMState start = lm.begin_state();
  EXPECT_EQ(lm.score_word(start, "a").logprob, -0.4);  // explicit bigram
  const LMState after_a = lm.score_word(start, "a").next;
  EXPECT_EQ(lm.score_word(after_a, "b").logprob, -0.6);
  const LMState after_b = lm.score_word(after_a, "b").next;
  EXPECT_DOUBLE_EQ(lm.score_word(after_b, "c").logprob, -0.2 + -2.0);  // back-off(b) + P(c)
  EXPECT_DOUBLE_EQ(lm.score_word(start, "b").logprob, -0.5 + -1.5);
  EXPECT_DOUBLE_EQ(lm.score_word(start, "zebra").logprob, -0.5 + -3.0);  // <unk>

  EXPECT_DOUBLE_EQ(lm.score_sentence({}), -0.5 + -1.0);
  EXPECT_DOUBLE_EQ(lm.score_sentence({"a", "b"}), -0.4 + -0.6 + -0.7);
  EXPECT_DOUBLE_EQ(lm.score_sentence({"a", "b", "c"}), -0.4 + -0.6 + (-0.2 + -2.0) + -1.0);
  EXPECT_DOUBLE_EQ(lm.score_sentence({"A", "C"}), -0.4 + -0.9 + -1.0);
}

TEST(Arpa, SentenceScoreIsSumOfSteps) {
  const NGramLM lm = parse_arpa_string(kBigram);
  std::mt19937_64 rng(1);
  const std::vector<std::string> words = {"a", "b", "c", "x"};
  std::uniform_int_distribution<int> pick(0, 3), len(0, 6);
  for (int i = 0; i < 100; ++i) {
    std::vector<std::string> s;
    const int n = len(rng);
    for (int k = 0; k < n; ++k) s.push_back(words[static_cast<std::size_t>(pick(rng))]);
    LMState st = lm.begin_state();
    double total = 0.0;
    for (const auto& w : s) {
      const WordScore ws = lm.score_word(st, w);
      total += ws.logprob;
      st = ws.next;
      EXPECT_LE(st.size(), 1u);
    }
    total += lm.score_word(st, "</s>").logprob;
    EXPECT_EQ(lm.score_sentence(s), total);
    EXPECT_EQ(lm.score_sentence(s), lm.score_sentence(s));
  }
}

TEST(Arpa, StateIsLongestKnownSuffix) {
  const NGramLM lm = parse_arpa_string(
      "\\data\\\nngram 1=5\nngram 2=2\nngram 3=1\n\n\\1-grams:\n-1\t</s>\n-99\t<s>\t-0.1\n-1\ta\t-0.2\n-1\tb\t-0.3\n-2\t<unk>\n"
      "\n\\2-grams:\n-0.5\t<s>\ta\t-0.4\n-0.6\ta\tb\n\n\\3-grams:\n-0.05\t<s>\ta\tb\n\n\\end\\\n");
  const LMState s1 = lm.score_word(lm.begin_state(), "a").next;
  EXPECT_EQ(s1.size(), 2u);  // "<s> a" is a context
  const WordScore s2 = lm.score_word(s1, "b");
  EXPECT_EQ(s2.logprob, -0.05);
  EXPECT_EQ(s2.next, (LMState{*lm.id("a"), *lm.id("b")}));
  const WordScore s3 = lm.score_word(s2.next, "a");
  EXPECT_DOUBLE_EQ(s3.logprob, -0.3 + -1.0);  // "a b a" and "b a" absent
  EXPECT_EQ(s3.next, LMState{*lm.id("a")});   // "b a" unknown, so only "a" is kept
}

TEST(Arpa, RoundTrip) {
  const NGramLM lm = parse_arpa_string(kBigram);
  std::ostringstream os;
  lm.write_arpa(os);
  const NGramLM again = parse_arpa_string(os.str());
  ASSERT_EQ(again.max_order(), lm.max_order());
  for (int k = 1; k <= lm.max_order(); ++k) {
    ASSERT_EQ(again.count(k), lm.count(k));
    for (const auto& [key, entry] : lm.table(k)) {
      std::vector<int> mapped;
      for (int id : key) mapped.push_back(*again.id(lm.vocab()[static_cast<std::size_t>(id)]));
      const NGramEntry* e = again.find(mapped);
      ASSERT_NE(e, nullptr);
      EXPECT_EQ(e->logprob, entry.logprob);
      EXPECT_EQ(e->backoff, entry.backoff);
    }
  }
}

TEST(Arpa, MalformedFilesReportTheLine) {
  // 1: header declares five bigrams, four present: reported at \end\ (line 19).
  std::string count = kBigram;
  count.replace(count.find("ngram 2=4"), 9, "ngram 2=5");
  EXPECT_EQ(error_line(count), 19u);
  // 2: positive log probability on line 8.
  std::string positive = kBigram;
  positive.replace(positive.find("-1.2\ta"), 6, "0.2\ta");
  EXPECT_EQ(error_line(positive), 8u);
  // 3: missing \end\ is reported just past the last line.
  std::string no_end = kBigram;
  no_end.erase(no_end.find("\\end\\"));
  EXPECT_EQ(error_line(no_end), 19u);
  // 4: bigram whose word has no unigram, line 16.
  std::string orphan = kBigram;
  orphan.replace(orphan.find("-0.7\tb\t</s>"), 11, "-0.7\tb\tzzz");
  EXPECT_EQ(error_line(orphan), 16u);
  // 5: entry with too many fields, line 15.
  std::string fields = kBigram;
  fields.replace(fields.find("-0.6\ta\tb"), 8, "-0.6\ta\tb\t-1\t-2");
  EXPECT_EQ(error_line(fields), 15u);
  // 6: sections out of order, line 5.
  std::string order = kBigram;
  order.replace(order.find("\\1-grams:"), 9, "\\2-grams:");
  EXPECT_EQ(error_line(order), 5u);
  // 7: duplicate entry on line 10.
  std::string dup = kBigram;
  dup.replace(dup.find("-2.0\tc"), 6, "-2.0\ta");
  EXPECT_EQ(error_line(dup), 10u);
}

TEST(Arpa, MissingUnkPolicy) {
  NGramLM lm = parse_arpa_string("\\data\\\nngram 1=2\n\n\\1-grams:\n-0.5\tx\n-0.6\t</s>\n\n\\end\\\n");
  EXPECT_FALSE(lm.has_unk());
  EXPECT_THROW(lm.score_word(lm.begin_state(), "nope"), DataError);
  lm.set_unk_floor(-7.0);
  EXPECT_EQ(lm.score_word(lm.begin_state(), "nope").logprob, -7.0);
}

TEST(Arpa, LoadsPlainAndGzipFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "lasr_lm_test";
  std::filesystem::create_directories(dir);
  {
    std::ofstream(dir / "m.arpa") << kBigram;
    gzFile gz = gzopen((dir / "m.arpa.gz").string().c_str(), "wb");
    gzwrite(gz, kBigram, static_cast<unsigned>(std::strlen(kBigram)));
    gzclose(gz);
  }
  EXPECT_EQ(load_arpa(dir / "m.arpa").score_sentence({"a", "b"}), load_arpa(dir / "m.arpa.gz").score_sentence({"a", "b"}));
  EXPECT_THROW(load_arpa(dir / "absent.arpa"), DataError);
}

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "lasr/features.hpp"
#include "lasr/model.hpp"
#include "oracles.hpp"

using namespace lasr;

namespace {

Waveform sine(double hz, double seconds, double amp = 0.5) {
  Waveform w;
  const int n = static_cast<int>(seconds * kSampleRate);
  for (int i = 0; i < n; ++i) w.samples.push_back(amp * std::sin(2.0 * std::numbers::pi * hz * i / kSampleRate));
  return w;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("lasr_features_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

}  // namespace

TEST(Mfsc, FrameCountForOneSecond) {
  Waveform w;
  w.samples.assign(16000, 0.1);
  const FeatureSequence f = compute_mfsc(w);
  EXPECT_EQ(f.num_frames(), 98);
  EXPECT_EQ(f.dim(), 40);
}

TEST(Mfsc, FrameCountFormula) {
  for (std::int64_t len = 400; len < 2000; len += 37) {
    for (std::int64_t stride : {80, 160, 200}) {
      EXPECT_EQ(frame_count(len, 400, stride), (len - 400) / stride + 1);
    }
  }
  EXPECT_EQ(frame_count(399, 400, 160), 0);
}

TEST(Mfsc, SilenceIsLogFloor) {
  Waveform w;
  w.samples.assign(4000, 0.0);
  const FeatureSequence f = compute_mfsc(w);
  const float floor = static_cast<float>(std::log(1e-10));
  for (Eigen::Index t = 0; t < f.num_frames(); ++t) {
    for (Eigen::Index j = 0; j < f.dim(); ++j) ASSERT_EQ(f.frames(t, j), floor);
  }
}

TEST(Mfsc, ErrorsAndChecks) {
  Waveform shortw;
  shortw.samples.assign(399, 0.1);
  try {
    compute_mfsc(shortw);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("audio too short"), std::string::npos);
  }
  Waveform wrong_rate;
  wrong_rate.samples.assign(16000, 0.1);
  wrong_rate.sample_rate = 8000;
  EXPECT_THROW(compute_mfsc(wrong_rate), DataError);
  EXPECT_THROW(compute_mfsc(Waveform{}), DataError);
  MfscOptions bad;
  bad.window_ms = 5;
  EXPECT_THROW(compute_mfsc(sine(440, 0.1), bad), UsageError);
}

TEST(Mfsc, MatchesDirectDftOracle) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> d(0.0, 0.2);
  Waveform w;
  for (int i = 0; i < 1600; ++i) w.samples.push_back(d(rng));
  const FeatureSequence f = compute_mfsc(w);
  ASSERT_EQ(f.num_frames(), 8);
  for (Eigen::Index t = 0; t < f.num_frames(); ++t) {
    const auto ref = oracle::mfsc_frame(w.samples, static_cast<std::size_t>(t) * 160, 400, 512, 40, 16000.0);
    for (int b = 0; b < 40; ++b) EXPECT_NEAR(f.frames(t, b), ref[static_cast<std::size_t>(b)], 1e-4);
  }
}

TEST(Mfsc, SinusoidPeaksInItsBand) {
  for (int band : {5, 12, 20, 31}) {
    const double hz = oracle::band_center(band, 40, 8000.0);
    const Waveform w = sine(hz, 0.2);
    const FeatureSequence f = compute_mfsc(w);
    for (Eigen::Index t = 1; t + 1 < f.num_frames(); ++t) {
      Eigen::Index arg;
      f.frames.row(t).maxCoeff(&arg);
      EXPECT_EQ(arg, band) << "frame " << t << " at " << hz << " Hz";
      const auto ref = oracle::mfsc_frame(w.samples, static_cast<std::size_t>(t) * 160, 400, 512, 40, 16000.0);
      EXPECT_EQ(std::max_element(ref.begin(), ref.end()) - ref.begin(), band);
    }
  }
}

TEST(Mfsc, Deterministic) {
  const Waveform w = sine(700, 0.3);
  EXPECT_EQ(compute_mfsc(w).frames, compute_mfsc(w).frames);
}

TEST(Normalize, ConstantInputBecomesZero) {
  FeatureSequence f;
  f.frames = MatrixF::Constant(10, 4, 3.25f);
  const FeatureSequence n = normalize(f);
  EXPECT_EQ(n.frames.cwiseAbs().maxCoeff(), 0.0f);
}

TEST(Normalize, MomentsAndIdempotence) {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> d(3.0, 5.0);
  FeatureSequence f;
  f.frames.resize(98, 40);
  for (Eigen::Index t = 0; t < 98; ++t) {
    for (Eigen::Index j = 0; j < 40; ++j) f.frames(t, j) = static_cast<float>(d(rng));
  }
  const FeatureSequence n = normalize(f);
  for (Eigen::Index j = 0; j < 40; ++j) {
    double mean = 0.0, var = 0.0;
    for (Eigen::Index t = 0; t < 98; ++t) mean += n.frames(t, j);
    mean /= 98.0;
    for (Eigen::Index t = 0; t < 98; ++t) var += (n.frames(t, j) - mean) * (n.frames(t, j) - mean);
    var /= 98.0;
    EXPECT_LT(std::abs(mean), 1e-6);
    EXPECT_LT(std::abs(var - 1.0), 1e-6);
  }
  const FeatureSequence nn = normalize(n);
  EXPECT_LT((nn.frames - n.frames).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Pad, IdentityAndSplit) {
  FeatureSequence f;
  f.frames = MatrixF::Ones(5, 3);
  EXPECT_EQ(pad(f, 0).frames, f.frames);
  const FeatureSequence p = pad(f, 4);
  ASSERT_EQ(p.num_frames(), 9);
  for (int t : {0, 1, 7, 8}) EXPECT_EQ(p.frames.row(t).cwiseAbs().sum(), 0.0f);
  for (int t = 2; t <= 6; ++t) EXPECT_EQ(p.frames.row(t), f.frames.row(t - 2));
  const FeatureSequence odd = pad(f, 3);
  ASSERT_EQ(odd.num_frames(), 8);
  EXPECT_EQ(odd.frames.row(1).cwiseAbs().sum(), 0.0f);
  EXPECT_EQ(odd.frames.row(2), f.frames.row(0));
  EXPECT_EQ(odd.frames.row(7).cwiseAbs().sum(), 0.0f);
  EXPECT_EQ(odd.frames.row(6), f.frames.row(4));
}

TEST(Pad, ModelOutputLengthEqualsUnpaddedLength) {
  ArchSpec a;
  a.n_conv_layers = 3;
  a.hu_first = 4;
  a.hu_last = 6;
  a.kw_first = 3;
  a.kw_last = 6;
  a.fc_size = 5;
  a.input_dim = 8;
  a.dropout_first = a.dropout_last = 1.0;
  const Model<float> m(a, 7, 1);
  std::int64_t sum = 0;
  for (const auto& s : expand_arch(a)) sum += s.kw - 1;
  EXPECT_EQ(m.padding(), sum);
  for (int T : {1, 4, 13}) {
    FeatureSequence f;
    f.frames = MatrixF::Random(T, 8);
    EXPECT_EQ(m.forward(pad(f, m.padding()), Mode::eval, 0).rows(), T);
  }
}

TEST(Wav, RoundTripAndStereoRejected) {
  const auto dir = temp_dir("wav");
  Waveform w = sine(440, 0.05);
  write_wav(dir / "a.wav", w);
  const Waveform r = read_wav(dir / "a.wav");
  ASSERT_EQ(r.samples.size(), w.samples.size());
  for (std::size_t i = 0; i < w.samples.size(); ++i) EXPECT_NEAR(r.samples[i], w.samples[i], 1.0 / 32767.0);

  // Same header with the channel count set to 2.
  auto bytes = detail::slurp(dir / "a.wav");
  bytes[22] = 2;
  std::ofstream(dir / "stereo.wav", std::ios::binary).write(reinterpret_cast<const char*>(bytes.data()),
                                                            static_cast<std::streamsize>(bytes.size()));
  EXPECT_THROW(read_wav(dir / "stereo.wav"), DataError);
  EXPECT_THROW(read_wav(dir / "missing.wav"), DataError);
}

TEST(FeatureFile, RoundTripLayout) {
  const auto dir = temp_dir("feat");
  FeatureSequence f;
  f.frames = MatrixF::Random(3, 2);
  write_feature_file(dir / "x.feat", f);
  const auto bytes = detail::slurp(dir / "x.feat");
  ASSERT_EQ(bytes.size(), 8u + 3 * 2 * 4);
  EXPECT_EQ(bytes[0], 3);
  EXPECT_EQ(bytes[4], 2);
  float second;
  std::memcpy(&second, bytes.data() + 12, 4);
  EXPECT_EQ(second, f.frames(0, 1));
  EXPECT_EQ(read_feature_file(dir / "x.feat").frames, f.frames);
}

#pragma once

// Log-mel filterbank (MFSC) front end: 16 kHz PCM in, normalized and
// zero-padded T x 40 feature matrices out.

#include <fftw3.h>

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <string>
#include <vector>

#include "lasr/core.hpp"

namespace lasr {

inline constexpr int kSampleRate = 16000;
inline constexpr double kLogFloor = 1e-10;
inline constexpr double kVarianceFloor = 1e-5;

struct Waveform {
  std::vector<double> samples;  // amplitudes in [-1, 1]
  int sample_rate = kSampleRate;
};

struct FeatureSequence {
  MatrixF frames;  // T x d
  double frame_shift_ms = 10.0;
  double frame_length_ms = 25.0;

  Eigen::Index num_frames() const { return frames.rows(); }
  Eigen::Index dim() const { return frames.cols(); }
};

struct MfscOptions {
  int n_mels = 40;
  double window_ms = 25.0;
  double stride_ms = 10.0;
};

inline int ms_to_samples(double ms, int sample_rate) {
  return static_cast<int>(std::lround(ms * sample_rate / 1000.0));
}

/// Number of frames for `num_samples` samples; 0 when shorter than a window.
inline std::int64_t frame_count(std::int64_t num_samples, std::int64_t window, std::int64_t stride) {
  if (num_samples < window) return 0;
  return (num_samples - window) / stride + 1;
}

inline std::size_t fft_size_for(std::size_t window) {
  std::size_t n = 1;
  while (n < window) n <<= 1;
  return n;
}

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Center frequencies (Hz) of the n_mels triangular filters spanning 0..Nyquist.
inline std::vector<double> mel_center_frequencies(int n_mels, int sample_rate) {
  const double lo = hz_to_mel(0.0);
  const double hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> centers(n_mels);
  for (int m = 0; m < n_mels; ++m) {
    centers[m] = mel_to_hz(lo + (hi - lo) * (m + 1) / (n_mels + 1));
  }
  return centers;
}

/// Triangular mel filterbank, n_mels x (fft_size/2 + 1).
inline MatrixD mel_filterbank(int n_mels, std::size_t fft_size, int sample_rate) {
  const std::size_t n_bins = fft_size / 2 + 1;
  const double lo = hz_to_mel(0.0);
  const double hi = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(n_mels + 2);
  for (int i = 0; i < n_mels + 2; ++i) edges[i] = mel_to_hz(lo + (hi - lo) * i / (n_mels + 1));

  MatrixD fb = MatrixD::Zero(n_mels, static_cast<Eigen::Index>(n_bins));
  for (int m = 0; m < n_mels; ++m) {
    const double left = edges[m], center = edges[m + 1], right = edges[m + 2];
    for (std::size_t k = 0; k < n_bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
      double w = 0.0;
      if (f > left && f <= center) {
        w = (f - left) / (center - left);
      } else if (f > center && f < right) {
        w = (right - f) / (right - center);
      }
      fb(m, static_cast<Eigen::Index>(k)) = w;
    }
  }
  return fb;
}

inline std::vector<double> hamming_window(std::size_t n) {
  std::vector<double> w(n);
  if (n == 1) {
    w[0] = 1.0;
    return w;
  }
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return w;
}

namespace detail {

// FFTW planning is not thread-safe; execution on distinct buffers is.
inline std::mutex& fftw_plan_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(std::size_t n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard lock(fftw_plan_mutex());
    plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;
  ~RealFft() {
    {
      std::lock_guard lock(fftw_plan_mutex());
      fftw_destroy_plan(plan_);
    }
    fftw_free(in_);
    fftw_free(out_);
  }

  double* input() { return in_; }

  // Power spectrum |X_k|^2 for k in [0, n/2].
  void power(std::vector<double>& out) {
    fftw_execute(plan_);
    out.resize(n_ / 2 + 1);
    for (std::size_t k = 0; k <= n_ / 2; ++k) out[k] = out_[k][0] * out_[k][0] + out_[k][1] * out_[k][1];
  }

 private:
  std::size_t n_;
  double* in_ = nullptr;
  fftw_complex* out_ = nullptr;
  fftw_plan plan_ = nullptr;
};

}  // namespace detail

inline FeatureSequence compute_mfsc(const Waveform& w, const MfscOptions& opts = {}) {
  if (w.samples.empty()) throw DataError("compute_mfsc: empty waveform");
  if (w.sample_rate != kSampleRate) {
    throw DataError("compute_mfsc: unsupported sample rate " + std::to_string(w.sample_rate) +
                    " (expected 16000)");
  }
  if (opts.window_ms < opts.stride_ms || opts.stride_ms <= 0.0) {
    throw UsageError("compute_mfsc: window must be at least as long as the stride");
  }
  if (opts.n_mels < 1) throw UsageError("compute_mfsc: n_mels must be positive");

  const int window = ms_to_samples(opts.window_ms, w.sample_rate);
  const int stride = ms_to_samples(opts.stride_ms, w.sample_rate);
  const auto n_frames = frame_count(static_cast<std::int64_t>(w.samples.size()), window, stride);
  if (n_frames == 0) throw DataError("compute_mfsc: audio too short");

  const std::size_t nfft = fft_size_for(static_cast<std::size_t>(window));
  const MatrixD fb = mel_filterbank(opts.n_mels, nfft, w.sample_rate);
  const auto win = hamming_window(static_cast<std::size_t>(window));

  detail::RealFft fft(nfft);
  std::vector<double> power;

  FeatureSequence out;
  out.frame_length_ms = opts.window_ms;
  out.frame_shift_ms = opts.stride_ms;
  out.frames.resize(n_frames, opts.n_mels);
  for (std::int64_t t = 0; t < n_frames; ++t) {
    double* buf = fft.input();
    const double* src = w.samples.data() + t * stride;
    for (int i = 0; i < window; ++i) buf[i] = src[i] * win[i];
    std::fill(buf + window, buf + nfft, 0.0);
    fft.power(power);
    const Eigen::Map<const VectorD> p(power.data(), static_cast<Eigen::Index>(power.size()));
    const VectorD energies = fb * p;
    for (int m = 0; m < opts.n_mels; ++m) {
      out.frames(t, m) = static_cast<float>(std::log(kLogFloor + energies(m)));
    }
  }
  return out;
}

/// Per-coefficient zero-mean / unit-variance normalization over frames.
inline FeatureSequence normalize(const FeatureSequence& f) {
  FeatureSequence out = f;
  const Eigen::Index T = f.frames.rows();
  if (T == 0) return out;
  for (Eigen::Index j = 0; j < f.frames.cols(); ++j) {
    double mean = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) mean += f.frames(t, j);
    mean /= static_cast<double>(T);
    double var = 0.0;
    for (Eigen::Index t = 0; t < T; ++t) {
      const double d = f.frames(t, j) - mean;
      var += d * d;
    }
    var /= static_cast<double>(T);
    const double scale = 1.0 / std::sqrt(std::max(var, kVarianceFloor));
    for (Eigen::Index t = 0; t < T; ++t) {
      out.frames(t, j) = static_cast<float>((f.frames(t, j) - mean) * scale);
    }
  }
  return out;
}

/// Inserts ceil(total_pad/2) zero frames in front and floor(total_pad/2) behind.
inline FeatureSequence pad(const FeatureSequence& f, std::int64_t total_pad) {
  if (total_pad < 0) throw UsageError("pad: negative padding");
  const Eigen::Index front = (total_pad + 1) / 2;
  FeatureSequence out = f;
  out.frames = MatrixF::Zero(f.frames.rows() + total_pad, f.frames.cols());
  out.frames.middleRows(front, f.frames.rows()) = f.frames;
  return out;
}

// --- RIFF/WAVE ------------------------------------------------------------

namespace detail {

inline std::uint32_t read_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
inline std::uint16_t read_u16_le(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void put_u32_le(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
inline void put_u16_le(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}
inline void put_f32_le(std::ostream& os, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32_le(os, bits);
}
inline float read_f32_le(const unsigned char* p) {
  const std::uint32_t bits = read_u32_le(p);
  float f;
  std::memcpy(&f, &bits, 4);
  return f;
}

inline std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(path.string() + ": file not found");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

/// Reads mono 16-bit PCM WAV. Stereo and other encodings are rejected.
inline Waveform read_wav(const std::filesystem::path& path) {
  const auto bytes = detail::slurp(path);
  const std::string name = path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw DataError(name + ": not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    const std::uint32_t size = detail::read_u32_le(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw DataError(name + ": truncated chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw DataError(name + ": malformed fmt chunk");
      format = detail::read_u16_le(bytes.data() + body);
      channels = detail::read_u16_le(bytes.data() + body + 2);
      rate = detail::read_u32_le(bytes.data() + body + 4);
      bits = detail::read_u16_le(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw DataError(name + ": data chunk before fmt chunk");
      if (format != 1 || bits != 16) throw DataError(name + ": only 16-bit PCM is supported");
      if (channels != 1) {
        throw DataError(name + ": expected mono audio, got " + std::to_string(channels) + " channels");
      }
      Waveform w;
      w.sample_rate = static_cast<int>(rate);
      w.samples.resize(size / 2);
      for (std::size_t i = 0; i < w.samples.size(); ++i) {
        const auto raw = static_cast<std::int16_t>(detail::read_u16_le(bytes.data() + body + 2 * i));
        w.samples[i] = raw / 32768.0;
      }
      if (w.sample_rate != kSampleRate) {
        throw DataError(name + ": sample rate " + std::to_string(rate) + " is not 16000");
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw DataError(name + ": missing data chunk");
}

inline void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  const auto n = static_cast<std::uint32_t>(w.samples.size());
  os.write("RIFF", 4);
  detail::put_u32_le(os, 36 + 2 * n);
  os.write("WAVEfmt ", 8);
  detail::put_u32_le(os, 16);
  detail::put_u16_le(os, 1);
  detail::put_u16_le(os, 1);
  detail::put_u32_le(os, static_cast<std::uint32_t>(w.sample_rate));
  detail::put_u32_le(os, static_cast<std::uint32_t>(w.sample_rate) * 2);
  detail::put_u16_le(os, 2);
  detail::put_u16_le(os, 16);
  os.write("data", 4);
  detail::put_u32_le(os, 2 * n);
  for (double s : w.samples) {
    const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
    detail::put_u16_le(os, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::lround(c * 32768.0))));
  }
}

// --- Matrix files: u32 rows, u32 cols, rows*cols little-endian f32 -------

inline void write_matrix_file(const std::filesystem::path& path, const MatrixF& m) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot open for writing");
  detail::put_u32_le(os, static_cast<std::uint32_t>(m.rows()));
  detail::put_u32_le(os, static_cast<std::uint32_t>(m.cols()));
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) detail::put_f32_le(os, m(t, j));
  }
}

inline MatrixF read_matrix_file(const std::filesystem::path& path) {
  const auto bytes = detail::slurp(path);
  if (bytes.size() < 8) throw DataError(path.string() + ": truncated header");
  const std::uint32_t rows = detail::read_u32_le(bytes.data());
  const std::uint32_t cols = detail::read_u32_le(bytes.data() + 4);
  const std::size_t expected = 8 + 4ull * rows * cols;
  if (bytes.size() != expected) {
    throw DataError(path.string() + ": size mismatch (expected " + std::to_string(expected) + " bytes, got " +
                    std::to_string(bytes.size()) + ")");
  }
  MatrixF m(rows, cols);
  const unsigned char* p = bytes.data() + 8;
  for (std::uint32_t t = 0; t < rows; ++t) {
    for (std::uint32_t j = 0; j < cols; ++j, p += 4) m(t, j) = detail::read_f32_le(p);
  }
  return m;
}

inline void write_feature_file(const std::filesystem::path& path, const FeatureSequence& f) {
  write_matrix_file(path, f.frames);
}

inline FeatureSequence read_feature_file(const std::filesystem::path& path) {
  FeatureSequence f;
  f.frames = read_matrix_file(path);
  return f;
}

}  // namespace lasr

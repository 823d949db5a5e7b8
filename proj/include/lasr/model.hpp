#pragma once

// Gated ConvNet acoustic model: a stack of 1D convolutions with gated linear
// units, a gated fully connected layer and a linear output layer. Every
// kernel is weight-normalized; dropout (inverted scaling) follows each gated
// block. Gradients are computed by hand-written reverse passes.

#include <json.hpp>

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "lasr/core.hpp"
#include "lasr/features.hpp"

namespace lasr {

// --- Architecture -----------------------------------------------------------

struct ArchSpec {
  int n_conv_layers = 1;
  double dropout_first = 1.0;  // retain probabilities
  double dropout_last = 1.0;
  int hu_first = 1;
  int hu_last = 1;
  int kw_first = 1;
  int kw_last = 1;
  int fc_size = 1;
  int n_labels = 30;
  int input_dim = 40;

  bool operator==(const ArchSpec&) const = default;
};

struct LayerShape {
  int hu = 0;
  int kw = 0;
  double keep = 1.0;
};

inline void validate(const ArchSpec& a) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw DataError("arch." + field + ": " + why);
  };
  if (a.n_conv_layers < 1) fail("n_conv_layers", "must be >= 1");
  if (!(a.dropout_first > 0.0 && a.dropout_first <= 1.0)) fail("dropout_first", "must be in (0, 1]");
  if (!(a.dropout_last > 0.0 && a.dropout_last <= 1.0)) fail("dropout_last", "must be in (0, 1]");
  if (a.hu_first < 1) fail("hu_first", "must be >= 1");
  if (a.hu_last < 1) fail("hu_last", "must be >= 1");
  if (a.kw_first < 1) fail("kw_first", "must be >= 1");
  if (a.kw_last < 1) fail("kw_last", "must be >= 1");
  if (a.fc_size < 1) fail("fc_size", "must be >= 1");
  if (a.n_labels < 1) fail("n_labels", "must be >= 1");
  if (a.input_dim < 1) fail("input_dim", "must be >= 1");
}

namespace detail {

inline double interpolate(double first, double last, int i, int n) {
  if (n == 1) return first;
  return first + i * (last - first) / (n - 1);
}

inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

}  // namespace detail

/// Per-layer (hu, kw, keep) values, linearly interpolated between the first
/// and last layer and rounded half-up.
inline std::vector<LayerShape> expand_arch(const ArchSpec& a) {
  validate(a);
  std::vector<LayerShape> out(static_cast<std::size_t>(a.n_conv_layers));
  for (int i = 0; i < a.n_conv_layers; ++i) {
    out[i].hu = detail::round_half_up(detail::interpolate(a.hu_first, a.hu_last, i, a.n_conv_layers));
    out[i].kw = detail::round_half_up(detail::interpolate(a.kw_first, a.kw_last, i, a.n_conv_layers));
    out[i].keep = detail::interpolate(a.dropout_first, a.dropout_last, i, a.n_conv_layers);
  }
  return out;
}

/// Sum of (kw - 1) over the conv stack: the padding that preserves length.
inline std::int64_t total_padding(const ArchSpec& a) {
  std::int64_t pad = 0;
  for (const auto& l : expand_arch(a)) pad += l.kw - 1;
  return pad;
}

inline void to_json(nlohmann::json& j, const ArchSpec& a) {
  j = nlohmann::json{{"n_conv_layers", a.n_conv_layers}, {"dropout_first", a.dropout_first},
                     {"dropout_last", a.dropout_last},   {"hu_first", a.hu_first},
                     {"hu_last", a.hu_last},             {"kw_first", a.kw_first},
                     {"kw_last", a.kw_last},             {"fc_size", a.fc_size},
                     {"n_labels", a.n_labels},           {"input_dim", a.input_dim}};
}

/// Strict parse: unknown keys and missing required keys are errors naming the field.
inline ArchSpec arch_from_json(const nlohmann::json& j, const std::string& where = "arch") {
  if (!j.is_object()) throw DataError(where + ": expected an object");
  static const std::vector<std::string> required = {"n_conv_layers", "dropout_first", "dropout_last",
                                                    "hu_first",      "hu_last",       "kw_first",
                                                    "kw_last",       "fc_size"};
  static const std::vector<std::string> optional = {"n_labels", "input_dim"};
  for (const auto& [key, _] : j.items()) {
    if (std::find(required.begin(), required.end(), key) == required.end() &&
        std::find(optional.begin(), optional.end(), key) == optional.end()) {
      throw DataError(where + "." + key + ": unknown field");
    }
  }
  for (const auto& key : required) {
    if (!j.contains(key)) throw DataError(where + "." + key + ": missing field");
  }
  auto get_int = [&](const std::string& key) {
    if (!j.at(key).is_number_integer()) throw DataError(where + "." + key + ": expected an integer");
    return j.at(key).get<int>();
  };
  auto get_num = [&](const std::string& key) {
    if (!j.at(key).is_number()) throw DataError(where + "." + key + ": expected a number");
    return j.at(key).get<double>();
  };
  ArchSpec a;
  a.n_conv_layers = get_int("n_conv_layers");
  a.dropout_first = get_num("dropout_first");
  a.dropout_last = get_num("dropout_last");
  a.hu_first = get_int("hu_first");
  a.hu_last = get_int("hu_last");
  a.kw_first = get_int("kw_first");
  a.kw_last = get_int("kw_last");
  a.fc_size = get_int("fc_size");
  if (j.contains("n_labels")) a.n_labels = get_int("n_labels");
  if (j.contains("input_dim")) a.input_dim = get_int("input_dim");
  try {
    validate(a);
  } catch (const DataError& e) {
    throw DataError(where.substr(0, where.rfind("arch")) + e.what());
  }
  return a;
}

// --- Parameters -------------------------------------------------------------

/// Named parameter tensors in declaration order; gradients share the layout.
template <typename Real>
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Matrix<Real>> tensors;

  std::size_t size() const { return tensors.size(); }

  ParamSet zeros_like() const {
    ParamSet z;
    z.names = names;
    for (const auto& t : tensors) z.tensors.push_back(Matrix<Real>::Zero(t.rows(), t.cols()));
    return z;
  }

  std::int64_t num_elements() const {
    std::int64_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
  }
};

/// w = g * v / ||v|| per output row; a zero direction gives a zero row.
template <typename Real>
Matrix<Real> effective_weight(const Matrix<Real>& v, const Matrix<Real>& g) {
  if (g.size() != v.rows()) throw DataError("weight norm: scale size does not match output channels");
  Matrix<Real> w(v.rows(), v.cols());
  for (Eigen::Index o = 0; o < v.rows(); ++o) {
    const Real norm = v.row(o).norm();
    if (!std::isfinite(static_cast<double>(norm))) {
      throw NumericError("weight norm: non-finite direction for output channel " + std::to_string(o));
    }
    if (norm > 0) {
      w.row(o) = v.row(o) * (g(o) / norm);
    } else {
      w.row(o).setZero();
    }
  }
  return w;
}

/// Pulls dL/dw back onto the direction v and the scale g.
template <typename Real>
void effective_weight_backward(const Matrix<Real>& v, const Matrix<Real>& g, const Matrix<Real>& grad_w,
                               Matrix<Real>& grad_v, Matrix<Real>& grad_g) {
  for (Eigen::Index o = 0; o < v.rows(); ++o) {
    const Real norm = v.row(o).norm();
    if (!(norm > 0)) continue;
    const auto dir = v.row(o) / norm;
    const Real proj = grad_w.row(o).dot(dir);
    grad_g(o) += proj;
    grad_v.row(o) += (g(o) / norm) * (grad_w.row(o) - proj * dir);
  }
}

template <typename Real>
Matrix<Real> sigmoid(const Matrix<Real>& x) {
  return (Real(1) / (Real(1) + (-x.array()).exp())).matrix();
}

/// Unfolds X (T_in x d_in) into rows of width d_in*kw; column i*kw + k holds X(t + k, i).
template <typename Real>
Matrix<Real> unfold(const Matrix<Real>& x, int kw) {
  const Eigen::Index t_out = x.rows() - kw + 1;
  const Eigen::Index d_in = x.cols();
  Matrix<Real> cols(t_out, d_in * kw);
  for (Eigen::Index t = 0; t < t_out; ++t) {
    for (Eigen::Index i = 0; i < d_in; ++i) {
      for (int k = 0; k < kw; ++k) cols(t, i * kw + k) = x(t + k, i);
    }
  }
  return cols;
}

template <typename Real>
Matrix<Real> fold(const Matrix<Real>& cols, int kw, Eigen::Index d_in) {
  const Eigen::Index t_out = cols.rows();
  Matrix<Real> x = Matrix<Real>::Zero(t_out + kw - 1, d_in);
  for (Eigen::Index t = 0; t < t_out; ++t) {
    for (Eigen::Index i = 0; i < d_in; ++i) {
      for (int k = 0; k < kw; ++k) x(t + k, i) += cols(t, i * kw + k);
    }
  }
  return x;
}

/// One gated convolution: (X*W + b) . sigmoid(X*V + c). Kernels are stored
/// weight-normalized as (direction, scale) pairs; directions have shape
/// out x (in*kw), i.e. out x in x kw flattened row-major.
struct GluLayerRef {
  int in = 0, out = 0, kw = 1;
  std::size_t wv = 0, wg = 0, vv = 0, vg = 0, b = 0, c = 0;  // tensor indices
};

struct LinearLayerRef {
  int in = 0, out = 0;
  std::size_t wv = 0, wg = 0, b = 0;
};

template <typename Real>
struct GluCache {
  Matrix<Real> cols, lin, gate, w_eff, v_eff;
};

template <typename Real>
Matrix<Real> glu_conv_forward(const Matrix<Real>& x, const GluLayerRef& l, const ParamSet<Real>& p,
                              GluCache<Real>* cache = nullptr) {
  if (x.cols() != l.in) {
    throw DataError("glu layer: input has " + std::to_string(x.cols()) + " channels, expected " +
                    std::to_string(l.in));
  }
  if (x.rows() < l.kw) throw DataError("sequence shorter than kernel");
  Matrix<Real> cols = unfold(x, l.kw);
  Matrix<Real> w_eff = effective_weight(p.tensors[l.wv], p.tensors[l.wg]);
  Matrix<Real> v_eff = effective_weight(p.tensors[l.vv], p.tensors[l.vg]);
  Matrix<Real> lin = cols * w_eff.transpose();
  lin.rowwise() += p.tensors[l.b].row(0);
  Matrix<Real> pre = cols * v_eff.transpose();
  pre.rowwise() += p.tensors[l.c].row(0);
  Matrix<Real> gate = sigmoid(pre);
  Matrix<Real> out = lin.cwiseProduct(gate);
  if (cache != nullptr) {
    cache->cols = std::move(cols);
    cache->lin = std::move(lin);
    cache->gate = std::move(gate);
    cache->w_eff = std::move(w_eff);
    cache->v_eff = std::move(v_eff);
  }
  return out;
}

/// Accumulates parameter gradients into `grads` and returns dL/dX.
template <typename Real>
Matrix<Real> glu_conv_backward(const Matrix<Real>& grad_out, const GluLayerRef& l, const ParamSet<Real>& p,
                               const GluCache<Real>& c, ParamSet<Real>& grads) {
  const Matrix<Real> d_lin = grad_out.cwiseProduct(c.gate);
  const Matrix<Real> d_pre =
      grad_out.cwiseProduct(c.lin).cwiseProduct(c.gate).cwiseProduct((Real(1) - c.gate.array()).matrix());
  const Matrix<Real> d_w = d_lin.transpose() * c.cols;
  const Matrix<Real> d_v = d_pre.transpose() * c.cols;
  grads.tensors[l.b].row(0) += d_lin.colwise().sum();
  grads.tensors[l.c].row(0) += d_pre.colwise().sum();
  effective_weight_backward(p.tensors[l.wv], p.tensors[l.wg], d_w, grads.tensors[l.wv], grads.tensors[l.wg]);
  effective_weight_backward(p.tensors[l.vv], p.tensors[l.vg], d_v, grads.tensors[l.vv], grads.tensors[l.vg]);
  const Matrix<Real> d_cols = d_lin * c.w_eff + d_pre * c.v_eff;
  return fold(d_cols, l.kw, l.in);
}

// --- Dropout --------------------------------------------------------------

/// Bernoulli(keep) mask of the given shape.
template <typename Real>
Matrix<Real> dropout_mask(Eigen::Index rows, Eigen::Index cols, double keep, std::uint64_t seed) {
  if (!(keep > 0.0) || keep > 1.0) throw UsageError("dropout: retain probability must be in (0, 1]");
  Matrix<Real> mask(rows, cols);
  if (keep == 1.0) {
    mask.setOnes();
    return mask;
  }
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution keep_dist(keep);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) mask(r, c) = keep_dist(rng) ? Real(1) : Real(0);
  }
  return mask;
}

/// Inverted dropout: X . mask / keep.
template <typename Real>
Matrix<Real> apply_dropout(const Matrix<Real>& x, const Matrix<Real>& mask, double keep) {
  return (x.cwiseProduct(mask) * static_cast<Real>(1.0 / keep)).eval();
}

// --- Model ------------------------------------------------------------------

enum class Mode { train, eval };

template <typename Real>
struct ForwardCache {
  bool valid = false;
  std::vector<GluCache<Real>> glu;  // conv layers then fc1
  std::vector<Matrix<Real>> masks;  // one per gated block, empty in eval mode
  std::vector<double> keeps;
  Matrix<Real> fc1_out;             // post-dropout input to the output layer
};

template <typename Real>
class Model {
 public:
  Model() = default;

  /// Builds a model with `n_outputs` scores per frame (n_labels, plus one for a CTC blank).
  Model(const ArchSpec& arch, int n_outputs, std::uint64_t seed) : arch_(arch), n_outputs_(n_outputs) {
    validate(arch);
    if (n_outputs < 1) throw DataError("model: n_outputs must be positive");
    layout();
    initialize(seed);
  }

  /// Builds the tensor layout only; parameters are zero (to be overwritten).
  static Model with_layout(const ArchSpec& arch, int n_outputs) {
    Model m;
    m.arch_ = arch;
    m.n_outputs_ = n_outputs;
    validate(arch);
    m.layout();
    return m;
  }

  const ArchSpec& arch() const { return arch_; }
  int n_outputs() const { return n_outputs_; }
  const std::vector<LayerShape>& shapes() const { return shapes_; }
  const std::vector<GluLayerRef>& conv_layers() const { return conv_; }
  const GluLayerRef& fc1() const { return fc1_; }
  const LinearLayerRef& fc_out() const { return out_; }
  std::int64_t padding() const { return total_padding(arch_); }

  ParamSet<Real>& params() { return params_; }
  const ParamSet<Real>& params() const { return params_; }

  template <typename Other>
  Model<Other> cast() const {
    Model<Other> m = Model<Other>::with_layout(arch_, n_outputs_);
    for (std::size_t i = 0; i < params_.size(); ++i) m.params().tensors[i] = params_.tensors[i].template cast<Other>();
    return m;
  }

  /// Emissions for a padded input of T + padding() frames: a T x n_outputs table.
  Matrix<Real> forward(const Matrix<Real>& x, Mode mode, std::uint64_t seed, ForwardCache<Real>* cache = nullptr) const {
    if (x.cols() != arch_.input_dim) {
      throw DataError("model: input has " + std::to_string(x.cols()) + " features, expected " +
                      std::to_string(arch_.input_dim));
    }
    if (x.rows() <= padding()) throw DataError("model: input has no frames beyond the padding");
    ForwardCache<Real> local;
    ForwardCache<Real>& c = cache != nullptr ? *cache : local;
    c = ForwardCache<Real>{};
    const bool record = cache != nullptr;
    const std::size_t n_blocks = conv_.size() + 1;
    c.glu.resize(record ? n_blocks : 0);

    Matrix<Real> h = x;
    for (std::size_t i = 0; i < n_blocks; ++i) {
      const GluLayerRef& l = i < conv_.size() ? conv_[i] : fc1_;
      const double keep = i < conv_.size() ? shapes_[i].keep : arch_.dropout_last;
      h = glu_conv_forward(h, l, params_, record ? &c.glu[i] : nullptr);
      if (mode == Mode::train) {
        Matrix<Real> mask = dropout_mask<Real>(h.rows(), h.cols(), keep, mix_seed(seed, i));
        h = apply_dropout(h, mask, keep);
        if (record) c.masks.push_back(std::move(mask));
      }
      if (record) c.keeps.push_back(keep);
    }
    const Matrix<Real> w_out = effective_weight(params_.tensors[out_.wv], params_.tensors[out_.wg]);
    Matrix<Real> y = h * w_out.transpose();
    y.rowwise() += params_.tensors[out_.b].row(0);
    if (record) {
      c.fc1_out = std::move(h);
      c.valid = true;
    }
    return y;
  }

  Matrix<Real> forward(const FeatureSequence& f, Mode mode, std::uint64_t seed,
                       ForwardCache<Real>* cache = nullptr) const {
    return forward(Matrix<Real>(f.frames.template cast<Real>()), mode, seed, cache);
  }

  /// Parameter gradients for upstream gradient `grad_emissions` at the outputs
  /// of the forward pass recorded in `cache`.
  ParamSet<Real> backward(const ForwardCache<Real>& cache, const Matrix<Real>& grad_emissions) const {
    if (!cache.valid) throw Error("model backward called without a recorded forward pass");
    if (grad_emissions.rows() != cache.fc1_out.rows() || grad_emissions.cols() != n_outputs_) {
      throw DataError("model backward: gradient shape does not match emissions");
    }
    ParamSet<Real> grads = params_.zeros_like();
    const Matrix<Real>& out_v = params_.tensors[out_.wv];
    const Matrix<Real>& out_g = params_.tensors[out_.wg];
    const Matrix<Real> w_out = effective_weight(out_v, out_g);
    grads.tensors[out_.b].row(0) += grad_emissions.colwise().sum();
    const Matrix<Real> d_w = grad_emissions.transpose() * cache.fc1_out;
    effective_weight_backward(out_v, out_g, d_w, grads.tensors[out_.wv], grads.tensors[out_.wg]);
    Matrix<Real> d_h = grad_emissions * w_out;

    const std::size_t n_blocks = conv_.size() + 1;
    for (std::size_t k = n_blocks; k-- > 0;) {
      if (!cache.masks.empty()) d_h = apply_dropout(d_h, cache.masks[k], cache.keeps[k]);
      const GluLayerRef& l = k < conv_.size() ? conv_[k] : fc1_;
      d_h = glu_conv_backward(d_h, l, params_, cache.glu[k], grads);
    }
    return grads;
  }

 private:
  void layout() {
    shapes_ = expand_arch(arch_);
    params_ = ParamSet<Real>{};
    conv_.clear();
    auto add = [&](const std::string& name, Eigen::Index r, Eigen::Index c) {
      params_.names.push_back(name);
      params_.tensors.push_back(Matrix<Real>::Zero(r, c));
      return params_.size() - 1;
    };
    auto add_glu = [&](const std::string& prefix, int in, int out, int kw) {
      GluLayerRef l;
      l.in = in;
      l.out = out;
      l.kw = kw;
      l.wv = add(prefix + ".W.v", out, static_cast<Eigen::Index>(in) * kw);
      l.wg = add(prefix + ".W.g", 1, out);
      l.vv = add(prefix + ".V.v", out, static_cast<Eigen::Index>(in) * kw);
      l.vg = add(prefix + ".V.g", 1, out);
      l.b = add(prefix + ".b", 1, out);
      l.c = add(prefix + ".c", 1, out);
      return l;
    };
    int in = arch_.input_dim;
    for (std::size_t i = 0; i < shapes_.size(); ++i) {
      conv_.push_back(add_glu("conv" + std::to_string(i), in, shapes_[i].hu, shapes_[i].kw));
      in = shapes_[i].hu;
    }
    fc1_ = add_glu("fc1", in, arch_.fc_size, 1);
    out_.in = arch_.fc_size;
    out_.out = n_outputs_;
    out_.wv = add("fc_out.W.v", n_outputs_, arch_.fc_size);
    out_.wg = add("fc_out.W.g", 1, n_outputs_);
    out_.b = add("fc_out.b", 1, n_outputs_);
  }

  // Directions uniform in +-1/sqrt(fan_in); scales set to the row norms so the
  // initial effective weight equals the direction; biases zero.
  void initialize(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto init_pair = [&](std::size_t v_idx, std::size_t g_idx) {
      Matrix<Real>& v = params_.tensors[v_idx];
      const double bound = 1.0 / std::sqrt(static_cast<double>(v.cols()));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (Eigen::Index r = 0; r < v.rows(); ++r) {
        for (Eigen::Index c = 0; c < v.cols(); ++c) v(r, c) = static_cast<Real>(dist(rng));
        params_.tensors[g_idx](0, r) = v.row(r).norm();
      }
    };
    for (const auto& l : conv_) {
      init_pair(l.wv, l.wg);
      init_pair(l.vv, l.vg);
    }
    init_pair(fc1_.wv, fc1_.wg);
    init_pair(fc1_.vv, fc1_.vg);
    init_pair(out_.wv, out_.wg);
  }

  ArchSpec arch_;
  int n_outputs_ = 0;
  std::vector<LayerShape> shapes_;
  std::vector<GluLayerRef> conv_;
  GluLayerRef fc1_;
  LinearLayerRef out_;
  ParamSet<Real> params_;
};

}  // namespace lasr

#include <gtest/gtest.h>

#include <random>

#include "lasr/criterion.hpp"
#include "lasr/model.hpp"
#include "oracles.hpp"

using namespace lasr;

namespace {

ArchSpec small_arch() {
  ArchSpec a;
  a.n_conv_layers = 2;
  a.hu_first = 4;
  a.hu_last = 6;
  a.kw_first = 3;
  a.kw_last = 2;
  a.fc_size = 5;
  a.input_dim = 3;
  a.n_labels = 4;
  a.dropout_first = a.dropout_last = 1.0;
  return a;
}

// About 7k parameters.
ArchSpec toy_arch() {
  ArchSpec a;
  a.n_conv_layers = 3;
  a.hu_first = 12;
  a.hu_last = 20;
  a.kw_first = 3;
  a.kw_last = 5;
  a.fc_size = 24;
  a.input_dim = 8;
  a.n_labels = 30;
  a.dropout_first = 0.8;
  a.dropout_last = 0.7;
  return a;
}

MatrixD random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  std::normal_distribution<double> d(0.0, 1.0);
  MatrixD m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = d(rng);
  }
  return m;
}

struct Layer {
  GluLayerRef ref;
  ParamSet<double> params;
};

Layer make_layer(std::mt19937_64& rng, int in, int out, int kw) {
  Layer l;
  l.ref = GluLayerRef{in, out, kw, 0, 1, 2, 3, 4, 5};
  l.params.names = {"W.v", "W.g", "V.v", "V.g", "b", "c"};
  l.params.tensors = {random_matrix(rng, out, in * kw), random_matrix(rng, 1, out), random_matrix(rng, out, in * kw),
                      random_matrix(rng, 1, out),      random_matrix(rng, 1, out), random_matrix(rng, 1, out)};
  return l;
}

// Effective kernel as w[o][i][k], computed from (v, g) directly.
std::vector<std::vector<std::vector<double>>> kernel(const MatrixD& v, const MatrixD& g, int in, int kw) {
  std::vector<std::vector<std::vector<double>>> w(static_cast<std::size_t>(v.rows()),
                                                  std::vector<std::vector<double>>(in, std::vector<double>(kw)));
  for (Eigen::Index o = 0; o < v.rows(); ++o) {
    double norm = 0.0;
    for (Eigen::Index j = 0; j < v.cols(); ++j) norm += v(o, j) * v(o, j);
    norm = std::sqrt(norm);
    for (int i = 0; i < in; ++i) {
      for (int k = 0; k < kw; ++k) w[o][i][k] = norm == 0.0 ? 0.0 : g(0, o) * v(o, i * kw + k) / norm;
    }
  }
  return w;
}

std::vector<double> row(const MatrixD& m) { return std::vector<double>(m.data(), m.data() + m.size()); }

}  // namespace

TEST(Arch, WsjKernelInterpolation) {
  ArchSpec a{17, 0.25, 0.25, 100, 375, 3, 21, 1000, 30, 40};
  const auto layers = expand_arch(a);
  ASSERT_EQ(layers.size(), 17u);
  std::int64_t pad = 0;
  for (int i = 0; i < 17; ++i) {
    const int expected_kw = static_cast<int>(std::floor(3.0 + 1.125 * i + 0.5));
    EXPECT_EQ(layers[static_cast<std::size_t>(i)].kw, expected_kw);
    pad += expected_kw - 1;
  }
  EXPECT_EQ(layers[0].kw, 3);
  EXPECT_EQ(layers[1].kw, 4);
  EXPECT_EQ(layers[2].kw, 5);
  EXPECT_EQ(layers[16].kw, 21);
  EXPECT_EQ(layers[0].hu, 100);
  EXPECT_EQ(layers[16].hu, 375);
  EXPECT_EQ(total_padding(a), pad);
}

TEST(Arch, ConstantWhenFirstEqualsLast) {
  ArchSpec a{5, 0.5, 0.5, 64, 64, 7, 7, 128, 30, 40};
  for (const auto& l : expand_arch(a)) {
    EXPECT_EQ(l.hu, 64);
    EXPECT_EQ(l.kw, 7);
    EXPECT_EQ(l.keep, 0.5);
  }
}

TEST(Arch, ValidationAndJson) {
  ArchSpec bad = small_arch();
  bad.dropout_first = 0.0;
  EXPECT_THROW(validate(bad), Error);
  bad = small_arch();
  bad.kw_first = 0;
  EXPECT_THROW(validate(bad), Error);

  nlohmann::json j = small_arch();
  EXPECT_EQ(arch_from_json(j), small_arch());
  j["unexpected"] = 1;
  try {
    arch_from_json(j);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("arch.unexpected"), std::string::npos);
  }
}

TEST(Glu, MatchesTripleLoopOracle) {
  std::mt19937_64 rng(1);
  for (int inst = 0; inst < 10; ++inst) {
    Layer l = make_layer(rng, 2, 2, 3);
    const MatrixD x = random_matrix(rng, 6, 2);
    const auto& p = l.params.tensors;
    const MatrixD lin = oracle::conv1d(x, kernel(p[0], p[1], 2, 3), row(p[4]));
    const MatrixD pre = oracle::conv1d(x, kernel(p[2], p[3], 2, 3), row(p[5]));
    const MatrixD y = glu_conv_forward(x, l.ref, l.params);
    ASSERT_EQ(y.rows(), 4);
    for (Eigen::Index t = 0; t < 4; ++t) {
      for (Eigen::Index o = 0; o < 2; ++o) {
        EXPECT_NEAR(y(t, o), lin(t, o) / (1.0 + std::exp(-pre(t, o))), 1e-12);
      }
    }
  }
}

TEST(Glu, ZeroGateAndZeroLinearPaths) {
  std::mt19937_64 rng(2);
  Layer l = make_layer(rng, 3, 2, 2);
  const MatrixD x = random_matrix(rng, 5, 3);
  Layer gate_off = l;
  gate_off.params.tensors[2].setZero();
  gate_off.params.tensors[5].setZero();
  const MatrixD lin = oracle::conv1d(x, kernel(l.params.tensors[0], l.params.tensors[1], 3, 2), row(l.params.tensors[4]));
  EXPECT_LT((glu_conv_forward(x, gate_off.ref, gate_off.params) - 0.5 * lin).cwiseAbs().maxCoeff(), 1e-12);

  Layer lin_off = l;
  lin_off.params.tensors[0].setZero();
  lin_off.params.tensors[4].setZero();
  GluCache<double> cache;
  const MatrixD y = glu_conv_forward(x, lin_off.ref, lin_off.params, &cache);
  EXPECT_EQ(y.cwiseAbs().maxCoeff(), 0.0);
  ParamSet<double> grads = lin_off.params.zeros_like();
  glu_conv_backward(MatrixD::Ones(y.rows(), y.cols()).eval(), lin_off.ref, lin_off.params, cache, grads);
  EXPECT_EQ(grads.tensors[2].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(grads.tensors[3].cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(grads.tensors[5].cwiseAbs().maxCoeff(), 0.0);
}

TEST(Glu, ShorterThanKernelIsAnError) {
  std::mt19937_64 rng(3);
  Layer l = make_layer(rng, 2, 2, 4);
  EXPECT_THROW(glu_conv_forward(random_matrix(rng, 3, 2), l.ref, l.params), DataError);
}

TEST(Dropout, RetainProbability) {
  const MatrixD ones = dropout_mask<double>(7, 9, 1.0, 5);
  EXPECT_EQ(ones.sum(), 63.0);
  const MatrixD m = dropout_mask<double>(1000, 1000, 0.6, 42);
  const double frac = m.sum() / 1e6;
  EXPECT_NEAR(frac, 0.6, 0.002);
  EXPECT_EQ(dropout_mask<double>(10, 10, 0.6, 42), dropout_mask<double>(10, 10, 0.6, 42));
  EXPECT_THROW(dropout_mask<double>(2, 2, 0.0, 1), UsageError);
  const MatrixD x = MatrixD::Constant(2, 2, 3.0);
  EXPECT_EQ(apply_dropout(x, MatrixD::Ones(2, 2).eval(), 1.0), x);
}

TEST(Dropout, TrainWithKeepOneEqualsEval) {
  const Model<double> m(small_arch(), 4, 3);
  std::mt19937_64 rng(4);
  const MatrixD x = random_matrix(rng, 3 + m.padding(), 3);
  EXPECT_EQ(m.forward(x, Mode::train, 17), m.forward(x, Mode::eval, 0));
}

TEST(Dropout, EvalIgnoresRetainProbability) {
  ArchSpec a = small_arch();
  a.dropout_first = 0.3;
  a.dropout_last = 0.4;
  const Model<double> m(a, 4, 3);
  std::mt19937_64 rng(4);
  const MatrixD x = random_matrix(rng, 3 + m.padding(), 3);
  EXPECT_EQ(m.forward(x, Mode::eval, 1), m.forward(x, Mode::eval, 2));
  EXPECT_NE(m.forward(x, Mode::train, 1), m.forward(x, Mode::eval, 0));
}

TEST(WeightNorm, UnitDirection) {
  MatrixD v(1, 2);
  v << 0.6, 0.8;
  EXPECT_LT((effective_weight(v, MatrixD::Ones(1, 1).eval()) - v).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(WeightNorm, ScaleInvariance) {
  std::mt19937_64 rng(5);
  const MatrixD v = random_matrix(rng, 3, 4);
  const MatrixD g = random_matrix(rng, 1, 3);
  for (double lambda : {0.1, 2.0, 37.0}) {
    EXPECT_LT((effective_weight((lambda * v).eval(), g) - effective_weight(v, g)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(WeightNorm, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(6);
  MatrixD v = random_matrix(rng, 3, 4);
  MatrixD g = random_matrix(rng, 1, 3);
  const MatrixD c = random_matrix(rng, 3, 4);
  auto loss = [&] { return effective_weight(v, g).cwiseProduct(c).sum(); };
  MatrixD gv = MatrixD::Zero(3, 4), gg = MatrixD::Zero(1, 3);
  effective_weight_backward(v, g, c, gv, gg);
  EXPECT_LT(oracle::relative_error(gv, oracle::numeric_gradient(v, loss)), 1e-6);
  EXPECT_LT(oracle::relative_error(gg, oracle::numeric_gradient(g, loss)), 1e-6);
}

TEST(ModelForward, ZeroInputZeroParamsGivesOutputBias) {
  Model<double> m = Model<double>::with_layout(small_arch(), 4);
  auto& p = m.params();
  std::size_t bias = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p.names[i] == "fc_out.b") bias = i;
  }
  p.tensors[bias] << 1.0, -2.0, 0.5, 3.0;
  const MatrixD y = m.forward(MatrixD::Zero(5 + m.padding(), 3).eval(), Mode::eval, 0);
  ASSERT_EQ(y.rows(), 5);
  for (Eigen::Index t = 0; t < 5; ++t) EXPECT_EQ(y.row(t), p.tensors[bias].row(0));
}

TEST(ModelForward, LengthAndDeterminism) {
  const Model<float> m(toy_arch(), 30, 9);
  std::mt19937_64 rng(10);
  for (int T : {1, 2, 9, 20}) {
    const MatrixF x = random_matrix(rng, T + m.padding(), 8).cast<float>();
    const MatrixF a = m.forward(x, Mode::eval, 0);
    EXPECT_EQ(a.rows(), T);
    EXPECT_EQ(a.cols(), 30);
    EXPECT_EQ(a, m.forward(x, Mode::eval, 0));
  }
  EXPECT_THROW(m.forward(MatrixF::Zero(m.padding(), 8).eval(), Mode::eval, 0), DataError);
}

TEST(ModelForward, DirectionScalingLeavesEmissionsUnchanged) {
  Model<double> m(toy_arch(), 30, 11);
  std::mt19937_64 rng(12);
  const MatrixD x = random_matrix(rng, 6 + m.padding(), 8);
  const MatrixD before = m.forward(x, Mode::eval, 0);
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    if (m.params().names[i].ends_with(".v")) m.params().tensors[i] *= 3.7;
  }
  EXPECT_LT((m.forward(x, Mode::eval, 0) - before).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(ModelBackward, ZeroUpstreamGivesZeroGradients) {
  const Model<double> m(toy_arch(), 30, 13);
  std::mt19937_64 rng(14);
  ForwardCache<double> cache;
  const MatrixD y = m.forward(random_matrix(rng, 4 + m.padding(), 8), Mode::train, 3, &cache);
  const ParamSet<double> g = m.backward(cache, MatrixD::Zero(y.rows(), y.cols()));
  for (const auto& t : g.tensors) EXPECT_EQ(t.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(m.backward(ForwardCache<double>{}, MatrixD::Zero(y.rows(), y.cols())), Error);
}

TEST(ModelBackward, TwoLayerSumOfEmissionsMatchesFiniteDifferences) {
  Model<double> m(small_arch(), 4, 15);
  std::mt19937_64 rng(16);
  const MatrixD x = random_matrix(rng, 5 + m.padding(), 3);
  ForwardCache<double> cache;
  const MatrixD y = m.forward(x, Mode::eval, 0, &cache);
  const ParamSet<double> g = m.backward(cache, MatrixD::Ones(y.rows(), y.cols()));
  for (std::size_t i = 0; i < g.size(); ++i) {
    const MatrixD num = oracle::numeric_gradient(m.params().tensors[i], [&] { return m.forward(x, Mode::eval, 0).sum(); });
    EXPECT_LT(oracle::relative_error(g.tensors[i], num), 1e-5) << m.params().names[i];
  }
}

TEST(ModelBackward, ToyModelWithDropoutMatchesFiniteDifferences) {
  Model<double> m(toy_arch(), 30, 17);
  ASSERT_LE(m.params().num_elements(), 10000);
  std::mt19937_64 rng(18);
  const MatrixD x = random_matrix(rng, 6 + m.padding(), 8);
  const MatrixD c = random_matrix(rng, 6, 30);
  auto loss = [&] { return m.forward(x, Mode::train, 99).cwiseProduct(c).sum(); };
  ForwardCache<double> cache;
  m.forward(x, Mode::train, 99, &cache);
  const ParamSet<double> g = m.backward(cache, c);
  for (std::size_t i = 0; i < g.size(); ++i) {
    const MatrixD num = oracle::numeric_gradient(m.params().tensors[i], loss);
    EXPECT_LT(oracle::relative_error(g.tensors[i], num), 1e-5) << m.params().names[i];
  }
}

TEST(ModelBackward, CastPreservesParameters) {
  const Model<float> m(toy_arch(), 30, 19);
  const Model<double> d = m.cast<double>();
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    EXPECT_EQ(d.params().tensors[i].cast<float>(), m.params().tensors[i]);
  }
}

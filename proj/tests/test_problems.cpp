#include <gtest/gtest.h>
#include <zlib.h>

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "fd_oracle.hpp"
#include "ssamlab/idx.hpp"
#include "ssamlab/optimizers.hpp"
#include "ssamlab/problems.hpp"

using namespace ssamlab;
using ssamlab::testing::fd_gradient;
using ssamlab::testing::max_rel_error;

namespace {

template <class P>
double grad_error(const P& p, const ParamVector& w) {
  ParamVector g(w.size());
  p.loss_grad(w, g);
  const ParamVector fd = fd_gradient([&](const ParamVector& x) { return p.loss(x); }, w);
  return max_rel_error(g, fd);
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("ssamlab_test_" + name);
}

}  // namespace

// --- quadratic ------------------------------------------------------------

TEST(Quadratic, SmallestEigenvalueAtLeastDelta) {
  const auto q = quadratic_make(20, 0.01, 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(q.hessian())};
  EXPECT_GE(es.eigenvalues()(0), 0.01);
}

TEST(Quadratic, LargestEigenvalueMatchesPowerIterationOracle) {
  const auto q = quadratic_make(20, 0.01, 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es{Eigen::MatrixXd(q.hessian())};
  Eigen::VectorXd v = Eigen::VectorXd::Ones(20);
  double lambda = 0.0;
  for (int i = 0; i < 5000; ++i) {
    const Eigen::VectorXd hv = q.hessian() * v;
    lambda = v.dot(hv) / v.squaredNorm();
    v = hv.normalized();
  }
  EXPECT_NEAR(es.eigenvalues()(19), lambda, 0.05 * lambda);
}

TEST(Quadratic, ZeroVarianceAGivesIsotropicHessian) {
  const auto q = QuadraticProblem::make(2, 0.3, 9, 0.0);
  EXPECT_EQ(q.hessian()(0, 0), 0.3);
  EXPECT_EQ(q.hessian()(0, 1), 0.0);
  const ParamVector x{1.0, -2.0};
  EXPECT_DOUBLE_EQ(q.loss(x), 0.3 * 5.0 / 2.0);
}

TEST(Quadratic, RejectsNonPositiveDeltaAndZeroDim) {
  EXPECT_THROW(quadratic_make(5, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(quadratic_make(5, -1.0, 1), std::invalid_argument);
  EXPECT_THROW(quadratic_make(0, 0.1, 1), std::invalid_argument);
}

TEST(Quadratic, SymmetricAndStronglyConvexFloor) {
  RngStream r = derive_stream(4, 4);
  for (int inst = 0; inst < 10; ++inst) {
    const std::size_t d = 1 + r.below(20);
    const double delta = 0.01 + r.uniform();
    const auto q = quadratic_make(d, delta, 100 + inst);
    EXPECT_LE((q.hessian() - q.hessian().transpose()).cwiseAbs().maxCoeff(), 1e-12);
    for (int t = 0; t < 100; ++t) {
      const ParamVector x = gaussian_vector(r, d, 3.0);
      EXPECT_GE(q.loss(x), 0.5 * delta * dot(x, x) * (1 - 1e-12));
    }
  }
}

TEST(Quadratic, FromHessianRejectsAsymmetry) {
  RowMatrix h(2, 2);
  h << 1.0, 0.5, 0.0, 1.0;
  EXPECT_THROW(QuadraticProblem::from_hessian(h), std::invalid_argument);
}

// --- toy ------------------------------------------------------------------

TEST(Toy2D, StationaryPointsAndValues) {
  auto o = toy2d_loss_grad(ParamVector{0.0, 0.0});
  EXPECT_EQ(o.loss, 0.0);
  EXPECT_EQ(o.grad, (ParamVector{0.0, 0.0}));
  o = toy2d_loss_grad(ParamVector{1.0, 1.0});
  EXPECT_EQ(o.loss, -0.25);
  EXPECT_EQ(o.grad, (ParamVector{0.0, 0.0}));
  o = toy2d_loss_grad(ParamVector{-1.0, -1.0});
  EXPECT_EQ(o.grad, (ParamVector{0.0, 0.0}));
  o = toy2d_loss_grad(ParamVector{2.0, 0.0});
  EXPECT_EQ(o.loss, 4.0);
  EXPECT_EQ(o.grad, (ParamVector{8.0, -2.0}));
}

TEST(Toy2D, OddSymmetry) {
  RngStream r = derive_stream(6, 6);
  for (int t = 0; t < 1000; ++t) {
    const ParamVector x{r.uniform(-3, 3), r.uniform(-3, 3)};
    const auto a = toy2d_loss_grad(x), b = toy2d_loss_grad(-1.0 * x);
    EXPECT_EQ(a.loss, b.loss);
    EXPECT_EQ(a.grad[0], -b.grad[0]);
    EXPECT_EQ(a.grad[1], -b.grad[1]);
  }
}

TEST(Toy2D, RejectsWrongLength) { EXPECT_THROW(toy2d_loss_grad(ParamVector(3)), std::invalid_argument); }

// --- linear autoencoder ----------------------------------------------------

TEST(LinearAutoencoder, InitialLossNearHalfDimension) {
  const auto p = lae_make(20, 0.01, 1);
  EXPECT_NEAR(lae_loss_grad(p).loss, 10.0, 0.1);
}

TEST(LinearAutoencoder, ExactFactorizationsAreGlobalMinima) {
  LinearAutoencoderProblem one(1, ParamVector{1.0, 1.0});
  auto o = lae_loss_grad(one);
  EXPECT_EQ(o.loss, 0.0);
  EXPECT_EQ(o.grad, ParamVector(2, 0.0));
  // W1 = diag(2, 1/2), W2 = diag(1/2, 2): W2 W1 = I exactly.
  LinearAutoencoderProblem two(2, ParamVector{2.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 2.0});
  o = lae_loss_grad(two);
  EXPECT_EQ(o.loss, 0.0);
  EXPECT_EQ(o.grad, ParamVector(8, 0.0));
}

TEST(LinearAutoencoder, OriginIsStationary) {
  const LinearAutoencoderProblem p(2);
  const auto o = lae_loss_grad(p);
  EXPECT_EQ(o.loss, 1.0);
  EXPECT_EQ(o.grad, ParamVector(8, 0.0));
}

TEST(LinearAutoencoder, GradientMatchesClosedFormProducts) {
  const auto p = lae_make(3, 1.0, 5);
  const auto o = lae_loss_grad(p);
  Eigen::Map<const RowMatrix> w1(p.params().data(), 3, 3), w2(p.params().data() + 9, 3, 3);
  const Eigen::MatrixXd r = w2 * w1 - Eigen::MatrixXd::Identity(3, 3);
  const Eigen::MatrixXd g1 = w2.transpose() * r, g2 = r * w1.transpose();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      EXPECT_NEAR(o.grad[static_cast<std::size_t>(i * 3 + j)], g1(i, j), 1e-12);
      EXPECT_NEAR(o.grad[static_cast<std::size_t>(9 + i * 3 + j)], g2(i, j), 1e-12);
    }
}

TEST(LinearAutoencoder, RejectsBadParameterLength) {
  EXPECT_THROW(LinearAutoencoderProblem(2, ParamVector(7)), std::invalid_argument);
  EXPECT_THROW(lae_make(2, -1.0, 1), std::invalid_argument);
}

// --- finite differences, all four problems ---------------------------------

TEST(GradientCheck, QuadraticAgainstFiniteDifferences) {
  const auto q = quadratic_make(20, 0.01, 3);
  RngStream r = derive_stream(1, 100);
  for (int t = 0; t < 100; ++t) EXPECT_LT(grad_error(q, gaussian_vector(r, 20, 1.0)), 1e-5);
}

TEST(GradientCheck, ToyAgainstFiniteDifferences) {
  const Toy2DProblem p;
  RngStream r = derive_stream(1, 101);
  for (int t = 0; t < 100; ++t) EXPECT_LT(grad_error(p, ParamVector{r.uniform(-2, 2), r.uniform(-2, 2)}), 1e-5);
}

TEST(GradientCheck, AutoencoderAgainstFiniteDifferences) {
  const LinearAutoencoderProblem p(3);
  RngStream r = derive_stream(1, 102);
  for (int t = 0; t < 100; ++t) EXPECT_LT(grad_error(p, gaussian_vector(r, p.dim(), 1.0)), 1e-6);
}

TEST(GradientCheck, MlpAgainstFiniteDifferences) {
  const MlpProblem m({4, 8, 3});
  const Dataset data = synth_classification(5, 4, 3, 8);
  RngStream r = derive_stream(1, 103);
  int checked = 0;
  for (int draws = 0; checked < 100 && draws < 200; ++draws) {
    const auto c = ssamlab::testing::mlp_grad_check(m, data, m.init(r), 1e-5);
    if (c.crosses_kink) continue;
    ++checked;
    EXPECT_LT(c.error, 1e-5);
  }
  EXPECT_EQ(checked, 100);
}

TEST(GradientCheck, KinkDetectionFlagsStraddlingStencil) {
  // One hidden unit with pre-activation w0 * 1 + b; placing it at 0.5 h puts
  // the kink inside the stencil of w0 and makes the one-sided quotient wrong.
  const MlpProblem m({1, 1, 2});
  Dataset data;
  data.n = 1;
  data.p = 1;
  data.features = {1.0};
  data.labels = {0};
  data.classes = 2;
  ParamVector w(m.param_count(), 0.0);
  w[0] = 0.5e-5;    // input weight
  w[1] = 0.0;       // hidden bias
  w[2] = 1.0;       // hidden -> class 0
  const auto near = ssamlab::testing::mlp_grad_check(m, data, w, 1e-5);
  EXPECT_TRUE(near.crosses_kink);
  w[0] = 0.5;
  const auto far = ssamlab::testing::mlp_grad_check(m, data, w, 1e-5);
  EXPECT_FALSE(far.crosses_kink);
  EXPECT_LT(far.error, 1e-5);
}

// --- MLP ------------------------------------------------------------------

TEST(Mlp, ParameterCountFormula) {
  const MlpProblem m({784, 64, 64, 10});
  EXPECT_EQ(m.param_count(), 784u * 64 + 64 + 64 * 64 + 64 + 64 * 10 + 10);
}

TEST(Mlp, ZeroWeightsGiveLogTwoOnBalancedBatch) {
  const MlpProblem m({3, 5, 2});
  const Dataset data = synth_classification(10, 3, 2, 2);
  const auto o = mlp_loss_grad(m, ParamVector(m.param_count(), 0.0), data);
  EXPECT_NEAR(o.loss, std::log(2.0), 1e-9);
}

TEST(Mlp, DuplicatedBatchLeavesLossAndGradientUnchanged) {
  const MlpProblem m({4, 8, 3});
  const Dataset data = synth_classification(6, 4, 3, 3);
  RngStream r = derive_stream(2, 2);
  const ParamVector w = m.init(r);
  std::vector<std::size_t> once(6), twice;
  std::iota(once.begin(), once.end(), std::size_t{0});
  for (auto i : once) twice.insert(twice.end(), {i, i});
  const auto a = mlp_loss_grad(m, w, data, once), b = mlp_loss_grad(m, w, data, twice);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  EXPECT_LT(max_rel_error(a.grad, b.grad), 1e-13);
}

TEST(Mlp, SoftmaxRowsSumToOneAndPermutationInvariance) {
  const MlpProblem m({5, 16, 16, 4});
  const Dataset data = synth_classification(40, 5, 4, 4);
  RngStream r = derive_stream(3, 3);
  const ParamVector w = m.init(r);
  auto ws = m.make_workspace();
  for (std::size_t i = 0; i < data.n; ++i) {
    const auto p = m.probabilities(w, data.row(i), ws);
    EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-9);
  }
  std::vector<std::size_t> idx(data.n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const double base = mlp_loss_grad(m, w, data, idx).loss;
  for (int t = 0; t < 10; ++t) {
    shuffle_indices(r, idx);
    EXPECT_NEAR(mlp_loss_grad(m, w, data, idx).loss, base, 1e-12);
  }
}

TEST(Mlp, RejectsMismatchedInputs) {
  const MlpProblem m({4, 3, 2});
  const Dataset wrong_width = synth_classification(4, 3, 2, 1);
  EXPECT_THROW(mlp_loss_grad(m, ParamVector(m.param_count()), wrong_width), std::invalid_argument);
  const Dataset ok = synth_classification(4, 4, 2, 1);
  EXPECT_THROW(mlp_loss_grad(m, ParamVector(3), ok), std::invalid_argument);
  EXPECT_THROW(mlp_loss_grad(m, ParamVector(m.param_count()), ok, std::vector<std::size_t>{}), std::invalid_argument);
}

// --- datasets ---------------------------------------------------------------

TEST(SynthClassification, BalancedLabelsInRange) {
  const Dataset d = synth_classification(100, 2, 2, 17);
  EXPECT_EQ(std::count(d.labels.begin(), d.labels.end(), 0), 50);
  const Dataset small = synth_classification(10, 5, 2, 1);
  for (int y : small.labels) EXPECT_TRUE(y == 0 || y == 1);
  const Dataset three = synth_classification(100, 4, 3, 2);
  for (int c = 0; c < 3; ++c) {
    const auto k = std::count(three.labels.begin(), three.labels.end(), c);
    EXPECT_GE(k, 33);
    EXPECT_LE(k, 34);
  }
  EXPECT_NO_THROW(three.validate());
}

TEST(SynthClassification, SeparableEnoughForAnMlp) {
  const Dataset d = synth_classification(1000, 2, 2, 5);
  const MlpProblem m({2, 16, 2});
  RngStream r = derive_stream(5, 5);
  ParamVector w = m.init(r);
  MlpOracle oracle(m, d);
  const OptimizerConfig sgd = OptimizerConfig::sgd(0.05);
  OptState st(w.size());
  std::vector<std::size_t> order(d.n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (int epoch = 0; epoch < 5; ++epoch) {
    shuffle_indices(r, order);
    for (std::size_t b = 0; b < d.n; b += 10) {
      oracle.set_batch(std::span<const std::size_t>(order).subspan(b, 10));
      step(sgd, st, oracle, w.span(), 0.0, r);
    }
  }
  EXPECT_GE(1.0 - m.error_rate(w, d), 0.95);
}

TEST(PerturbOne, SizesAndSingleDifference) {
  const Dataset s0 = synth_classification(100, 3, 2, 1);
  const auto pp = dataset_perturb_one(s0, 7);
  EXPECT_EQ(pp.s.n, 99u);
  EXPECT_EQ(pp.s_prime.n, 99u);
  std::size_t diff = 0;
  for (std::size_t i = 0; i < 99; ++i)
    diff += !std::equal(pp.s.row(i).begin(), pp.s.row(i).end(), pp.s_prime.row(i).begin()) ||
            pp.s.labels[i] != pp.s_prime.labels[i];
  EXPECT_EQ(diff, 1u);
  // S' carries the removed example at the replaced position.
  EXPECT_TRUE(std::equal(s0.row(pp.removed_index).begin(), s0.row(pp.removed_index).end(),
                         pp.s_prime.row(pp.replaced_index).begin()));
}

TEST(PerturbOne, DeterministicPerSeed) {
  const Dataset s0 = synth_classification(50, 2, 2, 1);
  const auto a = dataset_perturb_one(s0, 3), b = dataset_perturb_one(s0, 3);
  EXPECT_EQ(a.s.features, b.s.features);
  EXPECT_EQ(a.s_prime.features, b.s_prime.features);
  EXPECT_EQ(a.removed_index, b.removed_index);
  EXPECT_EQ(a.replaced_index, b.replaced_index);
}

TEST(PerturbOne, ExactlyOneDifferingPositionOverManySeeds) {
  const Dataset s0 = synth_classification(30, 2, 2, 9);
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto pp = dataset_perturb_one(s0, seed);
    std::size_t diff = 0;
    for (std::size_t i = 0; i < pp.s.n; ++i)
      diff += !std::equal(pp.s.row(i).begin(), pp.s.row(i).end(), pp.s_prime.row(i).begin());
    ASSERT_EQ(diff, 1u) << "seed " << seed;
  }
}

TEST(PerturbOne, RejectsTinyDatasets) {
  Dataset one;
  one.p = 1;
  one.classes = 2;
  one.push_back(std::vector<double>{0.0}, 0);
  EXPECT_THROW(dataset_perturb_one(one, 1), std::invalid_argument);
}

// --- IDX ------------------------------------------------------------------

TEST(Idx, RoundTripIsBitExact) {
  const auto path = temp_file("rt.idx");
  const std::vector<std::uint8_t> bytes{0, 1, 2, 3, 250, 251, 254, 255};
  write_idx(path, {2, 2, 2}, bytes);
  const IdxTensor t = load_idx(path);
  EXPECT_EQ(t.magic, kIdxImagesMagic);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dims, (std::vector<std::uint32_t>{2, 2, 2}));
  EXPECT_EQ(t.bytes, bytes);
  EXPECT_DOUBLE_EQ(t.value(7), 1.0);
  std::filesystem::remove(path);
}

TEST(Idx, LabelFileIsRankOne) {
  const auto path = temp_file("labels.idx");
  write_idx(path, {4}, {0, 1, 2, 3});
  const IdxTensor t = load_idx(path);
  EXPECT_EQ(t.magic, kIdxLabelsMagic);
  EXPECT_EQ(t.rank(), 1u);
  std::filesystem::remove(path);
}

TEST(Idx, ReadsGzipInput) {
  const auto path = temp_file("gz.idx.gz");
  const unsigned char raw[] = {0, 0, 8, 1, 0, 0, 0, 3, 7, 8, 9};
  gzFile f = gzopen(path.string().c_str(), "wb");
  ASSERT_NE(f, nullptr);
  gzwrite(f, raw, sizeof raw);
  gzclose(f);
  const IdxTensor t = load_idx(path);
  EXPECT_EQ(t.bytes, (std::vector<std::uint8_t>{7, 8, 9}));
  std::filesystem::remove(path);
}

TEST(Idx, BadMagicAndLengthErrors) {
  const auto path = temp_file("bad.idx");
  auto write_raw = [&](std::vector<unsigned char> raw) {
    std::ofstream out(path, std::ios::binary);
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  };
  write_raw({1, 0, 8, 1, 0, 0, 0, 1, 5});
  EXPECT_THROW(load_idx(path), IdxFormatError);
  write_raw({0, 0, 8, 1, 0, 0, 0, 4, 5});
  EXPECT_THROW(load_idx(path), IdxLengthError);
  write_raw({0, 0, 8, 1, 0, 0, 0, 1, 5, 6});
  EXPECT_THROW(load_idx(path), IdxLengthError);
  write_raw({0, 0, 8, 2, 0, 0});
  EXPECT_THROW(load_idx(path), IdxLengthError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_idx(path), std::runtime_error);
}

TEST(Idx, PairsImagesWithLabels) {
  const auto ip = temp_file("img.idx"), lp = temp_file("lab.idx");
  write_idx(ip, {3, 2, 2}, {0, 255, 0, 255, 255, 255, 255, 255, 0, 0, 0, 0});
  write_idx(lp, {3}, {1, 9, 0});
  const Dataset d = idx_dataset(load_idx(ip), load_idx(lp), 2);
  EXPECT_EQ(d.n, 2u);
  EXPECT_EQ(d.p, 4u);
  EXPECT_EQ(d.classes, 10u);
  EXPECT_EQ(d.labels, (std::vector<int>{1, 9}));
  EXPECT_DOUBLE_EQ(d.row(0)[1], 1.0);
  EXPECT_THROW(idx_dataset(load_idx(lp), load_idx(ip)), IdxFormatError);
  std::filesystem::remove(ip);
  std::filesystem::remove(lp);
}

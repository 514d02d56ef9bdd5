#include <benchmark/benchmark.h>

#include <vector>

#include "revdist/bnn.hpp"
#include "revdist/distributions.hpp"
#include "revdist/eval.hpp"
#include "revdist/merge.hpp"
#include "revdist/reverse_em.hpp"

using namespace revdist;

namespace {

std::vector<double> bimodal(std::size_t n) {
  const GMM g({{0.5, Gaussian1D(-3.0, 0.5)}, {0.5, Gaussian1D(3.0, 0.5)}});
  return sample_n(g, n, 11);
}

}  // namespace

static void BM_GaussianKl(benchmark::State& state) {
  const Gaussian1D p(0.3, 1.2), q(-0.1, 0.7);
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_kl(p, q));
}
BENCHMARK(BM_GaussianKl);

static void BM_EmFit(benchmark::State& state) {
  const auto data = bimodal(static_cast<std::size_t>(state.range(0)));
  EMConfig cfg;
  cfg.components = 2;
  for (auto _ : state) benchmark::DoNotOptimize(em_fit(data, cfg));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EmFit)->Arg(500)->Arg(5000);

static void BM_MergeEdgeSets(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<Gaussian1D> a, b;
  for (std::size_t i = 0; i < n; ++i) {
    a.emplace_back(0.01 * static_cast<double>(i), 0.1);
    b.emplace_back(-0.02 * static_cast<double>(i), 0.3);
  }
  for (auto _ : state) benchmark::DoNotOptimize(merge_edge_sets(a, b));
}
BENCHMARK(BM_MergeEdgeSets)->Arg(64)->Arg(1280);

static void BM_ForwardMnistShape(benchmark::State& state) {
  const std::size_t widths[] = {784, 128, 64, 10};
  const auto net = BayesianNetwork::create(widths, NetworkMode::bayesian, 1);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(state.range(0), 784).cwiseAbs();
  const WeightDraw draw = draw_weights(net, 2);
  for (auto _ : state) benchmark::DoNotOptimize(forward(net, x, draw));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardMnistShape)->Arg(64)->Arg(512);

static void BM_ElboGradientIrisShape(benchmark::State& state) {
  const std::size_t widths[] = {4, 16, 16, 3};
  const auto net = BayesianNetwork::create(widths, NetworkMode::bayesian, 1);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(16, 4).cwiseAbs();
  std::vector<int> labels(16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 3);
  TrainConfig cfg;
  Gradients g = Gradients::zeros_like(net);
  for (auto _ : state)
    benchmark::DoNotOptimize(elbo_loss_and_gradient(net, x, labels, cfg, 120, 3, g));
}
BENCHMARK(BM_ElboGradientIrisShape);

static void BM_HistogramKl(benchmark::State& state) {
  const auto data = bimodal(2000);
  const GMM model({{0.5, Gaussian1D(-3.0, 0.5)}, {0.5, Gaussian1D(3.0, 0.5)}});
  for (auto _ : state) benchmark::DoNotOptimize(histogram_kl(data, model, 20000, 5));
}
BENCHMARK(BM_HistogramKl);

BENCHMARK_MAIN();

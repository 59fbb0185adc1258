#include <benchmark/benchmark.h>

#include <feratt/losses.hpp>
#include <feratt/network.hpp>
#include <feratt/renderer.hpp>
#include <feratt/rng.hpp>

using namespace feratt;

namespace {

Tensor random_batch(int n, int h, int w, int c, uint64_t seed) {
  Tensor t(n, h, w, c);
  Rng rng(seed);
  for (double& v : t.flat()) v = rng.uniform(0.0, 1.0);
  return t;
}

void bm_network_forward(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  NetworkConfig cfg;
  cfg.num_classes = 4;
  cfg.width_multiplier = 0.25;
  FERAttNetwork net(cfg, NetworkMode::feratt);
  Rng rng(1);
  net.init(rng);
  Tensor x = random_batch(batch, 128, 128, 3, 2);
  for (auto _ : state) {
    NetworkOutputs out = net.forward(x, false);
    benchmark::DoNotOptimize(out.class_scores.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void bm_network_train_step(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  NetworkConfig cfg;
  cfg.num_classes = 4;
  cfg.width_multiplier = 0.25;
  FERAttNetwork net(cfg, NetworkMode::feratt);
  Rng rng(1);
  net.init(rng);
  Tensor x = random_batch(batch, 128, 128, 3, 2);
  for (auto _ : state) {
    net.zero_grad();
    NetworkOutputs out = net.forward(x, true);
    Tensor g_att(out.attention_image.n(), out.attention_image.h(),
                 out.attention_image.w(), out.attention_image.c());
    Matrix g_rep = Matrix::Constant(out.embedding.rows(),
                                    out.embedding.cols(), 1e-3);
    Matrix g_cls = Matrix::Constant(out.class_scores.rows(),
                                    out.class_scores.cols(), 1e-3);
    net.backward(g_att, g_rep, g_cls);
    benchmark::DoNotOptimize(out.class_scores.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void bm_renderer_sample(benchmark::State& state) {
  std::vector<FaceSample> faces;
  for (int c = 0; c < 4; ++c)
    for (int v = 0; v < 2; ++v) faces.push_back(toy_face_generator(c, 10 * c + v));
  std::vector<BackgroundImage> bgs;
  for (int b = 0; b < 4; ++b) bgs.push_back(toy_background_generator(100 + b));
  uint64_t seed = 0;
  for (auto _ : state) {
    RenderedDataset ds = render_dataset(faces, bgs, 8, ++seed);
    benchmark::DoNotOptimize(ds.samples.data());
  }
  state.SetItemsProcessed(state.iterations() * 8);
}

void bm_posterior(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const int c = 8, d = 64;
  GaussianManifoldConfig cfg = make_manifold_config(c, d);
  Rng rng(7);
  Matrix z(batch, d);
  for (int i = 0; i < batch; ++i)
    for (int j = 0; j < d; ++j) z(i, j) = rng.normal(0.0, 1.0);
  for (auto _ : state) {
    Matrix p = posterior(z, cfg);
    benchmark::DoNotOptimize(p.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

void bm_structured_loss_grad(benchmark::State& state) {
  const int batch = static_cast<int>(state.range(0));
  const int c = 8, d = 64;
  GaussianManifoldConfig cfg = make_manifold_config(c, d);
  Rng rng(7);
  Matrix z(batch, d);
  std::vector<int> labels(batch);
  for (int i = 0; i < batch; ++i) {
    labels[i] = static_cast<int>(rng.uniform_index(c));
    for (int j = 0; j < d; ++j) z(i, j) = rng.normal(0.0, 1.0);
  }
  Matrix targets = one_hot(labels, c);
  for (auto _ : state) {
    Matrix grad;
    double loss = structured_loss_grad(z, targets, cfg, &grad);
    benchmark::DoNotOptimize(loss);
    benchmark::DoNotOptimize(grad.data());
  }
  state.SetItemsProcessed(state.iterations() * batch);
}

}  // namespace

BENCHMARK(bm_network_forward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_network_train_step)->Arg(8)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_renderer_sample)->Unit(benchmark::kMillisecond);
BENCHMARK(bm_posterior)->Arg(64)->Arg(512);
BENCHMARK(bm_structured_loss_grad)->Arg(64)->Arg(512);

BENCHMARK_MAIN();

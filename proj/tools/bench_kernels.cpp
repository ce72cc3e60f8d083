#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <vector>

#include "CLI11.hpp"
#include "leaprec/dataset.hpp"
#include "leaprec/kernels.hpp"
#include "leaprec/model.hpp"
#include "leaprec/tensor.hpp"

using namespace leaprec;

namespace {

double time_ms(int reps, const std::function<void()>& fn) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int r = 0; r < reps; ++r) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

std::vector<double> random_mat(int rows, int cols, std::mt19937_64& rng) {
  std::vector<double> m(static_cast<std::size_t>(rows) * cols);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (double& v : m) v = u(rng);
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs OpenMP kernel timings"};
  int reps = 5;
  std::vector<int> sizes = {64, 128, 256, 512};
  app.add_option("--reps", reps)->check(CLI::PositiveNumber);
  app.add_option("--sizes", sizes, "Square matmul sizes");
  CLI11_PARSE(app, argc, argv);

  std::mt19937_64 rng(1234);
  std::printf("threads: %d\n\n", kernels::max_threads());
  std::printf("%-28s %12s %12s %8s\n", "kernel", "serial ms", "omp ms", "speedup");

  for (int n : sizes) {
    auto a = random_mat(n, n, rng);
    auto b = random_mat(n, n, rng);
    std::vector<double> c(static_cast<std::size_t>(n) * n), c2(c.size());
    const double ts = time_ms(reps, [&] { kernels::matmul_serial(n, n, n, a.data(), b.data(), c.data(), false, false); });
    const double tp = time_ms(reps, [&] { kernels::matmul_omp(n, n, n, a.data(), b.data(), c2.data(), false, false); });
    double max_diff = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) max_diff = std::max(max_diff, std::abs(c[i] - c2[i]));
    char name[64];
    std::snprintf(name, sizeof name, "matmul %dx%dx%d", n, n, n);
    std::printf("%-28s %12.3f %12.3f %8.2fx   (max diff %.1e)\n", name, ts, tp, ts / tp, max_diff);
  }

  // GNN-shaped workload: refine a synthetic bipartite graph's embeddings.
  {
    const int num_users = 600, num_items = 400, dim = 64;
    std::vector<Interaction> inter;
    std::uniform_int_distribution<int> du(0, num_users - 1), di(0, num_items - 1);
    for (int i = 0; i < 20000; ++i) inter.push_back({du(rng), di(rng), 0});
    InteractionGraph graph = build_graph(inter, num_users, num_items);
    ModelConfig cfg;
    cfg.num_users = num_users;
    cfg.num_items = num_items;
    cfg.dim = dim;
    cfg.gnn_layers = 2;
    ParameterSet params(cfg, rng);
    const double t = time_ms(reps, [&] { (void)gnn_refine(params, graph); });
    std::printf("%-28s %12.3f\n", "gnn_refine 1000x64 (2 layers)", t);
  }
  return 0;
}

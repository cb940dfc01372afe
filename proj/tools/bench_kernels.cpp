// Times the serial reference against the OpenMP backend on the hot kernels
// and on a full model forward/backward step.

#include <chrono>
#include <cstdio>
#include <functional>
#include <vector>

#include "mgdin/experiment.hpp"
#include "mgdin/kernels.hpp"
#include "mgdin/model.hpp"
#include "mgdin/tensor.hpp"

namespace {

using mgdin::kernels::Backend;
using i64 = std::int64_t;

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

void report(const char* name, const std::function<void()>& fn, int reps) {
  mgdin::kernels::set_backend(Backend::Serial);
  const double serial_ms = time_ms(fn, reps);
  mgdin::kernels::set_backend(Backend::OpenMP);
  const double omp_ms = time_ms(fn, reps);
  std::printf("%-28s %10.3f ms %10.3f ms %8.2fx\n", name, serial_ms, omp_ms,
              serial_ms / omp_ms);
}

std::vector<double> random_vec(std::size_t n, mgdin::Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

}  // namespace

int main() {
  std::printf("threads available: %d (OpenMP %s)\n\n", mgdin::kernels::max_threads(),
              mgdin::kernels::openmp_compiled() ? "on" : "off");
  std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

  mgdin::Rng rng(99);

  {
    const i64 B = 256, m = 16, d = 64;
    auto a = random_vec(static_cast<std::size_t>(B * m * d), rng);
    auto b = random_vec(static_cast<std::size_t>(d * d), rng);
    std::vector<double> c(static_cast<std::size_t>(B * m * d));
    report("matmul 256x[16,64]x[64,64]",
           [&]() { mgdin::kernels::matmul(a.data(), b.data(), c.data(), B, m, d, d, false, true); },
           20);
  }
  {
    const i64 rows = 4096, d = 64;
    auto x = random_vec(static_cast<std::size_t>(rows * d), rng);
    auto gain = random_vec(static_cast<std::size_t>(d), rng);
    auto bias = random_vec(static_cast<std::size_t>(d), rng);
    std::vector<double> y(x.size()), mean(static_cast<std::size_t>(rows)),
        rstd(static_cast<std::size_t>(rows));
    report("layer_norm 4096x64",
           [&]() {
             mgdin::kernels::layer_norm(x.data(), gain.data(), bias.data(), y.data(),
                                        mean.data(), rstd.data(), rows, d, 1e-5);
           },
           50);
  }
  {
    const i64 n = 1 << 20;
    auto a = random_vec(static_cast<std::size_t>(n), rng);
    auto b = random_vec(static_cast<std::size_t>(n), rng);
    std::vector<double> out(static_cast<std::size_t>(n));
    report("elementwise mul 1M",
           [&]() {
             mgdin::kernels::ew_binary(mgdin::kernels::BinaryOp::Mul, a.data(), n,
                                       b.data(), n, out.data(), n);
           },
           20);
  }
  {
    auto setup = mgdin::default_gradcheck_setup(3);
    // A realistic training-shaped batch.
    mgdin::SyntheticSpec spec;
    spec.n_features = 8;
    spec.cardinalities = setup.model.schema.cardinalities;
    spec.pairs = {{0, 2, 1.0}};
    auto rows = mgdin::generate_synthetic(spec, 256, 11);
    auto batch = rows.batch_range(0, 256);
    report("model fwd+bwd batch 256",
           [&]() {
             mgdin::Tape tape;
             auto y = mgdin::forward(&tape, setup.model, batch);
             auto l = mgdin::loss(&tape, y, mgdin::labels_tensor(batch), 1e-12);
             tape.backward(l);
             for (auto& np : mgdin::flat_params(setup.model)) np.tensor.clear_grad();
           },
           10);
  }
  return 0;
}

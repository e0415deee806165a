// Compares the serial reference path against the OpenMP kernels on the
// Monte Carlo workloads and checks that the two agree bit for bit.

#include <chrono>
#include <cstdio>
#include <string>

#include "cbrisk/analysis.hpp"
#include "cbrisk/gaussian_model.hpp"
#include "cbrisk/parallel.hpp"
#include "cbrisk/predictors.hpp"

using namespace cbrisk;

namespace {

template <class F>
double time_run(F&& f) {
  auto start = std::chrono::steady_clock::now();
  f();
  auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(stop - start).count();
}

struct BenchCase {
  std::string name;
  double serial_s = 0.0;
  double parallel_s = 0.0;
  double serial_value = 0.0;
  double parallel_value = 0.0;
};

template <class F>
BenchCase run_case(const std::string& name, F&& f) {
  BenchCase c;
  c.name = name;
  par::set_serial(true);
  c.serial_s = time_run([&] { c.serial_value = f(); });
  par::set_serial(false);
  c.parallel_s = time_run([&] { c.parallel_value = f(); });
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  std::int64_t scale = 1;
  if (argc > 1) scale = std::atoll(argv[1]);
  RngSeed seed{2024, 0};

  int n = 400;
  Eigen::VectorXd theta(n);
  for (int i = 0; i < n; ++i) theta[i] = (i % 5) * 0.7;
  NormalModel model{theta, 1.0};
  Predictor soft = Predictor::soft_threshold(1.0);

  std::vector<BenchCase> cases;
  cases.push_back(run_case("mc_risk soft-threshold", [&] {
    return mc_risk(model, soft, 0.1, 20000 * scale, seed).value;
  }));
  cases.push_back(run_case("mc_df soft-threshold", [&] {
    return mc_df(model, soft, 0.1, 20000 * scale, seed).value;
  }));
  Eigen::VectorXd y = sample_data(model, seed);
  cases.push_back(run_case("cb_inf soft-threshold", [&] {
    return cb_inf(y, soft, 1.0, 0.001, 50000 * scale, seed).value;
  }));
  cases.push_back(run_case("ht closed-form MC oracle", [&] {
    Eigen::VectorXd y3(3);
    y3 << 2.0, -0.5, 1.1;
    return ht_inner_product_mc(y3, 1.0, 1.0, 0.1, 2000000 * scale, seed).value;
  }));

  std::printf("threads available: %d\n", par::max_threads());
  std::printf("%-28s %12s %12s %9s %7s\n", "kernel", "serial (s)",
              "openmp (s)", "speedup", "match");
  bool all_match = true;
  for (const auto& c : cases) {
    bool match = c.serial_value == c.parallel_value;
    all_match = all_match && match;
    std::printf("%-28s %12.4f %12.4f %8.2fx %7s\n", c.name.c_str(), c.serial_s,
                c.parallel_s,
                c.parallel_s > 0 ? c.serial_s / c.parallel_s : 0.0,
                match ? "yes" : "NO");
  }
  return all_match ? 0 : 1;
}

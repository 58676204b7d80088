// Benchmark CLI: Monte Carlo filter comparison on SO(3) plus gain-solver
// oracle checks.
//
//   so3est simulate --scenario a --filters iekf,mekf,ukf,fpf-g,fpf-k \
//          --runs 20 --particles 200 --seed 2016 --out rmse_a.csv
//   so3est gain-check --solver kernel --particles 200 --seed 1
//
// Every flag can also be given through --config FILE (key=value lines,
// same names without the leading dashes); command-line flags win.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "so3est/bench.hpp"

namespace {

using namespace so3est;

struct SimulateOptions {
  std::string scenario = "a";
  std::vector<std::string> filters;
  int runs = 20;
  int particles = 200;
  std::uint64_t seed = 2016;
  std::string out;
  bool full = false;
  bool deterministic = false;
  int nf_fpfg = -1;
  int nf_other = -1;
  double init_std_deg = -1.0;
  double sensor_std_deg = -1.0;
  double process_std_deg = -1.0;
  double horizon = -1.0;
  double dt = -1.0;
  double eps = 1.0;
  int kiter = 10;
  std::string kernel_gain_form = "gradient";
  bool fpf_g_whiten = true;
  bool fpf_k_whiten = false;
  int workers = 0;
  std::string trace_dir;
};

int run_simulate(const SimulateOptions& o) {
  if (o.scenario != "a" && o.scenario != "b") {
    throw ConfigError("--scenario must be a or b");
  }
  ExperimentConfig cfg = ExperimentConfig::for_scenario(o.scenario[0]);
  if (!o.filters.empty()) {
    cfg.filters.clear();
    for (const std::string& f : o.filters) cfg.filters.push_back(parse_filter(f));
  }
  cfg.runs = o.full ? 100 : o.runs;
  cfg.particles = o.particles;
  cfg.master_seed = o.seed;
  cfg.out_path = o.out.empty() ? ("rmse_" + o.scenario + ".csv") : o.out;
  cfg.deterministic = o.deterministic;
  cfg.kernel_eps = o.eps;
  cfg.kernel_iterations = o.kiter;
  if (o.kernel_gain_form == "gradient") {
    cfg.kernel_form = KernelGainForm::kGradient;
  } else if (o.kernel_gain_form == "direct") {
    cfg.kernel_form = KernelGainForm::kDirect;
  } else {
    throw ConfigError("--kernel-gain-form must be gradient or direct");
  }
  cfg.fpf_g_whiten = o.fpf_g_whiten;
  cfg.fpf_k_whiten = o.fpf_k_whiten;
  cfg.workers = o.workers;
  cfg.trace_dir = o.trace_dir;

  ScenarioConfig& sc = cfg.scenario;
  if (o.nf_fpfg > 0) sc.nf_fpf_g = o.nf_fpfg;
  if (o.nf_other > 0) sc.nf_other = o.nf_other;
  if (o.horizon > 0) sc.horizon = o.horizon;
  if (o.dt > 0) sc.dt = o.dt;
  auto iso = [](double std_deg) {
    return std::pow(deg2rad(std_deg), 2) * Eigen::Matrix3d::Identity();
  };
  if (o.init_std_deg >= 0) sc.sigma0 = iso(o.init_std_deg);
  if (o.sensor_std_deg >= 0) sc.sigma_w = iso(o.sensor_std_deg);
  if (o.process_std_deg >= 0) sc.sigma_b = iso(o.process_std_deg);
  cfg.validate();

  std::printf("scenario %s: runs=%d particles=%d seed=%llu\n",
              o.scenario.c_str(), cfg.runs, cfg.particles,
              static_cast<unsigned long long>(cfg.master_seed));
  const ExperimentResult res = run_experiment(cfg);
  write_rmse_csv(cfg, res);

  std::printf("%-8s %14s %12s %s\n", "filter", "final RMSE", "wall [s]",
              "failed runs");
  for (FilterId id : cfg.filters) {
    const FilterOutcome& oc = res.outcomes.at(id);
    std::printf("%-8s %11.3f deg %12.2f %zu\n", filter_name(id),
                rad2deg(oc.series.values.back()), oc.wall_seconds,
                oc.failed_runs.size());
    for (const std::string& d : oc.diagnostics) {
      std::printf("    ! %s\n", d.c_str());
    }
  }
  std::printf("wrote %s\n", cfg.out_path.c_str());
  return 0;
}

// --- gain-check: prints pass/fail residuals of the solver oracle suites ---

ParticleEnsemble random_ensemble(int n, double spread, RngStream& rng,
                                 const Quatd& center = Quatd::identity()) {
  std::vector<Quatd> qs;
  qs.reserve(size_t(n));
  for (int i = 0; i < n; ++i) {
    qs.push_back(center *
                 exp_axis_angle<double>((spread * rng.gaussian3()).eval()));
  }
  return ParticleEnsemble(std::move(qs));
}

Eigen::MatrixXd h_values(const ParticleEnsemble& e,
                         const LinearSensorModel& model) {
  Eigen::MatrixXd h(e.size(), LinearSensorModel::kChannels);
  for (int i = 0; i < e.size(); ++i) h.row(i) = model.eval(e[i]);
  return h;
}

bool report(const char* what, double value, double tol) {
  const bool ok = value < tol;
  std::printf("  %-46s %10.3e  (tol %8.1e)  %s\n", what, value, tol,
              ok ? "PASS" : "FAIL");
  return ok;
}

int run_gain_check(const std::string& solver, int particles,
                   std::uint64_t seed) {
  RngFactory factory(seed);
  RngStream rng = factory.stream(0, StreamPurpose::kFilterAux);
  LinearSensorModel model;
  bool ok = true;

  if (solver == "galerkin") {
    std::printf("galerkin gain oracle suite (N=%d, seed=%llu)\n", particles,
                static_cast<unsigned long long>(seed));
    // closed-form Lie derivatives vs central finite differences
    double worst_fd = 0.0;
    const double t = 1e-6;
    for (int it = 0; it < 100; ++it) {
      Eigen::Vector4d v = Eigen::Vector4d::NullaryExpr(
          [&](Eigen::Index) { return rng.gaussian(); });
      v.normalize();
      const Quatd q{v};
      for (int l = 0; l < kGalerkinBasisSize; ++l) {
        for (int n = 0; n < 3; ++n) {
          Eigen::Vector3d e = Eigen::Vector3d::Zero();
          e[n] = t;
          const double fd =
              (eval_basis(q * exp_axis_angle<double>(e), l) -
               eval_basis(q * exp_axis_angle<double>((-e).eval()), l)) /
              (2 * t);
          worst_fd =
              std::max(worst_fd, std::abs(fd - eval_lie_derivative(q, l, n)));
        }
      }
    }
    ok &= report("basis Lie derivatives vs finite differences", worst_fd,
                 1e-6);

    const ParticleEnsemble e = random_ensemble(particles, 0.5, rng);
    const Eigen::MatrixXd h = h_values(e, model);
    const Eigen::VectorXd hhat = h_hat(h);
    GalerkinGainSolver gsolver;
    const GalerkinSystem sys = gsolver.solve_system(e, h, hhat);
    ok &= report("weak-form residual |A kappa - b|_inf",
                 (sys.A * sys.kappa - sys.b).cwiseAbs().maxCoeff(), 1e-10);

    Eigen::MatrixXd hc = Eigen::MatrixXd::Constant(e.size(), 6, 0.4);
    std::vector<GainMatrix> gains;
    gsolver.solve(e, hc, h_hat(hc), gains);
    double worst_gain = 0.0;
    for (const auto& g : gains) {
      worst_gain = std::max(worst_gain, g.cwiseAbs().maxCoeff());
    }
    ok &= report("constant h gives zero gain", worst_gain, 1e-12);
  } else if (solver == "kernel") {
    std::printf("kernel gain oracle suite (N=%d, seed=%llu)\n", particles,
                static_cast<unsigned long long>(seed));
    const double eps = 1.0;
    const ParticleEnsemble e = random_ensemble(particles, 0.6, rng);
    const Eigen::MatrixXd h = h_values(e, model);
    const Eigen::VectorXd hhat = h_hat(h);
    const KernelOperator op = build_operator(e, h, hhat, eps);

    double row_err = 0.0;
    for (int i = 0; i < e.size(); ++i) {
      row_err = std::max(row_err, std::abs(op.T.row(i).sum() - 1.0));
    }
    ok &= report("stochastic matrix row sums", row_err, 1e-12);

    const int n = e.size();
    Eigen::MatrixXd pinned =
        (Eigen::MatrixXd::Identity(n, n) - op.T +
         Eigen::MatrixXd::Constant(n, n, 1.0 / n))
            .partialPivLu()
            .solve(op.eps * op.H);
    Eigen::MatrixXd picard = fixed_point_solve(op, 200);
    // compared modulo the constant mode, which the gain annihilates and the
    // plain iteration leaves unpinned
    pinned.rowwise() -= pinned.colwise().mean();
    picard.rowwise() -= picard.colwise().mean();
    ok &= report("Picard (K=200) vs dense pinned solve",
                 (picard - pinned).cwiseAbs().maxCoeff(), 1e-8);

    std::vector<GainMatrix> g1, g2;
    gain_from_phi(op, picard, e, model, g1);
    gain_from_phi(op,
                  picard + Eigen::MatrixXd::Constant(picard.rows(),
                                                     picard.cols(), 11.0),
                  e, model, g2);
    double shift_dev = 0.0;
    for (int i = 0; i < n; ++i) {
      shift_dev = std::max(
          shift_dev, (g1[size_t(i)] - g2[size_t(i)]).cwiseAbs().maxCoeff());
    }
    ok &= report("gain invariance under Phi -> Phi + c 1", shift_dev, 1e-12);

    // analytic E_n.h against finite differences
    double enh_dev = 0.0;
    const double t = 1e-6;
    for (int i = 0; i < n; i += std::max(1, n / 10)) {
      const Eigen::Matrix<double, 3, 6> analytic =
          model.lie_derivative(e[i]);
      for (int d3 = 0; d3 < 3; ++d3) {
        Eigen::Vector3d dir = Eigen::Vector3d::Zero();
        dir[d3] = t;
        const Vector6d fd =
            (model.eval(e[i] * exp_axis_angle<double>(dir)) -
             model.eval(e[i] * exp_axis_angle<double>((-dir).eval()))) /
            (2 * t);
        enh_dev = std::max(
            enh_dev,
            (analytic.row(d3).transpose() - fd).cwiseAbs().maxCoeff());
      }
    }
    ok &= report("analytic E_n.h vs finite differences", enh_dev, 1e-6);
  } else {
    throw ConfigError("--solver must be galerkin or kernel");
  }
  std::printf("%s\n", ok ? "all checks passed" : "CHECKS FAILED");
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SO(3) attitude filter benchmark"};
  app.require_subcommand(1);
  // key=value file; subcommand options live in a [simulate] / [gain-check]
  // section. Command-line flags override file values.
  app.set_config("--config", "", "read options from a key=value file");

  SimulateOptions so;
  CLI::App* sim = app.add_subcommand("simulate", "run the Monte Carlo benchmark");
  sim->configurable();
  sim->add_option("--scenario", so.scenario, "a or b")->capture_default_str();
  sim->add_option("--filters", so.filters,
                  "comma list from iekf,mekf,ukf,fpf-g,fpf-k")
      ->delimiter(',');
  sim->add_option("--runs", so.runs, "Monte Carlo runs")->capture_default_str();
  sim->add_option("--particles", so.particles, "FPF particle count")
      ->capture_default_str();
  sim->add_option("--seed", so.seed, "master seed")->capture_default_str();
  sim->add_option("--out", so.out, "output CSV path");
  sim->add_flag("--full", so.full, "use the full 100-run protocol");
  sim->add_flag("--deterministic", so.deterministic,
                "suppress the timestamp header line");
  sim->add_option("--nf-fpfg", so.nf_fpfg,
                  "N_f sub-intervals for fpf-g on the first steps");
  sim->add_option("--nf-other", so.nf_other,
                  "N_f sub-intervals for the other filters");
  sim->add_option("--init-std", so.init_std_deg,
                  "initial attitude std per axis [deg]");
  sim->add_option("--sensor-std", so.sensor_std_deg,
                  "sensor noise std per axis [deg]");
  sim->add_option("--process-std", so.process_std_deg,
                  "process noise std per axis [deg/s]");
  sim->add_option("--horizon", so.horizon, "time horizon [s]");
  sim->add_option("--dt", so.dt, "time step [s]");
  sim->add_option("--eps", so.eps, "kernel bandwidth")->capture_default_str();
  sim->add_option("--kiter", so.kiter, "fixed-point iterations")
      ->capture_default_str();
  sim->add_option("--kernel-gain-form", so.kernel_gain_form,
                  "gradient or direct")
      ->capture_default_str();
  sim->add_option("--fpf-g-whiten", so.fpf_g_whiten,
                  "whiten the measurement stream for fpf-g")
      ->capture_default_str();
  sim->add_option("--fpf-k-whiten", so.fpf_k_whiten,
                  "whiten the measurement stream for fpf-k")
      ->capture_default_str();
  sim->add_option("--workers", so.workers, "worker threads (0 = hardware)");
  sim->add_option("--trace-dir", so.trace_dir,
                  "directory for per-run trace CSVs");

  std::string gc_solver = "galerkin";
  int gc_particles = 200;
  std::uint64_t gc_seed = 1;
  CLI::App* gc = app.add_subcommand("gain-check",
                                    "run the gain-solver oracle suites");
  gc->configurable();
  gc->add_option("--solver", gc_solver, "galerkin or kernel")
      ->capture_default_str();
  gc->add_option("--particles", gc_particles, "ensemble size")
      ->capture_default_str();
  gc->add_option("--seed", gc_seed, "seed")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) return run_simulate(so);
    if (gc->parsed()) return run_gain_check(gc_solver, gc_particles, gc_seed);
  } catch (const so3est::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}

// Command-line front end: simulate data generators, fit the built-in models,
// run the joint mean/variance specification test with any subset of the
// p-value engines, replicate experiments into rejection tables, and scan the
// candidate diffusion models over an observed series.
//
// Exit codes: 0 success, 2 configuration error, 3 data or model error.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cmv/dgp.hpp"
#include "cmv/harness.hpp"
#include "cmv/model.hpp"

namespace {

struct CommonFlags {
  std::string model = "arch1";
  std::string dgp = "m0";
  std::string engines = "all";
  std::string out;
  int n = 300;
  int reps = 500;
  int b_draws = 500;
  int m_nodes = 100;
  int threads = 1;
  double bandwidth_c = 1.0;
  double x0_quantile = 0.95;
  double level = 0.05;
  double delta = 0.0;
  std::uint64_t seed = 1;
  bool no_truncation_adjust = false;
  bool rademacher = false;
};

void apply_engines(const std::string& engines, cmv::TestOptions& opt) {
  opt.engine_transform = false;
  opt.engine_multiplier = false;
  opt.engine_numeric = false;
  std::stringstream ss(engines);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == "all") {
      opt.engine_transform = opt.engine_multiplier = opt.engine_numeric = true;
    } else if (item == "transform") {
      opt.engine_transform = true;
    } else if (item == "multiplier") {
      opt.engine_multiplier = true;
    } else if (item == "numeric") {
      opt.engine_numeric = true;
    } else {
      throw cmv::config_error(
          "unknown engine '" + item +
          "' (expected transform, multiplier, numeric, or all)");
    }
  }
  if (!opt.engine_transform && !opt.engine_multiplier && !opt.engine_numeric)
    throw cmv::config_error("no engine selected");
}

cmv::TestOptions build_test_options(const CommonFlags& f) {
  cmv::TestOptions opt;
  apply_engines(f.engines, opt);
  opt.b_draws = f.b_draws;
  opt.m_nodes = f.m_nodes;
  opt.bandwidth_c = f.bandwidth_c;
  opt.x0_quantile = f.x0_quantile;
  opt.level = f.level;
  opt.seed = f.seed;
  opt.truncation_adjust = !f.no_truncation_adjust;
  opt.rademacher = f.rademacher;
  return opt;
}

void emit(const std::string& out_path, const std::string& text) {
  if (out_path.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  std::ofstream out(out_path);
  if (!out) throw cmv::config_error("cannot open output file: " + out_path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
  if (!out) throw cmv::config_error("failed writing to " + out_path);
}

double require_delta(const CommonFlags& f, const std::string& model_name) {
  const bool sde =
      model_name != "arch1" && model_name != "garch11" &&
      model_name != "ar1_garch11" && model_name != "const_var" &&
      model_name != "ar1_constvar";
  if (sde && !(f.delta > 0.0))
    throw cmv::config_error("model '" + model_name +
                            "' requires --delta > 0 (observation spacing)");
  return f.delta > 0.0 ? f.delta : 0.01;
}

// Diagnostics-only report emitted when the fit itself fails: the engine
// blocks stay null and the failure reason lands in warnings.
nlohmann::json failed_fit_report(const std::string& model, int n,
                                 const std::string& why) {
  cmv::TestReport rep;
  rep.model = model;
  rep.n = n;
  rep.warnings.push_back(why);
  return cmv::report_to_json(rep);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint conditional mean/variance specification tests"};
  app.require_subcommand(1);
  CommonFlags f;

  CLI::App* sim = app.add_subcommand("simulate", "draw a series from a data generator");
  sim->add_option("--dgp", f.dgp, "generator name (m0..m4, a0..a5, n1..n6, ar1garch:<a1>)");
  sim->add_option("--n", f.n, "series length");
  sim->add_option("--seed", f.seed, "random seed");
  sim->add_option("--delta", f.delta, "observation spacing for diffusion generators");
  sim->add_option("--out", f.out, "output file (default stdout)");

  CLI::App* fit = app.add_subcommand("fit", "fit a model by Gaussian quasi-likelihood");
  std::string input;
  fit->add_option("input", input, "series file, one value per line")->required();
  fit->add_option("--model", f.model, "model name");
  fit->add_option("--delta", f.delta, "observation spacing for diffusion models");
  fit->add_option("--seed", f.seed, "random seed");
  fit->add_option("--out", f.out, "output file (default stdout)");

  CLI::App* test = app.add_subcommand("test", "run the joint specification test");
  test->add_option("input", input, "series file, one value per line")->required();
  test->add_option("--model", f.model, "null model name");
  test->add_option("--engines", f.engines, "comma list: transform,multiplier,numeric or all");
  test->add_option("--B", f.b_draws, "multiplier draws");
  test->add_option("--m", f.m_nodes, "numeric-engine grid size");
  test->add_option("--bandwidth-c", f.bandwidth_c, "score-ratio bandwidth factor");
  test->add_option("--x0-quantile", f.x0_quantile, "transform truncation quantile");
  test->add_option("--level", f.level, "nominal level");
  test->add_option("--seed", f.seed, "random seed");
  test->add_option("--delta", f.delta, "observation spacing for diffusion models");
  test->add_flag("--no-truncation-adjust", f.no_truncation_adjust,
                 "report transform p-values without the truncation rescaling");
  test->add_flag("--rademacher", f.rademacher,
                 "use +-1 bootstrap multipliers instead of standard normal");
  test->add_option("--out", f.out, "output file (default stdout)");

  CLI::App* mc = app.add_subcommand("mc", "replicate an experiment into a rejection table");
  std::string experiment;
  mc->add_option("experiment", experiment,
                 "arch1, garch11, ar1garch, sde_vasicek_null, or sde_cir_null")
      ->required();
  mc->add_option("--n", f.n, "series length per replication")->default_val(-1);
  mc->add_option("--reps", f.reps, "replications per row")->default_val(-1);
  mc->add_option("--engines", f.engines, "comma list: transform,multiplier,numeric or all");
  mc->add_option("--B", f.b_draws, "multiplier draws");
  mc->add_option("--m", f.m_nodes, "numeric-engine grid size");
  mc->add_option("--bandwidth-c", f.bandwidth_c, "score-ratio bandwidth factor");
  mc->add_option("--x0-quantile", f.x0_quantile, "transform truncation quantile");
  mc->add_option("--level", f.level, "nominal level");
  mc->add_option("--seed", f.seed, "master seed");
  mc->add_option("--delta", f.delta, "observation spacing for diffusion rows");
  mc->add_option("--threads", f.threads, "worker threads");
  mc->add_option("--out", f.out, "output file (default stdout)");

  CLI::App* apply = app.add_subcommand("apply", "scan candidate diffusion models over a series");
  apply->add_option("input", input, "series file, one value per line")->required();
  apply->add_option("--delta", f.delta, "observation spacing (required)")->required();
  apply->add_option("--engines", f.engines, "comma list: transform,multiplier,numeric or all");
  apply->add_option("--B", f.b_draws, "multiplier draws");
  apply->add_option("--m", f.m_nodes, "numeric-engine grid size");
  apply->add_option("--bandwidth-c", f.bandwidth_c, "score-ratio bandwidth factor");
  apply->add_option("--x0-quantile", f.x0_quantile, "transform truncation quantile");
  apply->add_option("--level", f.level, "nominal level");
  apply->add_option("--seed", f.seed, "random seed");
  apply->add_option("--out", f.out, "output file (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) {
      const double delta = f.delta > 0.0 ? f.delta : 0.01;
      const cmv::DgpSpec dgp = cmv::dgp_by_name(f.dgp, delta);
      const std::vector<double> series = cmv::simulate_dgp(dgp, f.n, f.seed);
      if (f.out.empty()) {
        std::ostringstream os;
        os << std::setprecision(17);
        for (const double v : series) os << v << '\n';
        std::cout << os.str();
      } else {
        cmv::write_series_csv(f.out, series);
      }
      return 0;
    }

    if (fit->parsed()) {
      const double delta = require_delta(f, f.model);
      const cmv::ModelSpec model = cmv::make_model_by_name(f.model, delta);
      const std::vector<double> series = cmv::read_series_csv(input);
      cmv::FitOptions fopt;
      fopt.seed = cmv::derive_seed(f.seed, cmv::hash_tag("fit"));
      const cmv::FitResult res = cmv::qmle_fit(model, series, fopt);
      nlohmann::json j;
      j["model"] = model.name;
      j["n"] = static_cast<int>(series.size()) - 1;
      j["theta"] = res.theta;
      j["param_names"] = model.param_names;
      j["loglik"] = res.loglik;
      j["converged"] = res.converged;
      emit(f.out, j.dump(2));
      return 0;
    }

    if (test->parsed()) {
      if (test->count("--B") == 0) f.b_draws = 2000;
      const double delta = require_delta(f, f.model);
      const cmv::ModelSpec model = cmv::make_model_by_name(f.model, delta);
      const std::vector<double> series = cmv::read_series_csv(input);
      const cmv::TestOptions opt = build_test_options(f);
      try {
        const cmv::TestReport rep = cmv::run_test(model, series, opt);
        emit(f.out, cmv::report_to_json(rep).dump(2));
      } catch (const cmv::model_error& ex) {
        emit(f.out, failed_fit_report(model.name,
                                      static_cast<int>(series.size()) - 1,
                                      ex.what())
                        .dump(2));
        std::cerr << "error: " << ex.what() << "\n";
        return 3;
      }
      return 0;
    }

    if (mc->parsed()) {
      cmv::ExperimentConfig cfg = cmv::make_experiment(experiment);
      if (f.n > 0) cfg.n = f.n;
      if (f.reps > 0) cfg.reps = f.reps;
      if (f.delta > 0.0) cfg.delta = f.delta;
      cfg.threads = f.threads;
      const cmv::TestOptions preset = cfg.test;
      cfg.test = build_test_options(f);
      if (mc->count("--engines") == 0) {
        // The preset's engine selection stands unless overridden.
        cfg.test.engine_transform = preset.engine_transform;
        cfg.test.engine_multiplier = preset.engine_multiplier;
        cfg.test.engine_numeric = preset.engine_numeric;
      }
      const cmv::ExperimentResult res = cmv::run_experiment(cfg);
      emit(f.out, cmv::format_table(res));
      return 0;
    }

    if (apply->parsed()) {
      if (apply->count("--B") == 0) f.b_draws = 2000;
      if (!(f.delta > 0.0)) throw cmv::config_error("--delta must be positive");
      const std::vector<double> series = cmv::read_series_csv(input);
      const cmv::TestOptions opt = build_test_options(f);
      const cmv::ApplicationResult res = cmv::run_application(series, f.delta, opt);
      emit(f.out, cmv::format_application(res));
      return 0;
    }
  } catch (const cmv::config_error& ex) {
    std::cerr << "configuration error: " << ex.what() << "\n";
    return 2;
  } catch (const cmv::model_error& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 3;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 3;
  }
  return 0;
}

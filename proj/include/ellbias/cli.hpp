#pragma once

// Command-line front end: fit, simulate, psi-table. Needs CLI11.hpp on the
// include path.

#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ellbias/errors.hpp"
#include "ellbias/family.hpp"
#include "ellbias/fit.hpp"
#include "ellbias/harness.hpp"
#include "ellbias/model.hpp"
#include "ellbias/report.hpp"
#include "ellbias/zoo.hpp"

namespace ellbias::cli {

enum ExitCode { kOk = 0, kError = 1, kPartial = 2 };

struct RunConfig {
  std::string command;
  std::string model = "sigmoid";
  std::string family = "normal";
  double nu = 4.0;
  double lambda = 0.7;
  std::string data;
  std::string out;
  std::string format = "text";
  std::vector<std::string> estimators = {"mle", "bc", "br"};
  double tol = 1e-8;
  int max_iter = 200;
  std::uint64_t seed = 20240601;
  int reps = 1000;
  int threads = 0;
  std::vector<int> n = {20};
  std::vector<double> start;
  double x_max = 10.0;
  bool redraw = false;
  bool orthogonal = false;
  std::string name;
  int q_min = 1;
  int q_max = 3;
};

inline DensityFamily make_family(const RunConfig& cfg) {
  const std::string& f = cfg.family;
  if (f == "normal") return DensityFamily::normal();
  if (f == "cauchy") return DensityFamily::cauchy();
  if (f == "student-t" || f == "t") return DensityFamily::student_t(cfg.nu);
  if (f == "power-exponential" || f == "pe") return DensityFamily::power_exponential(cfg.lambda);
  throw ConfigError("unknown family '" + f + "' (normal, cauchy, student-t, power-exponential)");
}

inline EstimatorSet make_estimators(const std::vector<std::string>& names) {
  EstimatorSet s{false, false, false};
  for (const auto& e : names) {
    if (e == "mle") s.mle = true;
    else if (e == "bc") s.bc = true;
    else if (e == "br") s.br = true;
    else throw ConfigError("unknown estimator '" + e + "' (mle, bc, br)");
  }
  if (!s.mle && !s.bc && !s.br) throw ConfigError("no estimator requested");
  return s;
}

inline FitOptions make_fit_options(const RunConfig& cfg) {
  FitOptions o;
  o.tol = cfg.tol;
  o.max_iter = cfg.max_iter;
  o.estimators = make_estimators(cfg.estimators);
  if (cfg.orthogonal) o.use_orthogonal_path = true;
  if (!cfg.start.empty()) o.start = Eigen::Map<const VectorXd>(cfg.start.data(), cfg.start.size());
  o.validate();
  return o;
}

/// Every column except `skip`, in file order.
inline std::vector<std::string> other_columns(const DataTable& t, const std::vector<std::string>& skip) {
  std::vector<std::string> out;
  for (const auto& h : t.header)
    if (std::find(skip.begin(), skip.end(), h) == skip.end()) out.push_back(h);
  return out;
}

/// Intercept plus the named columns, one row per observation.
inline std::vector<VectorXd> design_rows(const DataTable& t, const std::vector<std::string>& cols) {
  std::vector<int> idx;
  for (const auto& c : cols) idx.push_back(t.column(c));
  std::vector<VectorXd> x(t.rows.size(), VectorXd(cols.size() + 1));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    x[i](0) = 1.0;
    for (std::size_t j = 0; j < idx.size(); ++j) x[i](j + 1) = t.rows[i][idx[j]];
  }
  return x;
}

inline std::vector<std::string> coefficient_names(const std::vector<std::string>& cols) {
  std::vector<std::string> names{"intercept"};
  names.insert(names.end(), cols.begin(), cols.end());
  return names;
}

/// Column schemas:
///   sigmoid       x, y
///   linear        y, covariates...           (constant variance sigma2)
///   hetero        y, covariates...           (log variance linear in the covariates)
///   log-linear    t, covariates...           (median exp(x'alpha), dispersion phi)
///   eiv           X1, X2, tau1, tau2
///   mixed         id, y, covariates...       (random intercept per id)
inline ModelSpec build_model(const std::string& model, const DataTable& t, const DensityFamily& fam) {
  if (model == "sigmoid") return zoo::build_sigmoid(t.values("x"), t.values("y"), fam);
  if (model == "linear" || model == "hetero") {
    const auto cols = other_columns(t, {"y"});
    zoo::HeteroNonlinearSpec s;
    s.mean = zoo::linear_mean(static_cast<int>(cols.size()) + 1, coefficient_names(cols));
    s.y = t.values("y");
    s.x = design_rows(t, cols);
    s.family = fam;
    if (model == "linear") {
      s.link = zoo::VarianceLink::Identity;
      s.variance_names = {"sigma2"};
    } else {
      s.omega = s.x;
      for (const auto& nm : coefficient_names(cols)) s.variance_names.push_back("gamma_" + nm);
    }
    return zoo::build_hetero_nonlinear(s);
  }
  if (model == "log-linear") {
    const auto cols = other_columns(t, {"t"});
    zoo::LogSymmetricSpec s;
    s.median = zoo::exponential_median(static_cast<int>(cols.size()) + 1, coefficient_names(cols));
    s.link = zoo::VarianceLink::Identity;
    s.t = t.values("t");
    s.x = design_rows(t, cols);
    s.family = fam;
    return zoo::build_log_symmetric(s);
  }
  if (model == "eiv") {
    zoo::ErrorsInVariablesSpec s;
    s.family = fam;
    const VectorXd x1 = t.values("X1"), x2 = t.values("X2"), t1 = t.values("tau1"), t2 = t.values("tau2");
    for (Eigen::Index i = 0; i < x1.size(); ++i) {
      if (!(t1(i) >= 0.0) || !(t2(i) >= 0.0))
        throw ConfigError(t.source + ": row " + std::to_string(i + 1) + ": tau1 and tau2 must be non-negative");
      s.X1.push_back(VectorXd::Constant(1, x1(i)));
      s.X2.push_back(VectorXd::Constant(1, x2(i)));
      s.tau1.push_back(MatrixXd::Constant(1, 1, t1(i)));
      s.tau2.push_back(MatrixXd::Constant(1, 1, t2(i)));
    }
    return zoo::build_eiv(s);
  }
  if (model == "mixed") {
    const auto cols = other_columns(t, {"id", "y"});
    const int p = static_cast<int>(cols.size()) + 1;
    const auto rows = design_rows(t, cols);
    const VectorXd id = t.values("id"), y = t.values("y");
    std::vector<double> order;
    std::map<double, std::vector<int>> groups;
    for (Eigen::Index i = 0; i < id.size(); ++i) {
      if (!groups.count(id(i))) order.push_back(id(i));
      groups[id(i)].push_back(static_cast<int>(i));
    }
    zoo::MixedEffectsSpec s;
    s.mean = zoo::linear_vector_mean(p, coefficient_names(cols));
    s.random = zoo::CovarianceStructure::unstructured(1);
    s.residual = zoo::CovarianceStructure::scaled_identity();
    s.family = fam;
    for (double g : order) {
      const auto& members = groups[g];
      const int q = static_cast<int>(members.size());
      if (q > kMaxBlockDim)
        throw ConfigError(t.source + ": subject " + detail::exact(g) + " has more than " +
                          std::to_string(kMaxBlockDim) + " rows");
      VectorXd yi(q);
      MatrixXd xi(q, p);
      for (int k = 0; k < q; ++k) {
        yi(k) = y(members[k]);
        xi.row(k) = rows[members[k]].transpose();
      }
      s.y.push_back(yi);
      s.x.push_back(vec(xi));
      s.Z.push_back(MatrixXd::Ones(q, 1));
    }
    return zoo::build_mixed_effects(s);
  }
  throw ConfigError("unknown model '" + model + "' (sigmoid, linear, hetero, log-linear, eiv, mixed)");
}

inline std::ostream& open_output(const RunConfig& cfg, std::ofstream& file, std::ostream& out) {
  if (cfg.out.empty() || cfg.out == "-") return out;
  file.open(cfg.out);
  if (!file) throw ConfigError("cannot write output file '" + cfg.out + "'");
  return file;
}

/// 0 when every requested estimator converged, 2 when only some did, 1 when none did.
inline int fit_exit_status(const FitResult& res, const EstimatorSet& want, std::ostream& err) {
  int requested = 0, converged = 0;
  for (Estimator e : {Estimator::MLE, Estimator::BC, Estimator::BR}) {
    if (!want.contains(e)) continue;
    ++requested;
    const auto& est = res.get(e);
    if (est && est->converged) ++converged;
    else err << "warning: " << estimator_name(e) << " did not converge"
             << (est && !est->message.empty() ? ": " + est->message : std::string()) << "\n";
  }
  if (converged == requested) return kOk;
  return converged == 0 ? kError : kPartial;
}

inline int cmd_fit(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  if (cfg.data.empty()) throw ConfigError("fit needs --data");
  const DensityFamily fam = make_family(cfg);
  const FitOptions opts = make_fit_options(cfg);
  const DataTable table = read_csv_file(cfg.data);
  const ModelSpec model = build_model(cfg.model, table, fam);
  const FitResult res = fit(model, opts);
  std::ofstream file;
  std::ostream& os = open_output(cfg, file, out);
  if (cfg.format == "csv") write_fit_report_csv(fit_report_rows(model, res), os);
  else write_fit_report_text(model, res, os);
  if (file.is_open() && cfg.format == "csv") write_fit_report_text(model, res, out);
  return fit_exit_status(res, opts.estimators, err);
}

inline SimConfig make_sim_config(const RunConfig& cfg) {
  const DensityFamily fam = make_family(cfg);
  SimConfig sc;
  if (cfg.model == "sigmoid") {
    sc.design = sigmoid_design(fam, cfg.x_max);
    sc.theta = sigmoid_true_theta();
  } else if (cfg.model == "eiv") {
    sc.design = eiv_design(fam);
    sc.theta = eiv_true_theta();
  } else {
    throw ConfigError("simulate supports the models sigmoid and eiv (got '" + cfg.model + "')");
  }
  sc.name = cfg.name.empty() ? cfg.model : cfg.name;
  sc.n_values = cfg.n;
  sc.replications = cfg.reps;
  sc.seed = cfg.seed;
  sc.threads = cfg.threads;
  sc.redraw_covariates = cfg.redraw;
  sc.fit = make_fit_options(cfg);
  sc.fit.start.reset();
  sc.estimators = sc.fit.estimators;
  if (!cfg.start.empty()) {
    if (static_cast<Eigen::Index>(cfg.start.size()) != sc.theta.size())
      throw ConfigError("--start needs " + std::to_string(sc.theta.size()) + " values");
    sc.theta = Eigen::Map<const VectorXd>(cfg.start.data(), cfg.start.size());
  }
  for (int n : sc.n_values)
    if (n < 2) throw ConfigError("sample sizes must be at least 2");
  sc.validate();
  return sc;
}

inline int cmd_simulate(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const SimConfig sc = make_sim_config(cfg);
  const SimReport rep = run_simulation(sc);
  write_report_text(rep, out);
  if (!cfg.out.empty() && cfg.out != "-") {
    std::ofstream file(cfg.out);
    if (!file) throw ConfigError("cannot write output file '" + cfg.out + "'");
    if (cfg.format == "csv") write_report_csv(rep, file);
    else write_report_text(rep, file);
  } else if (cfg.format == "csv") {
    write_report_csv(rep, out);
  }
  return kOk;
}

inline int cmd_psi_table(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  const DensityFamily fam = make_family(cfg);
  if (cfg.q_min < 1 || cfg.q_max < cfg.q_min) throw ConfigError("need 1 <= q-min <= q-max");
  std::vector<PsiMoments> rows;
  for (int q = cfg.q_min; q <= cfg.q_max; ++q) rows.push_back(fam.derived_constants(q));
  const char* head[] = {"q", "psi21", "psi22", "psi32", "psi33", "c", "c*", "omega~", "eta1", "eta2"};
  auto values = [](const PsiMoments& m) {
    return std::vector<double>{m.psi21, m.psi22, m.psi32, m.psi33, m.c, m.c_star, m.omega_tilde, m.eta1, m.eta2};
  };
  if (cfg.format == "csv") {
    for (int k = 0; k < 10; ++k) out << (k ? "," : "") << head[k];
    out << "\n";
    for (const auto& m : rows) {
      out << m.q;
      for (double v : values(m)) out << ',' << detail::exact(v);
      out << "\n";
    }
    return kOk;
  }
  out << fam.name() << "\n" << std::setw(3) << head[0];
  for (int k = 1; k < 10; ++k) out << std::setw(13) << head[k];
  out << "\n";
  for (const auto& m : rows) {
    out << std::setw(3) << m.q;
    for (double v : values(m)) out << std::setw(13) << detail::fixed6(v);
    out << "\n";
  }
  return kOk;
}

/// Parses argv and runs one command. Diagnostics go to err, tables to out.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  RunConfig cfg;
  CLI::App app{"Elliptical regression with second-order bias correction", "ellbias"};
  app.set_config("--config", "", "TOML/INI file with option values");
  app.fallthrough();
  app.require_subcommand(1);
  app.add_subcommand("fit", "fit a model to CSV data");
  app.add_subcommand("simulate", "run a Monte Carlo bias study");
  app.add_subcommand("psi-table", "print the psi moments and derived constants");

  app.add_option("--model", cfg.model, "sigmoid, linear, hetero, log-linear, eiv, mixed")->capture_default_str();
  app.add_option("--family", cfg.family, "normal, cauchy, student-t, power-exponential")->capture_default_str();
  app.add_option("--nu", cfg.nu, "Student t degrees of freedom")->capture_default_str();
  app.add_option("--lambda", cfg.lambda, "power exponential shape")->capture_default_str();
  app.add_option("--data", cfg.data, "headered CSV data file");
  app.add_option("--out", cfg.out, "output file (default: standard output)");
  app.add_option("--format", cfg.format, "text or csv")
      ->check(CLI::IsMember({"text", "csv"}))
      ->capture_default_str();
  app.add_option("--estimators", cfg.estimators, "any of mle, bc, br")->delimiter(',');
  app.add_option("--tol", cfg.tol, "convergence tolerance")->capture_default_str();
  app.add_option("--max-iter", cfg.max_iter, "iteration limit")->capture_default_str();
  app.add_option("--seed", cfg.seed, "master random seed")->capture_default_str();
  app.add_option("--reps", cfg.reps, "Monte Carlo replications")->capture_default_str();
  app.add_option("--threads", cfg.threads, "worker threads (0: ELLBIAS_THREADS or all cores)")
      ->capture_default_str();
  app.add_option("--n", cfg.n, "sample sizes")->delimiter(',');
  app.add_option("--start", cfg.start, "starting value (fit) or true theta (simulate)")->delimiter(',');
  app.add_option("--x-max", cfg.x_max, "sigmoid design: x ~ U(0, x-max)")->capture_default_str();
  app.add_flag("--redraw", cfg.redraw, "draw new covariates in every replication");
  app.add_flag("--orthogonal", cfg.orthogonal, "use the orthogonal-parameter bias path");
  app.add_option("--name", cfg.name, "title of the simulation report");
  app.add_option("--q-min", cfg.q_min, "psi-table: smallest q")->capture_default_str();
  app.add_option("--q-max", cfg.q_max, "psi-table: largest q")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kError;
  }
  cfg.command = app.get_subcommands().front()->get_name();
  try {
    if (cfg.command == "fit") return cmd_fit(cfg, out, err);
    if (cfg.command == "simulate") return cmd_simulate(cfg, out, err);
    return cmd_psi_table(cfg, out, err);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kError;
  }
}

}  // namespace ellbias::cli

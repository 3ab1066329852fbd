// Command-line front end: run, sweep, oracle, spectrum, gen-data, grad-check,
// prop-check.
//
// Exit status: 0 success, 1 configuration or usage error, 2 runtime or
// numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cil/checks.hpp"
#include "cil/config.hpp"
#include "cil/engine.hpp"
#include "cil/error.hpp"
#include "cil/io.hpp"
#include "cil/report.hpp"
#include "cil/spectral.hpp"

namespace fs = std::filesystem;
using cil::report::Json;

namespace {

struct ConfigFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::vector<std::string> sets;
  std::optional<double> eta;
  std::optional<double> beta;
  std::optional<std::string> method;
  std::optional<std::size_t> epochs;
  std::optional<std::string> train_csv;
  std::optional<std::string> test_csv;
};

void add_config_flags(CLI::App* cmd, ConfigFlags& f) {
  cmd->add_option("--config", f.config_path, "Config file (key = value per line)")->required();
  cmd->add_option("--seed", f.seed, "Run seed (overrides the config)");
  cmd->add_option("--out", f.out, "Output directory")->capture_default_str();
  cmd->add_option("--set", f.sets, "Override a config key, KEY=VALUE (repeatable)");
  cmd->add_option("--eta", f.eta, "CwD weight");
  cmd->add_option("--beta", f.beta, "Oracle-mimic weight");
  cmd->add_option("--method", f.method, "finetune | lwf | lucir-lite");
  cmd->add_option("--epochs", f.epochs, "Epochs per phase");
  cmd->add_option("--train-csv", f.train_csv, "Training CSV (label,f1,...,fd)");
  cmd->add_option("--test-csv", f.test_csv, "Test CSV");
}

cil::ProtocolConfig resolve_config(const ConfigFlags& f) {
  cil::ProtocolConfig c = cil::load_config(f.config_path);
  for (const auto& kv : f.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw cil::ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    cil::apply_setting(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) cil::apply_setting(c, "seed", std::to_string(*f.seed));
  if (f.eta) c.eta = *f.eta;
  if (f.beta) c.beta = *f.beta;
  if (f.method) cil::apply_setting(c, "method", *f.method);
  if (f.epochs) c.epochs = *f.epochs;
  if (f.train_csv) cil::apply_setting(c, "train_csv", *f.train_csv);
  if (f.test_csv) cil::apply_setting(c, "test_csv", *f.test_csv);
  c.validate();
  return c;
}

std::string num(double v) { return cil::format_double(v); }

void write_json(const fs::path& path, const Json& j) { cil::write_atomic(path, j.dump(2) + "\n"); }

std::vector<std::uint64_t> seed_list(std::uint64_t base, std::size_t count) {
  std::vector<std::uint64_t> out(count);
  for (std::size_t i = 0; i < count; ++i) out[i] = base + i;
  return out;
}

// ------------------------------------------------------------------ run

int cmd_run(const ConfigFlags& f, bool export_embeddings) {
  const auto config = resolve_config(f);
  const auto [train, test] = cil::build_datasets(config);
  const auto run = cil::run_protocol(config, train, test);
  cil::report::write_run(f.out, run, export_embeddings ? &test : nullptr);
  std::printf("seed %llu  average incremental accuracy %.4f\n", static_cast<unsigned long long>(run.seed),
              run.average_accuracy);
  for (const auto& p : run.phases) std::printf("  phase %zu  accuracy %.4f\n", p.phase, p.accuracy);
  return 0;
}

// ------------------------------------------------------------------ sweep

int cmd_sweep(const ConfigFlags& f, const std::string& variable_name, const std::vector<double>& values,
              std::size_t seeds) {
  const auto config = resolve_config(f);
  const auto variable = cil::parse_sweep_variable(variable_name);
  if (seeds == 0) throw cil::ConfigError("--seeds must be at least 1");
  const auto reports = cil::run_seeds<cil::SweepReport>(config.seed, seeds, [&](std::uint64_t s) {
    auto c = config;
    c.seed = s;
    return cil::run_spectrum_sweep(c, variable, values);
  });

  fs::create_directories(f.out);
  std::string csv = "seed,value,trained_classes,mean_alpha_quarter,conditional_mi_estimate,accuracy\n";
  std::vector<cil::report::LabeledSpectrum> spectra;
  std::vector<std::string> ids;
  ids.reserve(reports.size() * values.size());
  for (const auto& r : reports) {
    write_json(fs::path(f.out) / ("sweep_seed" + std::to_string(r.seed) + ".json"), cil::report::to_json(r));
    for (std::size_t i = 0; i < r.points.size(); ++i) {
      const auto& p = r.points[i];
      csv += std::to_string(r.seed) + "," + num(p.value) + "," + std::to_string(p.trained_classes.size()) + "," +
             num(p.mean_alpha_quarter) + "," + num(p.mi_estimate) + "," + num(p.accuracy) + "\n";
      ids.push_back("seed" + std::to_string(r.seed) + "_point" + std::to_string(i));
      for (const auto& s : p.spectra) spectra.emplace_back(ids.back(), &s);
    }
  }
  Json aggregate = Json::array();
  for (std::size_t i = 0; i < values.size(); ++i) {
    double alpha = 0.0, mi = 0.0, acc = 0.0;
    for (const auto& r : reports) {
      alpha += r.points[i].mean_alpha_quarter;
      mi += r.points[i].mi_estimate;
      acc += r.points[i].accuracy;
    }
    const auto n = static_cast<double>(reports.size());
    alpha /= n;
    mi /= n;
    acc /= n;
    csv += "mean," + num(values[i]) + "," + std::to_string(reports.front().points[i].trained_classes.size()) + "," +
           num(alpha) + "," + num(mi) + "," + num(acc) + "\n";
    aggregate.push_back(Json{{"value", values[i]}, {"mean_alpha_quarter", alpha}, {"conditional_mi_estimate", mi},
                             {"accuracy", acc}});
    std::printf("%s %-8g  mean alpha(d/4) %.6f  MI proxy %.6f  accuracy %.4f\n",
                cil::to_string(variable).c_str(), values[i], alpha, mi, acc);
  }
  cil::write_atomic(fs::path(f.out) / "sweep.csv", csv);
  cil::write_atomic(fs::path(f.out) / "spectra.csv", cil::report::spectra_csv(spectra));
  cil::write_atomic(fs::path(f.out) / "spectra_summary.csv", cil::report::spectra_summary_csv(spectra));
  write_json(fs::path(f.out) / "report.json",
             Json{{"config", cil::report::to_json(config)},
                  {"variable", cil::to_string(variable)},
                  {"seeds", seed_list(config.seed, seeds)},
                  {"aggregate", aggregate}});
  return 0;
}

// ------------------------------------------------------------------ oracle

int cmd_oracle(const ConfigFlags& f, std::size_t seeds) {
  const auto config = resolve_config(f);
  if (seeds == 0) throw cil::ConfigError("--seeds must be at least 1");
  const auto reports = cil::run_seeds<cil::OracleReport>(config.seed, seeds, [&](std::uint64_t s) {
    auto c = config;
    c.seed = s;
    return cil::run_oracle_experiment(c);
  });

  fs::create_directories(f.out);
  std::string csv = "seed,phase,baseline_accuracy,regularized_accuracy,delta\n";
  const std::size_t phases = reports.front().phase_deltas.size();
  std::vector<double> base_mean(phases, 0.0), reg_mean(phases, 0.0), delta_mean(phases, 0.0);
  double oracle_mean = 0.0;
  for (std::size_t r = 0; r < reports.size(); ++r) {
    const auto& o = reports[r];
    const std::uint64_t s = config.seed + r;
    const fs::path dir = fs::path(f.out) / ("seed" + std::to_string(s));
    cil::report::write_run(dir / "baseline", o.baseline);
    cil::report::write_run(dir / "regularized", o.regularized);
    write_json(dir / "oracle.json", cil::report::to_json(o));
    for (std::size_t p = 0; p < phases; ++p) {
      const double b = o.baseline.phases[p].accuracy, g = o.regularized.phases[p].accuracy;
      csv += std::to_string(s) + "," + std::to_string(p) + "," + num(b) + "," + num(g) + "," + num(o.phase_deltas[p]) +
             "\n";
      base_mean[p] += b;
      reg_mean[p] += g;
      delta_mean[p] += o.phase_deltas[p];
    }
    oracle_mean += o.oracle_accuracy;
  }
  const auto n = static_cast<double>(reports.size());
  Json aggregate = Json::array();
  for (std::size_t p = 0; p < phases; ++p) {
    base_mean[p] /= n;
    reg_mean[p] /= n;
    delta_mean[p] /= n;
    csv += "mean," + std::to_string(p) + "," + num(base_mean[p]) + "," + num(reg_mean[p]) + "," + num(delta_mean[p]) +
           "\n";
    aggregate.push_back(Json{{"phase", p},
                             {"baseline_accuracy", base_mean[p]},
                             {"regularized_accuracy", reg_mean[p]},
                             {"delta", delta_mean[p]}});
    std::printf("phase %zu  baseline %.4f  regularized %.4f  delta %+.4f\n", p, base_mean[p], reg_mean[p],
                delta_mean[p]);
  }
  oracle_mean /= n;
  std::printf("oracle accuracy %.4f\n", oracle_mean);
  cil::write_atomic(fs::path(f.out) / "oracle.csv", csv);
  write_json(fs::path(f.out) / "report.json",
             Json{{"config", cil::report::to_json(config)},
                  {"seeds", seed_list(config.seed, seeds)},
                  {"oracle_accuracy", oracle_mean},
                  {"aggregate", aggregate}});
  return 0;
}

// ------------------------------------------------------------------ spectrum

int cmd_spectrum(const std::string& data_path, const std::string& model_path, const std::string& source_name,
                 const std::string& out) {
  const auto source = cil::spectral::parse_source(source_name);
  const cil::Dataset data = cil::load_csv(data_path);
  cil::Matrix reps = data.features;
  if (!model_path.empty()) reps = cil::Network::restore(cil::Snapshot::load(model_path)).representations(data.features);

  std::vector<std::size_t> classes;
  for (std::size_t c = 0; c < data.num_classes; ++c)
    if (data.class_indices[c].size() >= 2) classes.push_back(c);
  const auto spectra = cil::spectral::class_spectra(reps, data.labels, classes, source);

  std::vector<cil::report::LabeledSpectrum> labeled;
  for (const auto& s : spectra) labeled.emplace_back(fs::path(data_path).stem().string(), &s);
  fs::create_directories(out);
  cil::write_atomic(fs::path(out) / "spectra.csv", cil::report::spectra_csv(labeled));
  cil::write_atomic(fs::path(out) / "spectra_summary.csv", cil::report::spectra_summary_csv(labeled));
  double alpha = 0.0;
  for (const auto& s : spectra) alpha += cil::spectral::alpha_at_quarter(s.alpha);
  alpha /= static_cast<double>(std::max<std::size_t>(spectra.size(), 1));
  const double mi = spectra.empty() ? 0.0 : cil::spectral::conditional_mi_estimate(spectra);
  write_json(fs::path(out) / "report.json", Json{{"source", cil::spectral::to_string(source)},
                                                  {"classes", classes.size()},
                                                  {"mean_alpha_quarter", alpha},
                                                  {"conditional_mi_estimate", mi}});
  std::printf("%zu classes  mean alpha(d/4) %.6f  MI proxy %.6f\n", classes.size(), alpha, mi);
  return 0;
}

// ------------------------------------------------------------------ gen-data

int cmd_gen_data(const cil::MixtureSpec& spec, const std::string& out) {
  if (spec.num_classes == 0 || spec.input_dim == 0 || spec.train_per_class == 0)
    throw cil::ConfigError("gen-data: classes, dim and per-class must be positive");
  const auto [train, test] = cil::gaussian_mixture(spec);
  const fs::path path(out);
  const fs::path test_path = path.parent_path() / (path.stem().string() + ".test" + path.extension().string());
  cil::save_csv(train, path);
  if (spec.test_per_class > 0) cil::save_csv(test, test_path);
  std::printf("wrote %s (%zu rows) and %s (%zu rows)\n", path.c_str(), train.size(), test_path.c_str(), test.size());
  return 0;
}

// ------------------------------------------------------------------ checks

int cmd_grad_check(std::size_t trials, std::uint64_t seed, double tolerance) {
  const auto results = cil::checks::loss_gradient_suite(trials, seed);
  bool ok = true;
  for (const auto& r : results) {
    const bool pass = r.max_error < tolerance;
    ok = ok && pass;
    std::printf("%-28s trials %zu  max relative error %.3e  %s\n", r.name.c_str(), r.trials, r.max_error,
                pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 2;
}

int cmd_prop_check(std::size_t dim, std::size_t min_dim, std::size_t trials, std::uint64_t seed) {
  if (dim < 2) throw cil::ConfigError("prop-check: --dim must be at least 2");
  if (trials == 0) throw cil::ConfigError("prop-check: --trials must be positive");
  const std::size_t lo = min_dim == 0 ? dim : min_dim;
  if (lo < 2 || lo > dim) throw cil::ConfigError("prop-check: --min-dim must be in [2, dim]");
  const auto r = cil::checks::proposition1_sweep(lo, dim, trials, seed);
  std::printf("trials %zu  max residual %.3e  max residual/d %.3e (d=%zu)  max trace error/d %.3e\n", r.trials,
              r.max_residual, r.max_scaled_residual, r.worst_dim, r.max_trace_error);
  return r.max_scaled_residual < 1e-8 && r.max_trace_error < 1e-6 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Class-incremental learning with class-wise decorrelation"};
  app.require_subcommand(1);

  ConfigFlags run_flags, sweep_flags, oracle_flags;
  bool export_embeddings = false;
  auto* run = app.add_subcommand("run", "Run the incremental protocol and write report.json, metrics.csv, ...");
  add_config_flags(run, run_flags);
  run->add_flag("--export-embeddings", export_embeddings, "Also write embeddings.csv for the test split");

  std::string sweep_variable = "eta";
  std::vector<double> sweep_values{0.0, 0.25, 1.0};
  std::size_t sweep_seeds = 1;
  auto* sweep = app.add_subcommand("sweep", "Spectrum sweep over eta or the number of training classes");
  add_config_flags(sweep, sweep_flags);
  sweep->add_option("--variable", sweep_variable, "eta | train-class-count")->capture_default_str();
  sweep->add_option("--values", sweep_values, "Comma-separated sweep values")->delimiter(',')->capture_default_str();
  sweep->add_option("--seeds", sweep_seeds, "Number of consecutive seeds starting at --seed")->capture_default_str();

  std::size_t oracle_seeds = 1;
  auto* oracle = app.add_subcommand("oracle", "Oracle-mimic experiment: phase-0 regularization toward a joint model");
  add_config_flags(oracle, oracle_flags);
  oracle->add_option("--seeds", oracle_seeds, "Number of consecutive seeds starting at --seed")->capture_default_str();

  std::string spec_data, spec_model, spec_source = "covariance", spec_out = "out";
  auto* spectrum = app.add_subcommand("spectrum", "Per-class eigen-spectra of a dataset or of a model's representations");
  spectrum->add_option("--data", spec_data, "CSV (label,f1,...,fd)")->required();
  spectrum->add_option("--model", spec_model, "model.snapshot from a run; omit to analyse raw features");
  spectrum->add_option("--source", spec_source, "covariance | correlation")->capture_default_str();
  spectrum->add_option("--out", spec_out, "Output directory")->capture_default_str();

  cil::MixtureSpec mixture;
  std::string gen_out;
  auto* gen = app.add_subcommand("gen-data", "Write a synthetic Gaussian-mixture dataset as <out> and <stem>.test.csv");
  gen->add_option("--classes", mixture.num_classes, "Number of classes")->capture_default_str();
  gen->add_option("--dim", mixture.input_dim, "Feature dimension")->capture_default_str();
  gen->add_option("--per-class", mixture.train_per_class, "Training samples per class")->capture_default_str();
  gen->add_option("--test-per-class", mixture.test_per_class, "Test samples per class")->capture_default_str();
  gen->add_option("--center-scale", mixture.center_scale, "Half-width of the class-center box")->capture_default_str();
  gen->add_option("--noise-scale", mixture.noise_scale, "Per-dimension noise std")->capture_default_str();
  gen->add_option("--seed", mixture.seed, "Data seed")->capture_default_str();
  gen->add_option("--out", gen_out, "Training CSV path")->required();

  std::size_t gc_trials = 10;
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4;
  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of every loss gradient");
  grad->add_option("--trials", gc_trials, "Random batches per loss")->capture_default_str();
  grad->add_option("--seed", gc_seed, "Seed")->capture_default_str();
  grad->add_option("--tolerance", gc_tol, "Maximum relative error")->capture_default_str();

  std::size_t pc_dim = 32, pc_min_dim = 0, pc_trials = 100;
  std::uint64_t pc_seed = 1;
  auto* prop = app.add_subcommand("prop-check", "Check L_shape = ||K||_F^2 - d on random correlation matrices");
  prop->add_option("--dim", pc_dim, "Dimension (maximum when --min-dim is set)")->capture_default_str();
  prop->add_option("--min-dim", pc_min_dim, "Draw d uniformly from [min-dim, dim]");
  prop->add_option("--trials", pc_trials, "Number of matrices")->capture_default_str();
  prop->add_option("--seed", pc_seed, "Seed")->capture_default_str();

  if (argc <= 1) {
    std::cerr << app.help();
    return 1;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*run) return cmd_run(run_flags, export_embeddings);
    if (*sweep) return cmd_sweep(sweep_flags, sweep_variable, sweep_values, sweep_seeds);
    if (*oracle) return cmd_oracle(oracle_flags, oracle_seeds);
    if (*spectrum) return cmd_spectrum(spec_data, spec_model, spec_source, spec_out);
    if (*gen) return cmd_gen_data(mixture, gen_out);
    if (*grad) return cmd_grad_check(gc_trials, gc_seed, gc_tol);
    if (*prop) return cmd_prop_check(pc_dim, pc_min_dim, pc_trials, pc_seed);
  } catch (const cil::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

#include "cil/report.hpp"

#include <cmath>

#include "cil/io.hpp"

namespace cil::report {

namespace {

Json loss_json(const LossReport& r) {
  return Json{{"ce", r.ce},           {"cwd", r.cwd},     {"distill", r.distill},
              {"oracle", r.oracle},   {"total", r.total}, {"cwd_skipped", r.cwd_skipped}};
}

Json spectrum_json(const spectral::SpectrumReport& s) {
  return Json{{"class_id", s.class_id},
              {"n", s.sample_count},
              {"source", spectral::to_string(s.source)},
              {"frobenius_sq", s.frobenius_sq},
              {"log_eig_sum", s.log_eig_sum},
              {"log_floor", s.log_floor},
              {"alpha_quarter", spectral::alpha_at_quarter(s.alpha)},
              {"eigenvalues", s.eigenvalues}};
}

std::string csv_line(std::initializer_list<std::string> fields) {
  std::string out;
  bool first = true;
  for (const auto& f : fields) {
    if (!first) out += ',';
    out += f;
    first = false;
  }
  out += '\n';
  return out;
}

std::string num(double v) { return format_double(v); }
std::string num(std::size_t v) { return std::to_string(v); }

}  // namespace

Json to_json(const ProtocolConfig& c) {
  Json data;
  if (c.data.train_csv.empty()) {
    data = Json{{"source", "synthetic"},
                {"num_classes", c.data.mixture.num_classes},
                {"input_dim", c.data.mixture.input_dim},
                {"train_per_class", c.data.mixture.train_per_class},
                {"test_per_class", c.data.mixture.test_per_class},
                {"center_scale", c.data.mixture.center_scale},
                {"noise_scale", c.data.mixture.noise_scale},
                {"data_seed", c.effective_data_seed()}};
  } else {
    data = Json{{"source", "csv"}, {"train_csv", c.data.train_csv}, {"test_csv", c.data.test_csv}};
  }
  return Json{{"data", data},
              {"initial_classes", c.initial_classes},
              {"increment", c.increment},
              {"shuffle_seed", c.shuffle_seed},
              {"exemplars_per_class", c.exemplars_per_class},
              {"method", to_string(c.method)},
              {"eta", c.eta},
              {"cwd_mode", to_string(c.cwd_mode)},
              {"cwd_all_phases", c.cwd_all_phases},
              {"cwd_eps", c.cwd_eps},
              {"beta", c.beta},
              {"oracle_seed", c.effective_oracle_seed()},
              {"lambda_base", c.lambda_base},
              {"temperature", c.temperature},
              {"herding_normalize", c.herding_normalize},
              {"reherd_old_classes", false},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"lr_decay_at", c.lr_decay_at},
              {"lr_decay_factor", c.lr_decay_factor},
              {"momentum", c.momentum},
              {"weight_decay", c.weight_decay},
              {"network",
               Json{{"input_dim", c.network.input_dim},
                    {"hidden_dims", c.network.hidden_dims},
                    {"rep_dim", c.network.rep_dim},
                    {"head_scale_init", c.network.head_scale_init},
                    {"seed", c.effective_network_seed()}}},
              {"seed", c.seed}};
}

Json to_json(const RunReport& run) {
  Json phases = Json::array();
  for (const auto& p : run.phases) {
    Json per_class = Json::array();
    for (const auto& c : p.per_class)
      per_class.push_back(Json{{"class_id", c.class_id}, {"correct", c.correct}, {"total", c.total}, {"accuracy", c.accuracy}});
    Json spectra = Json::array();
    for (const auto& s : p.spectra) spectra.push_back(spectrum_json(s));
    phases.push_back(Json{{"phase", p.phase},
                          {"classes", p.classes},
                          {"accuracy", p.accuracy},
                          {"per_class", per_class},
                          {"loss", Json{{"steps", p.loss.steps},
                                        {"mean", loss_json(p.loss.mean)},
                                        {"final", loss_json(p.loss.final_step)}}},
                          {"conditional_mi_estimate", p.spectra.empty() ? 0.0 : spectral::conditional_mi_estimate(p.spectra)},
                          {"spectra", spectra}});
  }
  Json memory = Json::object();
  for (const auto& [cls, rows] : run.memory.exemplars) memory[std::to_string(cls)] = rows;
  return Json{{"config", to_json(run.config)},
              {"seed", run.seed},
              {"class_order", run.plan.order},
              {"label_map", run.label_map},
              {"phases", phases},
              {"average_incremental_accuracy", run.average_accuracy},
              {"memory", Json{{"capacity", run.memory.capacity}, {"exemplars", memory}}},
              {"notes", "conditional_mi_estimate and log_eig_sum drop additive constants; compare across runs only"}};
}

Json to_json(const SweepReport& sweep) {
  Json points = Json::array();
  for (const auto& p : sweep.points) {
    Json spectra = Json::array();
    for (const auto& s : p.spectra) spectra.push_back(spectrum_json(s));
    points.push_back(Json{{"value", p.value},
                          {"trained_classes", p.trained_classes},
                          {"accuracy", p.accuracy},
                          {"mean_alpha_quarter", p.mean_alpha_quarter},
                          {"conditional_mi_estimate", p.mi_estimate},
                          {"spectra", spectra}});
  }
  return Json{{"variable", to_string(sweep.variable)},
              {"seed", sweep.seed},
              {"shared_classes", sweep.shared_classes},
              {"points", points}};
}

Json to_json(const OracleReport& o) {
  return Json{{"oracle_accuracy", o.oracle_accuracy},
              {"phase_deltas", o.phase_deltas},
              {"baseline_average", o.baseline.average_accuracy},
              {"regularized_average", o.regularized.average_accuracy},
              {"baseline", to_json(o.baseline)},
              {"regularized", to_json(o.regularized)}};
}

std::string metrics_csv(std::span<const StepRecord> steps) {
  std::string out = "phase,epoch,step,ce,cwd,distill,oracle,total\n";
  for (const auto& s : steps)
    out += csv_line({num(s.phase), num(s.epoch), num(s.step), num(s.loss.ce), num(s.loss.cwd), num(s.loss.distill),
                     num(s.loss.oracle), num(s.loss.total)});
  return out;
}

std::string spectra_csv(std::span<const LabeledSpectrum> spectra) {
  std::string out = "run_id,class_id,source,k,lambda_k,alpha_k\n";
  for (const auto& [id, s] : spectra)
    for (std::size_t k = 0; k < s->eigenvalues.size(); ++k)
      out += csv_line({id, num(s->class_id), spectral::to_string(s->source), num(k + 1), num(s->eigenvalues[k]),
                       num(s->alpha[k])});
  return out;
}

std::string spectra_summary_csv(std::span<const LabeledSpectrum> spectra) {
  std::string out = "run_id,class_id,n,frobenius_sq,log_eig_sum\n";
  for (const auto& [id, s] : spectra)
    out += csv_line({id, num(s->class_id), num(s->sample_count), num(s->frobenius_sq), num(s->log_eig_sum)});
  return out;
}

std::string memory_csv(const ExemplarMemory& memory) {
  std::string out = "class_id,rank,dataset_index\n";
  for (const auto& [cls, rows] : memory.exemplars)
    for (std::size_t r = 0; r < rows.size(); ++r) out += csv_line({num(cls), num(r), num(rows[r])});
  return out;
}

std::string embeddings_csv(const Network& net, const Dataset& data) {
  const Matrix reps = net.representations(data.features);
  std::string out = "class_id";
  for (std::size_t j = 0; j < reps.cols; ++j) out += ",x" + std::to_string(j);
  out += '\n';
  for (std::size_t i = 0; i < reps.rows; ++i) {
    double sq = 0.0;
    for (double v : reps.row(i)) sq += v * v;
    const double norm = std::max(std::sqrt(sq), 1e-12);
    out += std::to_string(data.labels[i]);
    for (double v : reps.row(i)) out += "," + format_double(v / norm);
    out += '\n';
  }
  return out;
}

std::vector<LabeledSpectrum> run_spectra(const RunReport& run) {
  std::vector<LabeledSpectrum> out;
  for (const auto& p : run.phases)
    for (const auto& s : p.spectra) out.emplace_back("phase" + std::to_string(p.phase), &s);
  return out;
}

void write_run(const std::filesystem::path& dir, const RunReport& run, const Dataset* embeddings_of) {
  std::filesystem::create_directories(dir);
  const auto spectra = run_spectra(run);
  write_atomic(dir / "metrics.csv", metrics_csv(run.steps));
  write_atomic(dir / "spectra.csv", spectra_csv(spectra));
  write_atomic(dir / "spectra_summary.csv", spectra_summary_csv(spectra));
  write_atomic(dir / "memory.csv", memory_csv(run.memory));
  run.final_model.save(dir / "model.snapshot");
  if (embeddings_of) write_atomic(dir / "embeddings.csv", embeddings_csv(Network::restore(run.final_model), *embeddings_of));
  write_atomic(dir / "timing.json", Json{{"wall_clock_seconds", run.wall_clock_seconds}}.dump(2) + "\n");
  write_atomic(dir / "report.json", to_json(run).dump(2) + "\n");
}

}  // namespace cil::report

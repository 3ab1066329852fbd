#include "cil/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "cil/error.hpp"
#include "cil/rng.hpp"

namespace cil {

namespace {

constexpr std::uint64_t kNetworkStream = 1;
constexpr std::uint64_t kOracleStream = 2;
constexpr std::uint64_t kBatchStream = 100;
constexpr std::uint64_t kOracleBatchStream = 200;
constexpr std::uint64_t kSweepBatchStream = 300;

#ifdef CIL_ABLATE_CWD
constexpr bool kCwdCompiled = false;
#else
constexpr bool kCwdCompiled = true;
#endif

void shuffle(std::vector<std::size_t>& v, Rng& rng) {
  for (std::size_t i = v.size(); i-- > 1;) std::swap(v[i], v[rng.below(i + 1)]);
}

LossReport& operator+=(LossReport& a, const LossReport& b) {
  a.ce += b.ce;
  a.cwd += b.cwd;
  a.distill += b.distill;
  a.oracle += b.oracle;
  a.total += b.total;
  a.cwd_skipped += b.cwd_skipped;
  return a;
}

LossSummary summarize(std::span<const StepRecord> steps) {
  LossSummary s;
  s.steps = steps.size();
  if (steps.empty()) return s;
  for (const auto& r : steps) s.mean += r.loss;
  const double n = static_cast<double>(steps.size());
  s.mean.ce /= n;
  s.mean.cwd /= n;
  s.mean.distill /= n;
  s.mean.oracle /= n;
  s.mean.total /= n;
  s.final_step = steps.back().loss;
  return s;
}

std::vector<std::size_t> identity_rows(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

std::vector<spectral::SpectrumReport> test_spectra(const Network& net, const Dataset& test,
                                                   std::span<const std::size_t> classes) {
  std::vector<std::size_t> rows, labels;
  for (std::size_t c : classes)
    for (std::size_t i : test.class_indices.at(c)) {
      rows.push_back(i);
      labels.push_back(c);
    }
  const Matrix reps = net.representations(gather_rows(test.features, rows));
  return spectral::class_spectra(reps, labels, classes, spectral::Source::Covariance);
}

}  // namespace

// ---------------------------------------------------------------- config

std::string to_string(Method m) {
  switch (m) {
    case Method::Finetune: return "finetune";
    case Method::Lwf: return "lwf";
    case Method::LucirLite: return "lucir-lite";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  if (s == "finetune") return Method::Finetune;
  if (s == "lwf") return Method::Lwf;
  if (s == "lucir-lite") return Method::LucirLite;
  throw ConfigError("unknown method '" + s + "' (expected finetune, lwf or lucir-lite)");
}

void ProtocolConfig::validate() const {
  if (eta < 0.0) throw ConfigError("eta must be non-negative");
  if (beta < 0.0) throw ConfigError("beta must be non-negative");
  if (!kCwdCompiled && eta > 0.0) throw ConfigError("this build has the CwD term compiled out; eta must be 0");
  if (!(cwd_eps > 0.0)) throw ConfigError("cwd_eps must be positive");
  if (lambda_base < 0.0) throw ConfigError("lambda_base must be non-negative");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
  if (!(lr_decay_factor > 0.0) || lr_decay_factor > 1.0) throw ConfigError("lr_decay_factor must be in (0, 1]");
  for (double f : lr_decay_at)
    if (f < 0.0 || f > 1.0) throw ConfigError("lr_decay_at entries must be fractions in [0, 1]");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
  if (initial_classes == 0 || increment == 0) throw ConfigError("initial_classes and increment must be positive");
  network.validate();
}

std::uint64_t ProtocolConfig::effective_network_seed() const {
  return network_seed.value_or(derive_seed(seed, kNetworkStream));
}

std::uint64_t ProtocolConfig::effective_oracle_seed() const {
  return oracle_seed.value_or(derive_seed(seed, kOracleStream));
}

double ProtocolConfig::learning_rate_at(std::size_t epoch) const {
  double lr = learning_rate;
  for (double f : lr_decay_at) {
    const auto milestone = static_cast<std::size_t>(std::floor(f * static_cast<double>(epochs)));
    if (epoch >= milestone) lr *= lr_decay_factor;
  }
  return lr;
}

// ---------------------------------------------------------------- training

std::vector<StepRecord> train_phase(Network& net, const PhaseInputs& in, const ProtocolConfig& config) {
  if (!in.train) throw ContractError("train_phase: no training data");
  if (in.classes.empty()) throw ContractError("train_phase: no classes to learn");
  const Dataset& train = *in.train;
  const std::size_t new_classes = in.classes.size();
  if (net.num_classes() < new_classes) throw StateError("train_phase: classifier head not extended for this phase");
  const std::size_t old_classes = net.num_classes() - new_classes;

  const bool distills = in.phase >= 1 && config.method != Method::Finetune;
  if (distills && !in.teacher) throw ContractError("train_phase: distillation needs a teacher");

  const auto head_rows = in.head_row.empty() ? identity_rows(train.num_classes) : std::vector<std::size_t>(
                                                                                      in.head_row.begin(), in.head_row.end());
  std::vector<std::size_t> pool;
  for (std::size_t c : in.classes) {
    const auto& rows = train.class_indices.at(c);
    pool.insert(pool.end(), rows.begin(), rows.end());
  }
  if (in.memory) {
    for (const auto& [cls, rows] : in.memory->exemplars) {
      if (std::find(in.classes.begin(), in.classes.end(), cls) != in.classes.end()) continue;
      pool.insert(pool.end(), rows.begin(), rows.end());
    }
  }
  if (pool.empty()) throw ContractError("train_phase: no training rows for this phase");

  ObjectiveWeights weights;
  weights.eta = kCwdCompiled ? config.eta : 0.0;
  weights.beta = config.beta;
  weights.cwd_all_phases = config.cwd_all_phases;
  weights.lambda_d = distills ? adaptive_distill_weight(config.lambda_base, old_classes, new_classes) : 0.0;
  [[maybe_unused]] const bool cwd_active = weights.eta > 0.0 && (in.phase == 0 || weights.cwd_all_phases);
  const bool oracle_active = weights.beta > 0.0 && in.phase == 0;

  Rng rng(in.shuffle_seed);
  Sgd opt(config.momentum, config.weight_decay);
  std::vector<StepRecord> trace;
  std::size_t step = 0;
  LossReport last;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const double lr = config.learning_rate_at(epoch);
    shuffle(pool, rng);
    for (std::size_t start = 0; start < pool.size(); start += config.batch_size, ++step) {
      const std::size_t end = std::min(pool.size(), start + config.batch_size);
      const std::span<const std::size_t> idx(pool.data() + start, end - start);
      const Matrix x = gather_rows(train.features, idx);
      std::vector<std::size_t> y(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) y[i] = head_rows.at(train.labels[idx[i]]);

      try {
        ad::Graph g;
        const auto bound = net.bind(g, true);
        const auto out = net.forward(bound, g.constant(x));
        LossParts parts;
        parts.ce = ad::softmax_cross_entropy(out.logits, y);
#ifndef CIL_ABLATE_CWD
        if (cwd_active) parts.cwd = cwd_loss(out.reps, y, config.cwd_mode, config.cwd_eps);
#endif
        if (oracle_active && in.oracle) parts.oracle = oracle_mimic_loss(out.reps, in.oracle->representations(x));
        if (distills) {
          if (config.method == Method::LucirLite)
            parts.distill = feature_distill(out.reps, in.teacher->representations(x));
          else
            parts.distill = lwf_distill(out.logits, in.teacher->infer(x).second, config.temperature);
        }
        const Objective obj = total_objective(parts, weights, in.phase);
        last = obj.report;
        g.backward(obj.total);
        std::vector<Matrix> grads;
        grads.reserve(bound.size());
        for (const auto& v : bound) grads.push_back(v.grad_matrix());
        opt.step(net, grads, lr);
        trace.push_back({in.phase, epoch, step, obj.report});
      } catch (const NumericError& e) {
        throw NumericError("phase " + std::to_string(in.phase) + " epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step) + ": " + e.what() + " (last loss: ce=" + std::to_string(last.ce) +
                           " cwd=" + std::to_string(last.cwd) + " distill=" + std::to_string(last.distill) +
                           " oracle=" + std::to_string(last.oracle) + " total=" + std::to_string(last.total) + ")");
      }
    }
  }
  return trace;
}

Evaluation evaluate(const Network& net, const Dataset& test, std::span<const std::size_t> seen_classes,
                    std::span<const std::size_t> head_row) {
  if (seen_classes.empty()) throw ContractError("evaluate: no seen classes");
  const auto rows_of = head_row.empty() ? identity_rows(test.num_classes)
                                        : std::vector<std::size_t>(head_row.begin(), head_row.end());
  std::vector<std::size_t> rows;
  for (std::size_t c : seen_classes) {
    if (c >= test.num_classes || test.class_indices[c].empty())
      throw Error("evaluate: no test samples for class " + std::to_string(c));
    if (rows_of.at(c) >= net.num_classes())
      throw StateError("evaluate: class " + std::to_string(c) + " has no classifier row");
    rows.insert(rows.end(), test.class_indices[c].begin(), test.class_indices[c].end());
  }
  const Matrix logits = net.infer(gather_rows(test.features, rows)).second;

  Evaluation ev;
  std::size_t correct_total = 0, r = 0;
  for (std::size_t c : seen_classes) {
    ClassAccuracy ca{c, 0, test.class_indices[c].size(), 0.0};
    for (std::size_t k = 0; k < ca.total; ++k, ++r) {
      std::size_t best = seen_classes[0];
      double best_logit = logits(r, rows_of[best]);
      for (std::size_t cand : seen_classes)
        if (logits(r, rows_of[cand]) > best_logit) {
          best_logit = logits(r, rows_of[cand]);
          best = cand;
        }
      if (best == c) ++ca.correct;
    }
    ca.accuracy = 100.0 * static_cast<double>(ca.correct) / static_cast<double>(ca.total);
    correct_total += ca.correct;
    ev.per_class.push_back(ca);
  }
  ev.accuracy = 100.0 * static_cast<double>(correct_total) / static_cast<double>(rows.size());
  return ev;
}

double average_incremental_accuracy(std::span<const double> per_phase) {
  if (per_phase.empty()) throw ContractError("average_incremental_accuracy: no phases");
  return std::accumulate(per_phase.begin(), per_phase.end(), 0.0) / static_cast<double>(per_phase.size());
}

// ---------------------------------------------------------------- protocols

std::pair<Dataset, Dataset> build_datasets(const ProtocolConfig& config) {
  if (config.data.train_csv.empty()) {
    MixtureSpec spec = config.data.mixture;
    spec.seed = config.effective_data_seed();
    return gaussian_mixture(spec);
  }
  const std::filesystem::path train_path = config.data.train_csv;
  std::filesystem::path test_path = config.data.test_csv;
  if (test_path.empty()) test_path = train_path.parent_path() / (train_path.stem().string() + ".test.csv");
  Dataset train = load_csv(train_path, Split::Train);
  Dataset test = load_csv(test_path, Split::Test, &train.label_map);
  return {std::move(train), std::move(test)};
}

RunReport run_protocol(const ProtocolConfig& config) {
  auto [train, test] = build_datasets(config);
  return run_protocol(config, train, test);
}

RunReport run_protocol(const ProtocolConfig& config_in, const Dataset& train, const Dataset& test,
                       const Network* oracle) {
  const auto t0 = std::chrono::steady_clock::now();
  ProtocolConfig config = config_in;
  config.network.input_dim = train.dim();
  config.validate();
  if (test.num_classes != train.num_classes || test.dim() != train.dim())
    throw ConfigError("train and test splits disagree on classes or feature dimension");
  for (std::size_t c = 0; c < train.num_classes; ++c)
    if (!train.class_indices[c].empty() && test.class_indices[c].empty())
      throw ConfigError("class " + std::to_string(c) + " has training rows but no test rows");

  RunReport report;
  report.seed = config.seed;
  report.label_map = train.label_map;
  report.plan = make_phase_plan(train.num_classes, config.initial_classes, config.increment, config.shuffle_seed);
  const auto head_row = report.plan.positions();

  NetworkConfig net_cfg = config.network;
  net_cfg.seed = config.effective_network_seed();
  config.network.seed = net_cfg.seed;
  Network net = Network::init(net_cfg);
  report.memory.capacity = config.exemplars_per_class;

  std::vector<std::size_t> seen;
  std::vector<double> accuracies;
  for (std::size_t p = 0; p < report.plan.phases.size(); ++p) {
    const auto& classes = report.plan.phases[p];
    try {
      std::optional<Network> teacher;
      if (p > 0 && config.method != Method::Finetune) teacher = Network::restore(net.snapshot());
      net.extend_head(classes.size());

      PhaseInputs in;
      in.classes = classes;
      in.train = &train;
      in.memory = &report.memory;
      in.teacher = teacher ? &*teacher : nullptr;
      in.oracle = oracle;
      in.head_row = head_row;
      in.phase = p;
      in.shuffle_seed = derive_seed(config.seed, kBatchStream + p);
      auto steps = train_phase(net, in, config);

      seen.insert(seen.end(), classes.begin(), classes.end());
      PhaseResult result;
      result.phase = p;
      result.classes = classes;
      const Evaluation ev = evaluate(net, test, seen, head_row);
      result.accuracy = ev.accuracy;
      result.per_class = ev.per_class;
      result.loss = summarize(steps);

      const Network frozen = Network::restore(net.snapshot());
      rebuild(report.memory, frozen, train, classes, config.exemplars_per_class, config.herding_normalize);
      result.spectra = test_spectra(frozen, test, seen);

      accuracies.push_back(result.accuracy);
      report.steps.insert(report.steps.end(), steps.begin(), steps.end());
      report.phases.push_back(std::move(result));
    } catch (const ConfigError&) {
      throw;
    } catch (const NumericError& e) {
      throw NumericError("phase " + std::to_string(p) + ": " + e.what());
    } catch (const Error& e) {
      throw Error("phase " + std::to_string(p) + ": " + e.what());
    }
  }
  report.average_accuracy = average_incremental_accuracy(accuracies);
  report.final_model = net.snapshot();
  report.config = config;
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

Network train_oracle(const ProtocolConfig& config_in, const Dataset& train) {
  ProtocolConfig config = config_in;
  config.network.input_dim = train.dim();
  config.eta = 0.0;
  config.beta = 0.0;
  config.validate();
  const PhasePlan plan = make_phase_plan(train.num_classes, train.num_classes, 1, config.shuffle_seed);
  const auto head_row = plan.positions();
  NetworkConfig net_cfg = config.network;
  net_cfg.seed = config.effective_oracle_seed();
  Network net = Network::init(net_cfg);
  net.extend_head(train.num_classes);
  PhaseInputs in;
  in.classes = plan.order;
  in.train = &train;
  in.head_row = head_row;
  in.phase = 0;
  in.shuffle_seed = derive_seed(config.effective_oracle_seed(), kOracleBatchStream);
  train_phase(net, in, config);
  net.freeze();
  return net;
}

OracleReport run_oracle_experiment(const ProtocolConfig& config) {
  if (!(config.beta > 0.0)) throw ConfigError("oracle experiment needs beta > 0");
  auto [train, test] = build_datasets(config);
  const Network oracle = train_oracle(config, train);

  OracleReport out;
  const PhasePlan plan = make_phase_plan(train.num_classes, train.num_classes, 1, config.shuffle_seed);
  out.oracle_accuracy = evaluate(oracle, test, plan.order, plan.positions()).accuracy;

  ProtocolConfig baseline = config;
  baseline.beta = 0.0;
  out.baseline = run_protocol(baseline, train, test);
  out.regularized = run_protocol(config, train, test, &oracle);
  for (std::size_t p = 0; p < out.baseline.phases.size(); ++p)
    out.phase_deltas.push_back(out.regularized.phases[p].accuracy - out.baseline.phases[p].accuracy);
  return out;
}

// ---------------------------------------------------------------- sweeps

std::string to_string(SweepVariable v) { return v == SweepVariable::Eta ? "eta" : "train-class-count"; }

SweepVariable parse_sweep_variable(const std::string& s) {
  if (s == "eta") return SweepVariable::Eta;
  if (s == "train-class-count" || s == "classes") return SweepVariable::TrainClassCount;
  throw ConfigError("unknown sweep variable '" + s + "' (expected eta or train-class-count)");
}

SweepReport run_spectrum_sweep(const ProtocolConfig& base_in, SweepVariable variable, std::span<const double> values) {
  if (values.size() < 2) throw ConfigError("sweep needs at least 2 values");
  ProtocolConfig base = base_in;
  base.beta = 0.0;
  auto [train, test] = build_datasets(base);
  base.network.input_dim = train.dim();
  base.validate();

  const PhasePlan plan = make_phase_plan(train.num_classes, train.num_classes, 1, base.shuffle_seed);
  const auto head_row = plan.positions();

  SweepReport report;
  report.variable = variable;
  report.seed = base.seed;
  std::vector<std::size_t> counts;
  if (variable == SweepVariable::TrainClassCount) {
    for (double v : values) {
      if (v < 1.0 || v != std::floor(v) || v > static_cast<double>(train.num_classes))
        throw ProtocolError("nested subsets: class count " + std::to_string(v) + " is not an integer in [1, " +
                            std::to_string(train.num_classes) + "]");
      counts.push_back(static_cast<std::size_t>(v));
    }
    const std::size_t smallest = *std::min_element(counts.begin(), counts.end());
    report.shared_classes.assign(plan.order.begin(), plan.order.begin() + static_cast<std::ptrdiff_t>(smallest));
  } else {
    for (double v : values)
      if (v < 0.0) throw ConfigError("eta sweep values must be non-negative");
    report.shared_classes = plan.order;
  }

  for (std::size_t i = 0; i < values.size(); ++i) {
    ProtocolConfig cfg = base;
    std::size_t k = train.num_classes;
    if (variable == SweepVariable::Eta)
      cfg.eta = values[i];
    else
      k = counts[i];
    cfg.validate();

    SweepPoint point;
    point.value = values[i];
    point.trained_classes.assign(plan.order.begin(), plan.order.begin() + static_cast<std::ptrdiff_t>(k));

    NetworkConfig net_cfg = cfg.network;
    net_cfg.seed = cfg.effective_network_seed();
    Network net = Network::init(net_cfg);
    net.extend_head(k);
    PhaseInputs in;
    in.classes = point.trained_classes;
    in.train = &train;
    in.head_row = head_row;
    in.phase = 0;
    in.shuffle_seed = derive_seed(cfg.seed, kSweepBatchStream);
    train_phase(net, in, cfg);
    net.freeze();

    point.accuracy = evaluate(net, test, point.trained_classes, head_row).accuracy;
    point.spectra = test_spectra(net, test, report.shared_classes);
    double alpha_sum = 0.0;
    for (const auto& s : point.spectra) alpha_sum += spectral::alpha_at_quarter(s.alpha);
    point.mean_alpha_quarter = alpha_sum / static_cast<double>(point.spectra.size());
    point.mi_estimate = spectral::conditional_mi_estimate(point.spectra);
    report.points.push_back(std::move(point));
  }
  return report;
}

}  // namespace cil

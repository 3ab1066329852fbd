#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cil/data.hpp"
#include "cil/memory.hpp"
#include "cil/model.hpp"
#include "cil/objectives.hpp"
#include "cil/spectral.hpp"

namespace cil {

enum class Method { Finetune, Lwf, LucirLite };
std::string to_string(Method m);
Method parse_method(const std::string& s);

struct DataSpec {
  // Empty train_csv means synthetic data from `mixture`.
  std::string train_csv;
  std::string test_csv;  // defaults to <train stem>.test.csv next to train_csv
  MixtureSpec mixture;
  // Seed of the synthetic data; when unset the run seed is used.
  std::optional<std::uint64_t> data_seed;
};

struct ProtocolConfig {
  DataSpec data;
  std::size_t initial_classes = 6;  // B
  std::size_t increment = 2;        // S
  std::uint64_t shuffle_seed = 1993;
  std::size_t exemplars_per_class = 5;  // R
  Method method = Method::LucirLite;

  double eta = 0.0;
  CwdMode cwd_mode = CwdMode::SquaredMean;
  bool cwd_all_phases = false;
  double cwd_eps = kCwdEps;

  double beta = 0.0;
  std::optional<std::uint64_t> oracle_seed;

  double lambda_base = 5.0;
  double temperature = 2.0;
  bool herding_normalize = false;

  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  double learning_rate = 0.1;
  std::vector<double> lr_decay_at{0.5, 0.75};  // fractions of epochs
  double lr_decay_factor = 0.1;
  double momentum = 0.9;
  double weight_decay = 0.0;

  NetworkConfig network;  // network.seed is ignored unless network_seed is set
  std::optional<std::uint64_t> network_seed;
  std::uint64_t seed = 1;

  void validate() const;
  std::uint64_t effective_data_seed() const { return data.data_seed.value_or(seed); }
  std::uint64_t effective_network_seed() const;
  std::uint64_t effective_oracle_seed() const;
  double learning_rate_at(std::size_t epoch) const;
};

struct StepRecord {
  std::size_t phase = 0;
  std::size_t epoch = 0;
  std::size_t step = 0;
  LossReport loss;
};

struct LossSummary {
  std::size_t steps = 0;
  LossReport mean;        // averaged over all steps of the phase
  LossReport final_step;  // last step
};

struct ClassAccuracy {
  std::size_t class_id = 0;
  std::size_t correct = 0;
  std::size_t total = 0;
  double accuracy = 0.0;  // percent
};

struct Evaluation {
  double accuracy = 0.0;  // percent over all evaluated samples
  std::vector<ClassAccuracy> per_class;
};

struct PhaseResult {
  std::size_t phase = 0;
  std::vector<std::size_t> classes;  // learned in this phase
  double accuracy = 0.0;             // A_i, percent over all seen classes
  std::vector<ClassAccuracy> per_class;
  LossSummary loss;
  std::vector<spectral::SpectrumReport> spectra;  // covariance spectra of seen classes (test split)
};

struct RunReport {
  ProtocolConfig config;
  PhasePlan plan;
  std::vector<PhaseResult> phases;
  double average_accuracy = 0.0;
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;
  std::vector<StepRecord> steps;
  ExemplarMemory memory;
  std::vector<std::int64_t> label_map;
  Snapshot final_model;
};

// Everything train_phase needs beyond the network.
struct PhaseInputs {
  std::span<const std::size_t> classes;        // learned this phase (dataset ids)
  const Dataset* train = nullptr;
  const ExemplarMemory* memory = nullptr;      // replayed; may be null
  const Network* teacher = nullptr;            // frozen previous-phase model
  const Network* oracle = nullptr;             // frozen jointly trained model
  std::span<const std::size_t> head_row;       // dataset class id -> classifier row
  std::size_t phase = 0;
  std::uint64_t shuffle_seed = 0;              // batch order stream
};

// Mini-batch SGD with momentum over the new-class rows plus all exemplars.
// Returns the per-step loss trace.
std::vector<StepRecord> train_phase(Network& net, const PhaseInputs& in, const ProtocolConfig& config);

// Top-1 accuracy on the test rows of `seen_classes`, argmax restricted to
// their classifier rows. `head_row` maps class id to row; empty means the
// identity.
Evaluation evaluate(const Network& net, const Dataset& test, std::span<const std::size_t> seen_classes,
                    std::span<const std::size_t> head_row = {});

double average_incremental_accuracy(std::span<const double> per_phase);

// Loads or generates the (train, test) pair described by the config.
std::pair<Dataset, Dataset> build_datasets(const ProtocolConfig& config);

RunReport run_protocol(const ProtocolConfig& config);
// Same, on datasets the caller already built.
RunReport run_protocol(const ProtocolConfig& config, const Dataset& train, const Dataset& test,
                       const Network* oracle = nullptr);

struct OracleReport {
  RunReport baseline;     // beta = 0
  RunReport regularized;  // beta from the config, oracle term at phase 0
  std::vector<double> phase_deltas;  // regularized - baseline, per phase
  double oracle_accuracy = 0.0;      // jointly trained model on all classes
};

// Trains the oracle jointly on all classes (oracle seed), then runs the
// protocol with and without the oracle-mimic term.
OracleReport run_oracle_experiment(const ProtocolConfig& config);
Network train_oracle(const ProtocolConfig& config, const Dataset& train);

enum class SweepVariable { TrainClassCount, Eta };
std::string to_string(SweepVariable v);
SweepVariable parse_sweep_variable(const std::string& s);

struct SweepPoint {
  double value = 0.0;
  std::vector<std::size_t> trained_classes;
  std::vector<spectral::SpectrumReport> spectra;  // shared classes, covariance
  double mean_alpha_quarter = 0.0;                // mean over shared classes of alpha at k = d/4
  double mi_estimate = 0.0;                       // conditional_mi_estimate over shared classes
  double accuracy = 0.0;                          // test accuracy over the trained classes
};

struct SweepReport {
  SweepVariable variable = SweepVariable::Eta;
  std::uint64_t seed = 0;
  std::vector<std::size_t> shared_classes;
  std::vector<SweepPoint> points;
};

// One single-phase model per value. TrainClassCount trains on nested prefixes
// of the shuffled class order; Eta trains on all classes with that CwD weight.
SweepReport run_spectrum_sweep(const ProtocolConfig& base, SweepVariable variable, std::span<const double> values);

// Runs fn(seed) for seeds base..base+count-1 across OpenMP threads. Instances
// share nothing mutable; results are returned in seed order.
template <typename T>
std::vector<T> run_seeds(std::uint64_t base, std::size_t count, const std::function<T(std::uint64_t)>& fn);

}  // namespace cil

#include "cil/engine_inl.hpp"

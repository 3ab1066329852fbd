#pragma once

// Serialization of run artifacts. Column sets are fixed:
//
//   metrics.csv           phase,epoch,step,ce,cwd,distill,oracle,total
//   spectra.csv           run_id,class_id,source,k,lambda_k,alpha_k
//   spectra_summary.csv   run_id,class_id,n,frobenius_sq,log_eig_sum
//   memory.csv            class_id,rank,dataset_index
//   embeddings.csv        class_id,x0,...,x{d-1}   (unit-normalized)
//
// CSV floats carry 17 significant digits. JSON documents hold no timing
// information so that identical runs produce identical bytes.

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cil/engine.hpp"

namespace cil::report {

using Json = nlohmann::ordered_json;

using LabeledSpectrum = std::pair<std::string, const spectral::SpectrumReport*>;

Json to_json(const ProtocolConfig& config);
Json to_json(const RunReport& run);
Json to_json(const SweepReport& sweep);
Json to_json(const OracleReport& oracle);

std::string metrics_csv(std::span<const StepRecord> steps);
std::string spectra_csv(std::span<const LabeledSpectrum> spectra);
std::string spectra_summary_csv(std::span<const LabeledSpectrum> spectra);
std::string memory_csv(const ExemplarMemory& memory);
std::string embeddings_csv(const Network& net, const Dataset& data);

// Spectra of every phase of a run, labeled "phase<i>".
std::vector<LabeledSpectrum> run_spectra(const RunReport& run);

// report.json, metrics.csv, spectra.csv, spectra_summary.csv, memory.csv,
// model.snapshot and,
// when `embeddings_of` is given, embeddings.csv for that split. Wall-clock
// time goes to timing.json.
void write_run(const std::filesystem::path& dir, const RunReport& run, const Dataset* embeddings_of = nullptr);

}  // namespace cil::report

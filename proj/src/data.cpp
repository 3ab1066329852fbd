#include "cil/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "cil/error.hpp"
#include "cil/io.hpp"
#include "cil/rng.hpp"

namespace cil {

Dataset Dataset::from_parts(Matrix features, std::vector<std::size_t> labels, std::size_t num_classes,
                            Split split) {
  if (features.rows != labels.size()) throw DimensionError("dataset: feature rows do not match label count");
  Dataset d;
  d.features = std::move(features);
  d.labels = std::move(labels);
  d.num_classes = num_classes;
  d.split = split;
  d.class_indices.assign(num_classes, {});
  for (std::size_t i = 0; i < d.labels.size(); ++i) {
    if (d.labels[i] >= num_classes) throw IndexError("dataset: label out of range");
    d.class_indices[d.labels[i]].push_back(i);
  }
  d.label_map.resize(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) d.label_map[c] = static_cast<std::int64_t>(c);
  return d;
}

std::pair<Dataset, Dataset> gaussian_mixture(const MixtureSpec& spec) {
  if (spec.num_classes == 0 || spec.input_dim == 0 || spec.train_per_class == 0 || spec.test_per_class == 0)
    throw ConfigError("gaussian_mixture: counts must be positive");
  if (!(spec.noise_scale > 0.0)) throw ConfigError("gaussian_mixture: noise_scale must be positive");
  if (spec.center_scale < 0.0) throw ConfigError("gaussian_mixture: center_scale must be non-negative");

  Rng rng(spec.seed);
  Matrix centers(spec.num_classes, spec.input_dim);
  for (auto& v : centers.data) v = rng.uniform(-spec.center_scale, spec.center_scale);

  auto draw = [&](std::size_t per_class, Split split) {
    Matrix x(spec.num_classes * per_class, spec.input_dim);
    std::vector<std::size_t> y(x.rows);
    std::size_t r = 0;
    for (std::size_t c = 0; c < spec.num_classes; ++c)
      for (std::size_t i = 0; i < per_class; ++i, ++r) {
        y[r] = c;
        for (std::size_t j = 0; j < spec.input_dim; ++j) x(r, j) = centers(c, j) + spec.noise_scale * rng.normal();
      }
    return Dataset::from_parts(std::move(x), std::move(y), spec.num_classes, split);
  };
  Dataset train = draw(spec.train_per_class, Split::Train);
  Dataset test = draw(spec.test_per_class, Split::Test);
  return {std::move(train), std::move(test)};
}

Dataset load_csv(const std::filesystem::path& path, Split split, const std::vector<std::int64_t>* label_map) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  std::vector<std::int64_t> raw_labels;
  std::vector<std::size_t> line_of;
  std::vector<double> values;
  std::size_t dim = 0;
  std::size_t lineno = 0;
  std::string line;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (fields.size() < 2) throw ParseError("row needs a label and at least one feature", lineno);
    const std::size_t row_dim = fields.size() - 1;
    if (dim == 0) dim = row_dim;
    if (row_dim != dim)
      throw ParseError("ragged row: " + std::to_string(row_dim) + " features, expected " + std::to_string(dim),
                       lineno);
    const double label = parse_double(fields[0], lineno);
    if (label != static_cast<double>(static_cast<std::int64_t>(label)))
      throw ParseError("label '" + fields[0] + "' is not an integer", lineno);
    raw_labels.push_back(static_cast<std::int64_t>(label));
    line_of.push_back(lineno);
    for (std::size_t j = 1; j < fields.size(); ++j) values.push_back(parse_double(fields[j], lineno));
  }
  if (raw_labels.empty()) throw ParseError("empty dataset file " + path.string(), lineno);

  std::vector<std::int64_t> map;
  if (label_map) {
    map = *label_map;
  } else {
    map = raw_labels;
    std::sort(map.begin(), map.end());
    map.erase(std::unique(map.begin(), map.end()), map.end());
  }
  std::map<std::int64_t, std::size_t> index_of;
  for (std::size_t c = 0; c < map.size(); ++c) index_of[map[c]] = c;
  std::vector<std::size_t> labels(raw_labels.size());
  for (std::size_t i = 0; i < raw_labels.size(); ++i) {
    auto it = index_of.find(raw_labels[i]);
    if (it == index_of.end())
      throw ParseError("label " + std::to_string(raw_labels[i]) + " not in the training label set", line_of[i]);
    labels[i] = it->second;
  }
  Matrix features(raw_labels.size(), dim, std::move(values));
  Dataset d = Dataset::from_parts(std::move(features), std::move(labels), map.size(), split);
  d.label_map = std::move(map);
  return d;
}

void save_csv(const Dataset& data, const std::filesystem::path& path) {
  std::string out;
  for (std::size_t i = 0; i < data.size(); ++i) {
    out += std::to_string(data.label_map.at(data.labels[i]));
    for (double v : data.features.row(i)) {
      out += ',';
      out += format_double(v);
    }
    out += '\n';
  }
  write_atomic(path, out);
}

std::vector<std::size_t> PhasePlan::positions() const {
  std::vector<std::size_t> pos(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;
  return pos;
}

PhasePlan make_phase_plan(std::size_t num_classes, std::size_t initial, std::size_t increment,
                          std::uint64_t shuffle_seed) {
  if (initial < 1 || increment < 1 || initial > num_classes || (num_classes - initial) % increment != 0)
    throw ProtocolError("phase plan: B=" + std::to_string(initial) + ", S=" + std::to_string(increment) +
                        " cannot split " + std::to_string(num_classes) +
                        " classes (need 1 <= B <= classes, S >= 1 and (classes - B) divisible by S)");
  PhasePlan plan;
  plan.initial = initial;
  plan.increment = increment;
  plan.order.resize(num_classes);
  for (std::size_t i = 0; i < num_classes; ++i) plan.order[i] = i;
  Rng rng(shuffle_seed);
  for (std::size_t i = num_classes; i-- > 1;) std::swap(plan.order[i], plan.order[rng.below(i + 1)]);

  plan.phases.emplace_back(plan.order.begin(), plan.order.begin() + static_cast<std::ptrdiff_t>(initial));
  for (std::size_t start = initial; start < num_classes; start += increment)
    plan.phases.emplace_back(plan.order.begin() + static_cast<std::ptrdiff_t>(start),
                             plan.order.begin() + static_cast<std::ptrdiff_t>(start + increment));
  return plan;
}

}  // namespace cil

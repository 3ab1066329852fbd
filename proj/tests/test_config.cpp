#include <fstream>
#include <sstream>

#include "cil/config.hpp"
#include "cil/error.hpp"
#include "cil/report.hpp"
#include "doctest.h"
#include "support.hpp"

using namespace cil;

TEST_CASE("config text") {
  const auto c = config_from_text(R"(
# protocol
[protocol]
num_classes = 12
B = 4
S = 4
R = 3
method = "lwf"
eta = 0.25
cwd-mode = frobenius
cwd_all_phases = true
lr_decay_at = [0.25, 0.5, 0.9]
hidden_dims = [16, 8]
rep_dim = 6
oracle_seed = 99
train_csv = "data/x#1.csv"   # quoted hash is not a comment
)");
  CHECK(c.data.mixture.num_classes == 12);
  CHECK(c.initial_classes == 4);
  CHECK(c.increment == 4);
  CHECK(c.exemplars_per_class == 3);
  CHECK(c.method == Method::Lwf);
  CHECK(c.eta == 0.25);
  CHECK(c.cwd_mode == CwdMode::Frobenius);
  CHECK(c.cwd_all_phases);
  CHECK(c.lr_decay_at == std::vector<double>{0.25, 0.5, 0.9});
  CHECK(c.network.hidden_dims == std::vector<std::size_t>{16, 8});
  CHECK(c.network.rep_dim == 6);
  CHECK(c.oracle_seed == 99u);
  CHECK(c.data.train_csv == "data/x#1.csv");
  CHECK(setting_keys().size() > 30);
}

TEST_CASE("config errors") {
  CHECK_THROWS_AS(config_from_text("bogus = 1"), ConfigError);
  CHECK_THROWS_AS(config_from_text("eta = lots"), ConfigError);
  CHECK_THROWS_AS(config_from_text("epochs = -3"), ConfigError);
  CHECK_THROWS_AS(config_from_text("cwd_all_phases = maybe"), ConfigError);
  CHECK_THROWS_AS(config_from_text("method = icarl"), ConfigError);
  CHECK_THROWS_AS(config_from_text("lr_decay_at = [0.5"), ConfigError);
  try {
    config_from_text("eta = 1\njust words\n");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(load_config("/nonexistent/cfg.toml"), ConfigError);

  ProtocolConfig c;
  c.validate();
  c.eta = -1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.eta = 0.0;
  c.beta = -0.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.beta = 0.0;
  c.momentum = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.momentum = 0.9;
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("learning rate schedule") {
  ProtocolConfig c;
  c.epochs = 8;
  c.learning_rate = 0.1;
  CHECK(c.learning_rate_at(0) == 0.1);
  CHECK(c.learning_rate_at(3) == 0.1);
  CHECK(c.learning_rate_at(4) == doctest::Approx(0.01));
  CHECK(c.learning_rate_at(6) == doctest::Approx(0.001));
  CHECK(c.learning_rate_at(7) == doctest::Approx(0.001));
}

TEST_CASE("method names") {
  for (Method m : {Method::Finetune, Method::Lwf, Method::LucirLite}) CHECK(parse_method(to_string(m)) == m);
  CHECK(to_string(Method::LucirLite) == "lucir-lite");
}

TEST_CASE("report serialization") {
  ProtocolConfig c;
  c.data.mixture.num_classes = 4;
  c.data.mixture.input_dim = 5;
  c.data.mixture.train_per_class = 10;
  c.data.mixture.test_per_class = 6;
  c.initial_classes = 2;
  c.increment = 1;
  c.exemplars_per_class = 2;
  c.epochs = 2;
  c.batch_size = 8;
  c.network.hidden_dims = {6};
  c.network.rep_dim = 4;
  c.seed = 3;
  const RunReport run = run_protocol(c);

  SUBCASE("json carries the config echo and phases") {
    const auto j = report::to_json(run);
    CHECK(j["seed"] == 3);
    CHECK(j["phases"].size() == 3);
    CHECK(j["average_incremental_accuracy"].get<double>() == run.average_accuracy);
    CHECK(j.dump().find("wall_clock") == std::string::npos);
    const auto cfg = report::to_json(run.config);
    CHECK(cfg.dump().find("\"eta\"") != std::string::npos);
  }
  SUBCASE("csv headers and row counts") {
    const auto metrics = report::metrics_csv(run.steps);
    CHECK(metrics.rfind("phase,epoch,step,ce,cwd,distill,oracle,total\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(metrics.begin(), metrics.end(), '\n')) == run.steps.size() + 1);

    const auto spectra = report::run_spectra(run);
    CHECK(spectra.size() == 2 + 3 + 4);
    CHECK(spectra.front().first == "phase0");
    const auto sp = report::spectra_csv(spectra);
    CHECK(sp.rfind("run_id,class_id,source,k,lambda_k,alpha_k\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(sp.begin(), sp.end(), '\n')) == spectra.size() * 4 + 1);
    const auto summary = report::spectra_summary_csv(spectra);
    CHECK(summary.rfind("run_id,class_id,n,frobenius_sq,log_eig_sum\n", 0) == 0);

    const auto mem = report::memory_csv(run.memory);
    CHECK(mem.rfind("class_id,rank,dataset_index\n", 0) == 0);
    CHECK(static_cast<std::size_t>(std::count(mem.begin(), mem.end(), '\n')) == 4 * 2 + 1);
  }
  SUBCASE("embeddings are unit rows") {
    auto [train, test] = build_datasets(c);
    const Network net = Network::restore(run.final_model);
    std::istringstream in(report::embeddings_csv(net, test));
    std::string line;
    std::getline(in, line);
    CHECK(line == "class_id,x0,x1,x2,x3");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string f;
      std::getline(ss, f, ',');
      double sq = 0.0;
      while (std::getline(ss, f, ',')) sq += std::stod(f) * std::stod(f);
      CHECK(sq == doctest::Approx(1.0).epsilon(1e-12));
      ++rows;
    }
    CHECK(rows == test.size());
  }
  SUBCASE("write_run produces every artifact") {
    const auto dir = testing::scratch_dir("write_run");
    report::write_run(dir, run);
    for (const char* name : {"report.json", "metrics.csv", "spectra.csv", "spectra_summary.csv", "memory.csv",
                             "model.snapshot", "timing.json"})
      CHECK(std::filesystem::exists(dir / name));
    CHECK_FALSE(std::filesystem::exists(dir / "embeddings.csv"));
    CHECK(Snapshot::load(dir / "model.snapshot") == run.final_model);
    std::ifstream in(dir / "report.json");
    const auto j = report::Json::parse(in);
    CHECK(j["average_incremental_accuracy"].get<double>() == run.average_accuracy);
  }
}

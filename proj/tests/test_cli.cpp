#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fedlogit/cli.hpp"

using namespace fedlogit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Flags for a sweep small enough to run in milliseconds.
std::vector<std::string> tiny_run_args(const fs::path& out) {
    return {"run",
            "--dataset", "synthetic",
            "--classes", "3",
            "--dim", "6",
            "--per-class", "80",
            "--separation", "8",
            "--clients", "2",
            "--k", "2",
            "--private-size", "60",
            "--public-size", "12",
            "--meta-size", "12",
            "--test-size", "30",
            "--rounds", "2",
            "--first-local-epochs", "1",
            "--first-distill-epochs", "1",
            "--local-epochs", "1",
            "--distill-epochs", "1",
            "--batch-size", "16",
            "--hidden", "8",
            "--seed", "1",
            "--strategy", "average",
            "--out", out.string()};
}

}  // namespace

TEST_CASE("config: minimal file fills documented defaults") {
    TempDir dir("fedlogit_cli_defaults");
    fs::path cfg_path = dir.path / "config.json";
    std::ofstream(cfg_path) << R"({"strategies": ["average"]})";
    ExperimentConfig cfg = load_config_file(cfg_path.string());
    CHECK(cfg.dataset.source == "synthetic");
    CHECK(cfg.partition.clients == 5);
    CHECK(cfg.partition.private_size == 1000);
    CHECK(cfg.partition.public_size == 500);
    CHECK(cfg.partition.meta_size == 300);
    CHECK(cfg.federation.rounds == 10);
    CHECK(cfg.federation.first_local_epochs == 10);
    CHECK(cfg.federation.local_epochs == 1);
    CHECK(cfg.federation.learning_rate == 1e-3);
    CHECK(cfg.federation.batch_size == 128);
    CHECK(cfg.federation.temperature == 1.0);
    CHECK(cfg.strategies == std::vector<std::string>{"average"});
    CHECK(cfg.k_values == std::vector<std::size_t>{2});
}

TEST_CASE("config: unknown keys are rejected by name") {
    nlohmann::json j;
    j["federation"]["roundz"] = 7;
    CHECK_THROWS_WITH_AS(config_from_json(j), doctest::Contains("roundz"), ConfigError);
}

TEST_CASE("config: zero k fails validation") {
    ExperimentConfig cfg;
    cfg.k_values = {0};
    CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("config: unknown strategy fails validation") {
    ExperimentConfig cfg;
    cfg.strategies = {"median"};
    CHECK_THROWS_AS(validate(cfg), ConfigError);
}

TEST_CASE("cli run: flags override config file values") {
    TempDir dir("fedlogit_cli_precedence");
    fs::path cfg_path = dir.path / "config.json";
    std::ofstream(cfg_path) << R"({"federation": {"rounds": 50}})";

    auto args = tiny_run_args(dir.path / "out");
    args.push_back("--config");
    args.push_back(cfg_path.string());
    REQUIRE(run_cli(args) == 0);

    auto echo = nlohmann::json::parse(read_file(dir.path / "out" / "average_k2_seed1" / "config.json"));
    CHECK(echo["federation"]["rounds"] == 2);  // --rounds 2 beats the file's 50

    std::ifstream rounds_log(dir.path / "out" / "average_k2_seed1" / "rounds.jsonl");
    std::string line;
    int rounds = 0;
    while (std::getline(rounds_log, line)) ++rounds;
    CHECK(rounds == 2);
}

TEST_CASE("cli run: sweep produces one report per cartesian cell") {
    TempDir dir("fedlogit_cli_sweep");
    auto args = tiny_run_args(dir.path / "out");
    args.insert(args.end(), {"--strategy", "uwa", "--k", "3"});
    REQUIRE(run_cli(args) == 0);

    for (const char* cell :
         {"average_k2_seed1", "average_k3_seed1", "uwa_k2_seed1", "uwa_k3_seed1"})
        CHECK(fs::exists(dir.path / "out" / cell / "summary.csv"));

    std::ifstream summary(dir.path / "out" / "summary.csv");
    std::string line;
    int lines = 0;
    while (std::getline(summary, line)) ++lines;
    CHECK(lines == 5);  // header + 4 cells
}

TEST_CASE("cli run: a failing cell keeps the sweep going and flips the exit status") {
    TempDir dir("fedlogit_cli_failure");
    auto args = tiny_run_args(dir.path / "out");
    args.insert(args.end(), {"--strategy", "meta", "--meta-size", "0"});
    std::stringstream captured;
    auto* old = std::cout.rdbuf(captured.rdbuf());
    int status = run_cli(args);
    std::cout.rdbuf(old);
    CHECK(status == 1);
    CHECK(fs::exists(dir.path / "out" / "average_k2_seed1" / "summary.csv"));
    CHECK(!fs::exists(dir.path / "out" / "meta_k2_seed1"));
    CHECK(captured.str().find("failed") != std::string::npos);
}

TEST_CASE("cli run: same seed twice gives byte-identical summaries") {
    TempDir dir("fedlogit_cli_determinism");
    auto args_a = tiny_run_args(dir.path / "a");
    auto args_b = tiny_run_args(dir.path / "b");
    for (auto* args : {&args_a, &args_b})
        args->insert(args->end(), {"--strategy", "uwa", "--strategy", "meta"});
    REQUIRE(run_cli(args_a) == 0);
    REQUIRE(run_cli(args_b) == 0);
    CHECK(read_file(dir.path / "a" / "summary.csv") == read_file(dir.path / "b" / "summary.csv"));
    CHECK(read_file(dir.path / "a" / "curves.csv") == read_file(dir.path / "b" / "curves.csv"));
}

TEST_CASE("cli: FEDLOGIT_OUT provides the default output directory") {
    TempDir dir("fedlogit_cli_env");
    fs::path out = dir.path / "env_out";
    setenv("FEDLOGIT_OUT", out.string().c_str(), 1);
    auto args = tiny_run_args(out);
    args.resize(args.size() - 2);  // drop --out <path>
    int status = run_cli(args);
    unsetenv("FEDLOGIT_OUT");
    REQUIRE(status == 0);
    CHECK(fs::exists(out / "summary.csv"));
}

TEST_CASE("cli partition-inspect: prints the manifest") {
    std::stringstream captured;
    auto* old = std::cout.rdbuf(captured.rdbuf());
    int status = run_cli({"partition-inspect", "--classes", "3", "--dim", "4", "--per-class", "60",
                          "--clients", "2", "--k", "2", "--private-size", "40", "--public-size",
                          "9", "--meta-size", "10", "--test-size", "15", "--seed", "5"});
    std::cout.rdbuf(old);
    REQUIRE(status == 0);
    auto manifest = nlohmann::json::parse(captured.str());
    CHECK(manifest["clients"] == 2);
    CHECK(manifest["num_classes"] == 3);
    CHECK(manifest["client_classes"].size() == 2);
    CHECK(manifest["sizes"]["public"] == 9);
}

TEST_CASE("cli aggregate-file: average strategy matches the library result") {
    TempDir dir("fedlogit_cli_aggfile");
    Rng rng(1);
    std::vector<LogitMatrix> logits;
    std::vector<std::string> files;
    for (int i = 0; i < 2; ++i) {
        LogitMatrix lm;
        lm.client_id = i;
        lm.values = Matrix(4, 3);
        for (double& v : lm.values.data) v = rng.uniform(-4.0, 4.0);
        std::string path = (dir.path / ("client" + std::to_string(i) + ".bin")).string();
        save_logits(lm, path);
        files.push_back(path);
        logits.push_back(std::move(lm));
    }
    fs::path out_csv = dir.path / "agg.csv";
    REQUIRE(run_cli({"aggregate-file", files[0], files[1], "--strategy", "average", "--out",
                     out_csv.string()}) == 0);

    AggregatedTargets expected = average_logits(logits);
    std::ifstream in(out_csv);
    std::string header, line;
    std::getline(in, header);
    CHECK(header == "z0,z1,z2,p0,p1,p2");
    for (std::size_t x = 0; x < 4; ++x) {
        REQUIRE(std::getline(in, line));
        std::stringstream ss(line);
        std::string field;
        for (std::size_t d = 0; d < 3; ++d) {
            std::getline(ss, field, ',');
            CHECK(std::strtod(field.c_str(), nullptr) == expected.values(x, d));
        }
        for (std::size_t d = 0; d < 3; ++d) {
            std::getline(ss, field, ',');
            CHECK(std::strtod(field.c_str(), nullptr) == expected.soft_labels(x, d));
        }
    }
}

TEST_CASE("cli aggregate-file: uwa needs densities, meta needs an aggregator") {
    TempDir dir("fedlogit_cli_aggfile_uwa");
    Rng rng(2);
    std::vector<std::string> files;
    std::vector<LogitMatrix> logits;
    for (int i = 0; i < 2; ++i) {
        LogitMatrix lm;
        lm.client_id = i;
        lm.values = Matrix(6, 3);
        for (double& v : lm.values.data) v = rng.uniform(-3.0, 3.0);
        std::string path = (dir.path / ("c" + std::to_string(i) + ".bin")).string();
        save_logits(lm, path);
        files.push_back(path);
        logits.push_back(std::move(lm));
    }

    // Missing --density: hard error.
    std::stringstream devnull;
    auto* old = std::cerr.rdbuf(devnull.rdbuf());
    int status = run_cli({"aggregate-file", files[0], files[1], "--strategy", "uwa", "--out",
                          (dir.path / "x.csv").string()});
    std::cerr.rdbuf(old);
    CHECK(status == 1);

    std::vector<std::string> density_files;
    std::vector<GaussianMixtureDensity> densities;
    for (int i = 0; i < 2; ++i) {
        GaussianMixtureDensity density;
        density.component_classes = {0, 1};
        density.means = Matrix(2, 3);
        density.variances = Matrix(2, 3, 1.0);
        density.means(0, 0) = static_cast<double>(i);
        std::string path = (dir.path / ("d" + std::to_string(i) + ".bin")).string();
        save_density(density, path);
        density_files.push_back(path);
        densities.push_back(std::move(density));
    }
    fs::path out_csv = dir.path / "uwa.csv";
    REQUIRE(run_cli({"aggregate-file", files[0], files[1], "--strategy", "uwa", "--density",
                     density_files[0], "--density", density_files[1], "--out",
                     out_csv.string()}) == 0);
    AggregatedTargets expected = uwa_aggregate(logits, densities);
    std::ifstream in(out_csv);
    std::string header, line;
    std::getline(in, header);
    REQUIRE(std::getline(in, line));
    std::stringstream ss(line);
    std::string field;
    std::getline(ss, field, ',');
    CHECK(std::strtod(field.c_str(), nullptr) == expected.values(0, 0));

    // Meta path through a saved aggregator.
    std::vector<int> labels(6);
    for (auto& y : labels) y = static_cast<int>(rng.next_index(3));
    MetaTrainConfig mt;
    mt.epochs = 2;
    mt.seed = 3;
    MetaAggregator agg = train_meta_aggregator(logits, labels, 3, mt);
    fs::path agg_path = dir.path / "agg.bin";
    save_meta_aggregator(agg, agg_path.string());
    fs::path meta_csv = dir.path / "meta.csv";
    REQUIRE(run_cli({"aggregate-file", files[0], files[1], "--strategy", "meta", "--aggregator",
                     agg_path.string(), "--out", meta_csv.string()}) == 0);
    AggregatedTargets meta_expected = meta_aggregate(agg, logits);
    std::ifstream meta_in(meta_csv);
    std::getline(meta_in, header);
    REQUIRE(std::getline(meta_in, line));
    std::stringstream meta_ss(line);
    std::getline(meta_ss, field, ',');
    CHECK(std::strtod(field.c_str(), nullptr) == meta_expected.values(0, 0));
}

#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "cli.hpp"
#include "doctest.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int status;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "fisherscope");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = fisherscope::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {status, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("fisherscope_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

/// pretrain -> fisher estimate -> schedule build -> sweep -> report under root.
void pipeline(const fs::path& root) {
  const std::string r = root.string();
  const std::vector<std::vector<std::string>> steps{
      {"pretrain", "--data", "synthetic:parity", "--size", "600", "--data-seed", "3", "--depth", "2", "--width", "16",
       "--epochs", "4", "--seed", "0", "--out", r + "/pretrain"},
      {"fisher", "estimate", "--model", r + "/pretrain/model.ckpt", "--data", "synthetic:parity", "--size", "300",
       "--samples", "200", "--seed", "0", "--out", r + "/fisher"},
      {"schedule", "build", "--model", r + "/pretrain/model.ckpt", "--fisher", r + "/fisher/fisher.bin", "--seed", "0",
       "--out", r + "/schedule"},
      {"sweep", "--model", r + "/pretrain/model.ckpt", "--data", "synthetic:parity", "--size", "300", "--data-seed",
       "9", "--schedule", r + "/schedule/schedule.json", "--restarts", "2", "--paucity", "1,0.5", "--epochs", "2",
       "--jobs", "2", "--seed", "0", "--out", r + "/sweep"},
      {"report", "--sweep", r + "/sweep", "--seed", "0", "--out", r + "/report"},
  };
  for (const auto& s : steps) {
    const auto res = invoke(s);
    INFO(s[0] << ": " << res.err);
    REQUIRE(res.status == 0);
  }
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (auto pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) s.replace(pos, from.size(), to);
  return s;
}

}  // namespace

TEST_CASE("missing checkpoint flag is named in the error") {
  auto res = invoke({"fisher", "estimate", "--data", "synthetic:parity"});
  CHECK(res.status != 0);
  CHECK(res.err.find("--model") != std::string::npos);

  res = invoke({"fisher", "estimate", "--model", "/nonexistent/model.ckpt", "--data", "synthetic:parity"});
  CHECK(res.status != 0);
  CHECK(res.err.find("--model") != std::string::npos);

  res = invoke({"fisher", "estimate", "--bogus"});
  CHECK(res.status != 0);
  CHECK(invoke({}).status != 0);
}

TEST_CASE("chained pipeline is reproducible file for file") {
  const auto a = fresh_dir("pipe_a"), b = fresh_dir("pipe_b");
  pipeline(a);
  pipeline(b);
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), a);
    INFO(rel.string());
    REQUIRE(fs::exists(b / rel));
    std::string left = slurp(entry.path()), right = slurp(b / rel);
    if (rel.filename() == "manifest.json") {
      left = replace_all(left, a.string(), "ROOT");
      right = replace_all(right, b.string(), "ROOT");
    }
    CHECK(left == right);
    ++compared;
  }
  CHECK(compared > 15);
  CHECK(fs::exists(a / "sweep" / "summary.json"));
  CHECK(fs::exists(a / "report" / "report.csv"));

  const json manifest = json::parse(slurp(a / "fisher" / "manifest.json"));
  CHECK(manifest.at("command") == "fisher estimate");
  CHECK(manifest.at("config").at("samples") == 200);
  CHECK(manifest.at("inputs").contains((a / "pretrain" / "model.ckpt").string()));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("landscape grid centre equals the manifest base loss") {
  const auto root = fresh_dir("scan");
  pipeline(root);
  const std::string r = root.string();
  const auto res = invoke({"landscape", "scan", "--model", r + "/pretrain/model.ckpt", "--fisher",
                           r + "/fisher/fisher.bin", "--data", "synthetic:parity", "--size", "100", "--select", "top",
                           "--fraction", "0.5", "--grid", "5", "--alpha-range", "-0.5:0.5", "--out", r + "/scan"});
  INFO(res.err);
  REQUIRE(res.status == 0);
  const json manifest = json::parse(slurp(root / "scan" / "manifest.json"));
  const double base = manifest.at("results").at("base_loss");
  std::istringstream csv(slurp(root / "scan" / "grid.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "alpha,beta,loss");
  bool found = false;
  while (std::getline(csv, line)) {
    if (line.rfind("0,0,", 0) != 0) continue;
    found = true;
    CHECK(std::stod(line.substr(4)) == base);
  }
  CHECK(found);
  fs::remove_all(root);
}

TEST_CASE("chained artifacts from another model are rejected") {
  const auto root = fresh_dir("mismatch");
  pipeline(root);
  const std::string r = root.string();
  auto res = invoke({"pretrain", "--data", "synthetic:parity", "--size", "200", "--depth", "2", "--width", "16",
                     "--epochs", "1", "--seed", "5", "--out", r + "/other"});
  REQUIRE(res.status == 0);
  res = invoke({"schedule", "build", "--model", r + "/other/model.ckpt", "--fisher", r + "/fisher/fisher.bin", "--out",
                r + "/bad"});
  CHECK(res.status != 0);
  CHECK(res.err.find("fingerprint") != std::string::npos);
  res = invoke({"train", "--model", r + "/other/model.ckpt", "--data", "synthetic:parity", "--regularizer", "guided",
                "--schedule", r + "/schedule/schedule.json", "--out", r + "/bad"});
  CHECK(res.status != 0);
  CHECK(res.err.find("fingerprint") != std::string::npos);
  res = invoke({"train", "--model", r + "/other/model.ckpt", "--data", "synthetic:regression", "--out", r + "/bad"});
  CHECK(res.status != 0);
  CHECK(res.err.find("task") != std::string::npos);
  fs::remove_all(root);
}

TEST_CASE("config file supplies defaults and flags win") {
  const auto root = fresh_dir("config");
  const auto cfg = root / "run.toml";
  std::ofstream(cfg) << "[pretrain]\nseed = 11\nepochs = 1\ndepth = 2\nwidth = 8\nsize = 100\n";
  const std::string r = root.string();
  REQUIRE(invoke({"--config", cfg.string(), "pretrain", "--data", "synthetic:parity", "--out", r + "/a"}).status == 0);
  REQUIRE(invoke({"--config", cfg.string(), "pretrain", "--data", "synthetic:parity", "--seed", "12", "--out",
                  r + "/b"})
              .status == 0);
  const json a = json::parse(slurp(root / "a" / "manifest.json"));
  const json b = json::parse(slurp(root / "b" / "manifest.json"));
  CHECK(a.at("seed") == 11);
  CHECK(b.at("seed") == 12);
  CHECK(a.at("config").at("train").at("epochs") == 1);
  CHECK(a.at("config").at("model").at("width") == 8);
  fs::remove_all(root);
}

TEST_CASE("out directory defaults to the environment root") {
  const auto root = fresh_dir("env");
  ::setenv("FISHERSCOPE_OUT_DIR", root.c_str(), 1);
  const auto res = invoke({"pretrain", "--data", "synthetic:parity", "--size", "100", "--depth", "2", "--width", "8",
                           "--epochs", "1"});
  ::unsetenv("FISHERSCOPE_OUT_DIR");
  CHECK(res.status == 0);
  CHECK(fs::exists(root / "pretrain" / "model.ckpt"));
  CHECK(fs::exists(root / "pretrain" / "manifest.json"));
  fs::remove_all(root);
}

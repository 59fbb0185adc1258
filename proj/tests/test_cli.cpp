#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef FERATT_CLI_PATH
#error "FERATT_CLI_PATH must point at the feratt binary"
#endif

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  std::string cmd = std::string(FERATT_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  REQUIRE(f.good());
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

// Byte-compare two directories, ignoring the append-only experiment log.
bool dirs_identical(const fs::path& a, const fs::path& b) {
  size_t count_a = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    fs::path rel = fs::relative(entry.path(), a);
    if (rel.filename() == "experiment.json") continue;
    ++count_a;
    if (!fs::exists(b / rel)) return false;
    if (slurp(entry.path()) != slurp(b / rel)) return false;
  }
  size_t count_b = 0;
  for (const auto& entry : fs::recursive_directory_iterator(b))
    if (entry.is_regular_file() && entry.path().filename() != "experiment.json") ++count_b;
  return count_a == count_b;
}

struct Workspace {
  fs::path root;
  Workspace() {
    root = fs::temp_directory_path() / "feratt_cli_ws";
    fs::remove_all(root);
    fs::create_directories(root);
    std::ofstream cfg(root / "cfg.json");
    cfg << R"({"epochs": 1, "batch_size": 8, "learning_rate": 0.001,)"
        << R"( "arm": "att-rep-cls", "seed": 5, "width_multiplier": 0.125})";
  }
  ~Workspace() { fs::remove_all(root); }
  std::string p(const std::string& rel) const { return (root / rel).string(); }
};

}  // namespace

TEST_CASE("cli render-dataset: toy happy path and usage errors") {
  Workspace ws;
  CHECK(run("render-dataset --toy --classes 4 --variants 2 --count 12 --seed 7 --out " +
            ws.p("d")) == 0);
  CHECK(fs::exists(ws.p("d") + "/manifest.json"));
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(ws.p("d") + "/images")) (void)e, ++pngs;
  CHECK(pngs == 12);

  CHECK(run("render-dataset --toy --count 4 --seed 1") == 2);             // missing --out
  CHECK(run("render-dataset --count 4 --seed 1 --out " + ws.p("x")) == 2);  // no source dirs
  CHECK(run("render-dataset --toy --classes 99 --count 4 --seed 1 --out " + ws.p("x")) == 2);
  CHECK(run("no-such-command") == 2);
}

TEST_CASE("cli determinism: identical arguments give byte-identical outputs") {
  Workspace ws;
  std::string render = "render-dataset --toy --classes 3 --variants 2 --count 9 --seed 11 --out ";
  REQUIRE(run(render + ws.p("d1")) == 0);
  REQUIRE(run(render + ws.p("d2")) == 0);
  CHECK(dirs_identical(ws.p("d1"), ws.p("d2")));

  std::string train = "train --config " + ws.p("cfg.json") + " --data " + ws.p("d1") + " --out ";
  REQUIRE(run(train + ws.p("r1")) == 0);
  REQUIRE(run(train + ws.p("r2")) == 0);
  CHECK(dirs_identical(ws.p("r1"), ws.p("r2")));

  std::string eval = "evaluate --ckpt " + ws.p("r1/final.ckpt") + " --data " + ws.p("d1") +
                     " --noise 0.1 --seed 3 --out ";
  REQUIRE(run(eval + ws.p("e1")) == 0);
  REQUIRE(run(eval + ws.p("e2")) == 0);
  CHECK(dirs_identical(ws.p("e1"), ws.p("e2")));
}

TEST_CASE("cli exit codes for I/O and version mismatch") {
  Workspace ws;
  REQUIRE(run("render-dataset --toy --classes 3 --variants 2 --count 6 --seed 2 --out " +
              ws.p("d")) == 0);
  REQUIRE(run("train --config " + ws.p("cfg.json") + " --data " + ws.p("d") + " --out " +
              ws.p("r")) == 0);

  // Missing dataset directory.
  CHECK(run("evaluate --ckpt " + ws.p("r/final.ckpt") + " --data " + ws.p("nope") + " --out " +
            ws.p("e")) == 3);
  // Missing checkpoint file.
  CHECK(run("evaluate --ckpt " + ws.p("nope.ckpt") + " --data " + ws.p("d") + " --out " +
            ws.p("e")) == 3);

  // Corrupted checkpoint payload: digest mismatch.
  {
    fs::copy_file(ws.p("r/final.ckpt"), ws.p("bad.ckpt"));
    std::fstream f(ws.p("bad.ckpt"), std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(-17, std::ios::end);
    char b;
    f.seekg(-17, std::ios::end);
    f.read(&b, 1);
    b ^= 0x20;
    f.seekp(-17, std::ios::end);
    f.write(&b, 1);
  }
  CHECK(run("evaluate --ckpt " + ws.p("bad.ckpt") + " --data " + ws.p("d") + " --out " +
            ws.p("e")) == 4);

  // Schema-invalid train config.
  {
    std::ofstream bad(ws.p("bad.json"));
    bad << R"({"epochs": 0})";
  }
  CHECK(run("train --config " + ws.p("bad.json") + " --data " + ws.p("d") + " --out " +
            ws.p("r2")) == 2);
}

TEST_CASE("cli stats-compare emits the friedman and posthoc results") {
  Workspace ws;
  {
    std::ofstream f(ws.p("scores.csv"));
    f << "a,b,c\n";
    for (int i = 0; i < 10; ++i) f << 0.1 + i * 0.01 << ',' << 0.5 + i * 0.01 << ','
                                   << 0.9 + i * 0.001 << '\n';
  }
  CHECK(run("stats-compare --scores " + ws.p("scores.csv") +
            " --posthoc nemenyi --alpha 0.05 --out " + ws.p("stats.json")) == 0);
  std::string j = slurp(ws.p("stats.json"));
  CHECK(j.find("\"statistic\": 20.0") != std::string::npos);
  CHECK(j.find("\"nemenyi\"") != std::string::npos);

  CHECK(run("stats-compare --scores " + ws.p("scores.csv") +
            " --posthoc bonferroni-dunn --control b --out " + ws.p("bd.json")) == 0);
  CHECK(slurp(ws.p("bd.json")).find("\"control\": \"b\"") != std::string::npos);

  CHECK(run("stats-compare --scores " + ws.p("scores.csv") + " --test anova") == 2);
  CHECK(run("stats-compare --scores " + ws.p("missing.csv")) == 3);
}

TEST_CASE("cli experiment manifest is append-only and versioned") {
  Workspace ws;
  std::string render = "render-dataset --toy --classes 3 --variants 2 --count 6 --seed 4 --out " +
                       ws.p("d");
  REQUIRE(run(render) == 0);
  std::string first = slurp(ws.p("d/experiment.json"));
  CHECK(first.find("\"tool_version\"") != std::string::npos);
  CHECK(first.find("\"render-dataset\"") != std::string::npos);
  REQUIRE(run(render) == 0);
  std::string second = slurp(ws.p("d/experiment.json"));
  // The rerun appends a second history entry on top of the first.
  CHECK(second.size() > first.size());
  CHECK(second.find("\"dataset\"") != std::string::npos);
}

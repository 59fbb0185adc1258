// feratt: one entry point for the full pipeline — dataset rendering,
// training, evaluation, noise sweeps, statistical comparison, exports.
//
// Exit codes: 0 success, 2 usage/config, 3 I/O, 4 version mismatch.

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "feratt/errors.hpp"
#include "feratt/evaluation.hpp"
#include "feratt/training.hpp"

using namespace feratt;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kToolVersion = "0.1.0";

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Append-only experiment log under the output directory: command, digests
// of the configs/datasets/checkpoints involved, and produced artifacts.
void append_experiment_manifest(const fs::path& out_dir, const std::string& command,
                                const std::vector<std::string>& args,
                                const std::map<std::string, std::string>& digests,
                                const std::vector<std::string>& artifacts) {
  fs::create_directories(out_dir);
  fs::path path = out_dir / "experiment.json";
  json doc;
  if (fs::exists(path)) doc = json::parse(read_text(path));
  if (!doc.contains("tool_version")) doc["tool_version"] = kToolVersion;
  if (!doc.contains("history")) doc["history"] = json::array();
  json entry;
  entry["command"] = command;
  entry["args"] = args;
  entry["digests"] = digests;
  entry["artifacts"] = artifacts;
  doc["history"].push_back(entry);
  write_text(path, doc.dump(2) + "\n");
}

std::string file_digest(const fs::path& path) { return digest_hex(fnv1a64_file(path.string())); }

std::vector<double> parse_sigmas(const std::string& csv) {
  std::vector<double> out;
  std::istringstream ss(csv);
  for (std::string tok; std::getline(ss, tok, ',');) {
    if (tok.empty()) continue;
    size_t pos = 0;
    double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw ConfigurationError("bad sigma value: " + tok);
    out.push_back(v);
  }
  if (out.empty()) throw ConfigurationError("empty sigma list");
  return out;
}

TrainConfig load_train_config(const std::string& config_path) {
  // Env var override for the config path only, per the interface contract.
  std::string path = config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("FERATT_CONFIG")) path = env;
  }
  if (path.empty()) return TrainConfig::desk_scale();
  return TrainConfig::from_json(read_text(path));
}

int cmd_render(bool toy, int classes, int variants, const std::string& faces_dir,
               const std::string& bgs_dir, int count, uint64_t seed, const std::string& out,
               const std::vector<std::string>& args) {
  std::vector<FaceSample> faces;
  std::vector<BackgroundImage> bgs;
  if (toy) {
    if (classes < 2 || classes > toy_num_classes())
      throw ConfigurationError("--classes must be in [2, " + std::to_string(toy_num_classes()) +
                               "]");
    if (variants < 1) throw ConfigurationError("--variants must be positive");
    for (int c = 0; c < classes; ++c)
      for (int v = 0; v < variants; ++v) faces.push_back(toy_face_generator(c, v));
    for (uint64_t b = 0; b < 8; ++b) bgs.push_back(toy_background_generator(b));
  } else {
    if (faces_dir.empty() || bgs_dir.empty())
      throw ConfigurationError("--faces and --backgrounds are required without --toy");
    faces = load_faces(faces_dir);
    bgs = load_backgrounds(bgs_dir);
  }
  RenderedDataset d = render_dataset(faces, bgs, count, seed);
  save_dataset(d, out);
  append_experiment_manifest(out, "render-dataset", args,
                             {{"dataset", file_digest(fs::path(out) / "manifest.json")}},
                             {(fs::path(out) / "manifest.json").string()});
  std::cout << "rendered " << d.samples.size() << " samples to " << out << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& arm, const std::string& data_dir,
              int64_t seed, const std::string& out, const std::vector<std::string>& args) {
  TrainConfig cfg = load_train_config(config_path);
  if (!arm.empty()) cfg.arm = arm;
  if (seed >= 0) cfg.seed = static_cast<uint64_t>(seed);
  cfg.validate();
  auto data = load_dataset(data_dir);
  TrainResult r = train(data, cfg);

  fs::create_directories(out);
  fs::path ckpt_path = fs::path(out) / "final.ckpt";
  save_checkpoint(r.checkpoint, ckpt_path.string());
  write_text(fs::path(out) / "train_record.csv", r.record.to_csv());
  write_text(fs::path(out) / "summary.json", r.record.summary_json() + "\n");
  write_text(fs::path(out) / "architecture.json", r.network->architecture_summary_json() + "\n");
  write_text(fs::path(out) / "train_config.json", cfg.to_json() + "\n");

  append_experiment_manifest(
      out, "train", args,
      {{"config", digest_hex(fnv1a64(cfg.to_json().data(), cfg.to_json().size()))},
       {"dataset", file_digest(fs::path(data_dir) / "manifest.json")},
       {"checkpoint", file_digest(ckpt_path)}},
      {ckpt_path.string(), (fs::path(out) / "train_record.csv").string()});
  std::cout << "trained " << r.record.epochs.size() << " epochs; final train accuracy "
            << r.record.epochs.back().train_accuracy << "\n";
  return 0;
}

int cmd_evaluate(const std::string& ckpt_path, const std::string& data_dir, double noise,
                 const std::string& sigmas, uint64_t seed, const std::string& out,
                 const std::vector<std::string>& args) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto data = load_dataset(data_dir);
  fs::create_directories(out);
  std::vector<std::string> artifacts;
  if (!sigmas.empty()) {
    auto curve = noise_robustness_curve(ckpt, data, parse_sigmas(sigmas), seed);
    fs::path path = fs::path(out) / "noise_curve.csv";
    write_text(path, noise_curve_csv(curve));
    artifacts.push_back(path.string());
    std::cout << noise_curve_csv(curve);
  } else {
    MetricsReport report = evaluate(ckpt, data, noise, seed);
    write_text(fs::path(out) / "metrics.json", report.to_json() + "\n");
    write_text(fs::path(out) / "metrics.csv", report.to_csv());
    artifacts.push_back((fs::path(out) / "metrics.json").string());
    artifacts.push_back((fs::path(out) / "metrics.csv").string());
    std::cout << "accuracy " << report.accuracy << " macro_f1 " << report.macro_f1 << "\n";
  }
  append_experiment_manifest(out, "evaluate", args,
                             {{"checkpoint", file_digest(ckpt_path)},
                              {"dataset", file_digest(fs::path(data_dir) / "manifest.json")}},
                             artifacts);
  return 0;
}

int cmd_sweep(const std::string& base_path, const std::string& sigmas_csv,
              const std::string& data_dir, const std::string& config_path, uint64_t eval_seed,
              const std::string& out, const std::vector<std::string>& args) {
  Checkpoint base = load_checkpoint(base_path);
  auto data = load_dataset(data_dir);
  TrainConfig cfg = load_train_config(config_path);
  cfg.arm = base.arm;
  cfg.width_multiplier = base.net_config.width_multiplier;
  auto sigmas = parse_sigmas(sigmas_csv);
  auto results = noise_finetune_sweep(base, sigmas, cfg, data);

  fs::create_directories(out);
  std::map<std::string, std::string> digests = {{"base_checkpoint", file_digest(base_path)}};
  std::vector<std::string> artifacts;
  std::ostringstream report;
  report.precision(17);
  report << "sigma,base_accuracy,finetuned_accuracy,base_macro_f1,finetuned_macro_f1\n";
  for (size_t i = 0; i < sigmas.size(); ++i) {
    std::ostringstream name;
    name.precision(3);
    name << std::fixed << "sigma_" << sigmas[i] << ".ckpt";
    fs::path ckpt_path = fs::path(out) / name.str();
    save_checkpoint(results[i].checkpoint, ckpt_path.string());
    digests["checkpoint_" + name.str()] = file_digest(ckpt_path);
    artifacts.push_back(ckpt_path.string());
    MetricsReport before = evaluate(base, data, sigmas[i], eval_seed);
    MetricsReport after = evaluate(results[i].checkpoint, data, sigmas[i], eval_seed);
    report << sigmas[i] << ',' << before.accuracy << ',' << after.accuracy << ','
           << before.macro_f1 << ',' << after.macro_f1 << '\n';
  }
  fs::path report_path = fs::path(out) / "sweep_report.csv";
  write_text(report_path, report.str());
  artifacts.push_back(report_path.string());
  append_experiment_manifest(out, "noise-sweep", args, digests, artifacts);
  std::cout << report.str();
  return 0;
}

int cmd_stats(const std::string& scores_path, const std::string& test, const std::string& posthoc,
              double alpha, const std::string& control, const std::string& out,
              const std::vector<std::string>& args) {
  if (test != "friedman") throw ConfigurationError("unsupported --test: " + test);

  // Scores CSV: header of method names, one row of scores per fold.
  std::istringstream in(read_text(scores_path));
  std::string header;
  if (!std::getline(in, header)) throw ConfigurationError("empty scores file");
  std::vector<std::string> methods;
  {
    std::istringstream hs(header);
    for (std::string tok; std::getline(hs, tok, ',');) methods.push_back(tok);
  }
  std::vector<std::vector<double>> rows;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::vector<double> row;
    for (std::string tok; std::getline(ls, tok, ',');) row.push_back(std::stod(tok));
    if (row.size() != methods.size())
      throw ConfigurationError("scores row width does not match the header");
    rows.push_back(row);
  }
  if (rows.size() < 2) throw ConfigurationError("need at least 2 folds of scores");
  Matrix scores(rows.size(), methods.size());
  for (size_t r = 0; r < rows.size(); ++r)
    for (size_t c = 0; c < methods.size(); ++c) scores(r, c) = rows[r][c];

  StatTestResult fried = friedman_test(scores);
  json doc;
  doc["test"] = "friedman";
  doc["methods"] = methods;
  doc["n_folds"] = rows.size();
  doc["statistic"] = fried.statistic;
  doc["p_value"] = fried.p_value;
  doc["mean_ranks"] = fried.mean_ranks;
  doc["alpha"] = alpha;

  if (posthoc == "nemenyi") {
    StatTestResult nem = nemenyi_posthoc(fried.mean_ranks, static_cast<int>(rows.size()), alpha);
    doc["posthoc"] = json::parse(nem.to_json());
    doc["posthoc"]["kind"] = "nemenyi";
  } else if (posthoc == "bonferroni-dunn") {
    int control_index = 0;
    if (!control.empty()) {
      auto it = std::find(methods.begin(), methods.end(), control);
      if (it == methods.end()) throw ConfigurationError("unknown control method: " + control);
      control_index = static_cast<int>(it - methods.begin());
    }
    StatTestResult bd = bonferroni_dunn_posthoc(fried.mean_ranks, static_cast<int>(rows.size()),
                                                control_index, alpha);
    doc["posthoc"] = json::parse(bd.to_json());
    doc["posthoc"]["kind"] = "bonferroni-dunn";
    doc["posthoc"]["control"] = methods[control_index];
  } else if (posthoc != "none") {
    throw ConfigurationError("unsupported --posthoc: " + posthoc);
  }

  std::string text = doc.dump(2) + "\n";
  if (!out.empty()) {
    write_text(out, text);
    fs::path out_dir = fs::path(out).parent_path();
    append_experiment_manifest(out_dir.empty() ? "." : out_dir, "stats-compare", args,
                               {{"scores", file_digest(scores_path)}}, {out});
  }
  std::cout << text;
  return 0;
}

int cmd_export(const std::string& ckpt_path, const std::string& data_dir, const std::string& out,
               const std::vector<std::string>& args) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto data = load_dataset(data_dir);
  write_text(out, export_embeddings_csv(ckpt, data));
  fs::path out_dir = fs::path(out).parent_path();
  append_experiment_manifest(out_dir.empty() ? "." : out_dir, "export-embeddings", args,
                             {{"checkpoint", file_digest(ckpt_path)},
                              {"dataset", file_digest(fs::path(data_dir) / "manifest.json")}},
                             {out});
  std::cout << "wrote " << data.size() << " embeddings to " << out << "\n";
  return 0;
}

int cmd_dump_attention(const std::string& ckpt_path, const std::string& data_dir,
                       const std::string& sigmas, int count, uint64_t seed,
                       const std::string& out, const std::vector<std::string>& args) {
  Checkpoint ckpt = load_checkpoint(ckpt_path);
  auto data = load_dataset(data_dir);
  if (count > 0 && static_cast<size_t>(count) < data.size()) data.resize(count);
  std::vector<double> grid = sigmas.empty() ? default_attention_sigmas() : parse_sigmas(sigmas);
  auto files = attention_map_dump(ckpt, data, grid, seed, out);
  append_experiment_manifest(out, "dump-attention", args, {{"checkpoint", file_digest(ckpt_path)}},
                             files);
  for (const auto& f : files) std::cout << f << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FERAtt pipeline: render, train, evaluate, compare"};
  app.set_version_flag("--version", kToolVersion);
  app.require_subcommand(1);
  std::vector<std::string> args(argv + 1, argv + argc);

  // render-dataset
  auto* render = app.add_subcommand("render-dataset", "Composite faces over backgrounds");
  bool toy = false;
  int classes = 8, variants = 4, count = 0;
  uint64_t seed = 0;
  std::string faces_dir, bgs_dir, out_dir;
  render->add_flag("--toy", toy, "use the procedural toy corpus");
  render->add_option("--classes", classes, "toy classes");
  render->add_option("--variants", variants, "toy face variants per class");
  render->add_option("--faces", faces_dir, "faces directory");
  render->add_option("--backgrounds", bgs_dir, "backgrounds directory");
  render->add_option("--count", count, "composites to render")->required();
  render->add_option("--seed", seed, "master seed")->required();
  render->add_option("--out", out_dir, "output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train one arm on a rendered dataset");
  std::string config_path, arm, data_dir;
  int64_t train_seed = -1;
  train_cmd->add_option("--config", config_path, "TrainConfig JSON (default: desk scale)");
  train_cmd->add_option("--arm", arm, "baseline | att-cls | att-rep-cls");
  train_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_cmd->add_option("--seed", train_seed, "override config seed");
  train_cmd->add_option("--out", out_dir, "output directory")->required();

  // evaluate
  auto* eval_cmd = app.add_subcommand("evaluate", "Metrics on a dataset, optional input noise");
  std::string ckpt_path, sigmas;
  double noise = 0.0;
  eval_cmd->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_option("--noise", noise, "additive noise sigma");
  eval_cmd->add_option("--sigmas", sigmas, "comma list: emit a robustness curve instead");
  eval_cmd->add_option("--seed", seed, "noise seed");
  eval_cmd->add_option("--out", out_dir, "output directory")->required();

  // noise-sweep
  auto* sweep = app.add_subcommand("noise-sweep", "Fine-tune the base at each noise level");
  std::string base_path;
  sweep->add_option("--base", base_path, "base checkpoint")->required();
  sweep->add_option("--sigmas", sigmas, "comma-separated noise levels")->required();
  sweep->add_option("--data", data_dir, "dataset directory")->required();
  sweep->add_option("--config", config_path, "TrainConfig JSON for the fine-tuning runs");
  sweep->add_option("--seed", seed, "evaluation noise seed");
  sweep->add_option("--out", out_dir, "output directory")->required();

  // stats-compare
  auto* stats = app.add_subcommand("stats-compare", "Friedman test with post-hoc analysis");
  std::string scores_path, test = "friedman", posthoc = "nemenyi", control, stats_out;
  double alpha = 0.05;
  stats->add_option("--scores", scores_path, "folds x methods CSV with a header")->required();
  stats->add_option("--test", test, "friedman");
  stats->add_option("--posthoc", posthoc, "nemenyi | bonferroni-dunn | none");
  stats->add_option("--alpha", alpha, "significance level (0.05 or 0.10)");
  stats->add_option("--control", control, "control method name for bonferroni-dunn");
  stats->add_option("--out", stats_out, "result JSON path (default: stdout only)");

  // export-embeddings
  auto* exp = app.add_subcommand("export-embeddings", "CSV of per-sample embeddings");
  std::string export_out;
  exp->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  exp->add_option("--data", data_dir, "dataset directory")->required();
  exp->add_option("--out", export_out, "output CSV path")->required();

  // dump-attention
  auto* dump = app.add_subcommand("dump-attention", "Reconstruction grids across noise levels");
  int dump_count = 8;
  dump->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  dump->add_option("--data", data_dir, "dataset directory")->required();
  dump->add_option("--sigmas", sigmas, "comma list (default: the built-in grid)");
  dump->add_option("--count", dump_count, "images per grid");
  dump->add_option("--seed", seed, "noise seed");
  dump->add_option("--out", out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (render->parsed())
      return cmd_render(toy, classes, variants, faces_dir, bgs_dir, count, seed, out_dir, args);
    if (train_cmd->parsed())
      return cmd_train(config_path, arm, data_dir, train_seed, out_dir, args);
    if (eval_cmd->parsed())
      return cmd_evaluate(ckpt_path, data_dir, noise, sigmas, seed, out_dir, args);
    if (sweep->parsed())
      return cmd_sweep(base_path, sigmas, data_dir, config_path, seed, out_dir, args);
    if (stats->parsed())
      return cmd_stats(scores_path, test, posthoc, alpha, control, stats_out, args);
    if (exp->parsed()) return cmd_export(ckpt_path, data_dir, export_out, args);
    if (dump->parsed())
      return cmd_dump_attention(ckpt_path, data_dir, sigmas, dump_count, seed, out_dir, args);
  } catch (const VersionMismatchError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigurationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

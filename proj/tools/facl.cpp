#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "facl/facl.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kBadInput = 1;
constexpr int kRuntimeFailure = 2;

/// Replaces (or appends) the train.seed line so the stored config text and
/// the effective run agree.
std::string patch_seed(const std::string& text, std::uint64_t seed) {
  std::istringstream in(text);
  std::ostringstream out;
  std::string line;
  bool replaced = false;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    const auto hash = line.find('#');
    std::string key = eq == std::string::npos ? "" : line.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    if (eq != std::string::npos && (hash == std::string::npos || hash > eq) &&
        key == "train.seed") {
      out << "train.seed = " << seed << "\n";
      replaced = true;
    } else {
      out << line << "\n";
    }
  }
  if (!replaced) out << "train.seed = " << seed << "\n";
  return out.str();
}

int cmd_pretrain(const std::string& config_path, std::optional<std::uint64_t> seed,
                 const std::string& out_dir) {
  facl::RunConfig cfg;
  try {
    cfg = facl::RunConfig::parse_file(config_path);
    if (seed) cfg = facl::RunConfig::parse_text(patch_seed(cfg.text, *seed));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  }
  try {
    facl::Trainer trainer(cfg);
    const std::string ckpt = trainer.run(out_dir);
    const auto& rows = trainer.metrics();
    std::cout << "steps " << rows.size() << ", final loss " << rows.back().loss_total << "\n";
    std::cout << "checkpoint " << ckpt << "\n";
    std::cout << "metrics " << (fs::path(out_dir) / "metrics.csv").string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

int cmd_probe(const std::string& ckpt_path, const std::string& config_path) {
  facl::RunConfig cfg;
  facl::CheckpointData ck;
  try {
    cfg = facl::RunConfig::parse_file(config_path);
    ck = facl::load_checkpoint(ckpt_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  }
  try {
    facl::Trainer trainer(cfg);
    trainer.load_model(ck);
    auto [ftr, fte] = trainer.probe_features();
    const auto& ytr = cfg.data_source == "synthetic" ? trainer.vectors().train.y
                                                     : trainer.images().train.labels;
    const auto& yte = cfg.data_source == "synthetic" ? trainer.vectors().test.y
                                                     : trainer.images().test.labels;
    std::size_t n_classes = 0;
    for (int y : ytr) n_classes = std::max<std::size_t>(n_classes, y + 1);
    const double lin =
        facl::linear_probe_features(ftr, ytr, fte, yte, n_classes, cfg.probe, cfg.seed);
    const double knn = facl::knn_probe_features(ftr, ytr, fte, yte, cfg.knn_k);
    std::printf("linear_probe_accuracy %.4f\n", lin);
    std::printf("knn_accuracy %.4f\n", knn);
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

int cmd_ablate(const std::string& suite, const std::string& config_path,
               const std::string& out_dir) {
  facl::RunConfig cfg;
  try {
    cfg = facl::RunConfig::parse_file(config_path);
    if (suite != "architectures" && suite != "stopgrad" && suite != "da-settings" &&
        suite != "byol-fa")
      throw std::runtime_error("ablate: unknown suite '" + suite + "'");
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kBadInput;
  }
  try {
    const facl::AblateResult res = facl::run_ablate(suite, cfg);
    fs::create_directories(out_dir);
    std::ofstream((fs::path(out_dir) / "results.md")) << res.to_markdown();
    std::ofstream((fs::path(out_dir) / "results.csv")) << res.to_csv();
    std::cout << res.to_markdown();
    std::cout << "wrote " << (fs::path(out_dir) / "results.{md,csv}").string() << "\n";
    return kOk;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRuntimeFailure;
  }
}

int cmd_export_metrics(const std::string& run_dir, const std::string& format) {
  const fs::path csv_path = fs::path(run_dir) / "metrics.csv";
  std::ifstream in(csv_path);
  if (!in) {
    std::cerr << "error: cannot open " << csv_path.string() << "\n";
    return kBadInput;
  }
  std::string header;
  if (!std::getline(in, header) || header != facl::metrics_header()) {
    std::cerr << "error: " << csv_path.string() << " has an unexpected header\n";
    return kBadInput;
  }
  if (format == "csv") {
    std::cout << header << "\n" << in.rdbuf();
    return kOk;
  }
  nlohmann::json rows = nlohmann::json::array();
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 9) {
      std::cerr << "error: line " << lineno << " has " << fields.size() << " fields\n";
      return kRuntimeFailure;
    }
    nlohmann::json row;
    row["step"] = std::stoull(fields[0]);
    row["epoch"] = std::stoull(fields[1]);
    row["lr"] = std::stod(fields[2]);
    row["ema_m"] = std::stod(fields[3]);
    row["loss_total"] = std::stod(fields[4]);
    row["loss_original"] = std::stod(fields[5]);
    row["loss_fa_mean"] = std::stod(fields[6]);
    row["grad_norm"] = std::stod(fields[7]);
    row["wall_ms"] = std::stod(fields[8]);
    rows.push_back(std::move(row));
  }
  std::cout << rows.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-supervised contrastive pre-training with feature augmentation"};
  app.require_subcommand(1);

  std::string config_path, ckpt_path, out_dir = "runs/latest", suite, run_dir, format = "csv";
  std::optional<std::uint64_t> seed;

  auto* pre = app.add_subcommand("pretrain", "Run the pre-training loop");
  pre->add_option("--config", config_path, "config file")->required();
  pre->add_option("--seed", seed, "override train.seed");
  pre->add_option("--out", out_dir, "output directory");

  auto* probe = app.add_subcommand("probe", "Linear and kNN probes of a checkpoint");
  probe->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  probe->add_option("--config", config_path, "config file")->required();

  auto* abl = app.add_subcommand("ablate", "Run an ablation grid");
  abl->add_option("--suite", suite, "architectures | stopgrad | da-settings | byol-fa")
      ->required();
  abl->add_option("--config", config_path, "config file")->required();
  abl->add_option("--out", out_dir, "output directory");

  auto* exp = app.add_subcommand("export-metrics", "Re-emit a run's metrics log");
  exp->add_option("--run", run_dir, "run directory containing metrics.csv")->required();
  exp->add_option("--format", format, "csv | json")->check(CLI::IsMember({"csv", "json"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kBadInput;
  }

  if (pre->parsed()) return cmd_pretrain(config_path, seed, out_dir);
  if (probe->parsed()) return cmd_probe(ckpt_path, config_path);
  if (abl->parsed()) return cmd_ablate(suite, config_path, out_dir);
  return cmd_export_metrics(run_dir, format);
}

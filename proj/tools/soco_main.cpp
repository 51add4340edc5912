#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "soco/config.hpp"
#include "soco/gradcheck_suite.hpp"
#include "soco/harness.hpp"
#include "soco/train.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumeric = 2;

// Sets a dotted path like "train.steps" inside a JSON document. The value is
// parsed as JSON when possible (numbers, bools, arrays) and falls back to a
// plain string. Unknown paths are caught later by strict config parsing.
void apply_set(nlohmann::json& doc, const std::string& assignment) {
  size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw soco::InvalidInputError("--set expects key=value, got '" + assignment + "'");
  std::string key = assignment.substr(0, eq);
  std::string raw = assignment.substr(eq + 1);
  nlohmann::json value = nlohmann::json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;

  nlohmann::json* node = &doc;
  size_t pos = 0;
  while (true) {
    size_t dot = key.find('.', pos);
    std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (part.empty()) throw soco::InvalidInputError("--set: empty path segment in '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    pos = dot + 1;
  }
}

soco::RunConfig resolve_config(const std::string& config_path,
                               const std::vector<std::string>& sets, bool seed_given,
                               uint64_t seed) {
  nlohmann::json doc = soco::serialize_config(soco::RunConfig{});
  if (!config_path.empty()) {
    std::ifstream f(config_path);
    if (!f) throw soco::InvalidInputError("cannot open config file " + config_path);
    nlohmann::json file_doc = nlohmann::json::parse(f, nullptr, false);
    if (file_doc.is_discarded())
      throw soco::InvalidInputError("config file is not valid JSON: " + config_path);
    doc.merge_patch(file_doc);
  }
  for (const std::string& s : sets) apply_set(doc, s);
  if (seed_given) doc["seed"] = seed;
  return soco::parse_config(doc);
}

int run_gen_data(const soco::RunConfig& cfg) {
  soco::gen_data(cfg);
  std::cout << "wrote " << cfg.n_images << " images and manifest.json to " << cfg.data_dir << "\n";
  return kExitOk;
}

int run_proposals(const soco::RunConfig& cfg) {
  std::filesystem::path cache(cfg.proposal_cache);
  if (cache.has_parent_path()) std::filesystem::create_directories(cache.parent_path());
  soco::build_proposal_cache(cfg, std::cout);
  std::vector<soco::CacheRecord> records = soco::read_proposal_cache(cfg.proposal_cache);
  if (records.empty()) {
    std::cerr << "error: every image failed proposal generation\n";
    return kExitUsage;
  }
  return kExitOk;
}

int run_pretrain(const soco::RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  {
    std::ofstream f(cfg.out_dir + "/config.json");
    f << soco::serialize_config(cfg).dump(2) << "\n";
  }
  std::vector<soco::TrainImage> dataset = soco::load_dataset(cfg);
  soco::TrainSettings settings = soco::make_train_settings(cfg);
  try {
    soco::train_loop(dataset, settings, [&](const soco::StepMetrics& m) {
      if (m.step % 20 == 0 || m.step + 1 == settings.steps)
        std::cout << "step " << m.step << "  loss " << m.loss << "  lr " << m.lr << "  tau "
                  << m.tau << "  cos " << m.mean_pos_cosine << "\n";
    });
  } catch (const soco::NumericError& e) {
    std::cerr << "numeric abort: " << e.what() << "\n"
              << "last checkpoint: " << cfg.out_dir << "/ckpt_<step>.soco\n";
    return kExitNumeric;
  }
  std::cout << "done; metrics and checkpoints in " << cfg.out_dir << "\n";
  return kExitOk;
}

int run_gradcheck(const soco::RunConfig&) {
  const double tol = 1e-4;
  soco::GradCheckReport report = soco::gradcheck_suite();
  for (const auto& e : report.entries)
    std::printf("%-40s max rel err %.3e %s\n", e.name.c_str(), e.max_rel_err,
                e.max_rel_err <= tol ? "ok" : "FAIL");
  std::printf("gradcheck: %zu checks, max rel err %.3e, tolerance %.0e: %s\n",
              report.entries.size(), report.max_err(), tol, report.pass(tol) ? "PASS" : "FAIL");
  return report.pass(tol) ? kExitOk : kExitUsage;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"soco: object-level contrastive pretraining at desk scale"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> sets;
  uint64_t seed = 0;
  bool seed_given = false;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON run configuration");
    cmd->add_option("--set", sets, "override a config entry, e.g. --set train.steps=500");
    cmd->add_option("--seed", seed, "override the config seed")->each([&](const std::string&) {
      seed_given = true;
    });
  };

  CLI::App* cmd_gen = app.add_subcommand("gen-data", "render the synthetic dataset");
  add_common(cmd_gen);
  CLI::App* cmd_props =
      app.add_subcommand("proposals", "run selective search offline and write the proposal cache");
  add_common(cmd_props);
  CLI::App* cmd_pretrain = app.add_subcommand("pretrain", "run object-level contrastive training");
  add_common(cmd_pretrain);
  CLI::App* cmd_grad = app.add_subcommand("gradcheck", "finite-difference check of every op");
  add_common(cmd_grad);

  CLI::App* cmd_export =
      app.add_subcommand("export", "extract backbone/FPN/head weights from a checkpoint");
  add_common(cmd_export);
  std::string ckpt_path, export_path;
  cmd_export->add_option("--checkpoint", ckpt_path, "training checkpoint")->required();
  cmd_export->add_option("--out", export_path, "output weight file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    soco::RunConfig cfg = resolve_config(config_path, sets, seed_given, seed);
    if (cmd_gen->parsed()) return run_gen_data(cfg);
    if (cmd_props->parsed()) return run_proposals(cfg);
    if (cmd_pretrain->parsed()) return run_pretrain(cfg);
    if (cmd_grad->parsed()) return run_gradcheck(cfg);
    if (cmd_export->parsed()) {
      soco::export_backbone(ckpt_path, export_path);
      std::cout << "exported backbone weights to " << export_path << "\n";
      return kExitOk;
    }
  } catch (const soco::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

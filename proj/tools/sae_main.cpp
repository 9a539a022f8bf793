#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sae/errors.hpp"
#include "sae/runner.hpp"

namespace fs = std::filesystem;
namespace rn = sae::runner;

namespace {

std::string resolve_out(const std::string& cli_out, const std::string& cfg_out,
                        const fs::path& config_path) {
  if (!cli_out.empty()) return cli_out;
  if (!cfg_out.empty()) return cfg_out;
  const std::string stem = config_path.stem().string();
  if (const char* root = std::getenv(rn::kOutRootEnv); root && *root) {
    return (fs::path(root) / stem).string();
  }
  return (fs::path("runs") / stem).string();
}

std::vector<std::uint64_t> parse_seed_list(const std::string& csv) {
  std::vector<std::uint64_t> out;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    const std::size_t comma = csv.find(',', pos);
    const std::string tok =
        csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (!tok.empty()) out.push_back(std::stoull(tok));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (out.empty()) throw sae::ConfigError("--seeds: empty seed list");
  return out;
}

void print_summary(const rn::RunManifest& manifest) {
  std::printf("out: %s\n", manifest.out_dir.string().c_str());
  for (const auto& run : manifest.runs) {
    std::printf("  %s seed %llu  (%.1fs)\n", run.cell.c_str(),
                static_cast<unsigned long long>(run.seed), run.wall_seconds);
  }
  for (const auto& f : manifest.failures) {
    std::printf("  FAILED %s seed %llu: %s\n", f.cell.c_str(),
                static_cast<unsigned long long>(f.seed), f.error.c_str());
  }
  std::printf("%zu run(s), %zu failure(s); manifest.json written\n",
              manifest.runs.size(), manifest.failures.size());
}

void print_consistency(const rn::ConsistencyTable& table) {
  std::printf("%-44s %6s %14s %12s %12s %12s\n", "cell", "pairs",
              "mean_max_cos", "frac_paired", "shared_all", "shared_alive");
  for (const auto& c : table.cells) {
    std::printf("%-44s %6zu %14.4f %11.2f%% %11.2f%% %11.2f%%\n",
                c.cell.c_str(), c.pairs, c.mean_max_cos,
                100.0 * c.frac_paired, 100.0 * c.frac_shared_all,
                100.0 * c.frac_shared_alive);
  }
}

void compare_and_write(const rn::RunManifest& manifest, double tau) {
  const auto table = rn::compare_runs(manifest, tau);
  rn::write_consistency_csv(manifest.out_dir / "consistency.csv", table);
  rn::write_consistency_json(manifest.out_dir / "consistency.json", table);
  print_consistency(table);
  std::printf("wrote %s\n", (manifest.out_dir / "consistency.csv").c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sparse autoencoder training and cross-seed analysis workbench"};
  app.set_version_flag("--version", rn::kToolVersion);
  app.require_subcommand(1);

  std::string config_path, out_dir, seeds_csv, cell_name;
  std::size_t threads = 0;
  double tau = -1.0;
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::size_t ablate_n = 250, ablate_limit = 250;
  std::uint64_t ablate_seed = 0;
  std::string run_dir;

  auto add_config_opts = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "experiment config (JSON)")
        ->required();
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seeds", seeds_csv, "comma-separated seed override");
    cmd->add_option("--threads", threads, "worker threads for (cell, seed) tasks");
    cmd->add_option("--tau", tau, "pairing threshold");
  };

  auto* train_cmd = app.add_subcommand("train", "train one cell, one SAE per seed");
  add_config_opts(train_cmd);
  auto* sweep_cmd = app.add_subcommand("sweep", "train the cartesian grid of sweep axes");
  add_config_opts(sweep_cmd);

  auto* compare_cmd =
      app.add_subcommand("compare", "cross-seed consistency from stored weights");
  compare_cmd->add_option("--run", run_dir, "experiment output directory")->required();
  compare_cmd->add_option("--tau", tau, "pairing threshold");

  auto* ablate_cmd = app.add_subcommand(
      "ablate", "reconstruction MSE under latent-subset selections");
  ablate_cmd->add_option("--run", run_dir, "experiment output directory")->required();
  ablate_cmd->add_option("--cell", cell_name, "cell name (default: first)");
  ablate_cmd->add_option("--seed", seed, "seed (default: first run of the cell)")
      ->each([&](const std::string&) { seed_given = true; });
  ablate_cmd->add_option("--n", ablate_n, "selection size");
  ablate_cmd->add_option("--limit", ablate_limit,
                         "evaluate on the first N dataset rows");
  ablate_cmd->add_option("--ablation-seed", ablate_seed,
                         "seed for the random selection");

  auto* report_cmd = app.add_subcommand(
      "report", "re-derive consistency from stored weights and verify");
  report_cmd->add_option("--run", run_dir, "experiment output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd || *sweep_cmd) {
      rn::ExperimentConfig config = rn::load_config(config_path);
      if (*train_cmd && config.has_axes()) {
        throw sae::ConfigError(
            "config has sweep axes; use the sweep command");
      }
      config.out_dir = resolve_out(out_dir, config.out_dir, config_path);
      if (!seeds_csv.empty()) config.seeds = parse_seed_list(seeds_csv);
      if (threads > 0) config.threads = threads;
      if (tau >= 0.0) config.tau = tau;

      const auto manifest = rn::run_experiment(config);
      print_summary(manifest);
      if (config.seeds.size() >= 2 && !manifest.runs.empty()) {
        compare_and_write(manifest, config.tau);
      }
      return manifest.failures.empty() ? 0 : 1;
    }

    if (*compare_cmd) {
      const auto manifest = rn::load_manifest(run_dir);
      compare_and_write(manifest, tau >= 0.0 ? tau : manifest.config.tau);
      return 0;
    }

    if (*ablate_cmd) {
      const auto manifest = rn::load_manifest(run_dir);
      if (manifest.runs.empty()) throw sae::ConfigError("manifest has no runs");
      if (cell_name.empty()) cell_name = manifest.runs.front().cell;
      if (!seed_given) {
        for (const auto& r : manifest.runs) {
          if (r.cell == cell_name) {
            seed = r.seed;
            break;
          }
        }
      }
      const auto rep = rn::run_ablation(manifest, cell_name, seed, ablate_n,
                                        ablate_limit, ablate_seed);
      std::printf("cell %s seed %llu, first %zu rows, n=%zu\n",
                  cell_name.c_str(), static_cast<unsigned long long>(seed),
                  ablate_limit, rep.n);
      std::printf("  mse_full        %.6f\n", rep.mse_full);
      std::printf("  mse_top_n       %.6f\n", rep.mse_top_n);
      std::printf("  mse_random_n    %.6f\n", rep.mse_random_n);
      std::printf("  mse_complement  %.6f\n", rep.mse_complement);
      nlohmann::json j;
      j["cell"] = cell_name;
      j["seed"] = seed;
      j["limit"] = ablate_limit;
      j["n"] = rep.n;
      j["random_seed"] = rep.random_seed;
      j["mse_full"] = rep.mse_full;
      j["mse_top_n"] = rep.mse_top_n;
      j["mse_random_n"] = rep.mse_random_n;
      j["mse_complement"] = rep.mse_complement;
      j["top_indices"] = rep.top_indices;
      j["random_indices"] = rep.random_indices;
      std::ofstream out(fs::path(run_dir) / "ablation.json");
      out << j.dump(2) << "\n";
      std::printf("wrote %s\n", (fs::path(run_dir) / "ablation.json").c_str());
      return 0;
    }

    if (*report_cmd) {
      const auto manifest = rn::load_manifest(run_dir);
      const auto table =
          rn::compare_runs(manifest, manifest.config.tau);
      print_consistency(table);
      const fs::path stored = manifest.out_dir / "consistency.json";
      if (fs::exists(stored)) {
        std::ifstream in(stored);
        const auto j = nlohmann::json::parse(in);
        bool match = j.at("cells").size() == table.cells.size();
        for (std::size_t i = 0; match && i < table.cells.size(); ++i) {
          const auto& cj = j.at("cells").at(i);
          match = cj.at("cell") == table.cells[i].cell &&
                  std::abs(cj.at("mean_max_cos").get<double>() -
                           table.cells[i].mean_max_cos) <= 1e-12 &&
                  std::abs(cj.at("frac_shared_alive").get<double>() -
                           table.cells[i].frac_shared_alive) <= 1e-12;
        }
        std::printf("stored consistency.json %s re-derived values\n",
                    match ? "matches" : "DOES NOT match");
        return match ? 0 : 1;
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}

#include "sae/runner.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "sae/errors.hpp"

namespace sae::runner {

using nlohmann::json;
namespace fs = std::filesystem;

// ------------------------------ JSON helpers --------------------------------

namespace {

void require_keys(const json& obj, const std::string& ctx,
                  std::initializer_list<const char*> allowed) {
  for (const auto& item : obj.items()) {
    bool ok = false;
    for (const char* k : allowed) {
      if (item.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ConfigError("unknown field '" + ctx + item.key() + "'");
    }
  }
}

json mechanism_to_json(const SparsityMechanism& mech) {
  switch (mech.kind) {
    case Sparsity::L1Act:
      return {{"type", "l1"}, {"lambda_sparse", mech.lambda_sparse}};
    case Sparsity::TopK:
      return {{"type", "topk"}, {"k", mech.k}};
    case Sparsity::BatchTopK:
      return {{"type", "batch_topk"}, {"k", mech.k}};
  }
  return {};
}

SparsityMechanism mechanism_from_json(const json& j, const std::string& ctx) {
  if (!j.is_object() || !j.contains("type")) {
    throw ConfigError(ctx + "type is required");
  }
  const std::string type = j.at("type").get<std::string>();
  SparsityMechanism mech;
  if (type == "l1") {
    require_keys(j, ctx, {"type", "lambda_sparse"});
    mech = SparsityMechanism::l1(j.value("lambda_sparse", 0.0));
  } else if (type == "topk") {
    require_keys(j, ctx, {"type", "k"});
    mech = SparsityMechanism::topk(j.at("k").get<std::size_t>());
  } else if (type == "batch_topk") {
    require_keys(j, ctx, {"type", "k"});
    mech = SparsityMechanism::batch_topk(j.at("k").get<std::size_t>());
  } else {
    throw ConfigError(ctx + "type: unknown value '" + type + "'");
  }
  return mech;
}

json penalty_to_json(const WeightPenalty& p) {
  return {{"p", p.p}, {"lambda_w", p.lambda_w}};
}

WeightPenalty penalty_from_json(const json& j, const std::string& ctx) {
  require_keys(j, ctx, {"p", "lambda_w"});
  WeightPenalty p;
  p.p = j.value("p", 2);
  p.lambda_w = j.value("lambda_w", 0.0);
  p.validate();
  return p;
}

json flags_to_json(const TrainingFlags& f) {
  return {{"tied_init", f.tied_init}, {"unit_norm_decoder", f.unit_norm_decoder}};
}

TrainingFlags flags_from_json(const json& j, const std::string& ctx) {
  require_keys(j, ctx, {"tied_init", "unit_norm_decoder"});
  TrainingFlags f;
  f.tied_init = j.value("tied_init", false);
  f.unit_norm_decoder = j.value("unit_norm_decoder", false);
  return f;
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string slug_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

std::string mech_slug(const SparsityMechanism& mech) {
  switch (mech.kind) {
    case Sparsity::L1Act:
      return "l1-" + slug_double(mech.lambda_sparse);
    case Sparsity::TopK:
      return "topk-" + std::to_string(mech.k);
    case Sparsity::BatchTopK:
      return "batchtopk-" + std::to_string(mech.k);
  }
  return "?";
}

std::string penalty_slug(const WeightPenalty& p) {
  if (p.lambda_w == 0.0) return "none";
  return (p.p == 1 ? "l1w-" : "l2w-") + slug_double(p.lambda_w);
}

std::string flags_slug(const TrainingFlags& f) {
  std::string s = f.tied_init ? "tied" : "untied";
  if (f.unit_norm_decoder) s += "-unitnorm";
  return s;
}

std::string utc_now() {
  const std::time_t t = std::time(nullptr);
  char buf[32];
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

// ------------------------------ config I/O ----------------------------------

std::vector<SweepCell> ExperimentConfig::cells() const {
  const std::vector<SparsityMechanism> mechs =
      mech_axis.empty() ? std::vector<SparsityMechanism>{train.mechanism}
                        : mech_axis;
  const std::vector<WeightPenalty> pens =
      penalty_axis.empty() ? std::vector<WeightPenalty>{train.penalty}
                           : penalty_axis;
  const std::vector<TrainingFlags> flag_sets =
      flags_axis.empty() ? std::vector<TrainingFlags>{train.flags} : flags_axis;

  std::vector<SweepCell> out;
  std::size_t idx = 0;
  for (const auto& mech : mechs) {
    for (const auto& pen : pens) {
      for (const auto& fl : flag_sets) {
        char prefix[16];
        std::snprintf(prefix, sizeof prefix, "cell-%02zu-", idx++);
        out.push_back({prefix + mech_slug(mech) + "-" + penalty_slug(pen) +
                           "-" + flags_slug(fl),
                       mech, pen, fl});
      }
    }
  }
  return out;
}

void ExperimentConfig::validate() const {
  if (d < 1) throw ConfigError("model.d must be >= 1");
  if (m < 1) throw ConfigError("model.m must be >= 1");
  if (seeds.empty()) throw ConfigError("seeds must be nonempty");
  std::set<std::uint64_t> uniq(seeds.begin(), seeds.end());
  if (uniq.size() != seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  if (!(tau >= 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in [0, 1]");
  if (data.kind == DatasetSpec::Kind::Mnist) {
    if (data.images.empty()) throw ConfigError("dataset.images is required");
    if (data.labels.empty()) throw ConfigError("dataset.labels is required");
  }
  for (const auto& cell : cells()) {
    cell.penalty.validate();
    cell.mechanism.validate(m);
  }
  if (train.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (train.adam.learning_rate <= 0.0) {
    throw ConfigError("train.learning_rate must be > 0");
  }
}

namespace {

json config_to_json(const ExperimentConfig& c) {
  json j;
  if (c.data.kind == DatasetSpec::Kind::Mnist) {
    j["dataset"] = {{"type", "mnist"},
                    {"images", c.data.images},
                    {"labels", c.data.labels},
                    {"limit", c.data.limit}};
  } else {
    j["dataset"] = {{"type", "synthetic"},
                    {"m_true", c.data.synth.m_true},
                    {"p_active", c.data.synth.p_active},
                    {"amplitude", {c.data.synth.amp_lo, c.data.synth.amp_hi}},
                    {"noise_std", c.data.synth.noise_std},
                    {"n", c.data.synth.n},
                    {"data_seed", c.data.data_seed}};
  }
  j["model"] = {{"d", c.d}, {"m", c.m}};
  j["train"] = {{"epochs", c.train.epochs},
                {"max_steps", c.train.max_steps},
                {"batch_size", c.train.batch_size},
                {"learning_rate", c.train.adam.learning_rate},
                {"beta1", c.train.adam.beta1},
                {"beta2", c.train.adam.beta2},
                {"eps", c.train.adam.eps},
                {"log_every", c.train.log_every},
                {"drop_last", c.train.drop_last},
                {"ablate_decoder_penalty", c.train.ablate_decoder_penalty}};
  j["mechanism"] = mechanism_to_json(c.train.mechanism);
  j["penalty"] = penalty_to_json(c.train.penalty);
  j["flags"] = flags_to_json(c.train.flags);
  j["seeds"] = c.seeds;
  j["tau"] = c.tau;
  j["threads"] = c.threads;
  if (!c.mech_axis.empty() || !c.penalty_axis.empty() || !c.flags_axis.empty()) {
    json sweep = json::object();
    if (!c.mech_axis.empty()) {
      sweep["mechanisms"] = json::array();
      for (const auto& m : c.mech_axis) {
        sweep["mechanisms"].push_back(mechanism_to_json(m));
      }
    }
    if (!c.penalty_axis.empty()) {
      sweep["penalties"] = json::array();
      for (const auto& p : c.penalty_axis) {
        sweep["penalties"].push_back(penalty_to_json(p));
      }
    }
    if (!c.flags_axis.empty()) {
      sweep["flags"] = json::array();
      for (const auto& f : c.flags_axis) sweep["flags"].push_back(flags_to_json(f));
    }
    j["sweep"] = sweep;
  }
  if (!c.out_dir.empty()) j["out_dir"] = c.out_dir;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  require_keys(j, "", {"dataset", "model", "train", "mechanism", "penalty",
                       "flags", "seeds", "tau", "threads", "sweep", "out_dir"});
  ExperimentConfig c;

  const json& model = j.at("model");
  require_keys(model, "model.", {"d", "m"});
  c.d = model.at("d").get<std::size_t>();
  c.m = model.at("m").get<std::size_t>();

  const json& ds = j.at("dataset");
  if (!ds.contains("type")) throw ConfigError("dataset.type is required");
  const std::string type = ds.at("type").get<std::string>();
  if (type == "mnist") {
    require_keys(ds, "dataset.", {"type", "images", "labels", "limit"});
    c.data.kind = DatasetSpec::Kind::Mnist;
    c.data.images = ds.at("images").get<std::string>();
    c.data.labels = ds.at("labels").get<std::string>();
    c.data.limit = ds.value("limit", std::size_t{0});
  } else if (type == "synthetic") {
    require_keys(ds, "dataset.",
                 {"type", "m_true", "p_active", "amplitude", "noise_std", "n",
                  "data_seed"});
    c.data.kind = DatasetSpec::Kind::Synthetic;
    c.data.synth.d = c.d;
    c.data.synth.m_true = ds.at("m_true").get<std::size_t>();
    c.data.synth.p_active = ds.at("p_active").get<double>();
    if (ds.contains("amplitude")) {
      const auto& amp = ds.at("amplitude");
      if (!amp.is_array() || amp.size() != 2) {
        throw ConfigError("dataset.amplitude must be [lo, hi]");
      }
      c.data.synth.amp_lo = amp[0].get<double>();
      c.data.synth.amp_hi = amp[1].get<double>();
    }
    c.data.synth.noise_std = ds.value("noise_std", 0.0);
    c.data.synth.n = ds.at("n").get<std::size_t>();
    c.data.data_seed = ds.value("data_seed", std::uint64_t{0});
  } else {
    throw ConfigError("dataset.type: unknown value '" + type + "'");
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    require_keys(t, "train.",
                 {"epochs", "max_steps", "batch_size", "learning_rate", "beta1",
                  "beta2", "eps", "log_every", "drop_last",
                  "ablate_decoder_penalty"});
    c.train.epochs = t.value("epochs", std::size_t{20});
    c.train.max_steps = t.value("max_steps", std::size_t{0});
    c.train.batch_size = t.value("batch_size", std::size_t{256});
    c.train.adam.learning_rate = t.value("learning_rate", 1e-3);
    c.train.adam.beta1 = t.value("beta1", 0.9);
    c.train.adam.beta2 = t.value("beta2", 0.999);
    c.train.adam.eps = t.value("eps", 1e-8);
    c.train.log_every = t.value("log_every", std::size_t{50});
    c.train.drop_last = t.value("drop_last", false);
    c.train.ablate_decoder_penalty = t.value("ablate_decoder_penalty", false);
  }
  if (j.contains("mechanism")) {
    c.train.mechanism = mechanism_from_json(j.at("mechanism"), "mechanism.");
  }
  if (j.contains("penalty")) {
    c.train.penalty = penalty_from_json(j.at("penalty"), "penalty.");
  }
  if (j.contains("flags")) {
    c.train.flags = flags_from_json(j.at("flags"), "flags.");
  }
  if (!j.contains("seeds")) throw ConfigError("seeds is required");
  c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  c.tau = j.value("tau", 0.7);
  c.threads = j.value("threads", std::size_t{1});

  if (j.contains("sweep")) {
    const json& sw = j.at("sweep");
    require_keys(sw, "sweep.", {"mechanisms", "penalties", "flags"});
    if (sw.contains("mechanisms")) {
      for (const auto& mj : sw.at("mechanisms")) {
        c.mech_axis.push_back(mechanism_from_json(mj, "sweep.mechanisms[]."));
      }
    }
    if (sw.contains("penalties")) {
      for (const auto& pj : sw.at("penalties")) {
        c.penalty_axis.push_back(penalty_from_json(pj, "sweep.penalties[]."));
      }
    }
    if (sw.contains("flags")) {
      for (const auto& fj : sw.at("flags")) {
        c.flags_axis.push_back(flags_from_json(fj, "sweep.flags[]."));
      }
    }
  }
  c.out_dir = j.value("out_dir", std::string{});
  c.validate();
  return c;
}

}  // namespace

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path.string());
  json j = json::parse(in);
  if (j.contains("tool") && j.contains("config")) {
    return config_from_json(j.at("config"));  // manifest re-run
  }
  return config_from_json(j);
}

Dataset load_dataset(const DatasetSpec& spec, std::size_t d) {
  if (spec.kind == DatasetSpec::Kind::Mnist) {
    if (!fs::exists(spec.images)) {
      throw ConfigError("dataset.images: file not found: " + spec.images);
    }
    if (!fs::exists(spec.labels)) {
      throw ConfigError("dataset.labels: file not found: " + spec.labels);
    }
    Dataset ds = load_mnist_idx(spec.images, spec.labels);
    if (ds.d != d) {
      throw ConfigError("model.d (" + std::to_string(d) +
                        ") does not match dataset dimension (" +
                        std::to_string(ds.d) + ")");
    }
    if (spec.limit > 0) ds.take(spec.limit);
    return ds;
  }
  SyntheticSpec synth = spec.synth;
  synth.d = d;
  return generate_superposition(synth, spec.data_seed);
}

// ------------------------------ run outputs ---------------------------------

namespace {

void write_history_csv(const fs::path& path, const TrainHistory& history) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << "step,recon,sparse,weight,total,alive_count\n";
  for (const auto& p : history.points) {
    out << p.step << ',' << format_double(p.recon) << ','
        << format_double(p.sparse) << ',' << format_double(p.weight) << ','
        << format_double(p.total) << ',' << p.alive_count << '\n';
  }
}

void write_alignment_csv(const fs::path& path,
                         const std::vector<double>& align) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << "latent,alignment\n";
  for (std::size_t i = 0; i < align.size(); ++i) {
    out << i << ',' << format_double(align[i]) << '\n';
  }
}

void write_alignment_hist_csv(const fs::path& path,
                              const std::vector<double>& align) {
  constexpr std::size_t kBins = 40;
  const auto counts = histogram_counts(align, -1.0, 1.0, kBins);
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < kBins; ++b) {
    const double lo = -1.0 + 2.0 * static_cast<double>(b) / kBins;
    const double hi = -1.0 + 2.0 * static_cast<double>(b + 1) / kBins;
    out << format_double(lo) << ',' << format_double(hi) << ',' << counts[b]
        << '\n';
  }
}

void write_stats_json(const fs::path& path, const ActivationStats& stats) {
  json j;
  j["n_samples"] = stats.n_samples;
  j["alive_count"] = stats.alive_count();
  j["firing_counts"] = stats.firing_counts;
  j["mean_activation"] = stats.mean_activation;
  j["alignment"] = stats.alignment;
  auto bools = [](const std::vector<bool>& v) {
    std::vector<int> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] ? 1 : 0;
    return out;
  };
  j["enc_norm_ok"] = bools(stats.enc_norm_ok);
  j["dec_norm_ok"] = bools(stats.dec_norm_ok);
  j["align_ok"] = bools(stats.align_ok);
  j["alive"] = bools(stats.alive);
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

json conventions_json(const ExperimentConfig& c) {
  return {
      {"pixel_scale", "byte / 255"},
      {"recon_reduction", "sum over dims, mean over batch"},
      {"sparse_reduction", "mean over batch"},
      {"weight_reduction", "sum over entries, biases excluded"},
      {"optimizer", "adam"},
      {"init", "W_enc ~ U[-1/sqrt(d), 1/sqrt(d)]; biases 0"},
      {"prng", "xoshiro256++ seeded via splitmix64"},
      {"selection_tie_break", "lowest index"},
      {"alive_criterion",
       "enc norm > 0 and dec norm > 0 and alignment >= 0.1"},
      {"threads_note",
       "runs are single-threaded and deterministic; workers only spread "
       "independent (cell, seed) tasks"},
      {"tau", c.tau}};
}

void run_tasks(std::size_t n, std::size_t workers,
               const std::function<void(std::size_t)>& fn) {
  workers = std::max<std::size_t>(1, std::min(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= n) break;
        fn(i);
      }
    });
  }
  for (auto& t : pool) t.join();
}

void write_manifest(const fs::path& out_dir, const RunManifest& manifest) {
  json j;
  j["tool"] = kToolVersion;
  j["created_utc"] = utc_now();
  j["config"] = config_to_json(manifest.config);
  j["conventions"] = conventions_json(manifest.config);
  j["cells"] = json::array();
  for (const auto& cell : manifest.cells) {
    j["cells"].push_back({{"name", cell.name},
                          {"mechanism", mechanism_to_json(cell.mechanism)},
                          {"penalty", penalty_to_json(cell.penalty)},
                          {"flags", flags_to_json(cell.flags)}});
  }
  j["runs"] = json::array();
  for (const auto& run : manifest.runs) {
    j["runs"].push_back({{"cell", run.cell},
                         {"seed", run.seed},
                         {"weights", run.weights},
                         {"sidecar", run.sidecar},
                         {"history", run.history},
                         {"alignment", run.alignment},
                         {"alignment_hist", run.alignment_hist},
                         {"stats", run.stats},
                         {"wall_seconds", run.wall_seconds}});
  }
  j["failures"] = json::array();
  for (const auto& f : manifest.failures) {
    j["failures"].push_back(
        {{"cell", f.cell}, {"seed", f.seed}, {"error", f.error}});
  }
  std::ofstream out(out_dir / "manifest.json");
  if (!out) {
    throw FormatError("cannot open for writing: " +
                      (out_dir / "manifest.json").string());
  }
  out << j.dump(2) << "\n";
}

}  // namespace

RunManifest run_experiment(const ExperimentConfig& config) {
  config.validate();
  if (config.out_dir.empty()) {
    throw ConfigError("out_dir is required (set in config or pass --out)");
  }
  const fs::path out_dir = config.out_dir;
  fs::create_directories(out_dir);

  const Dataset dataset = load_dataset(config.data, config.d);

  RunManifest manifest;
  manifest.out_dir = out_dir;
  manifest.config = config;
  manifest.cells = config.cells();

  struct Task {
    std::size_t cell_idx;
    std::uint64_t seed;
  };
  std::vector<Task> tasks;
  for (std::size_t c = 0; c < manifest.cells.size(); ++c) {
    for (const auto seed : config.seeds) tasks.push_back({c, seed});
  }

  std::mutex mu;
  run_tasks(tasks.size(), config.threads, [&](std::size_t t) {
    const auto& cell = manifest.cells[tasks[t].cell_idx];
    const std::uint64_t seed = tasks[t].seed;
    const fs::path rel =
        fs::path(cell.name) / ("seed-" + std::to_string(seed));
    try {
      const auto t0 = std::chrono::steady_clock::now();

      TrainConfig tc = config.train;
      tc.seed = seed;
      tc.mechanism = cell.mechanism;
      tc.penalty = cell.penalty;
      tc.flags = cell.flags;

      auto [params, history] = train(tc, dataset, config.m);

      fs::create_directories(out_dir / rel);
      RunRecord rec;
      rec.cell = cell.name;
      rec.seed = seed;
      rec.weights = (rel / "weights.bin").string();
      rec.sidecar = (rel / "weights.json").string();
      rec.history = (rel / "history.csv").string();
      rec.alignment = (rel / "alignment.csv").string();
      rec.alignment_hist = (rel / "alignment_hist.csv").string();
      rec.stats = (rel / "stats.json").string();

      save_weights(out_dir / rec.weights, params);
      save_sidecar(out_dir / rec.sidecar,
                   {config.d, config.m, cell.flags, cell.mechanism,
                    cell.penalty, seed});
      write_history_csv(out_dir / rec.history, history);
      const auto align = enc_dec_alignment(params);
      write_alignment_csv(out_dir / rec.alignment, align);
      write_alignment_hist_csv(out_dir / rec.alignment_hist, align);
      write_stats_json(out_dir / rec.stats,
                       activation_stats(params, dataset, cell.mechanism));

      rec.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
              .count();
      std::lock_guard<std::mutex> lock(mu);
      manifest.runs.push_back(std::move(rec));
    } catch (const std::exception& e) {
      std::lock_guard<std::mutex> lock(mu);
      manifest.failures.push_back({cell.name, seed, e.what()});
    }
  });

  // deterministic manifest ordering regardless of scheduling
  auto cell_index = [&](const std::string& name) {
    for (std::size_t i = 0; i < manifest.cells.size(); ++i) {
      if (manifest.cells[i].name == name) return i;
    }
    return std::size_t{0};
  };
  std::sort(manifest.runs.begin(), manifest.runs.end(),
            [&](const RunRecord& a, const RunRecord& b) {
              const auto ca = cell_index(a.cell), cb = cell_index(b.cell);
              return ca != cb ? ca < cb : a.seed < b.seed;
            });
  std::sort(manifest.failures.begin(), manifest.failures.end(),
            [&](const FailureRecord& a, const FailureRecord& b) {
              const auto ca = cell_index(a.cell), cb = cell_index(b.cell);
              return ca != cb ? ca < cb : a.seed < b.seed;
            });

  write_manifest(out_dir, manifest);

  if (config.has_axes()) {
    json index;
    index["cells"] = json::array();
    for (const auto& cell : manifest.cells) {
      std::size_t ok = 0, failed = 0;
      for (const auto& r : manifest.runs) ok += r.cell == cell.name;
      for (const auto& f : manifest.failures) failed += f.cell == cell.name;
      index["cells"].push_back({{"name", cell.name},
                                {"mechanism", mechanism_to_json(cell.mechanism)},
                                {"penalty", penalty_to_json(cell.penalty)},
                                {"flags", flags_to_json(cell.flags)},
                                {"completed_runs", ok},
                                {"failed_runs", failed}});
    }
    std::ofstream out(out_dir / "index.json");
    out << index.dump(2) << "\n";
  }
  return manifest;
}

RunManifest load_manifest(const fs::path& out_dir) {
  const fs::path path = out_dir / "manifest.json";
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest: " + path.string());
  json j = json::parse(in);

  RunManifest manifest;
  manifest.out_dir = out_dir;
  manifest.config = config_from_json(j.at("config"));
  for (const auto& cj : j.at("cells")) {
    manifest.cells.push_back(
        {cj.at("name").get<std::string>(),
         mechanism_from_json(cj.at("mechanism"), "cells[].mechanism."),
         penalty_from_json(cj.at("penalty"), "cells[].penalty."),
         flags_from_json(cj.at("flags"), "cells[].flags.")});
  }
  for (const auto& rj : j.at("runs")) {
    RunRecord rec;
    rec.cell = rj.at("cell").get<std::string>();
    rec.seed = rj.at("seed").get<std::uint64_t>();
    rec.weights = rj.at("weights").get<std::string>();
    rec.sidecar = rj.at("sidecar").get<std::string>();
    rec.history = rj.at("history").get<std::string>();
    rec.alignment = rj.at("alignment").get<std::string>();
    rec.alignment_hist = rj.at("alignment_hist").get<std::string>();
    rec.stats = rj.at("stats").get<std::string>();
    rec.wall_seconds = rj.value("wall_seconds", 0.0);
    manifest.runs.push_back(std::move(rec));
  }
  if (j.contains("failures")) {
    for (const auto& fj : j.at("failures")) {
      manifest.failures.push_back({fj.at("cell").get<std::string>(),
                                   fj.at("seed").get<std::uint64_t>(),
                                   fj.at("error").get<std::string>()});
    }
  }
  return manifest;
}

// ----------------------------- consistency -----------------------------------

ConsistencyTable compare_runs(const RunManifest& manifest, double tau) {
  ConsistencyTable table;
  bool any_pair = false;

  for (const auto& cell : manifest.cells) {
    std::vector<const RunRecord*> runs;
    for (const auto& r : manifest.runs) {
      if (r.cell == cell.name) runs.push_back(&r);
    }
    if (runs.size() < 2) continue;
    any_pair = true;

    std::vector<SaeParams> params;
    std::vector<std::vector<bool>> alive;
    params.reserve(runs.size());
    for (const auto* r : runs) {
      params.push_back(load_weights(manifest.out_dir / r->weights));
      alive.push_back(alive_mask(params.back()));
    }

    CellSummary summary;
    summary.cell = cell.name;
    for (std::size_t a = 0; a < runs.size(); ++a) {
      for (std::size_t b = a + 1; b < runs.size(); ++b) {
        auto rep =
            cross_seed_consistency(params[a], params[b], tau, alive[a], alive[b]);
        summary.pairs += 1;
        summary.mean_max_cos += rep.mean_max_cos;
        summary.frac_paired += rep.frac_paired;
        summary.frac_shared_all += rep.frac_shared_all;
        summary.frac_shared_alive += rep.frac_shared_alive;
        summary.frac_paired_alive += rep.frac_paired_alive;
        table.pairs.push_back({cell.name,
                               std::to_string(runs[a]->seed) + "-" +
                                   std::to_string(runs[b]->seed),
                               std::move(rep)});
      }
    }
    const auto np = static_cast<double>(summary.pairs);
    summary.mean_max_cos /= np;
    summary.frac_paired /= np;
    summary.frac_shared_all /= np;
    summary.frac_shared_alive /= np;
    summary.frac_paired_alive /= np;
    table.cells.push_back(std::move(summary));
  }
  if (!any_pair) {
    throw ConfigError("compare requires at least one cell with two runs");
  }
  return table;
}

void write_consistency_csv(const fs::path& path, const ConsistencyTable& table) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << "cell,pair,mean_max_cos,frac_paired,frac_shared_all,"
         "frac_shared_alive,frac_paired_alive,alive_a,alive_b,"
         "shared_all,shared_alive\n";
  for (const auto& row : table.pairs) {
    const auto& r = row.report;
    out << row.cell << ',' << row.pair << ',' << format_double(r.mean_max_cos)
        << ',' << format_double(r.frac_paired) << ','
        << format_double(r.frac_shared_all) << ','
        << format_double(r.frac_shared_alive) << ','
        << format_double(r.frac_paired_alive) << ',' << r.alive_count_a << ','
        << r.alive_count_b << ',' << r.shared_count_all << ','
        << r.shared_count_alive << '\n';
  }
  for (const auto& c : table.cells) {
    out << c.cell << ",mean," << format_double(c.mean_max_cos) << ','
        << format_double(c.frac_paired) << ','
        << format_double(c.frac_shared_all) << ','
        << format_double(c.frac_shared_alive) << ','
        << format_double(c.frac_paired_alive) << ",,,,\n";
  }
}

void write_consistency_json(const fs::path& path,
                            const ConsistencyTable& table) {
  json j;
  j["pairs"] = json::array();
  for (const auto& row : table.pairs) {
    const auto& r = row.report;
    json pairs = json::array();
    for (const auto& p : r.shared_pairs_alive) {
      pairs.push_back({{"index_a", p.index_a},
                       {"index_b", p.index_b},
                       {"enc_sim", p.enc_sim},
                       {"dec_sim", p.dec_sim}});
    }
    j["pairs"].push_back({{"cell", row.cell},
                          {"pair", row.pair},
                          {"tau", r.tau},
                          {"mean_max_cos", r.mean_max_cos},
                          {"frac_paired", r.frac_paired},
                          {"frac_paired_a", r.frac_paired_a},
                          {"frac_paired_b", r.frac_paired_b},
                          {"frac_paired_alive", r.frac_paired_alive},
                          {"frac_shared_all", r.frac_shared_all},
                          {"frac_shared_alive", r.frac_shared_alive},
                          {"shared_count_all", r.shared_count_all},
                          {"shared_count_alive", r.shared_count_alive},
                          {"alive_count_a", r.alive_count_a},
                          {"alive_count_b", r.alive_count_b},
                          {"shared_pairs_alive", pairs}});
  }
  j["cells"] = json::array();
  for (const auto& c : table.cells) {
    j["cells"].push_back({{"cell", c.cell},
                          {"pairs", c.pairs},
                          {"mean_max_cos", c.mean_max_cos},
                          {"frac_paired", c.frac_paired},
                          {"frac_shared_all", c.frac_shared_all},
                          {"frac_shared_alive", c.frac_shared_alive},
                          {"frac_paired_alive", c.frac_paired_alive}});
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open for writing: " + path.string());
  out << j.dump(2) << "\n";
}

AblationReport run_ablation(const RunManifest& manifest, const std::string& cell,
                            std::uint64_t seed, std::size_t n,
                            std::size_t limit, std::uint64_t ablation_seed) {
  const RunRecord* found = nullptr;
  for (const auto& r : manifest.runs) {
    if (r.cell == cell && r.seed == seed) {
      found = &r;
      break;
    }
  }
  if (!found) {
    throw ConfigError("no stored run for cell '" + cell + "' seed " +
                      std::to_string(seed));
  }
  const SaeParams params = load_weights(manifest.out_dir / found->weights);
  const SaeRunMeta meta = load_sidecar(manifest.out_dir / found->sidecar);

  Dataset dataset = load_dataset(manifest.config.data, manifest.config.d);
  if (limit > 0) dataset.take(limit);
  return mse_ablation(params, dataset.X, meta.mechanism, n, ablation_seed);
}

}  // namespace sae::runner

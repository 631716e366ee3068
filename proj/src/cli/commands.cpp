#include "srl4h/cli/commands.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "srl4h/cli/config.hpp"
#include "srl4h/errors.hpp"

namespace srl4h::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kGridAxes = {"srl.method",      "srl.lambda", "trainer.srl_interval",
                                         "trainer.data_proportion", "srl.target", "seed"};
const std::set<double> kLambdaGrid = {0.1, 0.5, 1.0};

// Runs `body`, mapping failures onto exit codes.
template <typename F>
int guarded(F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << '\n';
    return kExitRuntime;
  }
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string value_text(const json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

// Trains into `dir`, resuming when a checkpoint is present.
void train_into(const ExperimentConfig& config, const fs::path& dir) {
  fs::create_directories(dir);
  const json resolved = to_json(config);
  const fs::path cfg_path = dir / "resolved-config.json";
  if (fs::exists(cfg_path)) {
    if (read_json_file(cfg_path) != resolved) {
      throw ConfigError(dir.string() + " already holds a run with a different configuration");
    }
  } else {
    write_json_file(cfg_path, resolved);
  }
  trainer::TrainerConfig tc = config.trainer;
  tc.out_dir = dir.string();
  trainer::Trainer t(tc);
  const int every = config.logging.print_every;
  t.run([every](const trainer::MetricsRecord& r) {
    if (every <= 0 || r.iteration % every != 0) return;
    std::printf("iter %6ld  reward/step %8.4f", r.iteration, r.mean_reward);
    if (!r.terms.empty()) std::printf("  %s %.4f", r.terms.front().first.c_str(), r.terms.front().second);
    std::printf("  kl %.4f  lr %.2e  %.1fs\n", r.kl, r.learning_rate, r.wall_time);
    std::fflush(stdout);
  });
}

fs::path default_run_dir(const json& resolved) {
  const std::string method = resolved["srl"]["method"].get<std::string>();
  const auto seed = resolved["trainer"]["seed"].get<std::uint64_t>();
  return output_root() / (method + "-seed" + std::to_string(seed) + "-" + config_group_hash(resolved).substr(0, 8));
}

json parse_grid(const std::string& text) {
  if (fs::exists(text)) return read_json_file(text);
  json g = json::parse(text, nullptr, false);
  if (g.is_discarded()) throw ConfigError("--grid: neither a readable file nor inline JSON: " + text);
  return g;
}

struct RunInfo {
  std::string id;
  std::string method;
  std::string seed;
  std::string group;
  fs::path metrics;
};

std::vector<RunInfo> collect_runs(const std::vector<fs::path>& inputs) {
  std::vector<RunInfo> runs;
  auto add_run = [&runs](const fs::path& dir, const std::string& id) {
    const fs::path cfg = dir / "resolved-config.json";
    const json resolved = read_json_file(cfg);
    RunInfo r;
    r.id = id;
    r.method = resolved.at("srl").at("method").get<std::string>();
    r.seed = std::to_string(resolved.at("trainer").at("seed").get<std::uint64_t>());
    r.group = r.method + "-" + config_group_hash(resolved).substr(0, 8);
    r.metrics = dir / "metrics.jsonl";
    if (!fs::exists(r.metrics)) throw ConfigError(r.metrics.string() + ": missing");
    runs.push_back(std::move(r));
  };
  for (const auto& in : inputs) {
    const fs::path manifest = in / "sweep.json";
    if (fs::exists(manifest)) {
      const json m = read_json_file(manifest);
      for (const auto& p : m.at("points")) {
        const fs::path dir = in / p.at("dir").get<std::string>();
        add_run(dir, in.filename().string() + "/" + p.at("dir").get<std::string>());
      }
    } else {
      add_run(in, fs::path(in).lexically_normal().filename().string());
    }
  }
  return runs;
}

std::optional<double> lookup_metric(const json& record, const std::string& name) {
  const json* node = &record;
  std::size_t start = 0;
  while (true) {
    const auto dot = name.find('.', start);
    const std::string part = name.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(part)) return std::nullopt;
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_boolean()) return node->get<bool>() ? 1.0 : 0.0;
  if (!node->is_number()) return std::nullopt;
  return node->get<double>();
}

}  // namespace

fs::path output_root() {
  const char* env = std::getenv("SRL4H_OUT_ROOT");
  return (env && *env) ? fs::path(env) : fs::path("runs");
}

std::vector<std::vector<std::string>> expand_grid(const json& grid) {
  if (!grid.is_object() || grid.empty()) throw ConfigError("--grid: expected a non-empty JSON object of axes");
  std::vector<std::pair<std::string, std::vector<std::string>>> axes;
  for (const auto& [key, values] : grid.items()) {
    if (!kGridAxes.count(key)) {
      throw ConfigError("grid." + key +
                        ": not a sweepable axis (allowed: srl.method, srl.lambda, trainer.srl_interval, "
                        "trainer.data_proportion, srl.target, seed)");
    }
    if (!values.is_array() || values.empty()) throw ConfigError("grid." + key + ": expected a non-empty list");
    std::vector<std::string> assigns;
    for (const auto& v : values) {
      if (key == "srl.lambda" && (!v.is_number() || !kLambdaGrid.count(v.get<double>()))) {
        throw ConfigError("grid.srl.lambda: values must come from {0.1, 0.5, 1.0}, got " + v.dump());
      }
      const std::string path = key == "seed" ? "trainer.seed" : key;
      assigns.push_back(path + "=" + value_text(v));
    }
    axes.emplace_back(key, std::move(assigns));
  }
  std::vector<std::vector<std::string>> points{{}};
  for (const auto& [key, assigns] : axes) {
    std::vector<std::vector<std::string>> next;
    for (const auto& p : points) {
      for (const auto& a : assigns) {
        auto q = p;
        q.push_back(a);
        next.push_back(std::move(q));
      }
    }
    points = std::move(next);
  }
  return points;
}

fs::path aggregate_path(const fs::path& long_csv) {
  fs::path p = long_csv;
  p.replace_filename(long_csv.stem().string() + "_aggregate" + (long_csv.has_extension() ? long_csv.extension().string() : ".csv"));
  return p;
}

int cmd_train(const TrainOptions& opts) {
  return guarded([&] {
    const ExperimentConfig config = load_config(opts.config, opts.overrides, opts.seed);
    const fs::path dir = opts.out ? *opts.out : default_run_dir(to_json(config));
    std::cout << "run directory: " << dir.string() << std::endl;
    train_into(config, dir);
    return kExitOk;
  });
}

int cmd_eval(const EvalOptions& opts) {
  return guarded([&] {
    std::optional<fs::path> cfg = opts.config;
    if (!cfg) {
      const fs::path guess = opts.checkpoint.parent_path().parent_path() / "resolved-config.json";
      if (!fs::exists(guess)) throw ConfigError("--config: not given and no resolved-config.json next to the checkpoint");
      cfg = guess;
    }
    if (!fs::exists(opts.checkpoint)) throw ConfigError("--checkpoint: " + opts.checkpoint.string() + " does not exist");
    const ExperimentConfig config = load_config(cfg, opts.overrides, opts.seed);
    const auto summary =
        trainer::evaluate_checkpoint(opts.checkpoint, config.trainer, opts.episodes, !opts.stochastic);
    json j = summary.to_json();
    j["checkpoint"] = opts.checkpoint.string();
    j["seed"] = config.trainer.seed;
    j["deterministic"] = !opts.stochastic;
    std::cout << j.dump(2) << std::endl;
    if (opts.out) write_json_file(*opts.out, j);
    return kExitOk;
  });
}

int cmd_sweep(const SweepOptions& opts) {
  return guarded([&] {
    const json grid = parse_grid(opts.grid);
    const auto points = expand_grid(grid);
    json base_doc = opts.config ? read_json_file(*opts.config) : json::object();
    for (const auto& o : opts.overrides) apply_override(base_doc, o);
    from_json(base_doc);

    // Validate every point before any training starts.
    std::vector<ExperimentConfig> configs;
    for (const auto& p : points) {
      json doc = base_doc;
      for (const auto& o : p) apply_override(doc, o);
      try {
        configs.push_back(from_json(doc));
      } catch (const ConfigError& e) {
        std::string where;
        for (const auto& o : p) where += (where.empty() ? "" : ", ") + o;
        throw ConfigError("grid point {" + where + "}: " + e.what());
      }
    }

    const fs::path dir = opts.out ? *opts.out : output_root() / ("sweep-" + config_group_hash({{"grid", grid}, {"base", base_doc}}).substr(0, 8));
    fs::create_directories(dir);
    const fs::path manifest_path = dir / "sweep.json";
    json manifest;
    if (fs::exists(manifest_path)) {
      manifest = read_json_file(manifest_path);
      if (manifest.value("grid", json()) != grid || manifest.value("base", json()) != base_doc) {
        throw ConfigError(dir.string() + ": existing sweep manifest has a different grid or base config");
      }
    } else {
      manifest = {{"grid", grid}, {"base", base_doc}, {"points", json::array()}};
      for (std::size_t i = 0; i < points.size(); ++i) {
        char id[16];
        std::snprintf(id, sizeof(id), "p%03zu", i);
        manifest["points"].push_back({{"id", id}, {"dir", id}, {"overrides", points[i]}, {"status", "pending"}});
      }
      write_json_file(manifest_path, manifest);
    }

    int failures = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
      json& entry = manifest["points"][i];
      if (entry["status"] == "completed") {
        std::cout << "skip " << entry["id"].get<std::string>() << " (completed)\n";
        continue;
      }
      std::cout << "run " << entry["id"].get<std::string>() << ": " << entry["overrides"].dump() << std::endl;
      entry["status"] = "running";
      write_json_file(manifest_path, manifest);
      try {
        train_into(configs[i], dir / entry["dir"].get<std::string>());
        entry["status"] = "completed";
        entry.erase("error");
      } catch (const std::exception& e) {
        entry["status"] = "failed";
        entry["error"] = e.what();
        ++failures;
        std::cerr << "point " << entry["id"].get<std::string>() << " failed: " << e.what() << '\n';
      }
      write_json_file(manifest_path, manifest);
    }
    return failures == 0 ? kExitOk : kExitRuntime;
  });
}

int cmd_export(const ExportOptions& opts) {
  return guarded([&] {
    if (opts.runs.empty()) throw ConfigError("--runs: at least one run directory is required");
    if (opts.metrics.empty()) throw ConfigError("--metrics: at least one metric name is required");
    const auto runs = collect_runs(opts.runs);

    std::ostringstream long_csv;
    long_csv << "run_id,method,seed,iteration,metric,value\n";
    // group -> metric -> iteration -> values
    std::map<std::string, std::map<std::string, std::map<long, std::vector<double>>>> agg;
    std::map<std::string, std::string> group_method;
    std::set<std::string> found;
    for (const auto& run : runs) {
      std::ifstream in(run.metrics);
      std::vector<json> records;
      for (std::string line; std::getline(in, line);) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw RuntimeFailure(run.metrics.string() + ": malformed line");
        records.push_back(std::move(j));
      }
      for (const auto& metric : opts.metrics) {
        for (const auto& rec : records) {
          const auto v = lookup_metric(rec, metric);
          if (!v) continue;
          found.insert(metric);
          const long it = rec.at("iteration").get<long>();
          long_csv << run.id << ',' << run.method << ',' << run.seed << ',' << it << ',' << metric << ','
                   << format_number(*v) << '\n';
          agg[run.group][metric][it].push_back(*v);
          group_method[run.group] = run.method;
        }
      }
    }
    for (const auto& metric : opts.metrics) {
      if (!found.count(metric)) std::cerr << "metric not found in any run, omitted: " << metric << '\n';
    }

    std::ostringstream agg_csv;
    agg_csv << "group,method,iteration,metric,mean,std,n\n";
    for (const auto& [group, metrics] : agg) {
      for (const auto& metric : opts.metrics) {
        auto it = metrics.find(metric);
        if (it == metrics.end()) continue;
        for (const auto& [iter, values] : it->second) {
          double mean = 0.0;
          for (double v : values) mean += v;
          mean /= static_cast<double>(values.size());
          double var = 0.0;
          for (double v : values) var += (v - mean) * (v - mean);
          const double sd = std::sqrt(var / static_cast<double>(values.size()));
          agg_csv << group << ',' << group_method[group] << ',' << iter << ',' << metric << ',' << format_number(mean)
                  << ',' << format_number(sd) << ',' << values.size() << '\n';
        }
      }
    }

    if (opts.out.has_parent_path()) fs::create_directories(opts.out.parent_path());
    std::ofstream(opts.out, std::ios::trunc) << long_csv.str();
    std::ofstream(aggregate_path(opts.out), std::ios::trunc) << agg_csv.str();
    std::cout << "wrote " << opts.out.string() << " and " << aggregate_path(opts.out).string() << '\n';
    return kExitOk;
  });
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"srl4h: PPO with state-representation learning on toy control tasks"};
  app.require_subcommand(1);

  TrainOptions train;
  std::string train_config, train_out;
  std::uint64_t train_seed = 0;
  auto* t = app.add_subcommand("train", "train one configuration");
  t->add_option("--config", train_config, "experiment config (JSON)");
  auto* t_seed = t->add_option("--seed", train_seed, "master seed");
  t->add_option("--out", train_out, "run directory");
  t->add_option("--set", train.overrides, "override section.key=value (repeatable)");

  EvalOptions eval;
  std::string eval_config, eval_out, eval_ckpt;
  std::uint64_t eval_seed = 0;
  auto* e = app.add_subcommand("eval", "evaluate a checkpoint");
  e->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
  e->add_option("--config", eval_config, "experiment config (defaults to the run's resolved-config.json)");
  auto* e_seed = e->add_option("--seed", eval_seed, "evaluation seed");
  e->add_option("--episodes", eval.episodes, "number of episodes");
  e->add_flag("--stochastic", eval.stochastic, "sample actions instead of using the mean");
  e->add_option("--set", eval.overrides, "override section.key=value (repeatable)");
  e->add_option("--out", eval_out, "write the JSON summary here");

  SweepOptions sweep;
  std::string sweep_config, sweep_out;
  auto* s = app.add_subcommand("sweep", "run a grid of configurations sequentially");
  s->add_option("--config", sweep_config, "base experiment config (JSON)");
  s->add_option("--grid", sweep.grid, "grid as a JSON file or inline JSON object")->required();
  s->add_option("--set", sweep.overrides, "override section.key=value on the base config (repeatable)");
  s->add_option("--out", sweep_out, "sweep directory");

  ExportOptions exp;
  std::vector<std::string> runs;
  std::string exp_out;
  auto* x = app.add_subcommand("export", "export metrics to CSV");
  x->add_option("--runs", runs, "run or sweep directories")->required();
  x->add_option("--metrics", exp.metrics, "metric names, e.g. mean_reward terms.lin_vel_tracking")
      ->required()
      ->delimiter(',');
  x->add_option("--out", exp_out, "long-format CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  if (*t) {
    if (!train_config.empty()) train.config = train_config;
    if (!train_out.empty()) train.out = train_out;
    if (t_seed->count() > 0) train.seed = train_seed;
    return cmd_train(train);
  }
  if (*e) {
    eval.checkpoint = eval_ckpt;
    if (!eval_config.empty()) eval.config = eval_config;
    if (!eval_out.empty()) eval.out = eval_out;
    if (e_seed->count() > 0) eval.seed = eval_seed;
    return cmd_eval(eval);
  }
  if (*s) {
    if (!sweep_config.empty()) sweep.config = sweep_config;
    if (!sweep_out.empty()) sweep.out = sweep_out;
    return cmd_sweep(sweep);
  }
  for (const auto& r : runs) exp.runs.emplace_back(r);
  exp.out = exp_out;
  return cmd_export(exp);
}

}  // namespace srl4h::cli

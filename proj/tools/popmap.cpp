// popmap: generate synthetic cities, run the downscaling pipeline, export and report.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "popmap/error.hpp"
#include "popmap/io.hpp"
#include "popmap/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace popmap;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string preset;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON experiment config (or bare city config)")->check(CLI::ExistingFile);
  cmd->add_option("--out", c.out, "run directory")->required();
  cmd->add_option("--seed", c.seed, "override the config seed");
  cmd->add_option("--preset", c.preset, "desk or paper-scale")->check(CLI::IsMember({"desk", "paper-scale"}));
  cmd->add_flag("--force", c.force, "rerun even when the manifest is up to date");
}

pipeline::ExperimentConfig load_config(const Common& c) {
  json j = json::object();
  if (!c.config.empty()) {
    try {
      j = json::parse(io::read_text(c.config));
    } catch (const json::exception& e) {
      throw ConfigError(c.config + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(c.config + ": expected a JSON object");
    // a bare city config is accepted for `gen`
    const json known = pipeline::to_json(pipeline::ExperimentConfig::desk());
    bool experiment = true;
    for (const auto& [key, value] : j.items()) experiment = experiment && known.contains(key);
    if (!experiment) {
      json wrapped = {{"city", j}};
      if (j.contains("seed")) {
        wrapped["seed"] = j.at("seed");
        wrapped["city"].erase("seed");
      }
      j = wrapped;
    }
  }
  if (!c.preset.empty()) j["preset"] = c.preset;
  if (c.seed) j["seed"] = *c.seed;
  return pipeline::config_from_json(j);
}

pipeline::RunOptions options(const Common& c) {
  pipeline::RunOptions o;
  o.force = c.force;
  o.threads = pipeline::env_threads();
  o.log = [](const std::string& line) { std::cerr << "[popmap] " << line << std::endl; };
  return o;
}

void print(const std::vector<pipeline::StageOutcome>& outcomes) {
  for (const auto& o : outcomes) std::printf("%-15s %-8s %8.1f s\n", o.stage.c_str(), o.status.c_str(), o.seconds);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"popmap: fine-grained dynamic population mapping on synthetic cities"};
  app.set_version_flag("--version", std::string(pipeline::kVersion));
  app.require_subcommand(1);

  Common gen_opt;
  auto* gen = app.add_subcommand("gen", "generate a city and its ground-truth cube");
  add_common(gen, gen_opt);

  Common pipe_opt;
  std::string stages = "all";
  auto* pipe = app.add_subcommand("pipeline", "run pipeline stages into a run directory");
  add_common(pipe, pipe_opt);
  pipe->add_option("--stages", stages, "comma list of preprocess,train-spatial,train-temporal,baselines,eval or 'all'");

  std::string cube, format = "csv", export_out;
  auto* exp = app.add_subcommand("export", "write one CSV or 16-bit PGM per cube frame");
  exp->add_option("cube", cube, "PCB1 cube file")->required()->check(CLI::ExistingFile);
  exp->add_option("--format", format, "csv or pgm16");
  exp->add_option("--out", export_out, "output directory")->required();

  std::string report_dir;
  auto* rep = app.add_subcommand("report", "print the metric tables of a finished run");
  rep->add_option("--out", report_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      const auto cfg = load_config(gen_opt);
      const auto o = pipeline::run_gen(cfg, gen_opt.out, options(gen_opt));
      print({o});
      std::printf("config hash %s\n", pipeline::config_hash(cfg).c_str());
    } else if (*pipe) {
      const auto cfg = load_config(pipe_opt);
      const auto outcomes = pipeline::run_pipeline(cfg, pipe_opt.out, pipeline::parse_stages(stages), options(pipe_opt));
      print(outcomes);
      if (fs::exists(fs::path(pipe_opt.out) / "metrics" / "report.txt")) {
        for (const auto& o : outcomes) {
          if (o.stage == "eval" && o.status == "done") std::cout << "\n" << io::read_text(fs::path(pipe_opt.out) / "metrics" / "report.txt");
        }
      }
    } else if (*exp) {
      const auto files = pipeline::export_cube(cube, format, export_out);
      std::printf("wrote %zu files to %s\n", files.size(), export_out.c_str());
    } else if (*rep) {
      std::cout << pipeline::render_report(report_dir);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "popmap: error: %s\n", e.what());
    return 1;
  }
  return 0;
}
